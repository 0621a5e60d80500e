#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attrec/corpus.hpp"
#include "attrec/encoder.hpp"
#include "attrec/eval.hpp"
#include "attrec/item_index.hpp"
#include "attrec/matching.hpp"

namespace attrec {

struct TrainConfig {
  double tau = 0.05;  // softmax temperature
  double lr = 1e-3;
  int batch_size = 8;
  int accum_steps = 1;    // examples per optimizer step = batch_size * accum_steps
  int warmup_steps = 100; // linear warm-up, counted per optimizer step
  int patience = 5;       // early-stop epochs without valid NDCG improvement
  int stage1_patience = -1;  // -1 reuses patience
  int max_epochs = 50;

  enum class Negatives { Full, InBatch };
  Negatives negatives = Negatives::Full;
  // Stage-1 policy for candidate vectors: rebuilt once per epoch (constants
  // within the epoch, target re-encoded with gradients each step) or all
  // candidates re-encoded with gradients every step.
  enum class Refresh { PerEpoch, PerStep };
  Refresh refresh = Refresh::PerEpoch;

  uint64_t seed = 1;
  int threads = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int eval_k = 10;  // early-stopping metric is NDCG@eval_k

  void validate() const;
};

// -log softmax(scores / tau)[target], max-subtracted. Plain-array twin of the
// tape op; the two must agree exactly.
double cross_entropy_loss(std::span<const double> scores, int target, double tau);

// Linear warm-up to base_lr over warmup_steps; step is 1-based.
double warmup_lr(double base_lr, int64_t step, int warmup_steps);

struct AdamState {
  std::vector<Tensor> m, v;
  int64_t step = 0;

  AdamState() = default;
  explicit AdamState(const EncoderParams& params);
};

// One bias-corrected Adam update from accumulated gradients.
void adam_step(EncoderParams& params, AdamState& state, const GradSink& grads,
               const TrainConfig& config);

struct EpochLog {
  int epoch = 0;
  int stage = 0;
  double train_loss = 0.0;
  double valid_recall = 0.0;
  double valid_ndcg = 0.0;
  double lr = 0.0;
  uint64_t index_hash = 0;
  std::string to_json_line() const;
};

struct StageResult {
  double best_valid_ndcg = 0.0;
  int best_epoch = 0;
  int epochs_run = 0;
  std::vector<EpochLog> log;
};

// Deduplicated in-batch candidate columns: one column per distinct target
// item (first-occurrence order); target_col maps each example to its column.
struct InBatchColumns {
  std::vector<int> catalog_pos;
  std::vector<int> target_col;
};
InBatchColumns build_inbatch_columns(std::span<const SplitExample> batch, const Catalog& catalog);

// Two-stage contrastive trainer. Stage 1 refreshes the item index every
// epoch; stage 2 freezes the stage-1 best index and optimizes the sequence
// side only.
class Trainer {
 public:
  Trainer(const Catalog& catalog, const DatasetSplit& split, Model model, MatchConfig match,
          TrainConfig config);

  StageResult run_stage1();
  StageResult run_stage2();

  // One optimization pass over the training pairs against the current
  // candidate index; returns the mean loss. Exposed for harnesses that
  // drive epochs manually.
  double run_epoch(int stage);
  void refresh_index();
  EvalReport eval_view(const std::vector<SplitExample>& view, const std::vector<int>& ks) const;

  // Training-path score row for one example (eval mode, no gradients):
  // full-catalog columns in index order plus the target column position.
  std::pair<std::vector<double>, int> candidate_scores(const SplitExample& ex, int stage) const;

  // Mean loss over the examples with full-catalog columns; when sink is
  // given (zeroed by the caller) it receives d(mean loss)/d(params). Does
  // not touch optimizer state. Gradient-check harnesses drive this.
  double loss_and_gradients(std::span<const SplitExample> examples, int stage,
                            GradSink* sink) const;

  const Model& model() const { return model_; }
  Model best_model() const;
  const ItemIndex& candidate_index() const { return index_; }
  const ItemIndex& frozen_index() const;
  const std::vector<uint64_t>& stage2_index_hashes() const { return stage2_hashes_; }
  double best_valid_ndcg() const { return best_ndcg_; }

  std::function<void(const EpochLog&)> on_epoch;  // optional observer

 private:
  struct StepStats {
    double loss_sum = 0.0;
    int examples = 0;
  };

  std::vector<Var> build_score_row(Tape& tape, const SplitExample& ex, int stage, GradSink* sink,
                                   uint64_t dropout_seed, std::span<const int> columns,
                                   int target_col) const;
  double example_loss(Tape& tape, const SplitExample& ex, int stage, GradSink* sink,
                      uint64_t dropout_seed, std::span<const int> columns, int target_col) const;
  StepStats optimizer_step(std::span<const SplitExample> examples, int stage, int epoch,
                           int64_t first_ordinal);
  StageResult run_stage(int stage);

  const Catalog& catalog_;
  const DatasetSplit& split_;
  Model model_;
  MatchConfig match_;
  TrainConfig config_;

  ItemIndex index_;  // stage 1: rebuilt per epoch; stage 2: frozen
  AdamState adam_;
  GradSink step_grads_;
  std::vector<GradSink> worker_grads_;  // one per extra worker thread

  EncoderParams best_params_;
  std::optional<ItemIndex> stage1_best_index_;
  double best_ndcg_ = -1.0;
  bool stage1_done_ = false;
  std::vector<uint64_t> stage2_hashes_;
  std::array<int, 3> epochs_run_ = {0, 0, 0};  // indexed by stage
};

}  // namespace attrec
