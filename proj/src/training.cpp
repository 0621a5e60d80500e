#include "attrec/training.hpp"

#include <algorithm>
#include <cmath>
#include <thread>
#include <unordered_map>

#include "json.hpp"

namespace attrec {

using nlohmann::json;

void TrainConfig::validate() const {
  if (tau <= 0.0) throw ConfigError("train: tau must be positive");
  if (lr <= 0.0) throw ConfigError("train: lr must be positive");
  if (batch_size < 1 || accum_steps < 1) throw ConfigError("train: batch/accumulation must be >= 1");
  if (patience < 1) throw ConfigError("train: patience must be >= 1");
  if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
  if (threads < 1) throw ConfigError("train: threads must be >= 1");
  if (eval_k < 1) throw ConfigError("train: eval_k must be >= 1");
}

double cross_entropy_loss(std::span<const double> scores, int target, double tau) {
  if (tau <= 0.0) throw ConfigError("cross_entropy_loss: tau must be positive");
  if (target < 0 || target >= static_cast<int>(scores.size()))
    throw ConfigError("cross_entropy_loss: target index out of range");
  double m = scores[0] / tau;
  for (size_t i = 1; i < scores.size(); ++i) m = std::max(m, scores[i] / tau);
  double sum = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw NumericError("cross_entropy_loss: non-finite score");
    sum += std::exp(scores[i] / tau - m);
  }
  return std::log(sum) + m - scores[static_cast<size_t>(target)] / tau;
}

double warmup_lr(double base_lr, int64_t step, int warmup_steps) {
  if (warmup_steps <= 0) return base_lr;
  if (step >= warmup_steps) return base_lr;
  return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

AdamState::AdamState(const EncoderParams& params) {
  for (const auto& [name, t] : params.named_tensors()) {
    m.emplace_back(t->rows, t->cols);
    v.emplace_back(t->rows, t->cols);
  }
}

void adam_step(EncoderParams& params, AdamState& state, const GradSink& grads,
               const TrainConfig& config) {
  auto tensors = params.named_tensors();
  if (tensors.size() != grads.grads.size() || tensors.size() != state.m.size())
    throw NumericError("adam_step: state/gradient layout mismatch");
  ++state.step;
  const double lr = warmup_lr(config.lr, state.step, config.warmup_steps);
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < tensors.size(); ++i) {
    Tensor& p = *tensors[i].second;
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const Tensor& g = grads.grads[i];
    for (size_t k = 0; k < p.data.size(); ++k) {
      const double gk = g.data[k];
      m.data[k] = config.beta1 * m.data[k] + (1.0 - config.beta1) * gk;
      v.data[k] = config.beta2 * v.data[k] + (1.0 - config.beta2) * gk * gk;
      const double mhat = m.data[k] / bc1;
      const double vhat = v.data[k] / bc2;
      p.data[k] -= lr * mhat / (std::sqrt(vhat) + config.adam_eps);
    }
  }
}

std::string EpochLog::to_json_line() const {
  json j{{"epoch", epoch},
         {"stage", stage},
         {"train_loss", train_loss},
         {"valid_recall@10", valid_recall},
         {"valid_ndcg@10", valid_ndcg},
         {"lr", lr},
         {"index_hash", hash_hex(index_hash)}};
  return j.dump();
}

InBatchColumns build_inbatch_columns(std::span<const SplitExample> batch, const Catalog& catalog) {
  InBatchColumns cols;
  std::unordered_map<int, int> col_of;
  for (const auto& ex : batch) {
    const int pos = catalog.position_of(ex.target);
    if (pos < 0) throw DataError("in-batch columns: unknown target " + ex.target);
    auto [it, inserted] = col_of.emplace(pos, static_cast<int>(cols.catalog_pos.size()));
    if (inserted) cols.catalog_pos.push_back(pos);
    cols.target_col.push_back(it->second);
  }
  return cols;
}

namespace {

// User-side pooled vars grouped by attribute, entry order preserved
// (newest-first), so max tie-breaking lands on the most recent item.
std::vector<std::vector<Var>> group_by_attr(const PooledVars& pooled, int num_attrs) {
  std::vector<std::vector<Var>> groups(static_cast<size_t>(num_attrs));
  for (size_t i = 0; i < pooled.vars.size(); ++i) {
    const int j = pooled.spans[i].attr_index;
    if (j >= 0 && j < num_attrs) groups[static_cast<size_t>(j)].push_back(pooled.vars[i]);
  }
  return groups;
}

}  // namespace

Trainer::Trainer(const Catalog& catalog, const DatasetSplit& split, Model model,
                 MatchConfig match, TrainConfig config)
    : catalog_(catalog),
      split_(split),
      model_(std::move(model)),
      match_(match),
      config_(config),
      adam_(model_.params),
      step_grads_(model_.params),
      best_params_(model_.params) {
  config_.validate();
  model_.params.config.validate();
  if (catalog_.items.empty()) throw DataError("trainer: empty catalog");
  if (split_.train.empty()) throw DataError("trainer: no training pairs");
  for (int w = 1; w < config_.threads; ++w) worker_grads_.emplace_back(model_.params);
  index_ = ItemIndex::build(catalog_, model_, config_.threads);
}

const ItemIndex& Trainer::frozen_index() const {
  if (!stage1_best_index_) throw ConfigError("trainer: stage 1 has not produced an index yet");
  return *stage1_best_index_;
}

void Trainer::refresh_index() { index_ = ItemIndex::build(catalog_, model_, config_.threads); }

Model Trainer::best_model() const {
  Model m = model_;
  m.params = best_params_;
  return m;
}

EvalReport Trainer::eval_view(const std::vector<SplitExample>& view,
                              const std::vector<int>& ks) const {
  return evaluate(view, index_, model_, catalog_, match_, ks, config_.threads);
}

std::vector<Var> Trainer::build_score_row(Tape& tape, const SplitExample& ex, int stage,
                                          GradSink* sink, uint64_t dropout_seed,
                                          std::span<const int> columns, int target_col) const {
  ParamVars pv = register_params(tape, model_.params, sink);
  Rng drop_rng(dropout_seed);
  ForwardOptions fo;
  fo.train = sink != nullptr;
  fo.dropout_rng = &drop_rng;

  InteractionSequence seq{ex.user_id, ex.prefix};
  EncoderInput sin = build_sequence_input(seq, catalog_, model_.vocab, model_.tok);
  Var hidden = encoder_forward(tape, pv, sin.token_ids, fo);
  Var projected = project_tokens(tape, pv, hidden);
  PooledVars user = pool_variant(tape, projected, sin, model_.pool);
  const int num_attrs = index_.num_attrs();
  std::vector<std::vector<Var>> user_groups = group_by_attr(user, num_attrs);

  // Item columns: constants from the index, except columns re-encoded on the
  // tape (stage-1 target under per-epoch refresh; every column under
  // per-step refresh or in-batch negatives).
  std::vector<Var> scores;
  scores.reserve(columns.size());
  for (size_t c = 0; c < columns.size(); ++c) {
    const int item_pos = columns[static_cast<size_t>(c)];
    const bool on_tape =
        stage == 1 && (config_.refresh == TrainConfig::Refresh::PerStep ||
                       config_.negatives == TrainConfig::Negatives::InBatch ||
                       static_cast<int>(c) == target_col);
    std::vector<Var> attr_scores;
    attr_scores.reserve(static_cast<size_t>(num_attrs));
    if (on_tape) {
      EncoderInput iin =
          build_item_input(catalog_.items[static_cast<size_t>(item_pos)], model_.vocab, model_.tok);
      Var ih = encoder_forward(tape, pv, iin.token_ids, fo);
      Var ip = project_tokens(tape, pv, ih);
      PooledVars ipooled = pool_variant(tape, ip, iin, model_.pool);
      std::vector<std::vector<Var>> item_groups = group_by_attr(ipooled, num_attrs);
      for (int j = 0; j < num_attrs; ++j) {
        if (item_groups[static_cast<size_t>(j)].empty())
          throw DataError("example_loss: item lacks attribute " + std::to_string(j));
        Var item_vec = item_groups[static_cast<size_t>(j)][0];
        const auto& group = user_groups[static_cast<size_t>(j)];
        if (group.empty()) {
          attr_scores.push_back(tape.scalar_constant(-1.0));
          continue;
        }
        std::vector<Var> cos;
        cos.reserve(group.size());
        for (Var u : group) cos.push_back(tape.cosine(u, item_vec, match_.cosine_eps));
        attr_scores.push_back(match_.agg == MatchConfig::Agg::Max ? tape.max_of(cos)
                                                                  : tape.mean_of(cos));
      }
    } else {
      for (int j = 0; j < num_attrs; ++j) {
        const auto& group = user_groups[static_cast<size_t>(j)];
        if (group.empty()) {
          attr_scores.push_back(tape.scalar_constant(-1.0));
          continue;
        }
        std::vector<Var> cos;
        cos.reserve(group.size());
        for (Var u : group)
          cos.push_back(tape.cosine_const(u, index_.vec(item_pos, j), match_.cosine_eps));
        attr_scores.push_back(match_.agg == MatchConfig::Agg::Max ? tape.max_of(cos)
                                                                  : tape.mean_of(cos));
      }
    }
    scores.push_back(tape.sum_of(attr_scores));
  }
  return scores;
}

double Trainer::example_loss(Tape& tape, const SplitExample& ex, int stage, GradSink* sink,
                             uint64_t dropout_seed, std::span<const int> columns,
                             int target_col) const {
  std::vector<Var> scores = build_score_row(tape, ex, stage, sink, dropout_seed, columns, target_col);
  Var loss = tape.cross_entropy(scores, target_col, config_.tau);
  if (sink) tape.backward(loss);
  return tape.scalar(loss);
}

std::pair<std::vector<double>, int> Trainer::candidate_scores(const SplitExample& ex,
                                                              int stage) const {
  if (catalog_.items.empty()) throw DataError("candidate_scores: empty catalog");
  const int target_pos = catalog_.position_of(ex.target);
  if (target_pos < 0) throw DataError("candidate_scores: unknown target " + ex.target);
  std::vector<int> columns(static_cast<size_t>(catalog_.size()));
  for (int i = 0; i < catalog_.size(); ++i) columns[static_cast<size_t>(i)] = i;
  Tape tape;
  std::vector<Var> scores = build_score_row(tape, ex, stage, nullptr, 0, columns, target_pos);
  std::vector<double> row;
  row.reserve(scores.size());
  for (Var s : scores) row.push_back(tape.scalar(s));
  return {row, target_pos};
}

double Trainer::loss_and_gradients(std::span<const SplitExample> examples, int stage,
                                   GradSink* sink) const {
  if (examples.empty()) throw ConfigError("loss_and_gradients: no examples");
  std::vector<int> columns(static_cast<size_t>(catalog_.size()));
  for (int i = 0; i < catalog_.size(); ++i) columns[static_cast<size_t>(i)] = i;
  double loss_sum = 0.0;
  for (const auto& ex : examples) {
    const int target = catalog_.position_of(ex.target);
    if (target < 0) throw DataError("loss_and_gradients: unknown target " + ex.target);
    Tape tape;
    loss_sum += example_loss(tape, ex, stage, sink, 0, columns, target);
  }
  if (sink) sink->scale(1.0 / static_cast<double>(examples.size()));
  return loss_sum / static_cast<double>(examples.size());
}

Trainer::StepStats Trainer::optimizer_step(std::span<const SplitExample> examples, int stage,
                                           int epoch, int64_t first_ordinal) {
  StepStats stats;
  stats.examples = static_cast<int>(examples.size());
  step_grads_.zero();

  // Columns per micro-batch: the whole catalog in full mode, the batch's
  // deduplicated targets in in-batch mode.
  std::vector<double> losses(examples.size(), 0.0);
  size_t offset = 0;
  while (offset < examples.size()) {
    const size_t micro = std::min<size_t>(static_cast<size_t>(config_.batch_size),
                                          examples.size() - offset);
    std::span<const SplitExample> batch = examples.subspan(offset, micro);

    std::vector<int> columns;
    std::vector<int> target_cols(micro);
    if (config_.negatives == TrainConfig::Negatives::Full) {
      columns.resize(static_cast<size_t>(catalog_.size()));
      for (int i = 0; i < catalog_.size(); ++i) columns[static_cast<size_t>(i)] = i;
      for (size_t e = 0; e < micro; ++e) {
        target_cols[e] = catalog_.position_of(batch[e].target);
        if (target_cols[e] < 0) throw DataError("train: unknown target " + batch[e].target);
      }
    } else {
      InBatchColumns cols = build_inbatch_columns(batch, catalog_);
      columns = std::move(cols.catalog_pos);
      target_cols = std::move(cols.target_col);
    }

    const int workers = std::max(1, std::min<int>(config_.threads, static_cast<int>(micro)));
    auto run_examples = [&](int worker, GradSink* sink) {
      for (size_t e = static_cast<size_t>(worker); e < micro; e += static_cast<size_t>(workers)) {
        const uint64_t drop_seed = mix_seed({config_.seed, 0xd409ull, static_cast<uint64_t>(stage),
                                             static_cast<uint64_t>(epoch),
                                             static_cast<uint64_t>(first_ordinal) +
                                                 static_cast<uint64_t>(offset + e)});
        Tape tape;
        losses[offset + e] =
            example_loss(tape, batch[e], stage, sink, drop_seed, columns, target_cols[e]);
      }
    };

    if (workers == 1) {
      run_examples(0, &step_grads_);
    } else {
      std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
      std::vector<std::thread> pool;
      for (int w = 1; w < workers; ++w) {
        pool.emplace_back([&, w]() {
          try {
            run_examples(w, &worker_grads_[static_cast<size_t>(w - 1)]);
          } catch (...) {
            errors[static_cast<size_t>(w)] = std::current_exception();
          }
        });
      }
      try {
        run_examples(0, &step_grads_);
      } catch (...) {
        errors[0] = std::current_exception();
      }
      for (auto& t : pool) t.join();
      for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
      // Deterministic reduction: worker buffers fold in worker order.
      for (int w = 1; w < workers; ++w) {
        step_grads_.add(worker_grads_[static_cast<size_t>(w - 1)]);
        worker_grads_[static_cast<size_t>(w - 1)].zero();
      }
    }
    offset += micro;
  }

  for (double l : losses) stats.loss_sum += l;
  if (!std::isfinite(stats.loss_sum))
    throw NumericError("training diverged: non-finite loss at stage " + std::to_string(stage) +
                       " epoch " + std::to_string(epoch) + " step " +
                       std::to_string(adam_.step + 1));

  step_grads_.scale(1.0 / static_cast<double>(stats.examples));
  adam_step(model_.params, adam_, step_grads_, config_);
  if (stage == 2) stage2_hashes_.push_back(index_.payload_hash());
  return stats;
}

double Trainer::run_epoch(int stage) {
  const int epoch = ++epochs_run_[static_cast<size_t>(stage)];
  std::vector<SplitExample> order = split_.train;
  Rng shuffle_rng(mix_seed({config_.seed, 0x5f1eull, static_cast<uint64_t>(stage),
                            static_cast<uint64_t>(epoch)}));
  shuffle_rng.shuffle(order);

  const size_t per_step = static_cast<size_t>(config_.batch_size) *
                          static_cast<size_t>(config_.accum_steps);
  double loss_sum = 0.0;
  int64_t seen = 0;
  size_t offset = 0;
  while (offset < order.size()) {
    const size_t count = std::min(per_step, order.size() - offset);
    StepStats stats =
        optimizer_step(std::span<const SplitExample>(order).subspan(offset, count), stage, epoch,
                       static_cast<int64_t>(offset));
    loss_sum += stats.loss_sum;
    seen += stats.examples;
    offset += count;
  }
  return loss_sum / static_cast<double>(seen);
}

StageResult Trainer::run_stage(int stage) {
  StageResult result;
  const int patience = stage == 1 ? (config_.stage1_patience > 0 ? config_.stage1_patience
                                                                 : config_.patience)
                                  : config_.patience;
  int no_improve = 0;
  for (int epoch = 1; epoch <= config_.max_epochs; ++epoch) {
    const double train_loss = run_epoch(stage);
    if (stage == 1) refresh_index();
    EvalReport report = eval_view(split_.valid, {config_.eval_k});

    EpochLog log;
    log.epoch = epoch;
    log.stage = stage;
    log.train_loss = train_loss;
    log.valid_recall = report.recall.at(config_.eval_k);
    log.valid_ndcg = report.ndcg.at(config_.eval_k);
    log.lr = warmup_lr(config_.lr, adam_.step, config_.warmup_steps);
    log.index_hash = index_.payload_hash();
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);

    result.epochs_run = epoch;
    if (log.valid_ndcg > best_ndcg_) {
      best_ndcg_ = log.valid_ndcg;
      best_params_ = model_.params;
      if (stage == 1) stage1_best_index_ = index_;
      result.best_epoch = epoch;
      no_improve = 0;
    } else {
      ++no_improve;
    }
    if (no_improve >= patience) break;
  }
  result.best_valid_ndcg = best_ndcg_;
  return result;
}

StageResult Trainer::run_stage1() {
  StageResult result = run_stage(1);
  if (!stage1_best_index_) stage1_best_index_ = index_;  // degenerate: nothing improved
  stage1_done_ = true;
  return result;
}

StageResult Trainer::run_stage2() {
  if (!stage1_done_) throw ConfigError("run_stage2: stage 1 must run first");
  // Resume from the stage-1 best checkpoint with its index frozen.
  model_.params = best_params_;
  index_ = *stage1_best_index_;
  adam_ = AdamState(model_.params);
  stage2_hashes_.clear();
  stage2_hashes_.push_back(index_.payload_hash());
  // Non-degradation baseline: the frozen index with the stage-1 best
  // parameters reproduces the stage-1 best validation score.
  EvalReport baseline = eval_view(split_.valid, {config_.eval_k});
  best_ndcg_ = baseline.ndcg.at(config_.eval_k);
  return run_stage(2);
}

}  // namespace attrec
