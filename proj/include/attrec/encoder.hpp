#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "attrec/common.hpp"
#include "attrec/repr.hpp"
#include "attrec/tensor.hpp"
#include "attrec/tokenizer.hpp"

namespace attrec {

struct EncoderConfig {
  int vocab_size = 0;
  int hidden_dim = 64;    // d
  int proj_dim = 32;      // d'
  int num_layers = 2;
  int num_heads = 4;
  int ff_dim = 128;
  int max_positions = 1024;
  double dropout = 0.0;
  bool final_layer_norm = true;
  double ln_eps = 1e-5;

  void validate() const;
};

struct LayerParams {
  Tensor ln1_g, ln1_b;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_g, ln2_b;
  Tensor w1, b1, w2, b2;
};

// All trainable tensors. Linear layers store weights as [in x out] so a
// token row maps through x -> x*W + b (the projection W is [d x d']).
struct EncoderParams {
  EncoderConfig config;
  Tensor tok_emb;  // [V x d]
  Tensor pos_emb;  // [P x d]
  std::vector<LayerParams> layers;
  Tensor final_g, final_b;  // used when config.final_layer_norm
  Tensor proj_w;  // [d x d']
  Tensor proj_b;  // [1 x d']

  static EncoderParams init(const EncoderConfig& config, uint64_t seed);

  // Stable registry order shared by gradient sinks, Adam state and
  // checkpoints.
  std::vector<std::pair<std::string, Tensor*>> named_tensors();
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;

  bool all_finite() const;
  uint64_t payload_hash() const;
};

// Gradient accumulator aligned with EncoderParams::named_tensors().
struct GradSink {
  std::vector<Tensor> grads;

  explicit GradSink(const EncoderParams& params);
  void zero();
  void add(const GradSink& other);
  void scale(double s);
};

// Tape handles for every parameter tensor, in registry order.
struct ParamVars {
  std::vector<Var> vars;
  const EncoderParams* params = nullptr;

  Var tok_emb() const { return vars[0]; }
  Var pos_emb() const { return vars[1]; }
  // Per-layer tensors follow in LayerParams declaration order.
  Var layer(int i, int field) const;
  Var final_g() const;
  Var final_b() const;
  Var proj_w() const;
  Var proj_b() const;
};

// Registers parameters on the tape. With a sink, every tensor becomes a
// gradient-carrying leaf; with nullptr they are constants (inference).
ParamVars register_params(Tape& tape, const EncoderParams& params, GradSink* sink);

struct ForwardOptions {
  bool train = false;
  Rng* dropout_rng = nullptr;  // required when train && dropout > 0
};

// Pre-norm transformer over the token ids; returns [L x d] hidden states.
Var encoder_forward(Tape& tape, const ParamVars& pv, const std::vector<int>& token_ids,
                    const ForwardOptions& opt);

// Dimension reduction to d', applied to every token including [BOS].
Var project_tokens(Tape& tape, const ParamVars& pv, Var hidden);

struct PooledVars {
  std::vector<TokenSpan> spans;  // parallel to vars; item/bos pooling keeps attr_index 0
  std::vector<Var> vars;         // each [1 x d']
  Var bos;
};

// Average-pools projected token states per span (Attribute), per item
// position (Item), or takes the projected [BOS] state alone (Bos).
PooledVars pool_variant(Tape& tape, Var projected, const EncoderInput& input, PoolKind kind);

inline PooledVars pool_attributes(Tape& tape, Var projected, const EncoderInput& input) {
  return pool_variant(tape, projected, input, PoolKind::Attribute);
}

// Bundles everything needed to encode text into vectors.
struct Model {
  EncoderParams params;
  Vocabulary vocab;
  TokenizerConfig tok;
  PoolKind pool = PoolKind::Attribute;
};

MultiVectorRepr encode_input(const Model& model, const EncoderInput& input);
MultiVectorRepr encode_input_with_arity(const Model& model, const EncoderInput& input,
                                        int num_attrs);
MultiVectorRepr encode_item(const Model& model, const ItemRecord& item);
MultiVectorRepr encode_sequence(const Model& model, const InteractionSequence& seq,
                                const Catalog& catalog);

// Checkpoint container: magic + JSON header (config, tensor manifest, vocab,
// metadata) + little-endian f64 payload. Layout documented in the README.
void save_checkpoint(const std::string& path, const EncoderParams& params,
                     const Vocabulary& vocab, const TokenizerConfig& tok, PoolKind pool,
                     const std::string& metadata_json);
struct Checkpoint {
  Model model;
  std::string metadata_json;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace attrec
