#include "attrec/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace attrec {

using nlohmann::json;

PoolKind pool_kind_from_string(const std::string& s) {
  if (s == "attribute") return PoolKind::Attribute;
  if (s == "item") return PoolKind::Item;
  if (s == "bos") return PoolKind::Bos;
  throw ConfigError("unknown pool kind: " + s);
}

std::string to_string(PoolKind k) {
  switch (k) {
    case PoolKind::Attribute: return "attribute";
    case PoolKind::Item: return "item";
    case PoolKind::Bos: return "bos";
  }
  return "attribute";
}

void EncoderConfig::validate() const {
  if (vocab_size < 4) throw ConfigError("encoder: vocab_size must cover the special tokens");
  if (hidden_dim < 1 || proj_dim < 1) throw ConfigError("encoder: dims must be positive");
  if (proj_dim > hidden_dim) throw ConfigError("encoder: proj_dim must be <= hidden_dim");
  if (num_layers < 0) throw ConfigError("encoder: num_layers must be >= 0");
  if (num_heads < 1 || hidden_dim % num_heads != 0)
    throw ConfigError("encoder: hidden_dim must be divisible by num_heads");
  if (max_positions < 1) throw ConfigError("encoder: max_positions must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("encoder: dropout must be in [0, 1)");
}

namespace {

void fill_uniform(Tensor& t, Rng& rng, double bound) {
  for (double& v : t.data) v = rng.uniform(-bound, bound);
}

void init_linear(Tensor& w, Tensor& b, Rng& rng) {
  const double bound = std::sqrt(6.0 / (w.rows + w.cols));
  fill_uniform(w, rng, bound);
  b.fill(0.0);
}

}  // namespace

EncoderParams EncoderParams::init(const EncoderConfig& config, uint64_t seed) {
  config.validate();
  EncoderParams p;
  p.config = config;
  Rng rng(mix_seed({seed, 0x1417ull}));
  const int d = config.hidden_dim;

  p.tok_emb = Tensor(config.vocab_size, d);
  fill_uniform(p.tok_emb, rng, 0.05);
  p.pos_emb = Tensor(config.max_positions, d);
  fill_uniform(p.pos_emb, rng, 0.05);

  for (int l = 0; l < config.num_layers; ++l) {
    LayerParams lp;
    lp.ln1_g = Tensor(1, d);
    lp.ln1_g.fill(1.0);
    lp.ln1_b = Tensor(1, d);
    lp.wq = Tensor(d, d);
    lp.bq = Tensor(1, d);
    init_linear(lp.wq, lp.bq, rng);
    lp.wk = Tensor(d, d);
    lp.bk = Tensor(1, d);
    init_linear(lp.wk, lp.bk, rng);
    lp.wv = Tensor(d, d);
    lp.bv = Tensor(1, d);
    init_linear(lp.wv, lp.bv, rng);
    lp.wo = Tensor(d, d);
    lp.bo = Tensor(1, d);
    init_linear(lp.wo, lp.bo, rng);
    lp.ln2_g = Tensor(1, d);
    lp.ln2_g.fill(1.0);
    lp.ln2_b = Tensor(1, d);
    lp.w1 = Tensor(d, config.ff_dim);
    lp.b1 = Tensor(1, config.ff_dim);
    init_linear(lp.w1, lp.b1, rng);
    lp.w2 = Tensor(config.ff_dim, d);
    lp.b2 = Tensor(1, d);
    init_linear(lp.w2, lp.b2, rng);
    p.layers.push_back(std::move(lp));
  }

  if (config.final_layer_norm) {
    p.final_g = Tensor(1, d);
    p.final_g.fill(1.0);
    p.final_b = Tensor(1, d);
  }
  p.proj_w = Tensor(d, config.proj_dim);
  p.proj_b = Tensor(1, config.proj_dim);
  init_linear(p.proj_w, p.proj_b, rng);
  return p;
}

namespace {

template <typename Params, typename TensorPtr>
std::vector<std::pair<std::string, TensorPtr>> collect_tensors(Params& p) {
  std::vector<std::pair<std::string, TensorPtr>> out;
  out.emplace_back("tok_emb", &p.tok_emb);
  out.emplace_back("pos_emb", &p.pos_emb);
  for (size_t l = 0; l < p.layers.size(); ++l) {
    auto& lp = p.layers[l];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    out.emplace_back(prefix + "ln1.g", &lp.ln1_g);
    out.emplace_back(prefix + "ln1.b", &lp.ln1_b);
    out.emplace_back(prefix + "attn.wq", &lp.wq);
    out.emplace_back(prefix + "attn.bq", &lp.bq);
    out.emplace_back(prefix + "attn.wk", &lp.wk);
    out.emplace_back(prefix + "attn.bk", &lp.bk);
    out.emplace_back(prefix + "attn.wv", &lp.wv);
    out.emplace_back(prefix + "attn.bv", &lp.bv);
    out.emplace_back(prefix + "attn.wo", &lp.wo);
    out.emplace_back(prefix + "attn.bo", &lp.bo);
    out.emplace_back(prefix + "ln2.g", &lp.ln2_g);
    out.emplace_back(prefix + "ln2.b", &lp.ln2_b);
    out.emplace_back(prefix + "ff.w1", &lp.w1);
    out.emplace_back(prefix + "ff.b1", &lp.b1);
    out.emplace_back(prefix + "ff.w2", &lp.w2);
    out.emplace_back(prefix + "ff.b2", &lp.b2);
  }
  if (p.config.final_layer_norm) {
    out.emplace_back("final_ln.g", &p.final_g);
    out.emplace_back("final_ln.b", &p.final_b);
  }
  out.emplace_back("proj.w", &p.proj_w);
  out.emplace_back("proj.b", &p.proj_b);
  return out;
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> EncoderParams::named_tensors() {
  return collect_tensors<EncoderParams, Tensor*>(*this);
}

std::vector<std::pair<std::string, const Tensor*>> EncoderParams::named_tensors() const {
  return collect_tensors<const EncoderParams, const Tensor*>(*this);
}

bool EncoderParams::all_finite() const {
  for (const auto& [name, t] : named_tensors())
    if (!t->all_finite()) return false;
  return true;
}

uint64_t EncoderParams::payload_hash() const {
  Fnv1a h;
  for (const auto& [name, t] : named_tensors()) {
    h.update(name);
    for (double v : t->data) h.update_f64(v);
  }
  return h.digest();
}

GradSink::GradSink(const EncoderParams& params) {
  for (const auto& [name, t] : params.named_tensors()) grads.emplace_back(t->rows, t->cols);
}

void GradSink::zero() {
  for (auto& g : grads) g.fill(0.0);
}

void GradSink::add(const GradSink& other) {
  for (size_t i = 0; i < grads.size(); ++i) grads[i].add_scaled(other.grads[i], 1.0);
}

void GradSink::scale(double s) {
  for (auto& g : grads)
    for (double& v : g.data) v *= s;
}

Var ParamVars::layer(int i, int field) const { return vars[static_cast<size_t>(2 + i * 16 + field)]; }

Var ParamVars::final_g() const {
  return vars[static_cast<size_t>(2 + params->config.num_layers * 16)];
}

Var ParamVars::final_b() const {
  return vars[static_cast<size_t>(2 + params->config.num_layers * 16 + 1)];
}

Var ParamVars::proj_w() const { return vars[vars.size() - 2]; }

Var ParamVars::proj_b() const { return vars[vars.size() - 1]; }

ParamVars register_params(Tape& tape, const EncoderParams& params, GradSink* sink) {
  ParamVars pv;
  pv.params = &params;
  auto tensors = params.named_tensors();
  for (size_t i = 0; i < tensors.size(); ++i) {
    Tensor* g = sink ? &sink->grads[i] : nullptr;
    pv.vars.push_back(tape.leaf(tensors[i].second, g));
  }
  return pv;
}

namespace {

// Field offsets matching collect_tensors layer order.
enum LayerField {
  kLn1G = 0, kLn1B, kWq, kBq, kWk, kBk, kWv, kBv, kWo, kBo, kLn2G, kLn2B, kW1, kB1, kW2, kB2
};

Var linear(Tape& t, Var x, Var w, Var b) { return t.add_row(t.matmul(x, w), b); }

Var self_attention(Tape& t, const ParamVars& pv, int layer, Var x, const EncoderConfig& cfg) {
  Var q = linear(t, x, pv.layer(layer, kWq), pv.layer(layer, kBq));
  Var k = linear(t, x, pv.layer(layer, kWk), pv.layer(layer, kBk));
  Var v = linear(t, x, pv.layer(layer, kWv), pv.layer(layer, kBv));
  const int head_dim = cfg.hidden_dim / cfg.num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Var> heads;
  heads.reserve(static_cast<size_t>(cfg.num_heads));
  for (int h = 0; h < cfg.num_heads; ++h) {
    const int c0 = h * head_dim;
    const int c1 = c0 + head_dim;
    Var qh = t.slice_cols(q, c0, c1);
    Var kh = t.slice_cols(k, c0, c1);
    Var vh = t.slice_cols(v, c0, c1);
    Var scores = t.scale(t.matmul_nt(qh, kh), scale);
    Var probs = t.softmax_rows(scores);
    heads.push_back(t.matmul(probs, vh));
  }
  Var ctx = cfg.num_heads == 1 ? heads[0] : t.concat_cols(heads);
  return linear(t, ctx, pv.layer(layer, kWo), pv.layer(layer, kBo));
}

}  // namespace

Var encoder_forward(Tape& tape, const ParamVars& pv, const std::vector<int>& token_ids,
                    const ForwardOptions& opt) {
  const EncoderConfig& cfg = pv.params->config;
  const int len = static_cast<int>(token_ids.size());
  if (len == 0) throw DataError("encoder_forward: empty input");
  if (len > cfg.max_positions) throw DataError("encoder_forward: input exceeds max_positions");
  const bool drop = opt.train && cfg.dropout > 0.0;
  if (drop && !opt.dropout_rng) throw ConfigError("encoder_forward: dropout requires an rng");

  std::vector<int> positions(static_cast<size_t>(len));
  for (int i = 0; i < len; ++i) positions[static_cast<size_t>(i)] = i;
  Var x = tape.add(tape.embedding(pv.tok_emb(), token_ids),
                   tape.embedding(pv.pos_emb(), std::move(positions)));
  if (drop) x = tape.dropout(x, cfg.dropout, *opt.dropout_rng);

  for (int l = 0; l < cfg.num_layers; ++l) {
    Var h = tape.layer_norm(x, pv.layer(l, kLn1G), pv.layer(l, kLn1B), cfg.ln_eps);
    Var attn = self_attention(tape, pv, l, h, cfg);
    if (drop) attn = tape.dropout(attn, cfg.dropout, *opt.dropout_rng);
    x = tape.add(x, attn);
    Var h2 = tape.layer_norm(x, pv.layer(l, kLn2G), pv.layer(l, kLn2B), cfg.ln_eps);
    Var ff = linear(tape, tape.gelu(linear(tape, h2, pv.layer(l, kW1), pv.layer(l, kB1))),
                    pv.layer(l, kW2), pv.layer(l, kB2));
    if (drop) ff = tape.dropout(ff, cfg.dropout, *opt.dropout_rng);
    x = tape.add(x, ff);
  }
  if (cfg.final_layer_norm) x = tape.layer_norm(x, pv.final_g(), pv.final_b(), cfg.ln_eps);
  return x;
}

Var project_tokens(Tape& tape, const ParamVars& pv, Var hidden) {
  return tape.add_row(tape.matmul(hidden, pv.proj_w()), pv.proj_b());
}

PooledVars pool_variant(Tape& tape, Var projected, const EncoderInput& input, PoolKind kind) {
  PooledVars out;
  out.bos = tape.mean_rows(projected, 0, 1);
  switch (kind) {
    case PoolKind::Attribute:
      for (const TokenSpan& s : input.spans) {
        out.spans.push_back(s);
        out.vars.push_back(tape.mean_rows(projected, s.begin, s.end));
      }
      break;
    case PoolKind::Item: {
      // Spans of one item are contiguous by construction.
      size_t i = 0;
      while (i < input.spans.size()) {
        size_t j = i;
        while (j + 1 < input.spans.size() &&
               input.spans[j + 1].item_pos == input.spans[i].item_pos)
          ++j;
        TokenSpan merged{input.spans[i].item_pos, 0, input.spans[i].begin, input.spans[j].end};
        out.spans.push_back(merged);
        out.vars.push_back(tape.mean_rows(projected, merged.begin, merged.end));
        i = j + 1;
      }
      break;
    }
    case PoolKind::Bos:
      out.spans.push_back({0, 0, 0, 1});
      out.vars.push_back(out.bos);
      break;
  }
  return out;
}

namespace {

MultiVectorRepr extract_repr(const Tape& tape, const PooledVars& pooled, int num_attrs,
                             PoolKind kind) {
  MultiVectorRepr repr;
  repr.num_attrs = kind == PoolKind::Attribute ? num_attrs : 1;
  for (size_t i = 0; i < pooled.vars.size(); ++i) {
    const Tensor& v = tape.value(pooled.vars[i]);
    repr.entries.push_back({pooled.spans[i].item_pos, pooled.spans[i].attr_index, v.data});
  }
  repr.bos = tape.value(pooled.bos).data;
  return repr;
}

}  // namespace

MultiVectorRepr encode_input_with_arity(const Model& model, const EncoderInput& input,
                                        int num_attrs) {
  Tape tape;
  ParamVars pv = register_params(tape, model.params, nullptr);
  Var hidden = encoder_forward(tape, pv, input.token_ids, {});
  Var projected = project_tokens(tape, pv, hidden);
  PooledVars pooled = pool_variant(tape, projected, input, model.pool);
  return extract_repr(tape, pooled, num_attrs, model.pool);
}

MultiVectorRepr encode_input(const Model& model, const EncoderInput& input) {
  int max_attr = 0;
  for (const TokenSpan& s : input.spans) max_attr = std::max(max_attr, s.attr_index + 1);
  return encode_input_with_arity(model, input, max_attr);
}

MultiVectorRepr encode_item(const Model& model, const ItemRecord& item) {
  EncoderInput input = build_item_input(item, model.vocab, model.tok);
  return encode_input_with_arity(model, input, static_cast<int>(item.attributes.size()));
}

MultiVectorRepr encode_sequence(const Model& model, const InteractionSequence& seq,
                                const Catalog& catalog) {
  EncoderInput input = build_sequence_input(seq, catalog, model.vocab, model.tok);
  return encode_input_with_arity(model, input, catalog.num_attrs());
}

// --- checkpoint serialization ---

namespace {

constexpr char kCheckpointMagic[8] = {'A', 'T', 'R', 'E', 'C', 'K', 'P', '1'};

void write_u64(std::ostream& out, uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return v;
}

void write_f64(std::ostream& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  write_u64(out, bits);
}

double read_f64(std::istream& in) {
  uint64_t bits = read_u64(in);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

json config_to_json(const EncoderConfig& c) {
  return json{{"vocab_size", c.vocab_size},   {"hidden_dim", c.hidden_dim},
              {"proj_dim", c.proj_dim},       {"num_layers", c.num_layers},
              {"num_heads", c.num_heads},     {"ff_dim", c.ff_dim},
              {"max_positions", c.max_positions}, {"dropout", c.dropout},
              {"final_layer_norm", c.final_layer_norm}, {"ln_eps", c.ln_eps}};
}

EncoderConfig config_from_json(const json& j) {
  EncoderConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.proj_dim = j.at("proj_dim").get<int>();
  c.num_layers = j.at("num_layers").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.ff_dim = j.at("ff_dim").get<int>();
  c.max_positions = j.at("max_positions").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.final_layer_norm = j.at("final_layer_norm").get<bool>();
  c.ln_eps = j.at("ln_eps").get<double>();
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const EncoderParams& params,
                     const Vocabulary& vocab, const TokenizerConfig& tok, PoolKind pool,
                     const std::string& metadata_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_checkpoint: cannot open " + path);

  json manifest = json::array();
  for (const auto& [name, t] : params.named_tensors())
    manifest.push_back(json{{"name", name}, {"rows", t->rows}, {"cols", t->cols}});
  json vocab_tokens = json::array();
  for (int i = 0; i < vocab.size(); ++i) vocab_tokens.push_back(vocab.token_of(i));

  json header{
      {"config", config_to_json(params.config)},
      {"tokenizer", {{"value_cap", tok.value_cap}, {"max_items", tok.max_items}, {"max_tokens", tok.max_tokens}}},
      {"pool", to_string(pool)},
      {"tensors", manifest},
      {"vocab", vocab_tokens},
      {"vocab_hash", hash_hex(vocab.hash())},
      {"params_hash", hash_hex(params.payload_hash())},
      {"metadata", metadata_json.empty() ? json(nullptr) : json::parse(metadata_json)},
  };
  const std::string header_bytes = header.dump();

  out.write(kCheckpointMagic, 8);
  write_u64(out, header_bytes.size());
  out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
  for (const auto& [name, t] : params.named_tensors())
    for (double v : t->data) write_f64(out, v);
  if (!out) throw DataError("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError("load_checkpoint: bad magic in " + path);
  const uint64_t header_len = read_u64(in);
  std::string header_bytes(header_len, '\0');
  in.read(header_bytes.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError("load_checkpoint: truncated header in " + path);
  json header = json::parse(header_bytes);

  Checkpoint ck;
  ck.model.params.config = config_from_json(header.at("config"));
  ck.model.tok.value_cap = header.at("tokenizer").at("value_cap").get<int>();
  ck.model.tok.max_items = header.at("tokenizer").at("max_items").get<int>();
  ck.model.tok.max_tokens = header.at("tokenizer").at("max_tokens").get<int>();
  ck.model.pool = pool_kind_from_string(header.at("pool").get<std::string>());
  for (const auto& tok : header.at("vocab")) {
    const std::string t = tok.get<std::string>();
    if (t != "[PAD]" && t != "[BOS]" && t != "[UNK]") ck.model.vocab.add(t);
  }
  if (hash_hex(ck.model.vocab.hash()) != header.at("vocab_hash").get<std::string>())
    throw DataError("load_checkpoint: vocabulary hash mismatch in " + path);

  // Materialize tensors, then fill from the payload in manifest order.
  EncoderParams params = EncoderParams::init(ck.model.params.config, 0);
  auto tensors = params.named_tensors();
  const json& manifest = header.at("tensors");
  if (manifest.size() != tensors.size())
    throw DataError("load_checkpoint: tensor manifest mismatch in " + path);
  for (size_t i = 0; i < tensors.size(); ++i) {
    const auto& entry = manifest[i];
    if (entry.at("name").get<std::string>() != tensors[i].first ||
        entry.at("rows").get<int>() != tensors[i].second->rows ||
        entry.at("cols").get<int>() != tensors[i].second->cols)
      throw DataError("load_checkpoint: tensor layout mismatch at " + tensors[i].first);
    for (double& v : tensors[i].second->data) v = read_f64(in);
  }
  if (!in) throw DataError("load_checkpoint: truncated payload in " + path);
  if (hash_hex(params.payload_hash()) != header.at("params_hash").get<std::string>())
    throw DataError("load_checkpoint: parameter hash mismatch in " + path);
  ck.model.params = std::move(params);
  ck.metadata_json = header.at("metadata").is_null() ? "" : header.at("metadata").dump();
  return ck;
}

}  // namespace attrec
