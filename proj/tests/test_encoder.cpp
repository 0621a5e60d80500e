#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "attrec/encoder.hpp"
#include "attrec/selfcheck.hpp"

using namespace attrec;

namespace {

Catalog small_catalog() {
  Catalog c;
  c.attribute_keys = {"Title", "Brand", "Category"};
  c.items.push_back({"A", {{"Title", "Magic Mouse"}, {"Brand", "Apple"}, {"Category", "Mouse"}}});
  c.items.push_back({"B", {{"Title", "G913 Keyboard"}, {"Brand", "Logitech"}, {"Category", "Keyboard"}}});
  c.items.push_back({"C", {{"Title", "Gaming Headset"}, {"Brand", "Logitech"}, {"Category", "Headset"}}});
  c.items.push_back({"D", {{"Title", "Thunderbolt Dock"}, {"Brand", "Apple"}, {"Category", "Dock"}}});
  c.rebuild_lookup();
  return c;
}

Model small_model(int layers = 1, uint64_t seed = 5) {
  Model m;
  m.vocab = build_vocab(small_catalog(), 1);
  EncoderConfig cfg;
  cfg.vocab_size = m.vocab.size();
  cfg.hidden_dim = 12;
  cfg.proj_dim = 6;
  cfg.num_layers = layers;
  cfg.num_heads = 2;
  cfg.ff_dim = 24;
  cfg.max_positions = 64;
  m.params = EncoderParams::init(cfg, seed);
  m.tok = TokenizerConfig{8, 8, 64};
  return m;
}

}  // namespace

TEST_CASE("forward produces one finite hidden state per token") {
  Model m = small_model(2);
  Catalog c = small_catalog();
  EncoderInput in = build_item_input(c.items[0], m.vocab, m.tok);
  Tape tape;
  ParamVars pv = register_params(tape, m.params, nullptr);
  Var h = encoder_forward(tape, pv, in.token_ids, {});
  const Tensor& hv = tape.value(h);
  CHECK(hv.rows == static_cast<int>(in.token_ids.size()));
  CHECK(hv.cols == 12);
  CHECK(hv.all_finite());
}

TEST_CASE("zero-layer forward is the embedding sum") {
  Model m = small_model(0);
  m.params.config.final_layer_norm = false;
  m.params = EncoderParams::init(m.params.config, 5);

  std::vector<int> ids{1, 3, 4, 3};
  Tape tape;
  ParamVars pv = register_params(tape, m.params, nullptr);
  Var h = encoder_forward(tape, pv, ids, {});
  const Tensor& hv = tape.value(h);
  for (size_t i = 0; i < ids.size(); ++i)
    for (int cdim = 0; cdim < 12; ++cdim)
      CHECK(hv.at(static_cast<int>(i), cdim) ==
            m.params.tok_emb.at(ids[i], cdim) + m.params.pos_emb.at(static_cast<int>(i), cdim));
}

TEST_CASE("forward is position sensitive") {
  Model m = small_model(1);
  std::vector<int> ids{1, 3, 4, 5};
  std::vector<int> swapped{1, 4, 3, 5};
  Tape t1, t2;
  Var h1 = encoder_forward(t1, register_params(t1, m.params, nullptr), ids, {});
  Var h2 = encoder_forward(t2, register_params(t2, m.params, nullptr), swapped, {});
  // Same multiset of tokens, different positions: outputs must differ.
  double diff = 0.0;
  for (int cdim = 0; cdim < 12; ++cdim)
    diff += std::abs(t1.value(h1).at(3, cdim) - t2.value(h2).at(3, cdim));
  CHECK(diff > 1e-9);
}

TEST_CASE("forward rejects oversized inputs") {
  Model m = small_model(0);
  std::vector<int> ids(static_cast<size_t>(m.params.config.max_positions) + 1, 3);
  Tape tape;
  ParamVars pv = register_params(tape, m.params, nullptr);
  CHECK_THROWS_AS(encoder_forward(tape, pv, ids, {}), DataError);
}

TEST_CASE("projection behaves as x*W + b") {
  Model m = small_model(0);

  SUBCASE("identity weights with d' = d") {
    EncoderConfig cfg = m.params.config;
    cfg.proj_dim = cfg.hidden_dim;
    EncoderParams p = EncoderParams::init(cfg, 5);
    p.proj_w.fill(0.0);
    for (int i = 0; i < cfg.hidden_dim; ++i) p.proj_w.at(i, i) = 1.0;
    p.proj_b.fill(0.0);
    Tape tape;
    ParamVars pv = register_params(tape, p, nullptr);
    Var h = encoder_forward(tape, pv, {1, 3, 4}, {});
    Var o = project_tokens(tape, pv, h);
    const Tensor& hv = tape.value(h);
    const Tensor& ov = tape.value(o);
    for (int r = 0; r < hv.rows; ++r)
      for (int cdim = 0; cdim < hv.cols; ++cdim) CHECK(ov.at(r, cdim) == hv.at(r, cdim));
  }

  SUBCASE("zero weights give the bias everywhere") {
    EncoderParams p = m.params;
    p.proj_w.fill(0.0);
    for (int i = 0; i < p.proj_b.cols; ++i) p.proj_b.at(0, i) = 0.25 * (i + 1);
    Tape tape;
    ParamVars pv = register_params(tape, p, nullptr);
    Var o = project_tokens(tape, pv, encoder_forward(tape, pv, {1, 3, 4}, {}));
    const Tensor& ov = tape.value(o);
    for (int r = 0; r < ov.rows; ++r)
      for (int cdim = 0; cdim < ov.cols; ++cdim) CHECK(ov.at(r, cdim) == 0.25 * (cdim + 1));
  }

  SUBCASE("random weights match a naive triple-loop oracle") {
    Tape tape;
    ParamVars pv = register_params(tape, m.params, nullptr);
    Var h = encoder_forward(tape, pv, {1, 3, 4, 5, 6}, {});
    Var o = project_tokens(tape, pv, h);
    const Tensor& hv = tape.value(h);
    const Tensor& ov = tape.value(o);
    for (int r = 0; r < hv.rows; ++r)
      for (int j = 0; j < m.params.config.proj_dim; ++j) {
        double want = m.params.proj_b.at(0, j);
        for (int k = 0; k < m.params.config.hidden_dim; ++k)
          want += hv.at(r, k) * m.params.proj_w.at(k, j);
        CHECK(std::abs(ov.at(r, j) - want) < 1e-6);
      }
  }
}

TEST_CASE("pool_attributes averages span token states") {
  Model m = small_model(1);
  Catalog c = small_catalog();
  EncoderInput in = build_item_input(c.items[1], m.vocab, m.tok);
  Tape tape;
  ParamVars pv = register_params(tape, m.params, nullptr);
  Var o = project_tokens(tape, pv, encoder_forward(tape, pv, in.token_ids, {}));
  PooledVars pooled = pool_attributes(tape, o, in);
  const Tensor& ov = tape.value(o);
  REQUIRE(pooled.vars.size() == in.spans.size());
  for (size_t s = 0; s < in.spans.size(); ++s) {
    const TokenSpan& span = in.spans[s];
    const Tensor& got = tape.value(pooled.vars[s]);
    for (int cdim = 0; cdim < ov.cols; ++cdim) {
      double sum = 0.0;
      for (int r = span.begin; r < span.end; ++r) sum += ov.at(r, cdim);
      CHECK(std::abs(got.at(0, cdim) - sum / (span.end - span.begin)) < 1e-7);
    }
  }
  // Singleton span: pooled vector equals the token state; 2-token span: mean.
  Tensor x(3, 4);
  Rng rng(9);
  for (double& v : x.data) v = rng.uniform(-1, 1);
  Tape t2;
  Var xv = t2.constant(x);
  EncoderInput fake;
  fake.token_ids = {1, 3, 4};
  fake.spans = {{0, 0, 1, 2}, {0, 1, 2, 3}};
  PooledVars p2 = pool_attributes(t2, xv, fake);
  for (int cdim = 0; cdim < 4; ++cdim) CHECK(t2.value(p2.vars[0]).at(0, cdim) == x.at(1, cdim));
}

TEST_CASE("pooling commutes with linear maps") {
  Rng rng(13);
  Tensor x(6, 5), w(5, 3);
  for (double& v : x.data) v = rng.uniform(-1, 1);
  for (double& v : w.data) v = rng.uniform(-1, 1);
  Tape tape;
  Var xv = tape.constant(x);
  Var wv = tape.constant(w);
  Var mapped = tape.matmul(xv, wv);
  Var pooled_then_mapped = tape.matmul(tape.mean_rows(xv, 2, 5), wv);
  Var mapped_then_pooled = tape.mean_rows(mapped, 2, 5);
  for (int cdim = 0; cdim < 3; ++cdim)
    CHECK(tape.value(pooled_then_mapped).at(0, cdim) ==
          doctest::Approx(tape.value(mapped_then_pooled).at(0, cdim)).epsilon(1e-12));
}

TEST_CASE("encode_item and encode_sequence share structure and weights") {
  Model m = small_model(2);
  Catalog c = small_catalog();

  MultiVectorRepr item = encode_item(m, c.items[1]);
  CHECK(item.num_attrs == 3);
  CHECK(item.entries.size() == 3);
  for (const auto& e : item.entries) CHECK(e.v.size() == 6);

  // n=1 equivalence: identical token stream, identical vectors.
  MultiVectorRepr seq1 = encode_sequence(m, {"u", {"B"}}, c);
  REQUIRE(seq1.entries.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(seq1.entries[i].attr_index == item.entries[i].attr_index);
    CHECK(seq1.entries[i].v == item.entries[i].v);
  }
  CHECK(seq1.bos == item.bos);

  // n=4, m=3, no truncation: 12 entries with positions 4..1.
  MultiVectorRepr seq4 = encode_sequence(m, {"u", {"A", "B", "C", "D"}}, c);
  CHECK(seq4.entries.size() == 12);
  CHECK(seq4.entries[0].item_pos == 4);
  CHECK(seq4.entries[11].item_pos == 1);
}

TEST_CASE("eval-mode encoding is bit-reproducible") {
  Model m = small_model(2);
  Catalog c = small_catalog();
  MultiVectorRepr a = encode_sequence(m, {"u", {"A", "B", "C"}}, c);
  MultiVectorRepr b = encode_sequence(m, {"u", {"A", "B", "C"}}, c);
  REQUIRE(a.entries.size() == b.entries.size());
  for (size_t i = 0; i < a.entries.size(); ++i) CHECK(a.entries[i].v == b.entries[i].v);
}

TEST_CASE("pool_variant grains") {
  Model m = small_model(1);
  Catalog c = small_catalog();
  EncoderInput in = build_sequence_input({"u", {"A", "B"}}, c, m.vocab, m.tok);
  Tape tape;
  ParamVars pv = register_params(tape, m.params, nullptr);
  Var o = project_tokens(tape, pv, encoder_forward(tape, pv, in.token_ids, {}));

  PooledVars attr = pool_variant(tape, o, in, PoolKind::Attribute);
  PooledVars attr2 = pool_attributes(tape, o, in);
  REQUIRE(attr.vars.size() == attr2.vars.size());
  for (size_t i = 0; i < attr.vars.size(); ++i)
    CHECK(tape.value(attr.vars[i]).data == tape.value(attr2.vars[i]).data);

  PooledVars bos = pool_variant(tape, o, in, PoolKind::Bos);
  REQUIRE(bos.vars.size() == 1);
  CHECK(tape.value(bos.vars[0]).data == tape.value(bos.bos).data);

  PooledVars item = pool_variant(tape, o, in, PoolKind::Item);
  REQUIRE(item.vars.size() == 2);  // one per item position
  CHECK(item.spans[0].item_pos == 2);
  CHECK(item.spans[1].item_pos == 1);

  // Item pooling equals the mean of attribute vectors only when the spans
  // have equal token counts.
  SUBCASE("item pooling vs attribute-mean on crafted spans") {
    Tensor x(5, 3);
    Rng rng(21);
    for (double& v : x.data) v = rng.uniform(-1, 1);
    EncoderInput even;
    even.token_ids = {1, 3, 3, 4, 4};
    even.spans = {{1, 0, 1, 3}, {1, 1, 3, 5}};  // equal widths
    Tape t2;
    Var xv = t2.constant(x);
    PooledVars by_item = pool_variant(t2, xv, even, PoolKind::Item);
    PooledVars by_attr = pool_variant(t2, xv, even, PoolKind::Attribute);
    for (int cdim = 0; cdim < 3; ++cdim) {
      const double attr_mean = 0.5 * (t2.value(by_attr.vars[0]).at(0, cdim) +
                                      t2.value(by_attr.vars[1]).at(0, cdim));
      CHECK(t2.value(by_item.vars[0]).at(0, cdim) == doctest::Approx(attr_mean).epsilon(1e-12));
    }

    EncoderInput uneven;
    uneven.token_ids = {1, 3, 3, 3, 4};
    uneven.spans = {{1, 0, 1, 4}, {1, 1, 4, 5}};  // widths 3 and 1
    Tape t3;
    Var xv3 = t3.constant(x);
    PooledVars by_item3 = pool_variant(t3, xv3, uneven, PoolKind::Item);
    PooledVars by_attr3 = pool_variant(t3, xv3, uneven, PoolKind::Attribute);
    double diff = 0.0;
    for (int cdim = 0; cdim < 3; ++cdim) {
      const double attr_mean = 0.5 * (t3.value(by_attr3.vars[0]).at(0, cdim) +
                                      t3.value(by_attr3.vars[1]).at(0, cdim));
      diff += std::abs(t3.value(by_item3.vars[0]).at(0, cdim) - attr_mean);
    }
    CHECK(diff > 1e-9);
  }
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  Model m = small_model(2, 77);
  const std::string path =
      (std::filesystem::temp_directory_path() / "attrec_ckpt_test.bin").string();
  save_checkpoint(path, m.params, m.vocab, m.tok, PoolKind::Attribute, R"({"note":"t"})");
  Checkpoint ck = load_checkpoint(path);
  CHECK(ck.model.params.payload_hash() == m.params.payload_hash());
  CHECK(ck.model.vocab.hash() == m.vocab.hash());
  CHECK(ck.model.tok.value_cap == m.tok.value_cap);
  CHECK(ck.model.pool == PoolKind::Attribute);
  auto a = ck.model.params.named_tensors();
  auto b = m.params.named_tensors();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].second->data == b[i].second->data);
}

TEST_CASE("full-path gradients match finite differences (compact config)") {
  GradCheckOptions options;
  options.config.hidden_dim = 8;
  options.config.proj_dim = 4;
  options.config.num_layers = 1;
  options.config.num_heads = 2;
  options.config.ff_dim = 16;
  options.config.max_positions = 64;
  options.num_items = 5;
  options.num_users = 3;
  options.examples = 2;
  GradCheckReport report = gradient_check(options);
  INFO("max rel err ", report.max_rel_err);
  CHECK(report.pass);
  for (const auto& [name, err] : report.tensor_rel_err) {
    INFO("tensor ", name);
    CHECK(err < 1e-4);
  }
}
