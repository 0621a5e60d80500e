#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "attrec/eval.hpp"
#include "attrec/item_index.hpp"

using namespace attrec;

namespace {

struct Fixture {
  Catalog catalog;
  std::vector<InteractionSequence> sequences;
  Model model;
};

Fixture make_fixture(int items, int users, uint64_t seed) {
  SyntheticConfig sc;
  sc.num_items = items;
  sc.num_users = users;
  sc.num_brands = 5;
  sc.num_categories = 5;
  sc.seq_len = 5;
  sc.seed = seed;
  SyntheticData data = generate_synthetic(sc);
  Fixture fx;
  fx.catalog = std::move(data.catalog);
  fx.sequences = std::move(data.sequences);
  fx.model.vocab = build_vocab(fx.catalog, 1);
  EncoderConfig cfg;
  cfg.vocab_size = fx.model.vocab.size();
  cfg.hidden_dim = 12;
  cfg.proj_dim = 6;
  cfg.num_layers = 1;
  cfg.num_heads = 2;
  cfg.ff_dim = 24;
  cfg.max_positions = 128;
  fx.model.params = EncoderParams::init(cfg, seed);
  fx.model.tok = TokenizerConfig{8, 8, 128};
  return fx;
}

}  // namespace

TEST_CASE("build_index matches encode_item and is deterministic") {
  Fixture fx = make_fixture(30, 10, 42);
  ItemIndex index = ItemIndex::build(fx.catalog, fx.model);
  REQUIRE(index.num_items() == 30);
  REQUIRE(index.num_attrs() == 3);

  // Singleton catalog: index vectors equal encode_item exactly.
  Catalog one;
  one.attribute_keys = fx.catalog.attribute_keys;
  one.items.push_back(fx.catalog.items[0]);
  one.rebuild_lookup();
  ItemIndex single = ItemIndex::build(one, fx.model);
  MultiVectorRepr repr = encode_item(fx.model, one.items[0]);
  for (const auto& e : repr.entries) {
    auto stored = single.vec(0, e.attr_index);
    REQUIRE(stored.size() == e.v.size());
    for (size_t k = 0; k < e.v.size(); ++k) CHECK(stored[k] == e.v[k]);
  }

  // Rebuild with the same params: byte-identical payload.
  ItemIndex again = ItemIndex::build(fx.catalog, fx.model);
  CHECK(again.payload_hash() == index.payload_hash());

  // Threaded build agrees with the single-threaded one.
  ItemIndex threaded = ItemIndex::build(fx.catalog, fx.model, 2);
  CHECK(threaded.payload_hash() == index.payload_hash());

  // Spot-check random items against fresh encodings.
  Rng rng(7);
  for (int s = 0; s < 5; ++s) {
    const int i = rng.next_int(30);
    MultiVectorRepr fresh = encode_item(fx.model, fx.catalog.items[static_cast<size_t>(i)]);
    for (const auto& e : fresh.entries) {
      auto stored = index.vec(i, e.attr_index);
      for (size_t k = 0; k < e.v.size(); ++k) CHECK(stored[k] == e.v[k]);
    }
  }
}

TEST_CASE("index persists and reloads with identical query results") {
  Fixture fx = make_fixture(25, 8, 43);
  ItemIndex index = ItemIndex::build(fx.catalog, fx.model);
  const std::string path =
      (std::filesystem::temp_directory_path() / "attrec_index_rt.bin").string();
  index.save(path, R"({"purpose":"test"})");
  ItemIndex loaded = ItemIndex::load(path);
  CHECK(loaded.payload_hash() == index.payload_hash());
  CHECK(loaded.encoder_hash() == index.encoder_hash());
  CHECK(loaded.item_ids() == index.item_ids());

  MultiVectorRepr user = encode_sequence(fx.model, fx.sequences[0], fx.catalog);
  std::vector<double> a = batch_score(user, index, MatchConfig{});
  std::vector<double> b = batch_score(user, loaded, MatchConfig{});
  CHECK(a == b);
}

TEST_CASE("recommend_topk ranks by score with id tie-break") {
  Fixture fx = make_fixture(50, 10, 44);
  ItemIndex index = ItemIndex::build(fx.catalog, fx.model);
  const InteractionSequence& seq = fx.sequences[0];

  auto top5 = recommend_topk(seq, index, fx.model, fx.catalog, 5, MatchConfig{});
  REQUIRE(top5.size() == 5);
  auto full = recommend_topk(seq, index, fx.model, fx.catalog, 500, MatchConfig{});
  REQUIRE(full.size() == 50);  // K beyond the catalog clamps

  // Sort oracle over batch_score output.
  MultiVectorRepr user = encode_sequence(fx.model, seq, fx.catalog);
  std::vector<double> scores = batch_score(user, index, MatchConfig{});
  std::vector<int> order(scores.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int x, int y) {
    if (scores[static_cast<size_t>(x)] != scores[static_cast<size_t>(y)])
      return scores[static_cast<size_t>(x)] > scores[static_cast<size_t>(y)];
    return index.item_ids()[static_cast<size_t>(x)] < index.item_ids()[static_cast<size_t>(y)];
  });
  for (size_t i = 0; i < full.size(); ++i) {
    CHECK(full[i].item_id == index.item_ids()[static_cast<size_t>(order[i])]);
    CHECK(full[i].score == scores[static_cast<size_t>(order[i])]);
    // Breakdown totals agree with the batched score.
    CHECK(full[i].breakdown.total == doctest::Approx(full[i].score).epsilon(1e-12));
  }

  // recommend_topk(K) is a prefix of recommend_topk(K+1).
  auto top6 = recommend_topk(seq, index, fx.model, fx.catalog, 6, MatchConfig{});
  for (size_t i = 0; i < top5.size(); ++i) CHECK(top5[i].item_id == top6[i].item_id);

  CHECK_THROWS_AS(recommend_topk(seq, index, fx.model, fx.catalog, 0, MatchConfig{}), ConfigError);

  SUBCASE("stale index is rejected") {
    Model other = fx.model;
    other.params = EncoderParams::init(fx.model.params.config, 999);
    CHECK_THROWS_AS(recommend_topk(seq, index, other, fx.catalog, 3, MatchConfig{}), DataError);
  }

  SUBCASE("mask_seen removes history items") {
    auto masked = recommend_topk(seq, index, fx.model, fx.catalog, 50, MatchConfig{}, true);
    for (const auto& rec : masked)
      CHECK(std::find(seq.item_ids.begin(), seq.item_ids.end(), rec.item_id) == seq.item_ids.end());
  }
}

TEST_CASE("metric closed forms") {
  CHECK(recall_at_k(1, 10) == 1.0);
  CHECK(recall_at_k(11, 10) == 0.0);
  CHECK(ndcg_at_k(1, 10) == 1.0);
  CHECK(ndcg_at_k(4, 10) == doctest::Approx(1.0 / std::log2(5.0)).epsilon(1e-12));
  CHECK(ndcg_at_k(4, 10) == doctest::Approx(0.43067655807339306).epsilon(1e-12));
  CHECK(ndcg_at_k(11, 10) == 0.0);
}

TEST_CASE("metrics match brute-force membership on random ranks") {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const int rank = 1 + rng.next_int(100);
    const int k = 1 + rng.next_int(20);
    // Membership oracle over the explicit top-k set.
    bool member = false;
    for (int r = 1; r <= k; ++r)
      if (r == rank) member = true;
    CHECK(recall_at_k(rank, k) == (member ? 1.0 : 0.0));
    CHECK(ndcg_at_k(rank, k) == (member ? 1.0 / std::log2(rank + 1.0) : 0.0));
    CHECK(ndcg_at_k(rank, k) <= recall_at_k(rank, k));
    // Monotone in K.
    CHECK(recall_at_k(rank, k) <= recall_at_k(rank, k + 1));
    CHECK(ndcg_at_k(rank, k) <= ndcg_at_k(rank, k + 1));
  }
}

TEST_CASE("evaluate aggregates means the oracle way") {
  Fixture fx = make_fixture(20, 20, 45);
  DatasetSplit split = split_leave_one_out(fx.sequences);
  ItemIndex index = ItemIndex::build(fx.catalog, fx.model);
  EvalReport report = evaluate(split.test, index, fx.model, fx.catalog, MatchConfig{}, {5, 10});
  REQUIRE(report.users == 20);

  // Hand-summed oracle over per-user ranks.
  std::vector<int> ranks = target_ranks(split.test, index, fx.model, fx.catalog, MatchConfig{});
  for (int k : {5, 10}) {
    double recall_sum = 0.0, ndcg_sum = 0.0;
    for (int r : ranks) {
      recall_sum += r <= k ? 1.0 : 0.0;
      ndcg_sum += r <= k ? 1.0 / std::log2(r + 1.0) : 0.0;
    }
    CHECK(std::abs(report.recall.at(k) - recall_sum / 20.0) < 1e-12);
    CHECK(std::abs(report.ndcg.at(k) - ndcg_sum / 20.0) < 1e-12);
    CHECK(report.ndcg.at(k) <= report.recall.at(k) + 1e-15);
  }

  SUBCASE("evaluation is deterministic and thread-invariant") {
    EvalReport again = evaluate(split.test, index, fx.model, fx.catalog, MatchConfig{}, {5, 10});
    CHECK(again.recall == report.recall);
    CHECK(again.ndcg == report.ndcg);
    EvalReport threaded = evaluate(split.test, index, fx.model, fx.catalog, MatchConfig{}, {5, 10}, 2);
    CHECK(threaded.recall == report.recall);
    CHECK(threaded.ndcg == report.ndcg);
  }

  SUBCASE("empty view is rejected") {
    CHECK_THROWS_AS(evaluate({}, index, fx.model, fx.catalog, MatchConfig{}, {10}), DataError);
  }
}

TEST_CASE("single user with the unique catalog item gets perfect metrics") {
  Catalog c;
  c.attribute_keys = {"Title"};
  c.items.push_back({"only", {{"Title", "the one thing"}}});
  c.rebuild_lookup();
  Model m;
  m.vocab = build_vocab(c, 1);
  EncoderConfig cfg;
  cfg.vocab_size = m.vocab.size();
  cfg.hidden_dim = 8;
  cfg.proj_dim = 4;
  cfg.num_layers = 0;
  cfg.num_heads = 1;
  cfg.ff_dim = 8;
  cfg.max_positions = 32;
  m.params = EncoderParams::init(cfg, 1);
  m.tok = TokenizerConfig{8, 4, 32};
  ItemIndex index = ItemIndex::build(c, m);
  std::vector<SplitExample> view{{"u", {"only"}, "only"}};
  EvalReport report = evaluate(view, index, m, c, MatchConfig{}, {1});
  CHECK(report.recall.at(1) == 1.0);
  CHECK(report.ndcg.at(1) == 1.0);
}

TEST_CASE("untrained encoder on uniform data sits at the null rate") {
  // Uniform interactions: targets independent of history, so the expected
  // recall@10 is 10/C for any fixed scoring function.
  Fixture fx = make_fixture(40, 1, 46);
  Rng rng(555);
  std::vector<SplitExample> view;
  for (int u = 0; u < 300; ++u) {
    SplitExample ex;
    ex.user_id = "nu" + std::to_string(u);
    for (int t = 0; t < 3; ++t)
      ex.prefix.push_back(fx.catalog.items[static_cast<size_t>(rng.next_int(40))].item_id);
    ex.target = fx.catalog.items[static_cast<size_t>(rng.next_int(40))].item_id;
    view.push_back(std::move(ex));
  }
  ItemIndex index = ItemIndex::build(fx.catalog, fx.model);
  EvalReport report = evaluate(view, index, fx.model, fx.catalog, MatchConfig{}, {10});
  const double p = 10.0 / 40.0;
  const double se = std::sqrt(p * (1 - p) / 300.0);
  CHECK(report.recall.at(10) > p - 3 * se);
  CHECK(report.recall.at(10) < p + 3 * se);
}
