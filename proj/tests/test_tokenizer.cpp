#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <set>
#include <sstream>

#include "attrec/tokenizer.hpp"

using namespace attrec;

namespace {

Catalog three_attr_catalog() {
  Catalog c;
  c.attribute_keys = {"Title", "Brand", "Category"};
  c.items.push_back({"A", {{"Title", "Magic Mouse"}, {"Brand", "Apple"}, {"Category", "Mouse"}}});
  c.items.push_back({"B", {{"Title", "G913 Keyboard"}, {"Brand", "Logitech"}, {"Category", "Keyboard"}}});
  c.items.push_back({"C", {{"Title", "Gaming Headset"}, {"Brand", "Logitech"}, {"Category", "Headset"}}});
  c.rebuild_lookup();
  return c;
}

std::string detok_span(const EncoderInput& in, const TokenSpan& s, const Vocabulary& v) {
  std::string out;
  for (int i = s.begin; i < s.end; ++i) {
    if (!out.empty()) out += " ";
    out += v.token_of(in.token_ids[static_cast<size_t>(i)]);
  }
  return out;
}

}  // namespace

TEST_CASE("word_tokenize lowercases and splits punctuation") {
  CHECK(word_tokenize("Category: Keyboard") == std::vector<std::string>{"category", ":", "keyboard"});
  CHECK(word_tokenize("USB-C Hub 2x") == std::vector<std::string>{"usb", "-", "c", "hub", "2x"});
  CHECK(word_tokenize("  ") == std::vector<std::string>{});
}

TEST_CASE("build_vocab counts, thresholds, and orders deterministically") {
  Vocabulary v1 = build_vocab_from_texts({"a b", "a"}, 1);
  CHECK(v1.size() == 5);  // 3 specials + a + b
  CHECK(v1.id_of("a") == 3);
  CHECK(v1.id_of("b") == 4);

  Vocabulary v2 = build_vocab_from_texts({"a b", "a"}, 2);
  CHECK(v2.size() == 4);
  CHECK(v2.id_of("b") == Vocabulary::kUnk);

  CHECK_THROWS_AS(build_vocab_from_texts({}, 1), DataError);
}

TEST_CASE("build_vocab over a bigger fixture is reproducible") {
  std::vector<std::string> texts;
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    std::ostringstream os;
    os << "word" << rng.next_int(200) << " word" << rng.next_int(50) << " tail" << rng.next_int(17);
    texts.push_back(os.str());
  }
  Vocabulary a = build_vocab_from_texts(texts, 2);
  Vocabulary b = build_vocab_from_texts(texts, 2);
  REQUIRE(a.size() == b.size());
  for (int i = 0; i < a.size(); ++i) CHECK(a.token_of(i) == b.token_of(i));
  CHECK(a.hash() == b.hash());
}

TEST_CASE("tokenize_attribute joins key and value with a cap on value tokens") {
  Catalog c = three_attr_catalog();
  Vocabulary v = build_vocab(c, 1);

  TokenizedAttribute t = tokenize_attribute({"Category", "Keyboard"}, v, 32);
  REQUIRE(t.token_ids.size() == 3);
  CHECK(t.token_ids[0] == v.id_of("category"));
  CHECK(t.token_ids[1] == v.id_of(":"));
  CHECK(t.token_ids[2] == v.id_of("keyboard"));
  CHECK(t.key_len == 2);

  TokenizedAttribute empty = tokenize_attribute({"Brand", ""}, v, 32);
  REQUIRE(empty.token_ids.size() == 2);
  CHECK(empty.token_ids[0] == v.id_of("brand"));
  CHECK(empty.token_ids[1] == v.id_of(":"));

  std::string long_value;
  for (int i = 0; i < 40; ++i) long_value += "w" + std::to_string(i) + " ";
  TokenizedAttribute capped = tokenize_attribute({"Title", long_value}, v, 32);
  CHECK(capped.token_ids.size() == static_cast<size_t>(capped.key_len) + 32);
}

TEST_CASE("build_item_input structure") {
  Catalog c = three_attr_catalog();
  Vocabulary v = build_vocab(c, 1);
  TokenizerConfig cfg;

  EncoderInput in = build_item_input(c.items[0], v, cfg);
  REQUIRE(in.spans.size() == 3);
  CHECK(in.token_ids[0] == Vocabulary::kBos);
  CHECK(in.spans[0].begin == 1);
  CHECK(in.spans[0].item_pos == 0);
  // Spans tile the token stream.
  for (size_t i = 0; i + 1 < in.spans.size(); ++i) CHECK(in.spans[i].end == in.spans[i + 1].begin);
  CHECK(in.spans.back().end == static_cast<int>(in.token_ids.size()));

  EncoderInput one = build_item_input({"X", {{"Title", "Magic Mouse Pro"}}}, v, cfg);
  CHECK(one.token_ids.size() == 1 + 5);  // [BOS] + title : magic mouse pro

  // Detokenized spans reproduce the "key : value" texts.
  for (size_t j = 0; j < in.spans.size(); ++j) {
    const auto& attr = c.items[0].attributes[j];
    std::string expect;
    for (const auto& w : word_tokenize(attr.key + ": " + attr.value)) {
      if (!expect.empty()) expect += " ";
      expect += w;
    }
    CHECK(detok_span(in, in.spans[j], v) == expect);
  }
}

TEST_CASE("build_sequence_input serializes newest-first with true positions") {
  Catalog c = three_attr_catalog();
  Vocabulary v = build_vocab(c, 1);
  TokenizerConfig cfg;

  InteractionSequence seq{"u", {"A", "B", "C"}};
  EncoderInput in = build_sequence_input(seq, c, v, cfg);
  REQUIRE(in.spans.size() == 9);
  // Serialized order c, b, a -> positions 3, 2, 1.
  CHECK(in.spans[0].item_pos == 3);
  CHECK(in.spans[3].item_pos == 2);
  CHECK(in.spans[6].item_pos == 1);
  CHECK(detok_span(in, in.spans[0], v) == "title : gaming headset");

  SUBCASE("single-item sequence matches the item input token stream") {
    EncoderInput si = build_sequence_input({"u", {"B"}}, c, v, cfg);
    EncoderInput ii = build_item_input(*c.find("B"), v, cfg);
    CHECK(si.token_ids == ii.token_ids);
    REQUIRE(si.spans.size() == ii.spans.size());
    for (size_t i = 0; i < si.spans.size(); ++i) {
      CHECK(si.spans[i].begin == ii.spans[i].begin);
      CHECK(si.spans[i].end == ii.spans[i].end);
      CHECK(si.spans[i].attr_index == ii.spans[i].attr_index);
    }
  }
}

TEST_CASE("sequence truncation honors max_items and max_tokens") {
  Catalog c;
  c.attribute_keys = {"Title"};
  for (int i = 0; i < 60; ++i)
    c.items.push_back({"i" + std::to_string(i), {{"Title", "thing " + std::to_string(i)}}});
  c.rebuild_lookup();
  Vocabulary v = build_vocab(c, 1);

  InteractionSequence seq;
  seq.user_id = "u";
  for (int i = 0; i < 60; ++i) seq.item_ids.push_back("i" + std::to_string(i));

  TokenizerConfig cfg;
  cfg.max_items = 50;
  EncoderInput in = build_sequence_input(seq, c, v, cfg);
  std::set<int> positions;
  for (const auto& s : in.spans) positions.insert(s.item_pos);
  CHECK(positions.size() == 50);
  CHECK(*positions.begin() == 11);  // oldest 10 absent
  CHECK(*positions.rbegin() == 60);

  SUBCASE("token cap truncates mid-attribute and drops fully cut spans") {
    TokenizerConfig tight = cfg;
    tight.max_tokens = 10;  // [BOS] + 9 tokens; each item is 4 tokens
    EncoderInput t = build_sequence_input(seq, c, v, tight);
    CHECK(t.token_ids.size() == 10);
    REQUIRE(t.spans.size() == 3);
    CHECK(t.spans[2].end - t.spans[2].begin == 1);  // partially cut span survives
    // Span cover: non-BOS tokens tile exactly.
    CHECK(t.spans[0].begin == 1);
    for (size_t i = 0; i + 1 < t.spans.size(); ++i) CHECK(t.spans[i].end == t.spans[i + 1].begin);
    CHECK(t.spans.back().end == 10);
  }

  SUBCASE("raising max_tokens never removes a span (monotonicity)") {
    TokenizerConfig small = cfg;
    small.max_tokens = 17;
    TokenizerConfig big = cfg;
    big.max_tokens = 33;
    EncoderInput a = build_sequence_input(seq, c, v, small);
    EncoderInput b = build_sequence_input(seq, c, v, big);
    REQUIRE(a.spans.size() <= b.spans.size());
    for (size_t i = 0; i < a.spans.size(); ++i) {
      CHECK(a.spans[i].item_pos == b.spans[i].item_pos);
      CHECK(a.spans[i].attr_index == b.spans[i].attr_index);
    }
  }
}

TEST_CASE("reverse-order guarantee over random fixtures") {
  Rng rng(7);
  Catalog c;
  c.attribute_keys = {"Title", "Brand"};
  for (int i = 0; i < 20; ++i)
    c.items.push_back({"i" + std::to_string(i),
                       {{"Title", "t" + std::to_string(i)}, {"Brand", "b" + std::to_string(i % 4)}}});
  c.rebuild_lookup();
  Vocabulary v = build_vocab(c, 1);
  for (int trial = 0; trial < 25; ++trial) {
    InteractionSequence seq;
    seq.user_id = "u";
    const int n = 1 + rng.next_int(20);
    for (int t = 0; t < n; ++t)
      seq.item_ids.push_back("i" + std::to_string(rng.next_int(20)));
    TokenizerConfig cfg;
    cfg.max_tokens = 1 + rng.next_int(120);
    cfg.max_items = 1 + rng.next_int(20);
    EncoderInput in = build_sequence_input(seq, c, v, cfg);
    for (size_t a = 0; a < in.spans.size(); ++a)
      for (size_t b = a + 1; b < in.spans.size(); ++b) {
        if (in.spans[a].item_pos > in.spans[b].item_pos) CHECK(in.spans[a].end <= in.spans[b].begin);
        CHECK(in.spans[a].begin >= 1);
      }
  }
}

TEST_CASE("vocabulary serialization round-trips with specials first") {
  Vocabulary v = build_vocab_from_texts({"gamma beta alpha", "beta gamma", "gamma"}, 1);
  const std::string path =
      (std::filesystem::temp_directory_path() / "attrec_vocab.txt").string();
  v.save(path);
  Vocabulary loaded = Vocabulary::load(path);
  REQUIRE(loaded.size() == v.size());
  for (int i = 0; i < v.size(); ++i) CHECK(loaded.token_of(i) == v.token_of(i));
  CHECK(loaded.hash() == v.hash());
  CHECK(loaded.token_of(0) == "[PAD]");
  CHECK(loaded.token_of(1) == "[BOS]");
  CHECK(loaded.token_of(2) == "[UNK]");
  // Frequency order: gamma (3) before beta (2) before alpha (1).
  CHECK(loaded.id_of("gamma") < loaded.id_of("beta"));
  CHECK(loaded.id_of("beta") < loaded.id_of("alpha"));
}
