#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "attrec/common.hpp"
#include "attrec/corpus.hpp"

namespace attrec {

// Lowercased word tokenizer: alphanumeric runs plus single punctuation marks,
// whitespace discarded. "Category: Keyboard" -> ["category", ":", "keyboard"].
std::vector<std::string> word_tokenize(std::string_view text);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kUnk = 2;

  Vocabulary();

  int size() const { return static_cast<int>(tokens_.size()); }
  // Unknown words map to [UNK].
  int id_of(const std::string& token) const;
  const std::string& token_of(int id) const { return tokens_[static_cast<size_t>(id)]; }

  void add(const std::string& token);

  // One token per line, implicit ids, specials first.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  uint64_t hash() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// Words below min_freq map to [UNK]. Id order: frequency desc, then
// lexicographic, so builds are deterministic.
Vocabulary build_vocab_from_texts(const std::vector<std::string>& texts, int min_freq);
Vocabulary build_vocab(const Catalog& catalog, int min_freq);

struct TokenizerConfig {
  int value_cap = 32;     // max tokens per attribute value; keys are never cut
  int max_items = 50;     // most recent items kept in a sequence
  int max_tokens = 1024;  // total input cap, [BOS] included
};

struct TokenizedAttribute {
  std::vector<int> token_ids;
  int key_len = 0;  // tokens of the "key :" prefix, always present
};

// Tokenizes "key: value". Value tokens beyond value_cap are truncated.
TokenizedAttribute tokenize_attribute(const AttributePair& attr, const Vocabulary& vocab,
                                      int value_cap);

// Half-open token range [begin, end) owned by attribute `attr_index` of the
// item at sequence position `item_pos` (1-based, n = most recent; 0 for
// single-item inputs).
struct TokenSpan {
  int item_pos = 0;
  int attr_index = 0;
  int begin = 0;
  int end = 0;
};

struct EncoderInput {
  std::vector<int> token_ids;  // position 0 is [BOS]
  std::vector<TokenSpan> spans;  // contiguous, ordered, tile [1, size)
};

EncoderInput build_item_input(const ItemRecord& item, const Vocabulary& vocab,
                              const TokenizerConfig& config);

// Serializes the most recent max_items items newest-first and truncates at
// max_tokens. An attribute whose tokens are all cut yields no span.
EncoderInput build_sequence_input(const InteractionSequence& seq, const Catalog& catalog,
                                  const Vocabulary& vocab, const TokenizerConfig& config);

}  // namespace attrec
