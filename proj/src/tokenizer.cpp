#include "attrec/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

namespace attrec {

std::vector<std::string> word_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isalnum(uc)) {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    } else {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
      if (!std::isspace(uc)) out.push_back(std::string(1, ch));
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

Vocabulary::Vocabulary() {
  tokens_ = {"[PAD]", "[BOS]", "[UNK]"};
  for (size_t i = 0; i < tokens_.size(); ++i) ids_[tokens_[i]] = static_cast<int>(i);
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

void Vocabulary::add(const std::string& token) {
  if (ids_.count(token)) return;
  ids_[token] = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("vocabulary: cannot open " + path);
  for (const auto& t : tokens_) out << t << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("vocabulary: cannot open " + path);
  Vocabulary v;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no <= 3) {
      if (line != v.tokens_[static_cast<size_t>(line_no - 1)])
        throw DataError("vocabulary: special tokens must come first in " + path);
      continue;
    }
    v.add(line);
  }
  return v;
}

uint64_t Vocabulary::hash() const {
  Fnv1a h;
  for (const auto& t : tokens_) {
    h.update(t);
    h.update("\n", 1);
  }
  return h.digest();
}

Vocabulary build_vocab_from_texts(const std::vector<std::string>& texts, int min_freq) {
  if (texts.empty()) throw DataError("build_vocab: empty corpus");
  std::unordered_map<std::string, int64_t> freq;
  for (const auto& text : texts)
    for (auto& tok : word_tokenize(text)) ++freq[tok];
  if (freq.empty()) throw DataError("build_vocab: corpus has no tokens");

  std::vector<std::pair<std::string, int64_t>> entries(freq.begin(), freq.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  for (const auto& [tok, count] : entries)
    if (count >= min_freq) v.add(tok);
  return v;
}

Vocabulary build_vocab(const Catalog& catalog, int min_freq) {
  if (catalog.items.empty()) throw DataError("build_vocab: empty catalog");
  std::vector<std::string> texts;
  texts.reserve(catalog.items.size() * catalog.attribute_keys.size());
  for (const auto& item : catalog.items)
    for (const auto& a : item.attributes) texts.push_back(a.key + ": " + a.value);
  return build_vocab_from_texts(texts, min_freq);
}

TokenizedAttribute tokenize_attribute(const AttributePair& attr, const Vocabulary& vocab,
                                      int value_cap) {
  if (value_cap < 1) throw ConfigError("tokenize_attribute: value_cap must be >= 1");
  TokenizedAttribute out;
  for (const auto& tok : word_tokenize(attr.key)) out.token_ids.push_back(vocab.id_of(tok));
  out.token_ids.push_back(vocab.id_of(":"));
  out.key_len = static_cast<int>(out.token_ids.size());
  int kept = 0;
  for (const auto& tok : word_tokenize(attr.value)) {
    if (kept >= value_cap) break;
    out.token_ids.push_back(vocab.id_of(tok));
    ++kept;
  }
  return out;
}

EncoderInput build_item_input(const ItemRecord& item, const Vocabulary& vocab,
                              const TokenizerConfig& config) {
  EncoderInput input;
  input.token_ids.push_back(Vocabulary::kBos);
  for (size_t j = 0; j < item.attributes.size(); ++j) {
    TokenizedAttribute ta = tokenize_attribute(item.attributes[j], vocab, config.value_cap);
    const int begin = static_cast<int>(input.token_ids.size());
    input.token_ids.insert(input.token_ids.end(), ta.token_ids.begin(), ta.token_ids.end());
    input.spans.push_back({0, static_cast<int>(j), begin, static_cast<int>(input.token_ids.size())});
  }
  return input;
}

EncoderInput build_sequence_input(const InteractionSequence& seq, const Catalog& catalog,
                                  const Vocabulary& vocab, const TokenizerConfig& config) {
  if (config.max_items < 1) throw ConfigError("build_sequence_input: max_items must be >= 1");
  EncoderInput input;
  input.token_ids.push_back(Vocabulary::kBos);
  const int n = static_cast<int>(seq.item_ids.size());
  const int first = std::max(0, n - config.max_items);
  // Newest first, so truncation drops the oldest history.
  for (int t = n - 1; t >= first; --t) {
    if (static_cast<int>(input.token_ids.size()) >= config.max_tokens) break;
    const ItemRecord* item = catalog.find(seq.item_ids[static_cast<size_t>(t)]);
    if (!item) throw DataError("build_sequence_input: unknown item " + seq.item_ids[static_cast<size_t>(t)]);
    for (size_t j = 0; j < item->attributes.size(); ++j) {
      const int room = config.max_tokens - static_cast<int>(input.token_ids.size());
      if (room <= 0) break;
      TokenizedAttribute ta = tokenize_attribute(item->attributes[j], vocab, config.value_cap);
      const int take = std::min<int>(room, static_cast<int>(ta.token_ids.size()));
      if (take <= 0) continue;
      const int begin = static_cast<int>(input.token_ids.size());
      input.token_ids.insert(input.token_ids.end(), ta.token_ids.begin(), ta.token_ids.begin() + take);
      input.spans.push_back({t + 1, static_cast<int>(j), begin, begin + take});
    }
  }
  return input;
}

}  // namespace attrec
