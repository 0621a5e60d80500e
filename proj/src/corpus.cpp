#include "attrec/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

namespace attrec {

using nlohmann::json;

namespace {

bool is_title_key(const std::string& key) {
  std::string k;
  k.reserve(key.size());
  for (char c : key) k.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return k == "title";
}

bool has_title(const ItemRecord& item) {
  for (const auto& a : item.attributes)
    if (is_title_key(a.key) && !a.value.empty()) return true;
  return false;
}

}  // namespace

const ItemRecord* Catalog::find(const std::string& item_id) const {
  auto it = id_to_pos_.find(item_id);
  if (it == id_to_pos_.end()) return nullptr;
  return &items[static_cast<size_t>(it->second)];
}

int Catalog::position_of(const std::string& item_id) const {
  auto it = id_to_pos_.find(item_id);
  return it == id_to_pos_.end() ? -1 : it->second;
}

void Catalog::rebuild_lookup() {
  id_to_pos_.clear();
  id_to_pos_.reserve(items.size());
  for (size_t i = 0; i < items.size(); ++i) id_to_pos_[items[i].item_id] = static_cast<int>(i);
}

Catalog load_items(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("load_items: cannot open " + path);
  Catalog catalog;
  std::string line;
  int line_no = 0;
  bool schema_set = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("load_items: parse error at line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("item_id") || !j.contains("attributes"))
      throw DataError("load_items: missing item_id/attributes at line " + std::to_string(line_no));
    ItemRecord item;
    item.item_id = j.at("item_id").get<std::string>();
    for (const auto& pair : j.at("attributes")) {
      if (!pair.is_array() || pair.size() != 2)
        throw DataError("load_items: attribute must be [key, value] at line " + std::to_string(line_no));
      AttributePair a{pair[0].get<std::string>(), pair[1].get<std::string>()};
      if (a.key.empty())
        throw DataError("load_items: empty attribute key at line " + std::to_string(line_no));
      item.attributes.push_back(std::move(a));
    }
    if (item.attributes.empty())
      throw DataError("load_items: item with no attributes at line " + std::to_string(line_no));
    std::vector<std::string> keys;
    keys.reserve(item.attributes.size());
    for (const auto& a : item.attributes) keys.push_back(a.key);
    if (!schema_set) {
      catalog.attribute_keys = keys;
      schema_set = true;
    } else if (keys != catalog.attribute_keys) {
      throw DataError("load_items: inconsistent attribute schema at line " + std::to_string(line_no));
    }
    if (!has_title(item)) {
      ++catalog.dropped_missing_title;
      continue;
    }
    catalog.items.push_back(std::move(item));
  }
  catalog.rebuild_lookup();
  return catalog;
}

std::vector<InteractionSequence> load_interactions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("load_interactions: cannot open " + path);
  std::vector<InteractionSequence> seqs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("load_interactions: parse error at line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("user_id") || !j.contains("item_ids"))
      throw DataError("load_interactions: missing user_id/item_ids at line " + std::to_string(line_no));
    InteractionSequence s;
    s.user_id = j.at("user_id").get<std::string>();
    for (const auto& id : j.at("item_ids")) s.item_ids.push_back(id.get<std::string>());
    if (s.item_ids.empty())
      throw DataError("load_interactions: empty sequence at line " + std::to_string(line_no));
    seqs.push_back(std::move(s));
  }
  return seqs;
}

void save_items(const Catalog& catalog, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("save_items: cannot open " + path);
  for (const auto& item : catalog.items) {
    json attrs = json::array();
    for (const auto& a : item.attributes) attrs.push_back(json::array({a.key, a.value}));
    json j{{"item_id", item.item_id}, {"attributes", attrs}};
    out << j.dump() << "\n";
  }
}

void save_interactions(const std::vector<InteractionSequence>& seqs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("save_interactions: cannot open " + path);
  for (const auto& s : seqs) {
    json j{{"user_id", s.user_id}, {"item_ids", s.item_ids}};
    out << j.dump() << "\n";
  }
}

CoreFilterResult apply_core_filter(const std::vector<InteractionSequence>& sequences,
                                   const Catalog& catalog, int k) {
  if (k < 1) throw ConfigError("apply_core_filter: k must be >= 1");
  std::vector<InteractionSequence> seqs = sequences;
  std::unordered_set<std::string> live_items;
  for (const auto& item : catalog.items) live_items.insert(item.item_id);

  // Drop references to items missing from the catalog up front.
  for (auto& s : seqs) {
    std::erase_if(s.item_ids, [&](const std::string& id) { return !live_items.count(id); });
  }

  CoreFilterResult result;
  bool changed = true;
  while (changed) {
    changed = false;
    ++result.rounds;
    // User pass.
    size_t before_users = seqs.size();
    std::erase_if(seqs, [&](const InteractionSequence& s) {
      return static_cast<int>(s.item_ids.size()) < k;
    });
    result.removed_users += static_cast<int>(before_users - seqs.size());
    if (before_users != seqs.size()) changed = true;
    // Item pass.
    std::unordered_map<std::string, int> counts;
    for (const auto& s : seqs)
      for (const auto& id : s.item_ids) ++counts[id];
    std::unordered_set<std::string> keep;
    for (const auto& [id, c] : counts)
      if (c >= k) keep.insert(id);
    for (auto& s : seqs) {
      size_t before = s.item_ids.size();
      std::erase_if(s.item_ids, [&](const std::string& id) { return !keep.count(id); });
      if (s.item_ids.size() != before) changed = true;
    }
    if (keep.size() != live_items.size()) {
      result.removed_items += static_cast<int>(live_items.size() - keep.size());
      live_items = std::move(keep);
    }
  }

  result.sequences = std::move(seqs);
  result.catalog.attribute_keys = catalog.attribute_keys;
  result.catalog.dropped_missing_title = catalog.dropped_missing_title;
  for (const auto& item : catalog.items)
    if (live_items.count(item.item_id)) result.catalog.items.push_back(item);
  result.catalog.rebuild_lookup();
  return result;
}

DatasetSplit split_leave_one_out(const std::vector<InteractionSequence>& sequences) {
  DatasetSplit split;
  for (const auto& s : sequences) {
    const int n = static_cast<int>(s.item_ids.size());
    if (n < 3) {
      ++split.skipped_short;
      continue;
    }
    auto prefix_of = [&](int len) {
      return std::vector<std::string>(s.item_ids.begin(), s.item_ids.begin() + len);
    };
    split.test.push_back({s.user_id, prefix_of(n - 1), s.item_ids[static_cast<size_t>(n - 1)]});
    split.valid.push_back({s.user_id, prefix_of(n - 2), s.item_ids[static_cast<size_t>(n - 2)]});
    for (int t = 2; t <= n - 2; ++t)
      split.train.push_back({s.user_id, prefix_of(t - 1), s.item_ids[static_cast<size_t>(t - 1)]});
  }
  return split;
}

namespace {

// Pronounceable distinct pseudo-words for attribute values and title text.
std::string pseudo_word(int index) {
  static const char* consonants = "bdfgklmnprstvz";
  static const char* vowels = "aeiou";
  std::string w;
  int x = index;
  for (int s = 0; s < 3 || x > 0; ++s) {
    w.push_back(consonants[x % 14]);
    x /= 14;
    w.push_back(vowels[x % 5]);
    x /= 5;
    if (s >= 2 && x == 0) break;
  }
  return w;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticConfig& config) {
  if (config.num_brands < 2 || config.num_categories < 2)
    throw ConfigError("generate_synthetic: need at least 2 brands and 2 categories");
  if (config.num_items < std::max(config.num_brands, config.num_categories))
    throw ConfigError("generate_synthetic: fewer items than attribute values");
  if (config.num_users < 1 || config.seq_len < 1)
    throw ConfigError("generate_synthetic: users and seq_len must be positive");
  if (config.sharpness < 0.0 || config.sharpness > 1.0)
    throw ConfigError("generate_synthetic: sharpness must be in [0, 1]");

  const int B = config.num_brands;
  const int C = config.num_categories;
  const int N = config.num_items;
  Rng rng(mix_seed({config.seed, 0x51971ull}));

  // Disjoint index ranges keep brand, category and title words distinct.
  std::vector<std::string> brand_names(static_cast<size_t>(B));
  for (int b = 0; b < B; ++b) brand_names[static_cast<size_t>(b)] = pseudo_word(b);
  std::vector<std::string> category_names(static_cast<size_t>(C));
  for (int c = 0; c < C; ++c) category_names[static_cast<size_t>(c)] = pseudo_word(B + c);

  // First B (resp. C) slots cover every value once, the rest are uniform.
  auto assign_values = [&](int num_values) {
    std::vector<int> assignment(static_cast<size_t>(N));
    for (int i = 0; i < N; ++i)
      assignment[static_cast<size_t>(i)] = i < num_values ? i : rng.next_int(num_values);
    rng.shuffle(assignment);
    return assignment;
  };
  std::vector<int> brand_of = assign_values(B);
  std::vector<int> category_of = assign_values(C);

  SyntheticData data;
  data.catalog.attribute_keys = {"Title", "Brand", "Category"};
  const int title_base = B + C;
  char buf[32];
  for (int i = 0; i < N; ++i) {
    std::snprintf(buf, sizeof(buf), "item_%04d", i);
    ItemRecord item;
    item.item_id = buf;
    std::string title = pseudo_word(title_base + 2 * i) + " " + pseudo_word(title_base + 2 * i + 1);
    item.attributes.push_back({"Title", title});
    item.attributes.push_back({"Brand", brand_names[static_cast<size_t>(brand_of[static_cast<size_t>(i)])]});
    item.attributes.push_back(
        {"Category", category_names[static_cast<size_t>(category_of[static_cast<size_t>(i)])]});
    data.catalog.items.push_back(std::move(item));
  }
  data.catalog.rebuild_lookup();

  // Items grouped by attribute value, for preference-consistent sampling.
  auto group_items = [&](const std::vector<int>& value_of, int num_values) {
    std::vector<std::vector<int>> groups(static_cast<size_t>(num_values));
    for (int i = 0; i < N; ++i) groups[static_cast<size_t>(value_of[static_cast<size_t>(i)])].push_back(i);
    return groups;
  };
  std::vector<std::vector<int>> by_brand = group_items(brand_of, B);
  std::vector<std::vector<int>> by_category = group_items(category_of, C);

  for (int u = 0; u < config.num_users; ++u) {
    std::snprintf(buf, sizeof(buf), "user_%04d", u);
    const bool brand_loyal = rng.bernoulli(0.5);
    const int value = brand_loyal ? rng.next_int(B) : rng.next_int(C);
    const auto& matching = brand_loyal ? by_brand[static_cast<size_t>(value)]
                                       : by_category[static_cast<size_t>(value)];
    const auto& value_of = brand_loyal ? brand_of : category_of;

    auto sample_matching = [&]() { return matching[static_cast<size_t>(rng.next_int(static_cast<int>(matching.size())))]; };
    auto sample_non_matching = [&]() {
      int item;
      do {
        item = rng.next_int(N);
      } while (value_of[static_cast<size_t>(item)] == value);
      return item;
    };

    InteractionSequence seq;
    seq.user_id = buf;
    for (int t = 0; t < config.seq_len - 1; ++t) {
      const int item = rng.bernoulli(config.sharpness) ? sample_matching() : sample_non_matching();
      seq.item_ids.push_back(data.catalog.items[static_cast<size_t>(item)].item_id);
    }
    // The target item always shares the preferred value.
    seq.item_ids.push_back(data.catalog.items[static_cast<size_t>(sample_matching())].item_id);
    data.sequences.push_back(std::move(seq));

    data.preferences.push_back({buf, brand_loyal ? "Brand" : "Category",
                                brand_loyal ? brand_names[static_cast<size_t>(value)]
                                            : category_names[static_cast<size_t>(value)]});
  }
  return data;
}

}  // namespace attrec
