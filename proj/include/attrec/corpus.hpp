#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "attrec/common.hpp"

namespace attrec {

struct AttributePair {
  std::string key;    // non-empty
  std::string value;  // may be empty (missing metadata)
};

struct ItemRecord {
  std::string item_id;
  std::vector<AttributePair> attributes;  // same key schema across a catalog
};

struct Catalog {
  std::vector<ItemRecord> items;
  std::vector<std::string> attribute_keys;  // shared schema, in order
  int dropped_missing_title = 0;

  int num_attrs() const { return static_cast<int>(attribute_keys.size()); }
  int size() const { return static_cast<int>(items.size()); }
  const ItemRecord* find(const std::string& item_id) const;
  int position_of(const std::string& item_id) const;  // -1 when absent
  void rebuild_lookup();

 private:
  std::unordered_map<std::string, int> id_to_pos_;
};

struct InteractionSequence {
  std::string user_id;
  std::vector<std::string> item_ids;  // chronological, oldest first
};

// One next-item prediction example: prefix -> target.
struct SplitExample {
  std::string user_id;
  std::vector<std::string> prefix;
  std::string target;
};

struct DatasetSplit {
  std::vector<SplitExample> train;
  std::vector<SplitExample> valid;  // target = second-to-last item
  std::vector<SplitExample> test;   // target = last item
  int skipped_short = 0;            // sequences with n < 3
};

// JSON-lines loaders. Items with a missing or empty title are dropped and
// counted. Malformed lines and schema drift raise DataError with the line
// number.
Catalog load_items(const std::string& path);
std::vector<InteractionSequence> load_interactions(const std::string& path);

void save_items(const Catalog& catalog, const std::string& path);
void save_interactions(const std::vector<InteractionSequence>& seqs, const std::string& path);

struct CoreFilterResult {
  std::vector<InteractionSequence> sequences;
  Catalog catalog;
  int removed_users = 0;
  int removed_items = 0;
  int rounds = 0;
};

// Iterates to fixpoint: every surviving user has >= k interactions and every
// surviving item appears in >= k interactions.
CoreFilterResult apply_core_filter(const std::vector<InteractionSequence>& sequences,
                                   const Catalog& catalog, int k);

DatasetSplit split_leave_one_out(const std::vector<InteractionSequence>& sequences);

struct SyntheticConfig {
  int num_brands = 8;
  int num_categories = 8;
  int num_items = 200;
  int num_users = 500;
  int seq_len = 5;          // items per user, target included
  double sharpness = 0.9;   // probability a history item matches the preference
  uint64_t seed = 1;
};

struct PlantedPreference {
  std::string user_id;
  std::string key;    // "Brand" or "Category"
  std::string value;  // preferred attribute value
};

struct SyntheticData {
  Catalog catalog;
  std::vector<InteractionSequence> sequences;
  std::vector<PlantedPreference> preferences;  // ground truth, per user
};

// Planted-preference generator: each user is loyal to one attribute value;
// history items match it with probability `sharpness`, the final item always
// matches. Deterministic given the seed.
SyntheticData generate_synthetic(const SyntheticConfig& config);

}  // namespace attrec
