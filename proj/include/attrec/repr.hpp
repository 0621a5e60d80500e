#pragma once

#include <string>
#include <vector>

namespace attrec {

// Pooling granularity for user/item representations. Attribute is the full
// model; Item and Bos are the coarse ablation variants.
enum class PoolKind { Attribute, Item, Bos };

PoolKind pool_kind_from_string(const std::string& s);
std::string to_string(PoolKind k);

struct PooledVec {
  int item_pos = 0;    // sequence position t (1-based, n = most recent); 0 for items
  int attr_index = 0;  // 0 under Item/Bos pooling
  std::vector<double> v;
};

// Per-attribute embedding set for one item (m entries) or one user sequence
// (up to n*m entries, ordered newest-first).
struct MultiVectorRepr {
  int num_attrs = 0;               // matching arity; 1 under Item/Bos pooling
  std::vector<PooledVec> entries;
  std::vector<double> bos;         // projected [BOS] state
};

}  // namespace attrec
