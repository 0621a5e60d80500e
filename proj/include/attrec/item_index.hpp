#pragma once

#include <span>
#include <string>
#include <vector>

#include "attrec/common.hpp"
#include "attrec/corpus.hpp"
#include "attrec/encoder.hpp"
#include "attrec/matching.hpp"

namespace attrec {

// Precomputed multi-vector representations for a whole catalog, stored
// attribute-major: all items' attribute-0 vectors, then attribute-1, ...
// Immutable after build.
class ItemIndex {
 public:
  ItemIndex() = default;

  static ItemIndex build(const Catalog& catalog, const Model& model, int threads = 1);

  // Assembles an index from precomputed representations (one per id, every
  // attribute present). Hash metadata is left empty.
  static ItemIndex from_reprs(const std::vector<std::string>& ids,
                              const std::vector<MultiVectorRepr>& reprs);

  int num_items() const { return static_cast<int>(item_ids_.size()); }
  int num_attrs() const { return num_attrs_; }
  int dim() const { return dim_; }
  const std::vector<std::string>& item_ids() const { return item_ids_; }
  int position_of(const std::string& item_id) const;  // -1 when absent

  std::span<const double> vec(int item, int attr) const {
    return {storage_.data() + (static_cast<size_t>(attr) * static_cast<size_t>(num_items()) +
                               static_cast<size_t>(item)) *
                                  static_cast<size_t>(dim_),
            static_cast<size_t>(dim_)};
  }
  std::span<const double> attr_block(int attr) const {
    return {storage_.data() + static_cast<size_t>(attr) * static_cast<size_t>(num_items()) *
                                  static_cast<size_t>(dim_),
            static_cast<size_t>(num_items()) * static_cast<size_t>(dim_)};
  }

  MultiVectorRepr item_repr(int item) const;

  uint64_t payload_hash() const;
  uint64_t encoder_hash() const { return encoder_hash_; }
  uint64_t vocab_hash() const { return vocab_hash_; }

  // Persisted layout: magic + JSON header (dims, id table, hashes,
  // metadata) + attribute-major f64 payload, little-endian.
  void save(const std::string& path, const std::string& metadata_json = "") const;
  static ItemIndex load(const std::string& path);
  std::string metadata_json() const { return metadata_json_; }

 private:
  int num_attrs_ = 0;
  int dim_ = 0;
  std::vector<std::string> item_ids_;
  std::vector<double> storage_;  // [num_attrs x num_items x dim]
  uint64_t encoder_hash_ = 0;
  uint64_t vocab_hash_ = 0;
  std::string metadata_json_;

  friend std::vector<double> batch_score(const MultiVectorRepr&, const ItemIndex&,
                                         const MatchConfig&);
};

struct Recommendation {
  std::string item_id;
  double score = 0.0;
  ScoreBreakdown breakdown;
};

// Top-K by total score, ties broken by item_id so rankings are
// deterministic. History items are not filtered unless mask_seen is set.
std::vector<Recommendation> recommend_topk(const InteractionSequence& seq, const ItemIndex& index,
                                           const Model& model, const Catalog& catalog, int k,
                                           const MatchConfig& config, bool mask_seen = false);

// Rank of `target` under the same ordering recommend_topk uses:
// 1 + |{better score}| + |{equal score with smaller id}|.
int rank_of_target(std::span<const double> scores, const std::vector<std::string>& item_ids,
                   int target_pos);

}  // namespace attrec
