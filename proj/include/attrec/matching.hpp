#pragma once

#include <span>
#include <vector>

#include "attrec/common.hpp"
#include "attrec/repr.hpp"

namespace attrec {

class ItemIndex;

struct MatchConfig {
  enum class Agg { Max, Mean };
  Agg agg = Agg::Max;
  double cosine_eps = 1e-8;
};

MatchConfig::Agg agg_from_string(const std::string& s);
std::string to_string(MatchConfig::Agg a);

struct AttributeScore {
  double score = -1.0;
  int best_pos = -1;     // argmax item position t*, max aggregation only
  bool missing = false;  // user had no entry for this attribute
};

struct ScoreBreakdown {
  std::vector<AttributeScore> per_attr;
  double total = 0.0;
};

// Max (or mean) over the user's entries for attribute j of cosine against
// the item's attribute-j vector. Ties on max break toward the most recent
// item. A user with no entry for j contributes the -1 sentinel, flagged.
AttributeScore attribute_match(const MultiVectorRepr& user, const MultiVectorRepr& item, int j,
                               const MatchConfig& config);

ScoreBreakdown match_score(const MultiVectorRepr& user, const MultiVectorRepr& item,
                           const MatchConfig& config);

// Scores every catalog item with dense sweeps over the index's
// attribute-major layout; equal to match_score item by item.
std::vector<double> batch_score(const MultiVectorRepr& user, const ItemIndex& index,
                                const MatchConfig& config);

}  // namespace attrec
