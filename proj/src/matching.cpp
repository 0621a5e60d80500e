#include "attrec/matching.hpp"

#include <algorithm>
#include <cmath>

#include "attrec/item_index.hpp"
#include "attrec/tensor.hpp"

namespace attrec {

MatchConfig::Agg agg_from_string(const std::string& s) {
  if (s == "max") return MatchConfig::Agg::Max;
  if (s == "mean") return MatchConfig::Agg::Mean;
  throw ConfigError("unknown aggregation: " + s);
}

std::string to_string(MatchConfig::Agg a) {
  return a == MatchConfig::Agg::Max ? "max" : "mean";
}

namespace {

const PooledVec* find_item_entry(const MultiVectorRepr& item, int j) {
  for (const auto& e : item.entries)
    if (e.attr_index == j) return &e;
  return nullptr;
}

}  // namespace

AttributeScore attribute_match(const MultiVectorRepr& user, const MultiVectorRepr& item, int j,
                               const MatchConfig& config) {
  const PooledVec* target = find_item_entry(item, j);
  if (!target) throw NumericError("attribute_match: item lacks attribute " + std::to_string(j));

  AttributeScore result;
  if (config.agg == MatchConfig::Agg::Max) {
    bool found = false;
    for (const auto& e : user.entries) {
      if (e.attr_index != j) continue;
      const double c = cosine_similarity(e.v, target->v, config.cosine_eps);
      // Entries are ordered newest-first; strict > keeps the largest t on ties.
      if (!found || c > result.score) {
        result.score = c;
        result.best_pos = e.item_pos;
        found = true;
      }
    }
    if (!found) {
      result = {-1.0, -1, true};
    }
  } else {
    double sum = 0.0;
    int count = 0;
    for (const auto& e : user.entries) {
      if (e.attr_index != j) continue;
      sum += cosine_similarity(e.v, target->v, config.cosine_eps);
      ++count;
    }
    if (count == 0) {
      result = {-1.0, -1, true};
    } else {
      result.score = sum / count;
      result.best_pos = -1;
    }
  }
  return result;
}

ScoreBreakdown match_score(const MultiVectorRepr& user, const MultiVectorRepr& item,
                           const MatchConfig& config) {
  if (user.num_attrs != item.num_attrs)
    throw NumericError("match_score: attribute schema mismatch");
  ScoreBreakdown breakdown;
  for (int j = 0; j < item.num_attrs; ++j) {
    AttributeScore s = attribute_match(user, item, j, config);
    breakdown.total += s.score;
    breakdown.per_attr.push_back(s);
  }
  return breakdown;
}

std::vector<double> batch_score(const MultiVectorRepr& user, const ItemIndex& index,
                                const MatchConfig& config) {
  if (user.num_attrs != index.num_attrs())
    throw NumericError("batch_score: attribute schema mismatch with index");
  const int n_items = index.num_items();
  const int d = index.dim();
  std::vector<double> totals(static_cast<size_t>(n_items), 0.0);

  std::vector<double> attr_scores;
  std::vector<int> attr_counts;
  for (int j = 0; j < index.num_attrs(); ++j) {
    const bool is_max = config.agg == MatchConfig::Agg::Max;
    attr_scores.assign(static_cast<size_t>(n_items), is_max ? -2.0 : 0.0);
    attr_counts.assign(static_cast<size_t>(n_items), 0);
    bool any_entry = false;
    for (const auto& e : user.entries) {
      if (e.attr_index != j) continue;
      if (static_cast<int>(e.v.size()) != d)
        throw NumericError("batch_score: vector dimension mismatch with index");
      any_entry = true;
      // One dense sweep over the attribute block per user entry.
      const double* block = index.attr_block(j).data();
      for (int i = 0; i < n_items; ++i) {
        const double c = cosine_similarity(
            e.v, {block + static_cast<size_t>(i) * static_cast<size_t>(d), static_cast<size_t>(d)},
            config.cosine_eps);
        if (is_max) {
          if (attr_counts[static_cast<size_t>(i)] == 0 || c > attr_scores[static_cast<size_t>(i)])
            attr_scores[static_cast<size_t>(i)] = c;
          attr_counts[static_cast<size_t>(i)] = 1;
        } else {
          attr_scores[static_cast<size_t>(i)] += c;
          ++attr_counts[static_cast<size_t>(i)];
        }
      }
    }
    for (int i = 0; i < n_items; ++i) {
      if (!any_entry) {
        totals[static_cast<size_t>(i)] += -1.0;  // missing-attribute sentinel
      } else if (is_max) {
        totals[static_cast<size_t>(i)] += attr_scores[static_cast<size_t>(i)];
      } else {
        totals[static_cast<size_t>(i)] +=
            attr_scores[static_cast<size_t>(i)] / attr_counts[static_cast<size_t>(i)];
      }
    }
  }
  return totals;
}

}  // namespace attrec
