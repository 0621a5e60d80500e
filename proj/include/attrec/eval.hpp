#pragma once

#include <map>
#include <string>
#include <vector>

#include "attrec/corpus.hpp"
#include "attrec/item_index.hpp"

namespace attrec {

// Single-target leave-one-out metrics: rank is 1-based.
double recall_at_k(int rank, int k);
double ndcg_at_k(int rank, int k);

struct EvalReport {
  std::map<int, double> recall;  // K -> mean over users
  std::map<int, double> ndcg;
  int users = 0;
  double wall_ms = 0.0;

  std::string to_json(const std::string& config_echo_json = "") const;
};

// Ranks the full catalog for every example's held-out step. Ties follow the
// index module's id tie-break so reported metrics equal deployed behavior.
EvalReport evaluate(const std::vector<SplitExample>& view, const ItemIndex& index,
                    const Model& model, const Catalog& catalog, const MatchConfig& config,
                    const std::vector<int>& ks, int threads = 1);

// Per-example target ranks, same ordering as evaluate().
std::vector<int> target_ranks(const std::vector<SplitExample>& view, const ItemIndex& index,
                              const Model& model, const Catalog& catalog,
                              const MatchConfig& config, int threads = 1);

}  // namespace attrec
