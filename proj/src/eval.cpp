#include "attrec/eval.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include "json.hpp"

namespace attrec {

using nlohmann::json;

double recall_at_k(int rank, int k) { return rank <= k ? 1.0 : 0.0; }

double ndcg_at_k(int rank, int k) {
  // One relevant item, ideal DCG = 1.
  return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

std::vector<int> target_ranks(const std::vector<SplitExample>& view, const ItemIndex& index,
                              const Model& model, const Catalog& catalog,
                              const MatchConfig& config, int threads) {
  std::vector<int> ranks(view.size(), 0);
  std::vector<int> target_pos(view.size(), -1);
  for (size_t i = 0; i < view.size(); ++i) {
    target_pos[i] = index.position_of(view[i].target);
    if (target_pos[i] < 0)
      throw DataError("evaluate: target item not in index: " + view[i].target);
  }

  auto run_range = [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      InteractionSequence seq{view[i].user_id, view[i].prefix};
      MultiVectorRepr user = encode_sequence(model, seq, catalog);
      std::vector<double> scores = batch_score(user, index, config);
      ranks[i] = rank_of_target(scores, index.item_ids(), target_pos[i]);
    }
  };

  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(view.size())));
  if (workers == 1) {
    run_range(0, view.size());
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
    const size_t chunk = (view.size() + static_cast<size_t>(workers) - 1) / static_cast<size_t>(workers);
    for (int w = 0; w < workers; ++w) {
      const size_t begin = static_cast<size_t>(w) * chunk;
      const size_t end = std::min(view.size(), begin + chunk);
      if (begin >= end) continue;
      pool.emplace_back([&, w, begin, end]() {
        try {
          run_range(begin, end);
        } catch (...) {
          errors[static_cast<size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return ranks;
}

EvalReport evaluate(const std::vector<SplitExample>& view, const ItemIndex& index,
                    const Model& model, const Catalog& catalog, const MatchConfig& config,
                    const std::vector<int>& ks, int threads) {
  if (view.empty()) throw DataError("evaluate: empty split view");
  const auto start = std::chrono::steady_clock::now();
  std::vector<int> ranks = target_ranks(view, index, model, catalog, config, threads);

  EvalReport report;
  report.users = static_cast<int>(view.size());
  for (int k : ks) {
    double recall_sum = 0.0, ndcg_sum = 0.0;
    for (int rank : ranks) {
      recall_sum += recall_at_k(rank, k);
      ndcg_sum += ndcg_at_k(rank, k);
    }
    report.recall[k] = recall_sum / static_cast<double>(ranks.size());
    report.ndcg[k] = ndcg_sum / static_cast<double>(ranks.size());
  }
  report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::string EvalReport::to_json(const std::string& config_echo_json) const {
  json metrics = json::object();
  for (const auto& [k, v] : recall) metrics["recall@" + std::to_string(k)] = v;
  for (const auto& [k, v] : ndcg) metrics["ndcg@" + std::to_string(k)] = v;
  json j{{"schema_version", 1},
         {"metrics", metrics},
         {"users", users},
         {"wall_ms", wall_ms},
         {"config", config_echo_json.empty() ? json(nullptr) : json::parse(config_echo_json)}};
  return j.dump(2);
}

}  // namespace attrec
