#include "attrec/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "attrec/eval.hpp"
#include "attrec/item_index.hpp"
#include "attrec/matching.hpp"
#include "attrec/training.hpp"

namespace attrec {

namespace {

struct GradFixture {
  Catalog catalog;
  DatasetSplit split;
  Model model;
};

GradFixture make_grad_fixture(const GradCheckOptions& options) {
  SyntheticConfig sc;
  sc.num_brands = 3;
  sc.num_categories = 3;
  sc.num_items = options.num_items;
  sc.num_users = options.num_users;
  sc.seq_len = 4;
  sc.sharpness = 0.8;
  sc.seed = options.seed;
  SyntheticData data = generate_synthetic(sc);

  GradFixture fx;
  fx.catalog = std::move(data.catalog);
  fx.split = split_leave_one_out(data.sequences);

  fx.model.vocab = build_vocab(fx.catalog, 1);
  fx.model.tok = TokenizerConfig{8, 8, options.config.max_positions};
  EncoderConfig cfg = options.config;
  cfg.vocab_size = fx.model.vocab.size();
  cfg.dropout = 0.0;  // gradient checks need train == eval
  fx.model.params = EncoderParams::init(cfg, options.seed);
  return fx;
}

}  // namespace

GradCheckReport gradient_check(const GradCheckOptions& options) {
  GradFixture fx = make_grad_fixture(options);

  TrainConfig tc;
  tc.tau = 0.05;
  tc.refresh = TrainConfig::Refresh::PerStep;  // every column on the tape
  tc.threads = 1;
  tc.seed = options.seed;
  Trainer trainer(fx.catalog, fx.split, fx.model, MatchConfig{}, tc);

  const int n_examples = std::min<int>(options.examples, static_cast<int>(fx.split.train.size()));
  std::span<const SplitExample> examples(fx.split.train.data(), static_cast<size_t>(n_examples));

  GradSink analytic(trainer.model().params);
  analytic.zero();
  trainer.loss_and_gradients(examples, 1, &analytic);

  // Central finite differences over every parameter element. The trainer
  // holds its own copy of the params, so perturb those in place.
  auto& params = const_cast<EncoderParams&>(trainer.model().params);
  auto tensors = params.named_tensors();
  const double h = options.fd_step;

  GradCheckReport report;
  for (size_t ti = 0; ti < tensors.size(); ++ti) {
    Tensor& t = *tensors[ti].second;
    double num_norm2 = 0.0, ana_norm2 = 0.0, diff_norm2 = 0.0;
    for (size_t k = 0; k < t.data.size(); ++k) {
      const double saved = t.data[k];
      t.data[k] = saved + h;
      const double up = trainer.loss_and_gradients(examples, 1, nullptr);
      t.data[k] = saved - h;
      const double down = trainer.loss_and_gradients(examples, 1, nullptr);
      t.data[k] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic_g = analytic.grads[ti].data[k];
      num_norm2 += numeric * numeric;
      ana_norm2 += analytic_g * analytic_g;
      const double d = numeric - analytic_g;
      diff_norm2 += d * d;
    }
    const double denom = std::max(std::sqrt(num_norm2) + std::sqrt(ana_norm2), 1e-12);
    const double rel = std::sqrt(diff_norm2) / denom;
    report.tensor_rel_err.emplace_back(tensors[ti].first, rel);
    report.max_rel_err = std::max(report.max_rel_err, rel);
  }
  report.pass = report.max_rel_err < options.tolerance;
  return report;
}

namespace {

// --- independent oracles (no calls into matching/eval/training paths) ---

double oracle_cosine(const std::vector<double>& u, const std::vector<double>& v, double eps) {
  double d = 0.0, nu = 0.0, nv = 0.0;
  for (size_t i = 0; i < u.size(); ++i) {
    d += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  double c = d / (std::max(std::sqrt(nu), eps) * std::max(std::sqrt(nv), eps));
  return std::clamp(c, -1.0, 1.0);
}

// Triple loop over (attribute, user entry, dimension).
double oracle_match_total(const MultiVectorRepr& user, const MultiVectorRepr& item, bool use_max,
                          double eps) {
  double total = 0.0;
  for (int j = 0; j < item.num_attrs; ++j) {
    const std::vector<double>* iv = nullptr;
    for (const auto& e : item.entries)
      if (e.attr_index == j) iv = &e.v;
    double best = -2.0, sum = 0.0;
    int count = 0;
    for (const auto& e : user.entries) {
      if (e.attr_index != j) continue;
      const double c = oracle_cosine(e.v, *iv, eps);
      if (count == 0 || c > best) best = c;
      sum += c;
      ++count;
    }
    if (count == 0)
      total += -1.0;
    else
      total += use_max ? best : sum / count;
  }
  return total;
}

MultiVectorRepr random_repr(Rng& rng, int num_attrs, int positions, int dim, bool item_side) {
  MultiVectorRepr repr;
  repr.num_attrs = num_attrs;
  for (int t = positions; t >= 1; --t) {  // newest-first entry order
    for (int j = 0; j < num_attrs; ++j) {
      PooledVec pv;
      pv.item_pos = item_side ? 0 : t;
      pv.attr_index = j;
      for (int k = 0; k < dim; ++k) pv.v.push_back(rng.uniform(-1.0, 1.0));
      repr.entries.push_back(std::move(pv));
    }
    if (item_side) break;
  }
  return repr;
}

CheckResult check_maxsim_bruteforce() {
  CheckResult result{"maxsim_bruteforce", true, ""};
  Rng rng(20240501);
  const int trials = 250;
  double max_batch_diff = 0.0;
  for (int trial = 0; trial < trials && result.pass; ++trial) {
    const int m = 1 + rng.next_int(4);
    const int n = 1 + rng.next_int(8);
    const int d = 2 + rng.next_int(15);
    const int catalog_size = 1 + rng.next_int(20);
    MatchConfig config;
    config.agg = rng.bernoulli(0.5) ? MatchConfig::Agg::Max : MatchConfig::Agg::Mean;
    MultiVectorRepr user = random_repr(rng, m, n, d, false);
    if (n > 1 && rng.bernoulli(0.3)) {
      // Simulate a truncated attribute: drop all of one attribute's entries.
      const int drop = rng.next_int(m);
      std::erase_if(user.entries, [&](const PooledVec& e) { return e.attr_index == drop; });
    }
    std::vector<std::string> ids;
    std::vector<MultiVectorRepr> items;
    for (int i = 0; i < catalog_size; ++i) {
      ids.push_back("i" + std::to_string(i));
      items.push_back(random_repr(rng, m, 1, d, true));
    }
    for (int i = 0; i < catalog_size; ++i) {
      const ScoreBreakdown got = match_score(user, items[static_cast<size_t>(i)], config);
      const double want = oracle_match_total(user, items[static_cast<size_t>(i)],
                                             config.agg == MatchConfig::Agg::Max,
                                             config.cosine_eps);
      if (got.total != want) {
        result.pass = false;
        result.detail = "match_score mismatch at trial " + std::to_string(trial);
        break;
      }
    }
    ItemIndex index = ItemIndex::from_reprs(ids, items);
    std::vector<double> batch = batch_score(user, index, config);
    for (int i = 0; i < catalog_size; ++i) {
      const double per_item = match_score(user, items[static_cast<size_t>(i)], config).total;
      max_batch_diff = std::max(max_batch_diff, std::abs(batch[static_cast<size_t>(i)] - per_item));
    }
    if (max_batch_diff >= 1e-6) {
      result.pass = false;
      result.detail = "batch_score diverged from per-item loop";
    }
  }
  if (result.pass) {
    std::ostringstream os;
    os << trials << " random instances, batch max abs diff " << max_batch_diff;
    result.detail = os.str();
  }
  return result;
}

CheckResult check_metric_oracle() {
  CheckResult result{"metric_oracle", true, ""};
  Rng rng(77001);
  for (int trial = 0; trial < 1000 && result.pass; ++trial) {
    const int n = 2 + rng.next_int(50);
    std::vector<double> scores;
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) {
      // Coarse grid so score ties actually occur.
      scores.push_back(static_cast<double>(rng.next_int(8)));
      ids.push_back("i" + std::to_string(i));
    }
    const int target = rng.next_int(n);
    const int k = 1 + rng.next_int(10);
    // Oracle: sort by (score desc, id asc), find the target slot.
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
        return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
      return ids[static_cast<size_t>(a)] < ids[static_cast<size_t>(b)];
    });
    int oracle_rank = 0;
    for (int i = 0; i < n; ++i)
      if (order[static_cast<size_t>(i)] == target) oracle_rank = i + 1;
    const int rank = rank_of_target(scores, ids, target);
    if (rank != oracle_rank) {
      result.pass = false;
      result.detail = "rank mismatch at trial " + std::to_string(trial);
      break;
    }
    const double oracle_recall = oracle_rank <= k ? 1.0 : 0.0;
    const double oracle_ndcg = oracle_rank <= k ? 1.0 / std::log2(oracle_rank + 1.0) : 0.0;
    if (recall_at_k(rank, k) != oracle_recall || std::abs(ndcg_at_k(rank, k) - oracle_ndcg) > 1e-15) {
      result.pass = false;
      result.detail = "metric mismatch at trial " + std::to_string(trial);
    }
  }
  if (std::abs(ndcg_at_k(4, 10) - 1.0 / std::log2(5.0)) > 1e-12) {
    result.pass = false;
    result.detail = "ndcg(rank 4) closed form violated";
  }
  if (result.pass) result.detail = "1000 random rankings";
  return result;
}

CheckResult check_loss_properties() {
  CheckResult result{"loss_properties", true, ""};
  Rng rng(4242);
  // Shift invariance.
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + rng.next_int(10);
    std::vector<double> scores;
    for (int i = 0; i < n; ++i) scores.push_back(rng.uniform(-3.0, 3.0));
    const int target = rng.next_int(n);
    const double tau = 0.05;
    const double base = cross_entropy_loss(scores, target, tau);
    std::vector<double> shifted = scores;
    const double c = rng.uniform(-5.0, 5.0);
    for (double& s : shifted) s += c;
    if (std::abs(cross_entropy_loss(shifted, target, tau) - base) > 1e-12) {
      result.pass = false;
      result.detail = "shift invariance violated";
      return result;
    }
  }
  // Uniform two-way softmax.
  const double two_way = cross_entropy_loss(std::vector<double>{1.25, 1.25}, 0, 0.05);
  if (std::abs(two_way - std::log(2.0)) > 1e-12) {
    result.pass = false;
    result.detail = "equal-score loss != ln 2";
    return result;
  }
  // d(loss)/d(scores) vs finite differences.
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 2 + rng.next_int(8);
    std::vector<double> scores;
    for (int i = 0; i < n; ++i) scores.push_back(rng.uniform(-2.0, 2.0));
    const int target = rng.next_int(n);
    const double tau = 0.5;
    Tape tape;
    std::vector<Var> vars;
    std::vector<Tensor> storage(static_cast<size_t>(n));
    std::vector<Tensor> grads(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      storage[static_cast<size_t>(i)] = Tensor(1, 1);
      storage[static_cast<size_t>(i)].data[0] = scores[static_cast<size_t>(i)];
      grads[static_cast<size_t>(i)] = Tensor(1, 1);
      vars.push_back(tape.leaf(&storage[static_cast<size_t>(i)], &grads[static_cast<size_t>(i)]));
    }
    tape.backward(tape.cross_entropy(vars, target, tau));
    const double h = 1e-6;
    for (int i = 0; i < n; ++i) {
      std::vector<double> up = scores, down = scores;
      up[static_cast<size_t>(i)] += h;
      down[static_cast<size_t>(i)] -= h;
      const double numeric =
          (cross_entropy_loss(up, target, tau) - cross_entropy_loss(down, target, tau)) / (2 * h);
      const double analytic = grads[static_cast<size_t>(i)].data[0];
      const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      if (rel > 1e-6) {
        result.pass = false;
        result.detail = "loss gradient mismatch";
        return result;
      }
    }
  }
  result.detail = "shift invariance, ln 2, score gradients";
  return result;
}

CheckResult check_gradients_small() {
  GradCheckOptions options;
  options.config.hidden_dim = 8;
  options.config.proj_dim = 4;
  options.config.num_layers = 1;
  options.config.num_heads = 2;
  options.config.ff_dim = 16;
  options.config.max_positions = 64;
  options.num_items = 5;
  options.num_users = 3;
  options.examples = 2;
  GradCheckReport report = gradient_check(options);
  std::ostringstream os;
  os << "max tensor rel err " << report.max_rel_err;
  return {"gradient_check", report.pass, os.str()};
}

}  // namespace

std::vector<CheckResult> run_selfchecks() {
  std::vector<CheckResult> results;
  results.push_back(check_maxsim_bruteforce());
  results.push_back(check_metric_oracle());
  results.push_back(check_loss_properties());
  results.push_back(check_gradients_small());
  return results;
}

}  // namespace attrec
