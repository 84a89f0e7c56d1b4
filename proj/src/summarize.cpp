#include "raner/summarize.hpp"

#include <algorithm>
#include <cmath>

namespace raner {

namespace {
// Per-universe-column average similarity, the diversity reward r_j.
std::vector<double> column_rewards(const SummarizeInstance& inst) {
  int u = inst.universe();
  std::vector<double> r(static_cast<size_t>(u), 0.0);
  for (int i = 0; i < u; ++i)
    for (int j = 0; j < u; ++j) r[static_cast<size_t>(j)] += inst.sim.at(i, j);
  for (auto& x : r) x /= u;
  return r;
}

std::vector<double> coverage_caps(const SummarizeInstance& inst) {
  int u = inst.universe();
  std::vector<double> cap(static_cast<size_t>(u), 0.0);
  for (int i = 0; i < u; ++i) {
    double s = 0.0;
    for (int k = 0; k < u; ++k) s += inst.sim.at(i, k);
    cap[static_cast<size_t>(i)] = inst.alpha * s;
  }
  return cap;
}
}  // namespace

double summarize_objective(const SummarizeInstance& inst, const std::vector<int>& chosen) {
  int u = inst.universe();
  auto cap = coverage_caps(inst);
  auto reward = column_rewards(inst);

  double cov = 0.0;
  for (int i = 0; i < u; ++i) {
    double s = 0.0;
    for (int z : chosen) s += inst.sim.at(i, inst.cand_col[static_cast<size_t>(z)]);
    cov += std::min(s, cap[static_cast<size_t>(i)]);
  }

  // group id -> accumulated reward
  std::vector<double> group_sum;
  for (int z : chosen) {
    int g = inst.cand_group[static_cast<size_t>(z)];
    if (g < 0) continue;
    if (g >= static_cast<int>(group_sum.size())) group_sum.resize(static_cast<size_t>(g) + 1, 0.0);
    group_sum[static_cast<size_t>(g)] += reward[static_cast<size_t>(inst.cand_col[static_cast<size_t>(z)])];
  }
  double div = 0.0;
  for (double s : group_sum) div += std::sqrt(s);

  return cov + inst.lambda_div * div;
}

std::vector<int> greedy_select(const SummarizeInstance& inst, int n_max,
                               std::vector<double>* gains) {
  check_config(n_max >= 0, "n_max must be >= 0");
  int u = inst.universe();
  int nc = inst.candidates();
  auto cap = coverage_caps(inst);
  auto reward = column_rewards(inst);

  std::vector<double> cov_sum(static_cast<size_t>(u), 0.0);  // additive coverage per row
  std::vector<double> group_sum;
  std::vector<bool> taken(static_cast<size_t>(nc), false);
  std::vector<int> chosen;
  if (gains) gains->clear();

  while (static_cast<int>(chosen.size()) < n_max) {
    int best = -1;
    double best_gain = 0.0;
    for (int z = 0; z < nc; ++z) {
      if (taken[static_cast<size_t>(z)]) continue;
      int col = inst.cand_col[static_cast<size_t>(z)];
      double gain = 0.0;
      for (int i = 0; i < u; ++i) {
        double before = std::min(cov_sum[static_cast<size_t>(i)], cap[static_cast<size_t>(i)]);
        double after = std::min(cov_sum[static_cast<size_t>(i)] + inst.sim.at(i, col),
                                cap[static_cast<size_t>(i)]);
        gain += after - before;
      }
      int g = inst.cand_group[static_cast<size_t>(z)];
      if (g >= 0) {
        double gs = g < static_cast<int>(group_sum.size()) ? group_sum[static_cast<size_t>(g)] : 0.0;
        gain += inst.lambda_div * (std::sqrt(gs + reward[static_cast<size_t>(col)]) - std::sqrt(gs));
      }
      if (best < 0 || gain > best_gain) {
        best = z;
        best_gain = gain;
      }
    }
    if (best < 0 || best_gain <= 0.0) break;  // no positive gain remains
    taken[static_cast<size_t>(best)] = true;
    chosen.push_back(best);
    if (gains) gains->push_back(best_gain);
    int col = inst.cand_col[static_cast<size_t>(best)];
    for (int i = 0; i < u; ++i) cov_sum[static_cast<size_t>(i)] += inst.sim.at(i, col);
    int g = inst.cand_group[static_cast<size_t>(best)];
    if (g >= 0) {
      if (g >= static_cast<int>(group_sum.size())) group_sum.resize(static_cast<size_t>(g) + 1, 0.0);
      group_sum[static_cast<size_t>(g)] += reward[static_cast<size_t>(col)];
    }
  }
  return chosen;
}

namespace {
double clamped_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::max(0.0, dot / std::sqrt(na * nb));
}

// Maximal stopword-free token runs containing at least one capital letter;
// returns per-position group id or -1.
std::vector<int> diversity_groups(const std::vector<std::string>& tokens, const Stopwords& sw) {
  int n = static_cast<int>(tokens.size());
  std::vector<int> group(static_cast<size_t>(n), -1);
  int next = 0;
  int i = 0;
  while (i < n) {
    if (sw.contains(tokens[static_cast<size_t>(i)])) {
      ++i;
      continue;
    }
    int j = i;
    bool capital = false;
    while (j < n && !sw.contains(tokens[static_cast<size_t>(j)])) {
      if (has_capital(tokens[static_cast<size_t>(j)])) capital = true;
      ++j;
    }
    if (capital)
      for (int k = i; k < j; ++k) group[static_cast<size_t>(k)] = next;
    if (capital) ++next;
    i = j;
  }
  return group;
}
}  // namespace

SummarizeInstance make_summarize_instance(const std::vector<std::string>& tokens,
                                          const std::vector<std::vector<double>>& token_vecs,
                                          const std::vector<Span>& candidates,
                                          const Stopwords& sw, int ngram_max, double alpha,
                                          double lambda_div) {
  int len = static_cast<int>(tokens.size());
  check_data(static_cast<int>(token_vecs.size()) == len, "token vector count mismatch");

  // Start-position embeddings: the n_max-gram starting at each position,
  // clipped at the chunk end, filtered or not.
  std::vector<std::vector<double>> h(static_cast<size_t>(len));
  for (int i = 0; i < len; ++i)
    h[static_cast<size_t>(i)] = pool_key(token_vecs, i, std::min(len - 1, i + ngram_max - 1));

  SummarizeInstance inst;
  inst.alpha = alpha;
  inst.lambda_div = lambda_div;
  inst.sim = Mat(len, len);
  for (int i = 0; i < len; ++i)
    for (int j = 0; j < len; ++j)
      inst.sim.at(i, j) = clamped_cosine(h[static_cast<size_t>(i)], h[static_cast<size_t>(j)]);

  auto group = diversity_groups(tokens, sw);
  for (const auto& c : candidates) {
    inst.cand_col.push_back(c.start);
    inst.cand_group.push_back(group[static_cast<size_t>(c.start)]);
  }
  return inst;
}

std::vector<Span> summarization_filter(const std::vector<std::string>& tokens,
                                       const std::vector<std::vector<double>>& token_vecs,
                                       const std::vector<Span>& candidates, const Stopwords& sw,
                                       int ngram_max, double alpha, double lambda_div,
                                       int n_max) {
  if (candidates.empty()) return {};
  auto inst = make_summarize_instance(tokens, token_vecs, candidates, sw, ngram_max, alpha,
                                      lambda_div);
  auto chosen = greedy_select(inst, n_max);
  std::sort(chosen.begin(), chosen.end());
  std::vector<Span> out;
  for (int z : chosen) out.push_back(candidates[static_cast<size_t>(z)]);
  return out;
}

}  // namespace raner
