#pragma once

#include <vector>

#include "raner/tensor.hpp"
#include "raner/ukb.hpp"

namespace raner {

// Abstract instance of the n-gram summarization problem: pick at most N_max
// candidates maximizing coverage plus diversity, both monotone submodular.
//
//   cov(Z)  = sum_i min( sum_{z in Z} sim(i, col(z)), alpha * sum_k sim(i, k) )
//   div(Z)  = sum_groups sqrt( sum_{z in Z, group(z)=g} avg_sim(col(z)) )
//   f(Z)    = cov(Z) + lambda_div * div(Z)
//
// sim must be non-negative (cosine similarities are clamped at 0 when an
// instance is built from embeddings) so the greedy (1 - 1/e) guarantee holds.
struct SummarizeInstance {
  Mat sim;                      // universe x universe, non-negative
  std::vector<int> cand_col;    // candidate -> universe column
  std::vector<int> cand_group;  // candidate -> diversity group, -1 = none
  double alpha = 0.1;
  double lambda_div = 10.0;

  int universe() const { return sim.rows; }
  int candidates() const { return static_cast<int>(cand_col.size()); }
};

double summarize_objective(const SummarizeInstance& inst, const std::vector<int>& chosen);

// Greedy maximization under |Z| <= n_max; stops early when no candidate has
// positive marginal gain. `gains` (optional) receives the accepted marginal
// gains in selection order.
std::vector<int> greedy_select(const SummarizeInstance& inst, int n_max,
                               std::vector<double>* gains = nullptr);

// Builds the instance for a chunk: universe columns are the start-position
// embeddings (the n_max-gram starting at each position), candidates are the
// surface-filtered spans, diversity groups are the maximal stopword-free
// token runs containing a capital letter.
SummarizeInstance make_summarize_instance(const std::vector<std::string>& tokens,
                                          const std::vector<std::vector<double>>& token_vecs,
                                          const std::vector<Span>& candidates,
                                          const Stopwords& sw, int ngram_max, double alpha,
                                          double lambda_div);

// Greedy selection of at most n_max representative spans from the
// surface-filtered candidates.
std::vector<Span> summarization_filter(const std::vector<std::string>& tokens,
                                       const std::vector<std::vector<double>>& token_vecs,
                                       const std::vector<Span>& candidates, const Stopwords& sw,
                                       int ngram_max, double alpha, double lambda_div,
                                       int n_max);

}  // namespace raner
