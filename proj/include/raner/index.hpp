#pragma once

#include <optional>
#include <string>
#include <vector>

#include "raner/labels.hpp"
#include "raner/ukb.hpp"

namespace raner {

// Distance over unnormalized key vectors. Squared Euclidean is the default;
// the inner-product alternative is realized as cosine distance (1 - cos) so
// hit distances stay non-negative.
enum class Metric { squared_euclidean, cosine };

std::string metric_name(Metric m);
Metric metric_from_name(const std::string& name);

struct Query {
  enum class Kind { sentence, entity };
  Kind kind = Kind::sentence;
  std::vector<float> vec;
  std::optional<EntitySpan> origin;  // present iff kind == entity
};

struct RetrievalHit {
  int64_t entry_id = 0;
  double distance = 0.0;
  KbKind kb_kind = KbKind::unlabeled;
  int query_index = -1;
  int span_start = -1;  // matched n-gram start; -1 for sentence keys
};

// Exact search over one KB's keys. Sentence queries search sentence keys
// only, entity queries search n-gram keys only.
class KbIndex {
 public:
  KbIndex() = default;
  KbIndex(const UnstructuredKB& kb, Metric metric);

  // Exact k smallest distances, ties broken by (entry id, span start).
  // Returns fewer than k hits when the KB is smaller.
  std::vector<RetrievalHit> knn(const Query& query, int k) const;

  const UnstructuredKB* kb() const { return kb_; }
  Metric metric() const { return metric_; }
  size_t sentence_keys() const { return sentence_ids_.size(); }
  size_t ngram_keys() const { return ngram_ids_.size(); }

 private:
  const UnstructuredKB* kb_ = nullptr;
  Metric metric_ = Metric::squared_euclidean;
  int dim_ = 0;
  std::vector<float> sentence_data_;
  std::vector<int64_t> sentence_ids_;
  std::vector<float> ngram_data_;
  std::vector<int64_t> ngram_ids_;
  std::vector<int> ngram_starts_;
};

double key_distance(const float* a, const float* b, int dim, Metric metric);

// Runs every query against the enabled KBs, top-m each, yielding at most
// 2(E+1)m hits; hits for the excluded labeled entry (the input itself) are
// removed after gathering.
std::vector<RetrievalHit> gather_candidates(const std::vector<Query>& queries, int m,
                                            const KbIndex* labeled, const KbIndex* unlabeled,
                                            std::optional<int64_t> exclude_labeled_id);

// Collapses duplicate (kb, entry) pairs to their minimum distance, sorts
// ascending by (distance, entry id, kind) and returns the first m.
std::vector<RetrievalHit> dedup_topm(std::vector<RetrievalHit> hits, int m);

}  // namespace raner
