#include "raner/index.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace raner {

std::string metric_name(Metric m) {
  return m == Metric::squared_euclidean ? "squared-euclidean" : "cosine";
}

Metric metric_from_name(const std::string& name) {
  if (name == "squared-euclidean") return Metric::squared_euclidean;
  if (name == "cosine") return Metric::cosine;
  throw config_error("unknown metric: " + name);
}

double key_distance(const float* a, const float* b, int dim, Metric metric) {
  if (metric == Metric::squared_euclidean) {
    double s = 0.0;
    for (int i = 0; i < dim; ++i) {
      double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
      s += d * d;
    }
    return s;
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int i = 0; i < dim; ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - dot / std::sqrt(na * nb);
}

KbIndex::KbIndex(const UnstructuredKB& kb, Metric metric) : kb_(&kb), metric_(metric) {
  dim_ = kb.key_dim;
  for (const auto& e : kb.entries) {
    check_data(static_cast<int>(e.sentence_key.size()) == dim_, "sentence key dim mismatch");
    sentence_data_.insert(sentence_data_.end(), e.sentence_key.begin(), e.sentence_key.end());
    sentence_ids_.push_back(e.id);
    for (const auto& k : e.ngram_keys) {
      check_data(static_cast<int>(k.vec.size()) == dim_, "ngram key dim mismatch");
      ngram_data_.insert(ngram_data_.end(), k.vec.begin(), k.vec.end());
      ngram_ids_.push_back(e.id);
      ngram_starts_.push_back(k.span.start);
    }
  }
}

std::vector<RetrievalHit> KbIndex::knn(const Query& query, int k) const {
  check_config(kb_ != nullptr, "index not built");
  check_data(static_cast<int>(query.vec.size()) == dim_,
             "query dimension does not match KB key dimension");
  bool sentence = query.kind == Query::Kind::sentence;
  const auto& data = sentence ? sentence_data_ : ngram_data_;
  const auto& ids = sentence ? sentence_ids_ : ngram_ids_;

  std::vector<RetrievalHit> hits;
  hits.reserve(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) {
    RetrievalHit h;
    h.entry_id = ids[i];
    h.distance = key_distance(query.vec.data(), data.data() + i * static_cast<size_t>(dim_),
                              dim_, metric_);
    h.kb_kind = kb_->kind;
    h.span_start = sentence ? -1 : ngram_starts_[i];
    hits.push_back(h);
  }
  auto cmp = [](const RetrievalHit& a, const RetrievalHit& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    if (a.entry_id != b.entry_id) return a.entry_id < b.entry_id;
    return a.span_start < b.span_start;
  };
  size_t kk = std::min(static_cast<size_t>(std::max(k, 0)), hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<long>(kk), hits.end(), cmp);
  hits.resize(kk);
  return hits;
}

std::vector<RetrievalHit> gather_candidates(const std::vector<Query>& queries, int m,
                                            const KbIndex* labeled, const KbIndex* unlabeled,
                                            std::optional<int64_t> exclude_labeled_id) {
  check_config(m >= 1, "m must be >= 1");
  std::vector<RetrievalHit> out;
  for (size_t qi = 0; qi < queries.size(); ++qi) {
    for (const KbIndex* idx : {labeled, unlabeled}) {
      if (idx == nullptr) continue;
      for (auto& h : idx->knn(queries[qi], m)) {
        h.query_index = static_cast<int>(qi);
        out.push_back(h);
      }
    }
  }
  if (exclude_labeled_id) {
    std::erase_if(out, [&](const RetrievalHit& h) {
      return h.kb_kind == KbKind::labeled && h.entry_id == *exclude_labeled_id;
    });
  }
  return out;
}

std::vector<RetrievalHit> dedup_topm(std::vector<RetrievalHit> hits, int m) {
  // (kind, id) -> best hit at the minimum distance
  std::map<std::pair<int, int64_t>, RetrievalHit> best;
  for (const auto& h : hits) {
    auto key = std::make_pair(h.kb_kind == KbKind::labeled ? 0 : 1, h.entry_id);
    auto it = best.find(key);
    if (it == best.end() || h.distance < it->second.distance)
      best.insert_or_assign(key, h);
  }
  std::vector<RetrievalHit> out;
  out.reserve(best.size());
  for (auto& [key, h] : best) out.push_back(h);
  std::sort(out.begin(), out.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    if (a.entry_id != b.entry_id) return a.entry_id < b.entry_id;
    return a.kb_kind == KbKind::labeled && b.kb_kind == KbKind::unlabeled;
  });
  if (static_cast<int>(out.size()) > m) out.resize(static_cast<size_t>(m));
  return out;
}

}  // namespace raner
