#include <algorithm>
#include <map>
#include <random>

#include "doctest.h"
#include "raner/index.hpp"

using namespace raner;

namespace {

// Random KB with both key classes; ngram spans are synthetic.
UnstructuredKB random_kb(std::mt19937_64& rng, int entries, int dim, KbKind kind,
                         int max_ngrams = 3) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::uniform_int_distribution<int> n_ngrams(0, max_ngrams);
  UnstructuredKB kb;
  kb.kind = kind;
  kb.key_dim = dim;
  kb.max_len = 8;
  for (int i = 0; i < entries; ++i) {
    KnowledgeEntry e;
    e.id = i;
    e.tokens = {"Tok" + std::to_string(i)};
    if (kind == KbKind::labeled) e.labels = {0};
    e.sentence_key.resize(static_cast<size_t>(dim));
    for (auto& x : e.sentence_key) x = u(rng);
    int ng = n_ngrams(rng);
    for (int k = 0; k < ng; ++k) {
      NgramKey key;
      key.span = {0, 0};
      key.vec.resize(static_cast<size_t>(dim));
      for (auto& x : key.vec) x = u(rng);
      key.span.start = k % 1;
      e.ngram_keys.push_back(key);
    }
    kb.entries.push_back(std::move(e));
  }
  return kb;
}

// Brute-force oracle over the same data.
std::vector<std::pair<double, int64_t>> oracle_knn(const UnstructuredKB& kb, bool sentence,
                                                   const std::vector<float>& q, int k,
                                                   Metric metric) {
  std::vector<std::tuple<double, int64_t, int>> all;
  for (const auto& e : kb.entries) {
    if (sentence) {
      all.emplace_back(key_distance(q.data(), e.sentence_key.data(), kb.key_dim, metric), e.id,
                       -1);
    } else {
      for (const auto& key : e.ngram_keys)
        all.emplace_back(key_distance(q.data(), key.vec.data(), kb.key_dim, metric), e.id,
                         key.span.start);
    }
  }
  std::sort(all.begin(), all.end());
  std::vector<std::pair<double, int64_t>> out;
  for (size_t i = 0; i < all.size() && i < static_cast<size_t>(k); ++i)
    out.emplace_back(std::get<0>(all[i]), std::get<1>(all[i]));
  return out;
}

Query sentence_query(std::mt19937_64& rng, int dim) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Query q;
  q.kind = Query::Kind::sentence;
  q.vec.resize(static_cast<size_t>(dim));
  for (auto& x : q.vec) x = u(rng);
  return q;
}

}  // namespace

TEST_CASE("knn basics") {
  std::mt19937_64 rng(5);
  auto kb = random_kb(rng, 20, 6, KbKind::unlabeled);
  KbIndex index(kb, Metric::squared_euclidean);

  // Query equal to a stored key comes back first at distance 0.
  Query q;
  q.kind = Query::Kind::sentence;
  q.vec = kb.entries[7].sentence_key;
  auto hits = index.knn(q, 3);
  REQUIRE(hits.size() == 3);
  CHECK(hits[0].entry_id == 7);
  CHECK(hits[0].distance == 0.0);

  // k larger than the KB returns everything.
  auto all = index.knn(q, 1000);
  CHECK(all.size() == kb.entries.size());

  // Dimension mismatch rejected.
  Query bad;
  bad.kind = Query::Kind::sentence;
  bad.vec = {1.0f, 2.0f};
  CHECK_THROWS_AS(index.knn(bad, 1), data_error);

  // Distances are non-negative and sorted.
  for (size_t i = 1; i < all.size(); ++i) {
    CHECK(all[i].distance >= all[i - 1].distance);
    CHECK(all[i].distance >= 0.0);
  }
}

TEST_CASE("knn matches the linear-scan oracle") {
  std::mt19937_64 rng(17);
  for (Metric metric : {Metric::squared_euclidean, Metric::cosine}) {
    auto kb = random_kb(rng, 200, 8, KbKind::unlabeled);
    KbIndex index(kb, metric);
    for (int it = 0; it < 100; ++it) {
      Query q = sentence_query(rng, 8);
      q.kind = it % 2 == 0 ? Query::Kind::sentence : Query::Kind::entity;
      if (q.kind == Query::Kind::entity) q.origin = EntitySpan{0, 0, 0, 0.5, false};
      auto mine = index.knn(q, 10);
      auto expect = oracle_knn(kb, q.kind == Query::Kind::sentence, q.vec, 10, metric);
      REQUIRE(mine.size() == expect.size());
      for (size_t i = 0; i < mine.size(); ++i) {
        CHECK(mine[i].entry_id == expect[i].second);
        CHECK(mine[i].distance == doctest::Approx(expect[i].first).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("gather_candidates bounds and self-exclusion") {
  std::mt19937_64 rng(23);
  auto labeled = random_kb(rng, 30, 6, KbKind::labeled);
  auto unlabeled = random_kb(rng, 40, 6, KbKind::unlabeled);
  KbIndex li(labeled, Metric::squared_euclidean);
  KbIndex ui(unlabeled, Metric::squared_euclidean);

  // E entity queries + 1 sentence query -> at most 2(E+1)m hits.
  for (int E : {0, 1, 2, 5}) {
    std::vector<Query> queries{sentence_query(rng, 6)};
    for (int e = 0; e < E; ++e) {
      Query q = sentence_query(rng, 6);
      q.kind = Query::Kind::entity;
      q.origin = EntitySpan{0, 0, 0, 0.1, false};
      queries.push_back(q);
    }
    int m = 10;
    auto hits = gather_candidates(queries, m, &li, &ui, std::nullopt);
    CHECK(hits.size() <= static_cast<size_t>(2 * (E + 1) * m));
    for (const auto& h : hits) CHECK(h.query_index >= 0);
  }

  // E=0: at most 2m from the sentence query alone.
  auto only_sentence = gather_candidates({sentence_query(rng, 6)}, 10, &li, &ui, std::nullopt);
  CHECK(only_sentence.size() <= 20);

  // The excluded labeled entry never comes back.
  Query probe;
  probe.kind = Query::Kind::sentence;
  probe.vec = labeled.entries[3].sentence_key;
  auto with = gather_candidates({probe}, 5, &li, &ui, std::nullopt);
  bool found = false;
  for (const auto& h : with)
    if (h.kb_kind == KbKind::labeled && h.entry_id == 3) found = true;
  CHECK(found);
  auto without = gather_candidates({probe}, 5, &li, &ui, std::optional<int64_t>(3));
  for (const auto& h : without) CHECK((h.kb_kind != KbKind::labeled || h.entry_id != 3));

  // Both KBs absent: empty result.
  CHECK(gather_candidates({probe}, 5, nullptr, nullptr, std::nullopt).empty());
}

TEST_CASE("dedup_topm") {
  SUBCASE("minimum distance wins") {
    std::vector<RetrievalHit> hits;
    hits.push_back({7, 0.5, KbKind::unlabeled, 0, -1});
    hits.push_back({7, 0.3, KbKind::unlabeled, 1, 2});
    hits.push_back({9, 0.4, KbKind::unlabeled, 0, -1});
    auto out = dedup_topm(hits, 10);
    REQUIRE(out.size() == 2);
    CHECK(out[0].entry_id == 7);
    CHECK(out[0].distance == 0.3);
    CHECK(out[1].entry_id == 9);
  }

  SUBCASE("distinct ids within m: sorted identity") {
    std::vector<RetrievalHit> hits;
    hits.push_back({1, 0.9, KbKind::unlabeled, 0, -1});
    hits.push_back({2, 0.1, KbKind::unlabeled, 0, -1});
    hits.push_back({3, 0.5, KbKind::labeled, 0, -1});
    auto out = dedup_topm(hits, 5);
    REQUIRE(out.size() == 3);
    CHECK(out[0].entry_id == 2);
    CHECK(out[1].entry_id == 3);
    CHECK(out[2].entry_id == 1);
  }

  SUBCASE("same id in different KBs is not merged") {
    std::vector<RetrievalHit> hits;
    hits.push_back({4, 0.2, KbKind::labeled, 0, -1});
    hits.push_back({4, 0.1, KbKind::unlabeled, 0, -1});
    auto out = dedup_topm(hits, 5);
    CHECK(out.size() == 2);
  }

  SUBCASE("random lists match a group-by-min oracle") {
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<int64_t> id(0, 20);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    std::uniform_int_distribution<int> kind(0, 1);
    for (int it = 0; it < 200; ++it) {
      std::vector<RetrievalHit> hits;
      int n = 1 + it % 60;
      for (int i = 0; i < n; ++i)
        hits.push_back({id(rng), dist(rng), kind(rng) ? KbKind::labeled : KbKind::unlabeled,
                        0, -1});
      int m = 1 + it % 12;
      auto mine = dedup_topm(hits, m);

      std::map<std::pair<int, int64_t>, double> best;
      for (const auto& h : hits) {
        auto key = std::make_pair(h.kb_kind == KbKind::labeled ? 0 : 1, h.entry_id);
        auto it2 = best.find(key);
        if (it2 == best.end() || h.distance < it2->second) best[key] = h.distance;
      }
      std::vector<std::tuple<double, int64_t, int>> expect;
      for (const auto& [key, d] : best) expect.emplace_back(d, key.second, key.first);
      std::sort(expect.begin(), expect.end());
      if (expect.size() > static_cast<size_t>(m)) expect.resize(static_cast<size_t>(m));

      REQUIRE(mine.size() == expect.size());
      for (size_t i = 0; i < mine.size(); ++i) {
        CHECK(mine[i].distance == std::get<0>(expect[i]));
        CHECK(mine[i].entry_id == std::get<1>(expect[i]));
      }
      // Unique ids, non-decreasing distances.
      for (size_t i = 1; i < mine.size(); ++i) {
        CHECK(mine[i].distance >= mine[i - 1].distance);
      }
    }
  }
}

TEST_CASE("cosine metric stays non-negative") {
  std::mt19937_64 rng(37);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> a(8), b(8);
  for (int it = 0; it < 100; ++it) {
    for (auto& x : a) x = u(rng);
    for (auto& x : b) x = u(rng);
    double d = key_distance(a.data(), b.data(), 8, Metric::cosine);
    CHECK(d >= 0.0);
    CHECK(d <= 2.0 + 1e-12);
  }
  CHECK(key_distance(a.data(), a.data(), 8, Metric::cosine) == doctest::Approx(0.0));
}
