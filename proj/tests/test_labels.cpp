#include <array>
#include <random>
#include <set>
#include <tuple>

#include "doctest.h"
#include "raner/conll.hpp"
#include "raner/labels.hpp"

using namespace raner;

namespace {

LabelSet two_types() { return LabelSet({"LOC", "PER"}); }

// Independent reference scorer: re-derives entity spans and exact-match
// counts from scratch, conlleval-style (orphan I- starts a span; a span runs
// while I- labels continue, keeping the first token's type).
struct RefSpan {
  int sent, start, end, type;
  bool operator<(const RefSpan& o) const {
    return std::tie(sent, start, end, type) < std::tie(o.sent, o.start, o.end, o.type);
  }
};

std::set<RefSpan> ref_spans(const std::vector<std::vector<int>>& seqs) {
  std::set<RefSpan> out;
  for (size_t s = 0; s < seqs.size(); ++s) {
    const auto& y = seqs[s];
    size_t i = 0;
    while (i < y.size()) {
      if (y[i] == 0) {
        ++i;
        continue;
      }
      int type = (y[i] - 1) / 2;
      size_t j = i + 1;
      while (j < y.size() && y[j] != 0 && y[j] % 2 == 0) ++j;
      out.insert({static_cast<int>(s), static_cast<int>(i), static_cast<int>(j) - 1, type});
      i = j;
    }
  }
  return out;
}

std::array<double, 3> ref_f1(const std::vector<std::vector<int>>& pred,
                             const std::vector<std::vector<int>>& gold) {
  auto ps = ref_spans(pred), gs = ref_spans(gold);
  long tp = 0;
  for (const auto& s : ps)
    if (gs.count(s)) ++tp;
  double prec = ps.empty() ? 0.0 : static_cast<double>(tp) / ps.size();
  double rec = gs.empty() ? 0.0 : static_cast<double>(tp) / gs.size();
  double f1 = prec + rec == 0.0 ? 0.0 : 2 * prec * rec / (prec + rec);
  return {prec, rec, f1};
}

Prediction uniform_pred(int len, int labels) {
  Prediction p;
  p.num_labels = labels;
  p.probs.assign(static_cast<size_t>(len) * labels, 1.0 / labels);
  return p;
}

}  // namespace

TEST_CASE("label set ids and names") {
  LabelSet ls = two_types();
  CHECK(ls.num_labels() == 5);
  CHECK(ls.label_name(0) == "O");
  CHECK(ls.label_name(1) == "B-LOC");
  CHECK(ls.label_name(2) == "I-LOC");
  CHECK(ls.label_name(3) == "B-PER");
  CHECK(ls.label_name(4) == "I-PER");
  for (int t = 0; t < ls.num_types(); ++t) {
    CHECK(LabelSet::is_b(ls.b_label(t)));
    CHECK(LabelSet::is_i(ls.i_label(t)));
    CHECK(LabelSet::type_of(ls.b_label(t)) == t);
    CHECK(LabelSet::type_of(ls.i_label(t)) == t);
  }
  CHECK(ls.label_id("B-PER") == 3);
  CHECK_THROWS_AS(ls.label_id("B-ORG"), data_error);
}

TEST_CASE("decode_bio basics") {
  LabelSet ls = two_types();

  CHECK(decode_bio({0, 0, 0}, ls).empty());

  auto spans = decode_bio({1, 2, 0, 3}, ls);  // B-LOC I-LOC O B-PER
  REQUIRE(spans.size() == 2);
  CHECK(spans[0].start == 0);
  CHECK(spans[0].end == 1);
  CHECK(spans[0].type == 0);
  CHECK_FALSE(spans[0].inconsistent);
  CHECK(spans[1].start == 3);
  CHECK(spans[1].end == 3);
  CHECK(spans[1].type == 1);

  // B-LOC I-PER: one span, flagged inconsistent, reported with first type.
  auto bad = decode_bio({1, 4}, ls);
  REQUIRE(bad.size() == 1);
  CHECK(bad[0].start == 0);
  CHECK(bad[0].end == 1);
  CHECK(bad[0].type == 0);
  CHECK(bad[0].inconsistent);

  // Orphan I- starts a span.
  auto orphan = decode_bio({0, 2, 2}, ls);
  REQUIRE(orphan.size() == 1);
  CHECK(orphan[0].start == 1);
  CHECK(orphan[0].end == 2);
  CHECK_FALSE(orphan[0].inconsistent);

  CHECK_THROWS_AS(decode_bio({5}, ls), data_error);
  CHECK_THROWS_AS(decode_bio({-1}, ls), data_error);
}

TEST_CASE("decode then re-encode round-trips valid sequences") {
  LabelSet ls({"A", "B", "C"});
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> len_d(1, 24), type_d(0, 2), run_d(1, 3);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (int it = 0; it < 300; ++it) {
    std::vector<int> y;
    int len = len_d(rng);
    while (static_cast<int>(y.size()) < len) {
      if (coin(rng) < 0.45) {
        int t = type_d(rng);
        y.push_back(ls.b_label(t));
        for (int r = run_d(rng); r > 1 && static_cast<int>(y.size()) < len; --r)
          y.push_back(ls.i_label(t));
      } else {
        y.push_back(0);
      }
    }
    auto spans = decode_bio(y, ls);
    for (const auto& s : spans) CHECK_FALSE(s.inconsistent);
    CHECK(encode_bio(spans, len, ls) == y);
  }
}

TEST_CASE("entity_confidence") {
  LabelSet ls = two_types();
  Prediction p = uniform_pred(3, 5);
  p.at(0, 1) = 0.9;
  p.at(1, 2) = 0.7;
  std::vector<int> labels{1, 2, 0};
  EntitySpan span{0, 1, 0, -1.0, false};
  CHECK(entity_confidence(p, span, labels) == doctest::Approx(0.7));

  EntitySpan bad{0, 1, 0, -1.0, true};
  CHECK(entity_confidence(p, bad, labels) == 0.0);

  Prediction q = uniform_pred(1, 5);
  q.at(0, 3) = 1.0;
  EntitySpan single{0, 0, 1, -1.0, false};
  CHECK(entity_confidence(q, single, {3}) == 1.0);

  // Monotone: raising any on-span probability never lowers c_e.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int it = 0; it < 200; ++it) {
    Prediction r = uniform_pred(4, 5);
    for (int i = 0; i < 4; ++i) r.at(i, 1) = u(rng);
    std::vector<int> lab{1, 2, 2, 2};
    for (int i = 0; i < 4; ++i) lab[static_cast<size_t>(i)] = i == 0 ? 1 : 2;
    for (int i = 0; i < 4; ++i) r.at(i, lab[static_cast<size_t>(i)]) = u(rng);
    EntitySpan s{0, 3, 0, -1.0, false};
    double before = entity_confidence(r, s, lab);
    int pos = static_cast<int>(u(rng) * 4);
    r.at(pos, lab[static_cast<size_t>(pos)]) =
        std::min(1.0, r.at(pos, lab[static_cast<size_t>(pos)]) + u(rng));
    CHECK(entity_confidence(r, s, lab) >= before);
  }
}

TEST_CASE("collect_unconfident thresholds and gold augmentation") {
  std::vector<EntitySpan> spans(2);
  spans[0] = {0, 0, 0, 0.95, false};
  spans[1] = {2, 2, 1, 0.5, false};
  std::vector<int> labels{1, 0, 3};

  auto u = collect_unconfident(spans, 0.9, labels);
  REQUIRE(u.size() == 1);
  CHECK(u[0].start == 2);

  CHECK(collect_unconfident(spans, 0.0, labels).empty());
  CHECK(collect_unconfident(spans, 1.1, labels).size() == 2);

  // Misclassified entities join regardless of confidence.
  std::vector<int> gold{3, 0, 3};  // first span typed wrong
  auto ut = collect_unconfident(spans, 0.0, labels, &gold);
  REQUIRE(ut.size() == 1);
  CHECK(ut[0].start == 0);

  // |U| non-decreasing in lambda_conf.
  size_t prev = 0;
  for (double lambda : {0.0, 0.3, 0.6, 0.9, 0.99, 1.2}) {
    size_t n = collect_unconfident(spans, lambda, labels).size();
    CHECK(n >= prev);
    prev = n;
  }
}

TEST_CASE("entity_f1 examples and reference oracle") {
  LabelSet ls = two_types();

  std::vector<std::vector<int>> gold{{1, 2, 0, 3}};
  F1Result perfect = entity_f1(gold, gold, ls);
  CHECK(perfect.f1 == doctest::Approx(1.0));

  F1Result empty = entity_f1({{0, 0, 0, 0}}, gold, ls);
  CHECK(empty.recall == 0.0);
  CHECK(empty.f1 == 0.0);

  // 3 gold, 2 predicted, 1 matching: P=0.5, R=1/3, F1=0.4.
  std::vector<std::vector<int>> g3{{1, 0, 3, 0, 1}};
  std::vector<std::vector<int>> p2{{1, 0, 0, 0, 3}};
  F1Result r = entity_f1(p2, g3, ls);
  CHECK(r.precision == doctest::Approx(0.5));
  CHECK(r.recall == doctest::Approx(1.0 / 3.0));
  CHECK(r.f1 == doctest::Approx(0.4));

  // Symmetry: swapping predicted and gold swaps P and R.
  F1Result sw = entity_f1(g3, p2, ls);
  CHECK(sw.precision == doctest::Approx(r.recall));
  CHECK(sw.recall == doctest::Approx(r.precision));
  CHECK(sw.f1 == doctest::Approx(r.f1));

  // Random fixtures against the independent reference scorer.
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> len_d(1, 12), lab_d(0, 4), sent_d(1, 4);
  for (int it = 0; it < 500; ++it) {
    std::vector<std::vector<int>> pred, goldr;
    int sents = sent_d(rng);
    for (int s = 0; s < sents; ++s) {
      int len = len_d(rng);
      std::vector<int> a(static_cast<size_t>(len)), b(static_cast<size_t>(len));
      for (int i = 0; i < len; ++i) {
        a[static_cast<size_t>(i)] = lab_d(rng);
        b[static_cast<size_t>(i)] = lab_d(rng);
      }
      pred.push_back(a);
      goldr.push_back(b);
    }
    F1Result mine = entity_f1(pred, goldr, ls);
    auto expect = ref_f1(pred, goldr);
    CHECK(mine.precision == doctest::Approx(expect[0]));
    CHECK(mine.recall == doctest::Approx(expect[1]));
    CHECK(mine.f1 == doctest::Approx(expect[2]));
  }

  CHECK_THROWS_AS(entity_f1({{0, 0}}, {{0}}, ls), data_error);
}

TEST_CASE("partition_seen_unseen") {
  auto parts = partition_seen_unseen({"Alpha", "Beta", "Gamma", "Delta", "Eps"},
                                     {"Alpha", "Delta"}, {});
  CHECK(parts.seen_in_training.size() == 2);
  CHECK(parts.unseen_in_training.size() == 3);
  CHECK(parts.seen_in_pretraining.empty());
  CHECK(parts.unseen_in_pretraining.size() == 5);

  // Whitespace-normalized, case-sensitive.
  auto p2 = partition_seen_unseen({"New  York"}, {"New York"}, {"new york"});
  CHECK(p2.seen_in_training.size() == 1);
  CHECK(p2.seen_in_pretraining.empty());
}

TEST_CASE("repair_bio turns orphan I- into B-") {
  LabelSet ls = two_types();
  CHECK(repair_bio({2, 2, 0, 4, 1, 4}, ls) == std::vector<int>{1, 2, 0, 3, 1, 3});
  CHECK(repair_bio({1, 2, 2}, ls) == std::vector<int>{1, 2, 2});
}

TEST_CASE("conll round trip") {
  LabelSet ls = two_types();
  std::vector<Sentence> sents(2);
  sents[0].tokens = {"Rome", "is", "calm"};
  sents[0].labels = {1, 0, 0};
  sents[1].tokens = {"Ada", "Lovelace"};
  sents[1].labels = {3, 4};

  std::string path = "test_conll_roundtrip.conll";
  write_conll(path, sents, ls);
  auto back = read_conll(path, ls);
  REQUIRE(back.size() == 2);
  CHECK(back[0].tokens == sents[0].tokens);
  CHECK(back[0].labels == sents[0].labels);
  CHECK(back[1].labels == sents[1].labels);

  auto types = scan_conll_types(path);
  CHECK(types == std::vector<std::string>{"LOC", "PER"});

  auto surfaces = entity_surfaces(back, ls);
  CHECK(surfaces == std::vector<std::string>{"Rome", "Ada Lovelace"});
}
