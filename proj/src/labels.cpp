#include "raner/labels.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <unordered_set>

namespace raner {

std::string LabelSet::label_name(int id) const {
  check_data(id >= 0 && id < num_labels(), "label id out of range: " + std::to_string(id));
  if (id == kOutside) return "O";
  return (is_b(id) ? "B-" : "I-") + types[static_cast<size_t>(type_of(id))];
}

int LabelSet::label_id(const std::string& name) const {
  if (name == "O") return kOutside;
  check_data(name.size() > 2 && (name[0] == 'B' || name[0] == 'I') && name[1] == '-',
             "malformed BIO tag: " + name);
  int t = find_type(name.substr(2));
  check_data(t >= 0, "unknown entity type in tag: " + name);
  return name[0] == 'B' ? b_label(t) : i_label(t);
}

int LabelSet::find_type(const std::string& name) const {
  for (size_t i = 0; i < types.size(); ++i)
    if (types[i] == name) return static_cast<int>(i);
  return -1;
}

std::vector<int> Prediction::argmax() const {
  std::vector<int> out(static_cast<size_t>(len()));
  for (int i = 0; i < len(); ++i) {
    int best = 0;
    for (int c = 1; c < num_labels; ++c)
      if (at(i, c) > at(i, best)) best = c;
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

bool Prediction::row_stochastic(double tol) const {
  for (int i = 0; i < len(); ++i) {
    double s = 0.0;
    for (int c = 0; c < num_labels; ++c) {
      if (at(i, c) < 0.0) return false;
      s += at(i, c);
    }
    if (std::abs(s - 1.0) > tol) return false;
  }
  return true;
}

std::vector<EntitySpan> decode_bio(const std::vector<int>& labels, const LabelSet& ls) {
  for (int id : labels)
    check_data(id >= 0 && id < ls.num_labels(), "invalid label id: " + std::to_string(id));

  std::vector<EntitySpan> spans;
  int n = static_cast<int>(labels.size());
  int i = 0;
  while (i < n) {
    int id = labels[static_cast<size_t>(i)];
    if (LabelSet::is_o(id)) {
      ++i;
      continue;
    }
    // B- always starts a span; an orphan I- is treated as a span start.
    EntitySpan span;
    span.start = i;
    span.type = LabelSet::type_of(id);
    span.inconsistent = false;
    int j = i + 1;
    while (j < n && LabelSet::is_i(labels[static_cast<size_t>(j)])) {
      if (LabelSet::type_of(labels[static_cast<size_t>(j)]) != span.type) span.inconsistent = true;
      ++j;
    }
    span.end = j - 1;
    spans.push_back(span);
    i = j;
  }
  return spans;
}

std::vector<int> encode_bio(const std::vector<EntitySpan>& spans, int len, const LabelSet& ls) {
  std::vector<int> out(static_cast<size_t>(len), LabelSet::kOutside);
  for (const auto& s : spans) {
    check_data(s.start >= 0 && s.start <= s.end && s.end < len, "span out of bounds");
    check_data(!s.inconsistent, "cannot encode an inconsistent span");
    out[static_cast<size_t>(s.start)] = ls.b_label(s.type);
    for (int i = s.start + 1; i <= s.end; ++i) out[static_cast<size_t>(i)] = ls.i_label(s.type);
  }
  return out;
}

std::vector<int> repair_bio(const std::vector<int>& labels, const LabelSet& ls) {
  std::vector<int> out = labels;
  for (size_t i = 0; i < out.size(); ++i) {
    int id = out[i];
    if (!LabelSet::is_i(id)) continue;
    int t = LabelSet::type_of(id);
    bool continues = i > 0 && !LabelSet::is_o(out[i - 1]) && LabelSet::type_of(out[i - 1]) == t;
    if (!continues) out[i] = ls.b_label(t);
  }
  return out;
}

double entity_confidence(const Prediction& pred, const EntitySpan& span,
                         const std::vector<int>& predicted_labels) {
  check_data(span.start >= 0 && span.end < pred.len() && span.start <= span.end,
             "span outside prediction");
  if (span.inconsistent) return 0.0;
  double c = 1.0;
  for (int i = span.start; i <= span.end; ++i)
    c = std::min(c, pred.at(i, predicted_labels[static_cast<size_t>(i)]));
  return c;
}

std::vector<EntitySpan> collect_unconfident(const std::vector<EntitySpan>& spans,
                                            double lambda_conf,
                                            const std::vector<int>& predicted_labels,
                                            const std::vector<int>* gold) {
  check_config(lambda_conf >= 0.0, "lambda_conf must be >= 0");
  std::vector<EntitySpan> out;
  for (const auto& s : spans) {
    bool unconfident = s.confidence < lambda_conf;
    if (!unconfident && gold != nullptr) {
      for (int i = s.start; i <= s.end && !unconfident; ++i)
        if (predicted_labels[static_cast<size_t>(i)] != (*gold)[static_cast<size_t>(i)])
          unconfident = true;  // misclassified entities join regardless of confidence
    }
    if (unconfident) out.push_back(s);
  }
  return out;
}

namespace {
struct SpanKey {
  int sent, start, end, type;
  bool operator<(const SpanKey& o) const {
    return std::tie(sent, start, end, type) < std::tie(o.sent, o.start, o.end, o.type);
  }
};

std::set<SpanKey> collect_span_keys(const std::vector<std::vector<int>>& seqs,
                                    const LabelSet& ls) {
  std::set<SpanKey> keys;
  for (size_t s = 0; s < seqs.size(); ++s)
    for (const auto& e : decode_bio(seqs[s], ls))
      keys.insert({static_cast<int>(s), e.start, e.end, e.type});
  return keys;
}
}  // namespace

F1Result entity_f1(const std::vector<std::vector<int>>& predicted,
                   const std::vector<std::vector<int>>& gold, const LabelSet& ls) {
  check_data(predicted.size() == gold.size(), "predicted/gold sentence count mismatch");
  for (size_t i = 0; i < predicted.size(); ++i)
    check_data(predicted[i].size() == gold[i].size(),
               "predicted/gold length mismatch at sentence " + std::to_string(i));

  auto p = collect_span_keys(predicted, ls);
  auto g = collect_span_keys(gold, ls);

  F1Result r;
  for (const auto& k : p)
    g.count(k) ? ++r.tp : ++r.fp;
  r.fn = static_cast<long>(g.size()) - r.tp;
  r.precision = (r.tp + r.fp) == 0 ? 0.0 : static_cast<double>(r.tp) / (r.tp + r.fp);
  r.recall = (r.tp + r.fn) == 0 ? 0.0 : static_cast<double>(r.tp) / (r.tp + r.fn);
  r.f1 = (r.precision + r.recall) == 0.0
             ? 0.0
             : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

std::string normalize_surface(const std::string& s) {
  std::istringstream in(s);
  std::string tok, out;
  while (in >> tok) {
    if (!out.empty()) out += ' ';
    out += tok;
  }
  return out;
}

SeenUnseen partition_seen_unseen(const std::vector<std::string>& entities,
                                 const std::vector<std::string>& training_entities,
                                 const std::vector<std::string>& pretraining_entities) {
  std::unordered_set<std::string> train, pretrain;
  for (const auto& e : training_entities) train.insert(normalize_surface(e));
  for (const auto& e : pretraining_entities) pretrain.insert(normalize_surface(e));

  SeenUnseen out;
  for (const auto& e : entities) {
    std::string n = normalize_surface(e);
    (train.count(n) ? out.seen_in_training : out.unseen_in_training).push_back(e);
    (pretrain.count(n) ? out.seen_in_pretraining : out.unseen_in_pretraining).push_back(e);
  }
  return out;
}

}  // namespace raner
