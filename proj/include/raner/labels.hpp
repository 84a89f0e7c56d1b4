#pragma once

#include <optional>
#include <string>
#include <vector>

#include "raner/util.hpp"

namespace raner {

// BIO label ids for C entity types: 0 = "O", 2t+1 = "B-<type t>",
// 2t+2 = "I-<type t>".
struct LabelSet {
  std::vector<std::string> types;

  LabelSet() = default;
  explicit LabelSet(std::vector<std::string> type_names) : types(std::move(type_names)) {}

  int num_types() const { return static_cast<int>(types.size()); }
  int num_labels() const { return 2 * num_types() + 1; }

  static constexpr int kOutside = 0;
  static bool is_o(int id) { return id == kOutside; }
  static bool is_b(int id) { return id > 0 && id % 2 == 1; }
  static bool is_i(int id) { return id > 0 && id % 2 == 0; }
  // Type index of a B-/I- label; -1 for "O".
  static int type_of(int id) { return id == 0 ? -1 : (id - 1) / 2; }
  int b_label(int type) const { return 2 * type + 1; }
  int i_label(int type) const { return 2 * type + 2; }

  std::string label_name(int id) const;
  // Parses "O" / "B-x" / "I-x"; throws data_error on unknown tags.
  int label_id(const std::string& name) const;
  // -1 when absent.
  int find_type(const std::string& name) const;
};

// A decoded entity. `confidence` is filled by entity_confidence; decode_bio
// leaves it at -1.
struct EntitySpan {
  int start = 0;
  int end = 0;  // inclusive
  int type = -1;
  double confidence = -1.0;
  bool inconsistent = false;

  bool same_place(const EntitySpan& o) const {
    return start == o.start && end == o.end && type == o.type;
  }
};

// Row-stochastic classification probabilities, one row per token.
struct Prediction {
  int num_labels = 0;
  std::vector<double> probs;  // row-major, len x num_labels

  int len() const {
    return num_labels == 0 ? 0 : static_cast<int>(probs.size()) / num_labels;
  }
  double at(int i, int label) const { return probs[static_cast<size_t>(i) * num_labels + label]; }
  double& at(int i, int label) { return probs[static_cast<size_t>(i) * num_labels + label]; }
  std::vector<int> argmax() const;
  // Rows sum to 1 within tol, entries non-negative.
  bool row_stochastic(double tol = 1e-9) const;
};

// Maximal-run BIO decoding. A span starts at a B- label or at an I- label
// with no preceding compatible tag, and extends through subsequent I- labels
// of any type; runs that mix types are kept as one span flagged inconsistent,
// reported with the type of their first token.
std::vector<EntitySpan> decode_bio(const std::vector<int>& labels, const LabelSet& ls);

// Inverse of decode_bio for consistent spans. Spans must be non-overlapping
// and sorted by start.
std::vector<int> encode_bio(const std::vector<EntitySpan>& spans, int len, const LabelSet& ls);

// Repairs I- labels that lack a compatible predecessor by turning them into
// B- labels. Output always round-trips through decode_bio without orphan
// starts.
std::vector<int> repair_bio(const std::vector<int>& labels, const LabelSet& ls);

// c_e = min over span positions of the probability assigned to the predicted
// label; exactly 0 for spans flagged inconsistent.
double entity_confidence(const Prediction& pred, const EntitySpan& span,
                         const std::vector<int>& predicted_labels);

// Spans with confidence < lambda_conf; in training mode (gold present) also
// every span whose predicted labels differ from gold anywhere on the span.
std::vector<EntitySpan> collect_unconfident(const std::vector<EntitySpan>& spans,
                                            double lambda_conf,
                                            const std::vector<int>& predicted_labels,
                                            const std::vector<int>* gold = nullptr);

struct F1Result {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long tp = 0, fp = 0, fn = 0;
};

// Entity-level exact-match scoring over parallel label sequences.
F1Result entity_f1(const std::vector<std::vector<int>>& predicted,
                   const std::vector<std::vector<int>>& gold, const LabelSet& ls);

// Buckets for the seen/unseen breakdown, by exact surface-string membership.
struct SeenUnseen {
  std::vector<std::string> seen_in_training;
  std::vector<std::string> unseen_in_training;
  std::vector<std::string> seen_in_pretraining;
  std::vector<std::string> unseen_in_pretraining;
};

// Surfaces are compared case-sensitively after whitespace normalization
// (tokens joined by single spaces).
SeenUnseen partition_seen_unseen(const std::vector<std::string>& entities,
                                 const std::vector<std::string>& training_entities,
                                 const std::vector<std::string>& pretraining_entities);

std::string normalize_surface(const std::string& s);

}  // namespace raner
