#pragma once

#include <optional>
#include <string>
#include <vector>

#include "raner/encoder.hpp"
#include "raner/index.hpp"
#include "raner/labels.hpp"
#include "raner/ukb.hpp"

namespace raner {

enum class WindowMerge { entity_confidence, token_probability };

struct TagConfig {
  double lambda_conf = 0.9;
  int m = 10;
  int n = 3;
  bool use_entity_queries = true;
  bool use_sentence_query = true;
  bool use_labeled_kb = true;
  bool use_unlabeled_kb = true;
  bool refine_all = false;  // treat every entity as unconfident (lambda_conf > 1)
  bool reuse_first_stage_on_confident = true;
  int window_stride = 16;
  WindowMerge window_merge = WindowMerge::entity_confidence;

  void validate() const;
};

// Everything a tagging call needs, wired read-only.
struct TagContext {
  const EncoderParams* params = nullptr;
  const Vocab* vocab = nullptr;
  const LabelSet* labels = nullptr;
  const FrozenEmbedder* embedder = nullptr;
  const KbIndex* labeled_index = nullptr;    // nullable
  const KbIndex* unlabeled_index = nullptr;  // nullable
  const Stopwords* stopwords = nullptr;
  TagConfig cfg;
  std::optional<int64_t> exclude_labeled_id;  // self-exclusion during training
};

struct FirstStageResult {
  Prediction pred;
  std::vector<int> labels;               // argmax
  std::vector<EntitySpan> entities;      // with confidences
  std::vector<EntitySpan> unconfident;   // U
};

// Stage 1: predict without knowledge (m = 0), decode entities, score
// confidences, collect U. Gold labels (training mode) add misclassified
// entities to U.
FirstStageResult first_stage(const std::vector<int>& token_ids, const EncoderParams& params,
                             const LabelSet& ls, const TagConfig& cfg,
                             const std::vector<int>* gold = nullptr);

// One sentence query (mean of all token vectors) plus, per unconfident
// entity, one query per n-gram of length 1..n that overlaps the entity and
// survives the surface filter.
std::vector<Query> build_queries(const std::vector<std::string>& tokens,
                                 const std::vector<EntitySpan>& unconfident,
                                 const std::vector<std::vector<double>>& token_vecs,
                                 const TagConfig& cfg, const Stopwords& sw);

// Stage 2: forward over [X; K_1..K_m] with token types and the block mask;
// returns probabilities for input positions only.
Prediction second_stage(const std::vector<int>& input_ids,
                        const std::vector<const KnowledgeEntry*>& knowledge,
                        const EncoderParams& params, const Vocab& vocab);

// Tokens inside confident entities keep the stage-1 argmax, everything else
// takes stage 2; I- labels orphaned by mixing stages become B-.
std::vector<int> merge_outputs(const Prediction& p, const Prediction& p_plus,
                               const std::vector<EntitySpan>& entities,
                               const std::vector<EntitySpan>& unconfident, const TagConfig& cfg,
                               const LabelSet& ls, std::vector<int>* token_stage = nullptr,
                               std::vector<double>* token_prob = nullptr);

struct TagResult {
  std::vector<int> labels;
  FirstStageResult stage1;
  Prediction p_plus;
  int num_entity_queries = 0;  // E
  std::vector<RetrievalHit> retrieved;  // after dedup, the used knowledge
  std::vector<int> token_stage;         // 1 or 2 per token
  std::vector<double> token_prob;       // probability of the emitted label
};

// Full two-stage pipeline for one sentence.
TagResult tag(const std::vector<std::string>& tokens, const TagContext& ctx,
              const std::vector<int>* gold = nullptr);

// Long-input tagging: windows of length L advancing by cfg.window_stride;
// entities from overlapping windows are resolved by the larger confidence
// (ties to the earlier window).
std::vector<int> tag_document(const std::vector<std::string>& tokens, const TagContext& ctx);

// Window start offsets for a document of doc_len tokens: 0, stride, 2*stride,
// ... until a window reaches the end.
std::vector<int> window_starts(int doc_len, int window_len, int stride);

// One entity prediction from one window, in document coordinates.
struct WindowEntity {
  EntitySpan span;
  double confidence = 0.0;
  int window = 0;
};

// Entity-confidence window merge: places entities best-first by
// (confidence desc, window asc, start asc), skipping overlaps.
std::vector<int> merge_window_entities(int doc_len, const std::vector<WindowEntity>& found,
                                       const LabelSet& ls);

}  // namespace raner
