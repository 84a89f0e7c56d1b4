#pragma once

#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "raner/conll.hpp"
#include "raner/encoder.hpp"
#include "raner/index.hpp"
#include "raner/tagger.hpp"
#include "raner/ukb.hpp"

namespace raner {

struct TrainConfig {
  double lambda1 = 0.1;
  double lambda_conf = 0.9;
  int m = 10;
  int n = 3;
  int batch_size = 16;
  int epochs = 300;
  int patience = 8;  // early-stop epochs without dev improvement; <= 0 disables
  double lr = 5e-5;
  double dropout = 0.1;
  uint64_t seed = 42;
  int threads = 0;  // 0: RANER_THREADS or hardware concurrency
  TagConfig tag;    // retrieval switches, shared between training and eval

  void validate() const;
};

struct Adam {
  double lr;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  EncoderParams m1, m2;

  Adam(const EncoderParams& shape, double learning_rate);
  void step(EncoderParams& params, const EncoderParams& grads);
};

// Read-only environment shared by every fine-tuning step.
struct TrainEnv {
  const Vocab* vocab = nullptr;
  const LabelSet* labels = nullptr;
  const FrozenEmbedder* embedder = nullptr;
  const UnstructuredKB* labeled_kb = nullptr;
  const KbIndex* labeled_index = nullptr;
  const UnstructuredKB* unlabeled_kb = nullptr;
  const KbIndex* unlabeled_index = nullptr;
  const Stopwords* stopwords = nullptr;
};

struct StepLosses {
  double l1 = 0.0;
  double l2 = 0.0;
  double total = 0.0;  // l2 + lambda1 * l1, combined exactly like this
};

// Per-token frozen-embedder vectors for one sentence.
using TokenVecs = std::vector<std::vector<double>>;

// One optimizer step over a batch: stage-1 loss L1, training-time unconfident
// collection (misclassified entities included), retrieval with
// self-exclusion, stage-2 loss L2, Adam update on L2 + lambda1 * L1.
// self_ids[i] is the labeled-KB entry holding training sentence i (-1 none).
// vec_cache (optional, indexed like train) avoids re-running the frozen
// embedder every step.
StepLosses fine_tune_step(const std::vector<Sentence>& train,
                          const std::vector<size_t>& batch_indices,
                          const std::vector<int64_t>& self_ids, EncoderParams& params,
                          Adam& adam, const TrainEnv& env, const TrainConfig& cfg,
                          uint64_t step_index,
                          const std::vector<TokenVecs>* vec_cache = nullptr);

struct TrainStats {
  std::vector<StepLosses> epoch_losses;
  std::vector<double> dev_f1;
  int best_epoch = -1;
  int epochs_run = 0;
};

// Labeled-KB entry ids matching each training sentence (exact token-sequence
// match; -1 when absent), used for self-exclusion.
std::vector<int64_t> find_self_entry_ids(const std::vector<Sentence>& train,
                                         const UnstructuredKB* labeled_kb);

TrainStats fine_tune(EncoderParams& params, const std::vector<Sentence>& train,
                     const std::vector<Sentence>& dev, const TrainEnv& env,
                     const TrainConfig& cfg);

// ---- pre-training -------------------------------------------------------

struct PretrainExample {
  std::vector<std::string> tokens;
  std::vector<int> labels;              // pseudo-label BIO ids
  std::vector<std::string> entities;    // entity surfaces, the retrieval keys
};

struct PretrainConfig {
  int steps = 1000;
  int batch_size = 16;
  int m = 2;
  double lr = 5e-5;
  double dropout = 0.1;
  double label_deletion_prob = 0.95;
  double sampling_exponent = -0.3;
  int top_k_frequent = 20;
  uint64_t seed = 42;
  int threads = 0;

  void validate() const;
};

// JSON lines: {"tokens": [...], "labels": ["B-x", ...], "entities": [...]}.
std::vector<PretrainExample> read_pretrain_corpus(const std::string& path,
                                                  const LabelSet& pre_labels);
void write_pretrain_corpus(const std::string& path,
                           const std::vector<PretrainExample>& examples,
                           const LabelSet& pre_labels);

// Multi-task pre-training loss on a logits matrix (len x 2C_pre+1):
// extraction is 3-class cross-entropy over summed B/I/O probabilities on all
// tokens; typing is cross-entropy with the two ENTITY logits masked, on
// entity tokens whose gold type is not ENTITY. Returns extraction + typing;
// dlogits (optional) accumulates weight * d(loss)/d(logits).
double multitask_pretrain_loss(const Mat& logits, const std::vector<int>& gold,
                               const LabelSet& pre_labels, int entity_type, double weight = 1.0,
                               Mat* dlogits = nullptr);

// Entity-level type counts over a pseudo-labeled corpus.
std::vector<long> count_entity_types(const std::vector<PretrainExample>& examples,
                                     const LabelSet& pre_labels);

// Weighted-sampling weight: (min entity-token type count)^exponent;
// 1 when the example has no entity tokens. Throws on a zero count.
double sampling_weight(const PretrainExample& example, const std::vector<long>& type_counts,
                       double exponent = -0.3);

// ENTITY-heavy down-sampling: drops sequences with no non-ENTITY entity
// outright; sequences whose entities are all top-k frequent types are dropped
// with probability 0.3 / 0.5 / 0.7 for 3 / 4 / >4 ENTITY entities.
std::vector<PretrainExample> downsample_entity_only(
    const std::vector<PretrainExample>& examples, const LabelSet& pre_labels, int entity_type,
    int top_k, std::mt19937_64& rng);

struct PretrainStats {
  std::vector<double> step_loss;
};

// One sampled knowledge piece for pre-training: a corpus example sharing an
// entity surface with the input, and whether its pseudo-labels were deleted.
struct SampledKnowledge {
  int example = -1;
  bool labels_deleted = false;
};

// Samples up to m entity-sharing knowledge pieces (self excluded, without
// replacement) and draws the label-deletion coin per piece.
std::vector<SampledKnowledge> sample_pretrain_knowledge(
    const std::unordered_map<std::string, std::vector<int>>& by_surface,
    const PretrainExample& example, int self_index, int m, double deletion_prob,
    std::mt19937_64& rng);

std::unordered_map<std::string, std::vector<int>> build_surface_index(
    const std::vector<PretrainExample>& corpus);

// Retrieval-augmented pre-training: per example, samples m knowledge pieces
// sharing at least one entity surface with the input, deletes their labels
// independently with label_deletion_prob, and trains on the multi-task loss.
PretrainStats pretrain(EncoderParams& params, const std::vector<PretrainExample>& corpus,
                       const LabelSet& pre_labels, const Vocab& vocab,
                       const PretrainConfig& cfg);

// Deterministic parallel map: grads/losses are reduced in index order, so the
// result is independent of the thread count.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace raner
