#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "raner/labels.hpp"
#include "raner/tensor.hpp"
#include "raner/vocab.hpp"

namespace raner {

// Trainable transformer tagger configuration. token_type_count is 2C+3 for a
// C-type task (0 = input, 1 = unlabeled knowledge, l+2 = labeled knowledge
// with BIO label id l); num_labels is the 2C+1 classifier width.
struct EncoderConfig {
  int d_model = 128;
  int layers = 4;
  int heads = 4;
  int ffn_dim = 256;
  int vocab_size = 0;
  int max_len = 64;
  int max_knowledge = 10;  // largest m the grid may carry
  int token_type_count = 3;
  int num_labels = 1;
  double dropout = 0.1;

  int d_k() const { return d_model / heads; }
  void validate() const;
};

struct EncoderParams {
  EncoderConfig cfg;
  Tensor tok_emb;   // vocab_size x d
  Tensor pos_emb;   // max_len x d, shared across grid rows (restart at 0 per row)
  Tensor type_emb;  // token_type_count x d

  struct Layer {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor w1, b1, w2, b2;
  };
  std::vector<Layer> layer;

  Tensor lnf_g, lnf_b;
  Tensor w_cls;  // d x num_labels
  Tensor b_cls;  // 1 x num_labels

  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;

  static EncoderParams init(const EncoderConfig& cfg, uint64_t seed);
  // Same shapes, all zeros; gradient buffers.
  EncoderParams zeros_like() const;
  void add_scaled(const EncoderParams& other, double s);
  void scale(double s);
  bool all_finite() const;
};

// One row of the (m+1) x L grid fed to the encoder. Row 0 is the input X;
// rows 1..m are knowledge. Rows may be shorter than L.
struct GridRow {
  std::vector<int> tokens;
  std::vector<int> token_types;
};
using Grid = std::vector<GridRow>;

enum class SegmentRole { input, unlabeled_knowledge, labeled_knowledge };

struct Segment {
  SegmentRole role = SegmentRole::input;
  int len = 0;
  std::vector<int> labels;  // required iff role == labeled_knowledge
};

// t = 0 for input tokens, 1 for unlabeled knowledge, l+2 for labeled
// knowledge with BIO label l. num_labels bounds the label ids (2C+1).
std::vector<int> token_type_ids(const std::vector<Segment>& segments, int num_labels);

// Block-structured attention mask over the flattened grid. Pair (i, j) is
// allowed iff k(i) == k(j) or k(i)*k(j) == 0, where k is the row id
// (0 = input).
struct AttentionMask {
  std::vector<int> row_len;
  std::vector<size_t> row_start;  // size rows+1; row_start.back() == total
  size_t total = 0;

  int rows() const { return static_cast<int>(row_len.size()); }
  int segment_of(size_t pos) const;
  bool allowed(size_t i, size_t j) const {
    int a = segment_of(i), b = segment_of(j);
    return a == b || a == 0 || b == 0;
  }
  // Exhaustive enumeration of the predicate; (3m+1)L^2 for full-length rows.
  size_t allowed_pair_count() const;
  // Allowed column ranges for a row in segment seg: segment 0 plus segment
  // seg itself (merged when seg == 0).
  struct Ranges {
    size_t a_begin, a_end, b_begin, b_end;  // b empty when b_begin == b_end
  };
  Ranges allowed_ranges(int seg) const;
  size_t allowed_count(int seg) const;
};

AttentionMask build_mask(const std::vector<int>& row_lengths);
AttentionMask build_mask(int m, int L);

// Additive pre-softmax score for forbidden pairs wherever a dense score
// matrix is materialized; exp underflows to exactly 0 in double precision.
constexpr double kMaskedScore = -1e9;

// Scaled dot-product attention with the block mask; softmax runs over allowed
// positions only, forbidden positions carry exactly zero weight. Heads are
// column blocks of width d_k.
Mat masked_attention(const Mat& q, const Mat& k, const Mat& v, const AttentionMask& mask,
                     int heads);

// Everything backward needs, kept per forward call.
struct ForwardCache {
  Grid grid;
  AttentionMask mask;
  int n = 0;

  Mat x0;
  std::vector<double> drop0;

  struct LayerCache {
    Mat ln1_xhat;
    std::vector<double> ln1_rstd;
    Mat a;
    Mat q, k, v;
    std::vector<size_t> att_off;      // per-position offsets into att[h]
    std::vector<std::vector<double>> att;  // per-head flat softmax weights
    Mat ctx;
    Mat attn_out;
    std::vector<double> drop1;
    Mat h1;
    Mat ln2_xhat;
    std::vector<double> ln2_rstd;
    Mat b;
    Mat z1, g1;
    Mat ffn_out;
    std::vector<double> drop2;
    Mat h2;
  };
  std::vector<LayerCache> layers;

  Mat lnf_xhat;
  std::vector<double> lnf_rstd;
  Mat hf;
  Mat logits;
  Mat probs;
};

// Full forward pass over the grid. Pass dropout_rng to enable dropout at
// cfg.dropout (training); null runs deterministically (inference).
void forward_logits(const EncoderParams& params, const Grid& grid, ForwardCache& cache,
                    std::mt19937_64* dropout_rng = nullptr);

// Row-stochastic probabilities for the input row (grid row 0).
Prediction forward(const EncoderParams& params, const Grid& grid);

// Mean token-level cross-entropy on the input row; fills dlogits (scaled by
// `weight`) for backward. Returns the unweighted loss.
double ce_loss_input_row(const ForwardCache& cache, const std::vector<int>& gold,
                         double weight, Mat& dlogits);

// Propagates dlogits through the cached forward pass, accumulating into
// grads (same shapes as params).
void backward(const EncoderParams& params, const ForwardCache& cache, const Mat& dlogits,
              EncoderParams& grads);

// Convenience wrapper: forward + CE + backward. Returns the loss.
double forward_backward(const EncoderParams& params, const Grid& grid,
                        const std::vector<int>& gold, double weight, EncoderParams& grads,
                        std::mt19937_64* dropout_rng = nullptr);

// Head/token-type transplant for reusing a pretrained trunk on a new label
// space: task-specific tensors are redrawn i.i.d. from the per-dimension
// N(mu, sigma) of the pretrained tensors, everything else is copied.
EncoderParams transplant_head(const EncoderParams& pretrained, int new_num_labels,
                              int new_token_type_count, uint64_t seed);

// Checkpoint: JSON manifest at `path` (config, vocab, label names, tensor
// table, content hash) plus raw little-endian float32 tensors at
// `path + ".bin"` in declared order.
struct Checkpoint {
  EncoderParams params;
  Vocab vocab;
  LabelSet labels;
  std::string extra_json;  // optional command metadata, stored verbatim
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a fingerprint of the serialized float32 tensor bytes.
std::string params_fingerprint(const EncoderParams& params);

}  // namespace raner
