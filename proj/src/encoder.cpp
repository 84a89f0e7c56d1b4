#include "raner/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace raner {

using json = nlohmann::json;

namespace {
constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

void layer_norm_forward(const Mat& x, const Tensor& g, const Tensor& b, Mat& y, Mat& xhat,
                        std::vector<double>& rstd) {
  int d = x.cols;
  y = Mat(x.rows, d);
  xhat = Mat(x.rows, d);
  rstd.assign(static_cast<size_t>(x.rows), 0.0);
  for (int i = 0; i < x.rows; ++i) {
    const double* xi = x.row(i);
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xi[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      double c = xi[j] - mu;
      var += c * c;
    }
    var /= d;
    double r = 1.0 / std::sqrt(var + kLnEps);
    rstd[static_cast<size_t>(i)] = r;
    double* xh = xhat.row(i);
    double* yi = y.row(i);
    for (int j = 0; j < d; ++j) {
      xh[j] = (xi[j] - mu) * r;
      yi[j] = g.v[static_cast<size_t>(j)] * xh[j] + b.v[static_cast<size_t>(j)];
    }
  }
}

void layer_norm_backward(const Mat& dy, const Mat& xhat, const std::vector<double>& rstd,
                         const Tensor& g, Mat& dx, Mat& dg, Mat& db) {
  int d = dy.cols;
  for (int i = 0; i < dy.rows; ++i) {
    const double* dyi = dy.row(i);
    const double* xh = xhat.row(i);
    double m1 = 0.0, m2 = 0.0;
    for (int j = 0; j < d; ++j) {
      double dxh = dyi[j] * g.v[static_cast<size_t>(j)];
      m1 += dxh;
      m2 += dxh * xh[j];
      dg.v[static_cast<size_t>(j)] += dyi[j] * xh[j];
      db.v[static_cast<size_t>(j)] += dyi[j];
    }
    m1 /= d;
    m2 /= d;
    double r = rstd[static_cast<size_t>(i)];
    double* dxi = dx.row(i);
    for (int j = 0; j < d; ++j) {
      double dxh = dyi[j] * g.v[static_cast<size_t>(j)];
      dxi[j] += r * (dxh - m1 - xh[j] * m2);
    }
  }
}

// Inverted dropout. Empty mask means identity.
void apply_dropout(Mat& x, double rate, std::mt19937_64* rng, std::vector<double>& mask) {
  mask.clear();
  if (rng == nullptr || rate <= 0.0) return;
  double keep = 1.0 - rate;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  mask.resize(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    mask[i] = u(*rng) < keep ? 1.0 / keep : 0.0;
    x.v[i] *= mask[i];
  }
}

void softmax_rows(const Mat& logits, Mat& probs) {
  probs = Mat(logits.rows, logits.cols);
  for (int i = 0; i < logits.rows; ++i) {
    const double* z = logits.row(i);
    double mx = z[0];
    for (int j = 1; j < logits.cols; ++j) mx = std::max(mx, z[j]);
    double sum = 0.0;
    double* p = probs.row(i);
    for (int j = 0; j < logits.cols; ++j) {
      p[j] = std::exp(z[j] - mx);
      sum += p[j];
    }
    for (int j = 0; j < logits.cols; ++j) p[j] /= sum;
  }
}
}  // namespace

void EncoderConfig::validate() const {
  check_config(d_model > 0 && heads > 0 && d_model % heads == 0,
               "d_model must be a positive multiple of heads");
  check_config(layers >= 0 && ffn_dim > 0, "bad layer/ffn configuration");
  check_config(vocab_size > 0, "vocab_size must be set");
  check_config(max_len > 0, "max_len must be positive");
  check_config(max_knowledge >= 0, "max_knowledge must be >= 0");
  check_config(token_type_count >= 3, "token_type_count must be >= 3");
  check_config(num_labels >= 1, "num_labels must be >= 1");
  check_config(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0,1)");
}

std::vector<Tensor*> EncoderParams::tensors() {
  std::vector<Tensor*> out{&tok_emb, &pos_emb, &type_emb};
  for (auto& l : layer)
    for (Tensor* t : {&l.ln1_g, &l.ln1_b, &l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo,
                      &l.bo, &l.ln2_g, &l.ln2_b, &l.w1, &l.b1, &l.w2, &l.b2})
      out.push_back(t);
  for (Tensor* t : {&lnf_g, &lnf_b, &w_cls, &b_cls}) out.push_back(t);
  return out;
}

std::vector<const Tensor*> EncoderParams::tensors() const {
  auto mut = const_cast<EncoderParams*>(this)->tensors();
  return std::vector<const Tensor*>(mut.begin(), mut.end());
}

EncoderParams EncoderParams::init(const EncoderConfig& cfg, uint64_t seed) {
  cfg.validate();
  EncoderParams p;
  p.cfg = cfg;
  int d = cfg.d_model;
  p.tok_emb = Tensor("tok_emb", cfg.vocab_size, d);
  p.pos_emb = Tensor("pos_emb", cfg.max_len, d);
  p.type_emb = Tensor("type_emb", cfg.token_type_count, d);
  p.layer.resize(static_cast<size_t>(cfg.layers));
  for (int l = 0; l < cfg.layers; ++l) {
    auto s = [&](const char* n) { return "layer" + std::to_string(l) + "." + n; };
    auto& L = p.layer[static_cast<size_t>(l)];
    L.ln1_g = Tensor(s("ln1_g"), 1, d);
    L.ln1_b = Tensor(s("ln1_b"), 1, d);
    L.wq = Tensor(s("wq"), d, d);
    L.bq = Tensor(s("bq"), 1, d);
    L.wk = Tensor(s("wk"), d, d);
    L.bk = Tensor(s("bk"), 1, d);
    L.wv = Tensor(s("wv"), d, d);
    L.bv = Tensor(s("bv"), 1, d);
    L.wo = Tensor(s("wo"), d, d);
    L.bo = Tensor(s("bo"), 1, d);
    L.ln2_g = Tensor(s("ln2_g"), 1, d);
    L.ln2_b = Tensor(s("ln2_b"), 1, d);
    L.w1 = Tensor(s("w1"), d, cfg.ffn_dim);
    L.b1 = Tensor(s("b1"), 1, cfg.ffn_dim);
    L.w2 = Tensor(s("w2"), cfg.ffn_dim, d);
    L.b2 = Tensor(s("b2"), 1, d);
  }
  p.lnf_g = Tensor("lnf_g", 1, d);
  p.lnf_b = Tensor("lnf_b", 1, d);
  p.w_cls = Tensor("w_cls", d, cfg.num_labels);
  p.b_cls = Tensor("b_cls", 1, cfg.num_labels);

  auto rng = make_rng(seed, /*stream=*/1);
  std::normal_distribution<double> norm(0.0, 0.02);
  for (Tensor* t : p.tensors()) {
    bool is_gain = t->name.find("ln") != std::string::npos && t->name.back() == 'g';
    bool is_bias = t->name[0] == 'b' || t->name.find(".b") != std::string::npos ||
                   t->name.find("_b") != std::string::npos;
    if (is_gain)
      std::fill(t->v.begin(), t->v.end(), 1.0);
    else if (is_bias)
      std::fill(t->v.begin(), t->v.end(), 0.0);
    else
      for (auto& x : t->v) x = norm(rng);
  }
  return p;
}

EncoderParams EncoderParams::zeros_like() const {
  EncoderParams z = *this;
  for (Tensor* t : z.tensors()) t->zero();
  return z;
}

void EncoderParams::add_scaled(const EncoderParams& other, double s) {
  auto a = tensors();
  auto b = other.tensors();
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < a[i]->v.size(); ++j) a[i]->v[j] += s * b[i]->v[j];
}

void EncoderParams::scale(double s) {
  for (Tensor* t : tensors())
    for (auto& x : t->v) x *= s;
}

bool EncoderParams::all_finite() const {
  for (const Tensor* t : tensors())
    for (double x : t->v)
      if (!std::isfinite(x)) return false;
  return true;
}

std::vector<int> token_type_ids(const std::vector<Segment>& segments, int num_labels) {
  std::vector<int> out;
  for (const auto& seg : segments) {
    switch (seg.role) {
      case SegmentRole::input:
        out.insert(out.end(), static_cast<size_t>(seg.len), 0);
        break;
      case SegmentRole::unlabeled_knowledge:
        out.insert(out.end(), static_cast<size_t>(seg.len), 1);
        break;
      case SegmentRole::labeled_knowledge:
        check_data(static_cast<int>(seg.labels.size()) == seg.len,
                   "labeled knowledge segment needs one label per token");
        for (int l : seg.labels) {
          check_data(l >= 0 && l < num_labels, "label id out of range: " + std::to_string(l));
          out.push_back(l + 2);
        }
        break;
    }
  }
  return out;
}

int AttentionMask::segment_of(size_t pos) const {
  int r = static_cast<int>(std::upper_bound(row_start.begin(), row_start.end(), pos) -
                           row_start.begin()) -
          1;
  return r;
}

size_t AttentionMask::allowed_pair_count() const {
  size_t count = 0;
  for (size_t i = 0; i < total; ++i)
    for (size_t j = 0; j < total; ++j)
      if (allowed(i, j)) ++count;
  return count;
}

AttentionMask::Ranges AttentionMask::allowed_ranges(int seg) const {
  Ranges r{};
  r.a_begin = 0;
  r.a_end = row_start[1];  // segment 0
  if (seg == 0) {
    r.a_end = total;  // input attends everywhere
    r.b_begin = r.b_end = 0;
  } else {
    r.b_begin = row_start[static_cast<size_t>(seg)];
    r.b_end = row_start[static_cast<size_t>(seg) + 1];
  }
  return r;
}

size_t AttentionMask::allowed_count(int seg) const {
  auto r = allowed_ranges(seg);
  return (r.a_end - r.a_begin) + (r.b_end - r.b_begin);
}

AttentionMask build_mask(const std::vector<int>& row_lengths) {
  check_config(!row_lengths.empty(), "mask needs at least the input row");
  AttentionMask m;
  m.row_len = row_lengths;
  m.row_start.resize(row_lengths.size() + 1, 0);
  for (size_t r = 0; r < row_lengths.size(); ++r) {
    check_config(row_lengths[r] > 0, "empty grid row");
    m.row_start[r + 1] = m.row_start[r] + static_cast<size_t>(row_lengths[r]);
  }
  m.total = m.row_start.back();
  return m;
}

AttentionMask build_mask(int m, int L) {
  check_config(m >= 0 && L >= 1, "bad mask shape");
  return build_mask(std::vector<int>(static_cast<size_t>(m) + 1, L));
}

namespace {
// Shared core: computes softmax attention weights and context for one head
// column block. Weights for row i live at att[att_off[i]..] over the allowed
// ranges in order (range a, then range b).
void attention_head_forward(const Mat& q, const Mat& k, const Mat& v, const AttentionMask& mask,
                            int col0, int dk, const std::vector<size_t>& att_off,
                            std::vector<double>& att, Mat& ctx) {
  double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  size_t n = mask.total;
  std::vector<double> scores;
  for (size_t i = 0; i < n; ++i) {
    int seg = mask.segment_of(i);
    auto rg = mask.allowed_ranges(seg);
    size_t cnt = mask.allowed_count(seg);
    if (cnt == 0) throw numeric_error("attention row with no allowed positions");
    scores.assign(cnt, 0.0);
    const double* qi = q.row(static_cast<int>(i)) + col0;
    size_t w = 0;
    for (size_t j = rg.a_begin; j < rg.a_end; ++j, ++w) {
      const double* kj = k.row(static_cast<int>(j)) + col0;
      double s = 0.0;
      for (int c = 0; c < dk; ++c) s += qi[c] * kj[c];
      scores[w] = s * scale;
    }
    for (size_t j = rg.b_begin; j < rg.b_end; ++j, ++w) {
      const double* kj = k.row(static_cast<int>(j)) + col0;
      double s = 0.0;
      for (int c = 0; c < dk; ++c) s += qi[c] * kj[c];
      scores[w] = s * scale;
    }
    double mx = *std::max_element(scores.begin(), scores.end());
    double sum = 0.0;
    for (auto& s : scores) {
      s = std::exp(s - mx);
      sum += s;
    }
    double* wi = att.data() + att_off[i];
    double* ci = ctx.row(static_cast<int>(i)) + col0;
    std::fill(ci, ci + dk, 0.0);
    w = 0;
    for (size_t j = rg.a_begin; j < rg.a_end; ++j, ++w) {
      double weight = scores[w] / sum;
      wi[w] = weight;
      const double* vj = v.row(static_cast<int>(j)) + col0;
      for (int c = 0; c < dk; ++c) ci[c] += weight * vj[c];
    }
    for (size_t j = rg.b_begin; j < rg.b_end; ++j, ++w) {
      double weight = scores[w] / sum;
      wi[w] = weight;
      const double* vj = v.row(static_cast<int>(j)) + col0;
      for (int c = 0; c < dk; ++c) ci[c] += weight * vj[c];
    }
  }
}

void attention_head_backward(const Mat& q, const Mat& k, const Mat& v, const AttentionMask& mask,
                             int col0, int dk, const std::vector<size_t>& att_off,
                             const std::vector<double>& att, const Mat& dctx, Mat& dq, Mat& dk_,
                             Mat& dv) {
  double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  size_t n = mask.total;
  std::vector<double> dw;
  for (size_t i = 0; i < n; ++i) {
    int seg = mask.segment_of(i);
    auto rg = mask.allowed_ranges(seg);
    size_t cnt = mask.allowed_count(seg);
    const double* wi = att.data() + att_off[i];
    const double* dci = dctx.row(static_cast<int>(i)) + col0;

    dw.assign(cnt, 0.0);
    double wdot = 0.0;
    size_t w = 0;
    auto grad_w = [&](size_t j) {
      const double* vj = v.row(static_cast<int>(j)) + col0;
      double g = 0.0;
      for (int c = 0; c < dk; ++c) g += vj[c] * dci[c];
      dw[w] = g;
      wdot += wi[w] * g;
      double* dvj = dv.row(static_cast<int>(j)) + col0;
      for (int c = 0; c < dk; ++c) dvj[c] += wi[w] * dci[c];
    };
    for (size_t j = rg.a_begin; j < rg.a_end; ++j, ++w) grad_w(j);
    for (size_t j = rg.b_begin; j < rg.b_end; ++j, ++w) grad_w(j);

    const double* qi = q.row(static_cast<int>(i)) + col0;
    double* dqi = dq.row(static_cast<int>(i)) + col0;
    w = 0;
    auto grad_s = [&](size_t j) {
      double ds = wi[w] * (dw[w] - wdot) * scale;
      const double* kj = k.row(static_cast<int>(j)) + col0;
      double* dkj = dk_.row(static_cast<int>(j)) + col0;
      for (int c = 0; c < dk; ++c) {
        dqi[c] += ds * kj[c];
        dkj[c] += ds * qi[c];
      }
    };
    for (size_t j = rg.a_begin; j < rg.a_end; ++j, ++w) grad_s(j);
    for (size_t j = rg.b_begin; j < rg.b_end; ++j, ++w) grad_s(j);
  }
}

std::vector<size_t> attention_offsets(const AttentionMask& mask) {
  std::vector<size_t> off(mask.total + 1, 0);
  for (size_t i = 0; i < mask.total; ++i)
    off[i + 1] = off[i] + mask.allowed_count(mask.segment_of(i));
  return off;
}
}  // namespace

Mat masked_attention(const Mat& q, const Mat& k, const Mat& v, const AttentionMask& mask,
                     int heads) {
  check_config(q.rows == static_cast<int>(mask.total) && k.rows == q.rows && v.rows == q.rows,
               "attention shape mismatch with mask");
  check_config(q.cols == k.cols && q.cols == v.cols && q.cols % heads == 0,
               "attention dims must split across heads");
  int dk = q.cols / heads;
  auto off = attention_offsets(mask);
  Mat ctx(q.rows, q.cols);
  std::vector<double> att(off.back());
  for (int h = 0; h < heads; ++h)
    attention_head_forward(q, k, v, mask, h * dk, dk, off, att, ctx);
  return ctx;
}

void forward_logits(const EncoderParams& params, const Grid& grid, ForwardCache& cache,
                    std::mt19937_64* dropout_rng) {
  const EncoderConfig& cfg = params.cfg;
  check_config(!grid.empty(), "grid needs at least the input row");
  check_config(static_cast<int>(grid.size()) <= cfg.max_knowledge + 1,
               "grid has more knowledge rows than max_knowledge");

  std::vector<int> row_lengths;
  for (const auto& row : grid) {
    check_data(row.tokens.size() == row.token_types.size(), "token/type length mismatch");
    check_data(!row.tokens.empty(), "empty grid row");
    check_data(static_cast<int>(row.tokens.size()) <= cfg.max_len,
               "grid row longer than max_len");
    row_lengths.push_back(static_cast<int>(row.tokens.size()));
  }

  cache = ForwardCache{};
  cache.grid = grid;
  cache.mask = build_mask(row_lengths);
  int n = static_cast<int>(cache.mask.total);
  cache.n = n;
  int d = cfg.d_model;

  // Embedding sum: token + position (restarting per row) + token type.
  cache.x0 = Mat(n, d);
  {
    int pos = 0;
    for (const auto& row : grid) {
      for (size_t t = 0; t < row.tokens.size(); ++t, ++pos) {
        int tok = row.tokens[t];
        int tt = row.token_types[t];
        check_data(tok >= 0 && tok < cfg.vocab_size, "token id out of range");
        check_data(tt >= 0 && tt < cfg.token_type_count, "token type out of range");
        const double* te = params.tok_emb.row(tok);
        const double* pe = params.pos_emb.row(static_cast<int>(t));
        const double* ye = params.type_emb.row(tt);
        double* x = cache.x0.row(pos);
        for (int j = 0; j < d; ++j) x[j] = te[j] + pe[j] + ye[j];
      }
    }
  }
  apply_dropout(cache.x0, cfg.dropout, dropout_rng, cache.drop0);

  auto att_off = attention_offsets(cache.mask);

  const Mat* h = &cache.x0;
  cache.layers.resize(params.layer.size());
  for (size_t l = 0; l < params.layer.size(); ++l) {
    const auto& P = params.layer[l];
    auto& C = cache.layers[l];
    C.att_off = att_off;

    layer_norm_forward(*h, P.ln1_g, P.ln1_b, C.a, C.ln1_xhat, C.ln1_rstd);
    linear_forward(C.a, P.wq, P.bq, C.q);
    linear_forward(C.a, P.wk, P.bk, C.k);
    linear_forward(C.a, P.wv, P.bv, C.v);

    C.ctx = Mat(n, d);
    int dk = cfg.d_k();
    C.att.assign(static_cast<size_t>(cfg.heads), std::vector<double>(att_off.back()));
    for (int head = 0; head < cfg.heads; ++head)
      attention_head_forward(C.q, C.k, C.v, cache.mask, head * dk, dk, att_off, C.att[head],
                             C.ctx);

    linear_forward(C.ctx, P.wo, P.bo, C.attn_out);
    apply_dropout(C.attn_out, cfg.dropout, dropout_rng, C.drop1);

    C.h1 = Mat(n, d);
    for (size_t i = 0; i < C.h1.size(); ++i) C.h1.v[i] = h->v[i] + C.attn_out.v[i];

    layer_norm_forward(C.h1, P.ln2_g, P.ln2_b, C.b, C.ln2_xhat, C.ln2_rstd);
    linear_forward(C.b, P.w1, P.b1, C.z1);
    C.g1 = Mat(C.z1.rows, C.z1.cols);
    for (size_t i = 0; i < C.z1.size(); ++i) C.g1.v[i] = gelu(C.z1.v[i]);
    linear_forward(C.g1, P.w2, P.b2, C.ffn_out);
    apply_dropout(C.ffn_out, cfg.dropout, dropout_rng, C.drop2);

    C.h2 = Mat(n, d);
    for (size_t i = 0; i < C.h2.size(); ++i) C.h2.v[i] = C.h1.v[i] + C.ffn_out.v[i];
    h = &C.h2;
  }

  layer_norm_forward(*h, params.lnf_g, params.lnf_b, cache.hf, cache.lnf_xhat, cache.lnf_rstd);
  linear_forward(cache.hf, params.w_cls, params.b_cls, cache.logits);
  softmax_rows(cache.logits, cache.probs);
}

Prediction forward(const EncoderParams& params, const Grid& grid) {
  ForwardCache cache;
  forward_logits(params, grid, cache);
  int len0 = static_cast<int>(grid[0].tokens.size());
  Prediction pred;
  pred.num_labels = params.cfg.num_labels;
  pred.probs.assign(cache.probs.v.begin(),
                    cache.probs.v.begin() + static_cast<size_t>(len0) * pred.num_labels);
  return pred;
}

double ce_loss_input_row(const ForwardCache& cache, const std::vector<int>& gold, double weight,
                         Mat& dlogits) {
  int len0 = cache.mask.row_len[0];
  check_data(static_cast<int>(gold.size()) == len0, "gold labels must align with the input row");
  int nl = cache.logits.cols;
  if (dlogits.rows != cache.logits.rows || dlogits.cols != nl)
    dlogits = Mat(cache.logits.rows, nl);

  double loss = 0.0;
  double inv = 1.0 / len0;
  for (int i = 0; i < len0; ++i) {
    int g = gold[static_cast<size_t>(i)];
    check_data(g >= 0 && g < nl, "gold label out of range");
    const double* p = cache.probs.row(i);
    loss -= std::log(std::max(p[g], 1e-300));
    double* dz = dlogits.row(i);
    for (int c = 0; c < nl; ++c) dz[c] += weight * inv * (p[c] - (c == g ? 1.0 : 0.0));
  }
  loss *= inv;
  if (!std::isfinite(loss)) throw numeric_error("non-finite cross-entropy loss");
  return loss;
}

void backward(const EncoderParams& params, const ForwardCache& cache, const Mat& dlogits,
              EncoderParams& grads) {
  const EncoderConfig& cfg = params.cfg;
  int n = cache.n;
  int d = cfg.d_model;

  Mat dhf(n, d);
  linear_backward(cache.hf, params.w_cls, dlogits, dhf, grads.w_cls, grads.b_cls);

  Mat dh(n, d);
  layer_norm_backward(dhf, cache.lnf_xhat, cache.lnf_rstd, params.lnf_g, dh, grads.lnf_g,
                      grads.lnf_b);

  for (int l = static_cast<int>(params.layer.size()) - 1; l >= 0; --l) {
    const auto& P = params.layer[static_cast<size_t>(l)];
    const auto& C = cache.layers[static_cast<size_t>(l)];
    auto& G = grads.layer[static_cast<size_t>(l)];

    // h2 = h1 + dropout(ffn_proj)
    Mat dffn = dh;
    if (!C.drop2.empty())
      for (size_t i = 0; i < dffn.size(); ++i) dffn.v[i] *= C.drop2[i];
    Mat dg1(n, cfg.ffn_dim);
    linear_backward(C.g1, P.w2, dffn, dg1, G.w2, G.b2);
    Mat dz1(n, cfg.ffn_dim);
    for (size_t i = 0; i < dz1.size(); ++i) dz1.v[i] = dg1.v[i] * gelu_grad(C.z1.v[i]);
    Mat db_(n, d);
    linear_backward(C.b, P.w1, dz1, db_, G.w1, G.b1);
    // dh currently holds dh2; residual passes it to dh1, LN2 adds its share.
    layer_norm_backward(db_, C.ln2_xhat, C.ln2_rstd, P.ln2_g, dh, G.ln2_g, G.ln2_b);

    // h1 = h_in + dropout(attn_proj)
    Mat dattn = dh;
    if (!C.drop1.empty())
      for (size_t i = 0; i < dattn.size(); ++i) dattn.v[i] *= C.drop1[i];
    Mat dctx(n, d);
    linear_backward(C.ctx, P.wo, dattn, dctx, G.wo, G.bo);

    Mat dq(n, d), dk(n, d), dv(n, d);
    int dkk = cfg.d_k();
    for (int head = 0; head < cfg.heads; ++head)
      attention_head_backward(C.q, C.k, C.v, cache.mask, head * dkk, dkk, C.att_off,
                              C.att[static_cast<size_t>(head)], dctx, dq, dk, dv);

    Mat da(n, d);
    linear_backward(C.a, P.wq, dq, da, G.wq, G.bq);
    linear_backward(C.a, P.wk, dk, da, G.wk, G.bk);
    linear_backward(C.a, P.wv, dv, da, G.wv, G.bv);
    layer_norm_backward(da, C.ln1_xhat, C.ln1_rstd, P.ln1_g, dh, G.ln1_g, G.ln1_b);
  }

  // dh is now the gradient at x0 (post embedding dropout).
  if (!cache.drop0.empty())
    for (size_t i = 0; i < dh.size(); ++i) dh.v[i] *= cache.drop0[i];
  int pos = 0;
  for (const auto& row : cache.grid) {
    for (size_t t = 0; t < row.tokens.size(); ++t, ++pos) {
      const double* g = dh.row(pos);
      double* gt = grads.tok_emb.row(row.tokens[t]);
      double* gp = grads.pos_emb.row(static_cast<int>(t));
      double* gy = grads.type_emb.row(row.token_types[t]);
      for (int j = 0; j < d; ++j) {
        gt[j] += g[j];
        gp[j] += g[j];
        gy[j] += g[j];
      }
    }
  }
}

double forward_backward(const EncoderParams& params, const Grid& grid,
                        const std::vector<int>& gold, double weight, EncoderParams& grads,
                        std::mt19937_64* dropout_rng) {
  ForwardCache cache;
  forward_logits(params, grid, cache, dropout_rng);
  Mat dlogits(cache.logits.rows, cache.logits.cols);
  double loss = ce_loss_input_row(cache, gold, weight, dlogits);
  if (weight != 0.0) backward(params, cache, dlogits, grads);
  return loss;
}

namespace {
// Per-dimension mean / population std over the rows of a tensor slice.
void row_stats(const Tensor& t, int row_begin, int row_end, std::vector<double>& mu,
               std::vector<double>& sigma) {
  int nrows = row_end - row_begin;
  mu.assign(static_cast<size_t>(t.cols), 0.0);
  sigma.assign(static_cast<size_t>(t.cols), 0.0);
  for (int r = row_begin; r < row_end; ++r)
    for (int c = 0; c < t.cols; ++c) mu[static_cast<size_t>(c)] += t.at(r, c);
  for (auto& m : mu) m /= nrows;
  for (int r = row_begin; r < row_end; ++r)
    for (int c = 0; c < t.cols; ++c) {
      double dev = t.at(r, c) - mu[static_cast<size_t>(c)];
      sigma[static_cast<size_t>(c)] += dev * dev;
    }
  for (auto& s : sigma) s = std::sqrt(s / nrows);
}
}  // namespace

EncoderParams transplant_head(const EncoderParams& pretrained, int new_num_labels,
                              int new_token_type_count, uint64_t seed) {
  check_config(new_num_labels >= 1 && new_token_type_count >= 3,
               "bad transplant target shape");
  EncoderParams p = pretrained;
  p.cfg.num_labels = new_num_labels;
  p.cfg.token_type_count = new_token_type_count;

  auto rng = make_rng(seed, /*stream=*/2);
  auto draw = [&rng](double mu, double sigma) {
    if (sigma == 0.0) return mu;
    std::normal_distribution<double> norm(mu, sigma);
    return norm(rng);
  };

  // Classifier weight: per-dimension stats across the old output columns.
  {
    const Tensor& old = pretrained.w_cls;
    Tensor fresh("w_cls", old.rows, new_num_labels);
    for (int r = 0; r < old.rows; ++r) {
      double mu = 0.0, sg = 0.0;
      for (int c = 0; c < old.cols; ++c) mu += old.at(r, c);
      mu /= old.cols;
      for (int c = 0; c < old.cols; ++c) {
        double dev = old.at(r, c) - mu;
        sg += dev * dev;
      }
      sg = std::sqrt(sg / old.cols);
      for (int c = 0; c < new_num_labels; ++c) fresh.at(r, c) = draw(mu, sg);
    }
    p.w_cls = std::move(fresh);
  }
  {
    const Tensor& old = pretrained.b_cls;
    double mu = 0.0, sg = 0.0;
    for (double x : old.v) mu += x;
    mu /= static_cast<double>(old.v.size());
    for (double x : old.v) sg += (x - mu) * (x - mu);
    sg = std::sqrt(sg / static_cast<double>(old.v.size()));
    Tensor fresh("b_cls", 1, new_num_labels);
    for (int c = 0; c < new_num_labels; ++c) fresh.at(0, c) = draw(mu, sg);
    p.b_cls = std::move(fresh);
  }

  // Token-type table: rows 0 (input) and 1 (unlabeled) keep their roles and
  // are copied; the label rows are redrawn from the pretrained label rows.
  {
    const Tensor& old = pretrained.type_emb;
    std::vector<double> mu, sigma;
    row_stats(old, 2, old.rows, mu, sigma);
    Tensor fresh("type_emb", new_token_type_count, old.cols);
    for (int c = 0; c < old.cols; ++c) {
      fresh.at(0, c) = old.at(0, c);
      fresh.at(1, c) = old.at(1, c);
    }
    for (int r = 2; r < new_token_type_count; ++r)
      for (int c = 0; c < old.cols; ++c)
        fresh.at(r, c) = draw(mu[static_cast<size_t>(c)], sigma[static_cast<size_t>(c)]);
    p.type_emb = std::move(fresh);
  }
  return p;
}

namespace {
std::vector<float> serialize_params(const EncoderParams& params) {
  std::vector<float> blob;
  for (const Tensor* t : params.tensors()) write_f32(blob, t->v);
  return blob;
}

json config_to_json(const EncoderConfig& c) {
  return json{{"d_model", c.d_model},   {"layers", c.layers},
              {"heads", c.heads},       {"ffn_dim", c.ffn_dim},
              {"vocab_size", c.vocab_size}, {"max_len", c.max_len},
              {"max_knowledge", c.max_knowledge},
              {"token_type_count", c.token_type_count}, {"num_labels", c.num_labels},
              {"dropout", c.dropout}};
}

EncoderConfig config_from_json(const json& j) {
  EncoderConfig c;
  c.d_model = j.at("d_model");
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.ffn_dim = j.at("ffn_dim");
  c.vocab_size = j.at("vocab_size");
  c.max_len = j.at("max_len");
  c.max_knowledge = j.at("max_knowledge");
  c.token_type_count = j.at("token_type_count");
  c.num_labels = j.at("num_labels");
  c.dropout = j.at("dropout");
  return c;
}
}  // namespace

std::string params_fingerprint(const EncoderParams& params) {
  auto blob = serialize_params(params);
  return hex64(fnv1a64(blob.data(), blob.size() * sizeof(float)));
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  auto blob = serialize_params(ckpt.params);
  std::string bin_path = path + ".bin";
  save_f32_file(bin_path, blob);

  json manifest;
  manifest["format"] = "raner-checkpoint-v1";
  manifest["config"] = config_to_json(ckpt.params.cfg);
  manifest["label_types"] = ckpt.labels.types;
  manifest["vocab"] = ckpt.vocab.tokens;
  json tensors = json::array();
  for (const Tensor* t : ckpt.params.tensors())
    tensors.push_back({{"name", t->name}, {"rows", t->rows}, {"cols", t->cols}});
  manifest["tensors"] = tensors;
  manifest["blob"] = std::filesystem::path(bin_path).filename().string();
  manifest["content_hash"] = hex64(fnv1a64(blob.data(), blob.size() * sizeof(float)));
  if (!ckpt.extra_json.empty()) manifest["extra"] = json::parse(ckpt.extra_json);
  write_text_file(path, manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
  json manifest;
  try {
    manifest = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw data_error("bad checkpoint manifest " + path + ": " + e.what());
  }
  check_data(manifest.value("format", "") == "raner-checkpoint-v1",
             "not a checkpoint manifest: " + path);

  Checkpoint ckpt;
  EncoderConfig cfg = config_from_json(manifest.at("config"));
  ckpt.labels = LabelSet(manifest.at("label_types").get<std::vector<std::string>>());
  ckpt.vocab = Vocab::from_token_list(manifest.at("vocab").get<std::vector<std::string>>());
  ckpt.params = EncoderParams::init(cfg, 0);
  if (manifest.contains("extra")) ckpt.extra_json = manifest["extra"].dump();

  std::string bin_path =
      (std::filesystem::path(path).parent_path() / manifest.at("blob").get<std::string>())
          .string();
  auto blob = load_f32_file(bin_path);
  check_data(manifest.at("content_hash") == hex64(fnv1a64(blob.data(), blob.size() * sizeof(float))),
             "checkpoint blob hash mismatch: " + bin_path);

  size_t off = 0;
  auto tensors = ckpt.params.tensors();
  auto meta = manifest.at("tensors");
  check_data(meta.size() == tensors.size(), "tensor table size mismatch in " + path);
  for (size_t i = 0; i < tensors.size(); ++i) {
    check_data(meta[i].at("name") == tensors[i]->name &&
                   meta[i].at("rows") == tensors[i]->rows && meta[i].at("cols") == tensors[i]->cols,
               "tensor table mismatch at " + tensors[i]->name);
    check_data(off + tensors[i]->v.size() <= blob.size(), "checkpoint blob too short");
    for (size_t j = 0; j < tensors[i]->v.size(); ++j)
      tensors[i]->v[j] = static_cast<double>(blob[off + j]);
    off += tensors[i]->v.size();
  }
  check_data(off == blob.size(), "checkpoint blob too long");
  return ckpt;
}

}  // namespace raner
