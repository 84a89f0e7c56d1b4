#include "raner/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "json.hpp"

namespace raner {

using json = nlohmann::json;

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 0) threads = worker_threads();
  threads = std::min(threads, std::max(1, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (int i = t; i < n; i += threads) fn(i);
    });
  for (auto& th : pool) th.join();
}

void TrainConfig::validate() const {
  check_config(lambda1 >= 0.0, "lambda1 must be >= 0");
  check_config(lambda_conf >= 0.0 && lambda_conf <= 1.0 + 1e-12,
               "lambda_conf must be a probability");
  check_config(batch_size >= 1 && epochs >= 0, "bad batch/epoch configuration");
  check_config(lr > 0.0, "learning rate must be positive");
  check_config(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0,1)");
}

void PretrainConfig::validate() const {
  check_config(steps >= 0 && batch_size >= 1 && m >= 0, "bad pretrain configuration");
  check_config(label_deletion_prob >= 0.0 && label_deletion_prob <= 1.0,
               "label deletion probability must be in [0,1]");
  check_config(lr > 0.0, "learning rate must be positive");
}

Adam::Adam(const EncoderParams& shape, double learning_rate)
    : lr(learning_rate), m1(shape.zeros_like()), m2(shape.zeros_like()) {}

void Adam::step(EncoderParams& params, const EncoderParams& grads) {
  ++t;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  auto ps = params.tensors();
  auto gs = grads.tensors();
  auto ms = m1.tensors();
  auto vs = m2.tensors();
  for (size_t i = 0; i < ps.size(); ++i) {
    for (size_t j = 0; j < ps[i]->v.size(); ++j) {
      double g = gs[i]->v[j];
      double& m = ms[i]->v[j];
      double& v = vs[i]->v[j];
      m = beta1 * m + (1.0 - beta1) * g;
      v = beta2 * v + (1.0 - beta2) * g * g;
      ps[i]->v[j] -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
    }
  }
}

std::vector<int64_t> find_self_entry_ids(const std::vector<Sentence>& train,
                                         const UnstructuredKB* labeled_kb) {
  std::vector<int64_t> out(train.size(), -1);
  if (labeled_kb == nullptr) return out;
  std::unordered_map<std::string, int64_t> by_content;
  for (const auto& e : labeled_kb->entries) {
    std::string key;
    for (const auto& t : e.tokens) key += t + '\x1f';
    by_content.emplace(key, e.id);
  }
  for (size_t i = 0; i < train.size(); ++i) {
    std::string key;
    for (const auto& t : train[i].tokens) key += t + '\x1f';
    auto it = by_content.find(key);
    if (it != by_content.end()) out[i] = it->second;
  }
  return out;
}

StepLosses fine_tune_step(const std::vector<Sentence>& train,
                          const std::vector<size_t>& batch_indices,
                          const std::vector<int64_t>& self_ids, EncoderParams& params,
                          Adam& adam, const TrainEnv& env, const TrainConfig& cfg,
                          uint64_t step_index, const std::vector<TokenVecs>* vec_cache) {
  cfg.validate();
  int b = static_cast<int>(batch_indices.size());
  check_config(b >= 1, "empty batch");

  EncoderParams work = params;
  work.cfg.dropout = cfg.dropout;

  std::vector<EncoderParams> grads(static_cast<size_t>(b), params.zeros_like());
  std::vector<double> l1(static_cast<size_t>(b), 0.0), l2(static_cast<size_t>(b), 0.0);

  TagConfig tag_cfg = cfg.tag;
  tag_cfg.lambda_conf = cfg.lambda_conf;
  tag_cfg.m = cfg.m;
  tag_cfg.n = cfg.n;

  const KbIndex* labeled = tag_cfg.use_labeled_kb ? env.labeled_index : nullptr;
  const KbIndex* unlabeled = tag_cfg.use_unlabeled_kb ? env.unlabeled_index : nullptr;

  parallel_for(b, cfg.threads, [&](int slot) {
    const Sentence& sent = train[batch_indices[static_cast<size_t>(slot)]];
    check_data(!sent.labels.empty(), "training sentence without labels");
    auto rng = make_rng(cfg.seed, step_index * 1000003ULL + static_cast<uint64_t>(slot));
    auto& g = grads[static_cast<size_t>(slot)];

    auto ids = env.vocab->encode(sent.tokens);

    // Stage 1: loss L1 plus the prediction that drives retrieval.
    GridRow row0;
    row0.tokens = ids;
    row0.token_types.assign(ids.size(), 0);
    ForwardCache cache1;
    forward_logits(work, {row0}, cache1, &rng);
    Mat dlogits1(cache1.logits.rows, cache1.logits.cols);
    l1[static_cast<size_t>(slot)] = ce_loss_input_row(cache1, sent.labels, cfg.lambda1, dlogits1);
    if (cfg.lambda1 != 0.0) backward(work, cache1, dlogits1, g);

    Prediction pred;
    pred.num_labels = work.cfg.num_labels;
    pred.probs.assign(cache1.probs.v.begin(),
                      cache1.probs.v.begin() + ids.size() * static_cast<size_t>(pred.num_labels));
    auto labels1 = pred.argmax();
    auto entities = decode_bio(labels1, *env.labels);
    for (auto& e : entities) e.confidence = entity_confidence(pred, e, labels1);
    double lambda = tag_cfg.refine_all ? 2.0 : tag_cfg.lambda_conf;
    auto unconfident = collect_unconfident(entities, lambda, labels1, &sent.labels);

    // Retrieval with self-exclusion.
    std::vector<const KnowledgeEntry*> knowledge;
    if (tag_cfg.m > 0 && (labeled != nullptr || unlabeled != nullptr)) {
      size_t sent_idx = batch_indices[static_cast<size_t>(slot)];
      TokenVecs token_vecs = vec_cache != nullptr ? (*vec_cache)[sent_idx]
                                                  : env.embedder->embed_tokens(sent.tokens);
      auto queries = build_queries(sent.tokens, unconfident, token_vecs, tag_cfg,
                                   *env.stopwords);
      if (!queries.empty()) {
        std::optional<int64_t> exclude;
        int64_t self = self_ids[batch_indices[static_cast<size_t>(slot)]];
        if (self >= 0) exclude = self;
        auto hits = gather_candidates(queries, tag_cfg.m, labeled, unlabeled, exclude);
        for (const auto& h : dedup_topm(std::move(hits), tag_cfg.m)) {
          const UnstructuredKB* kb =
              h.kb_kind == KbKind::labeled ? labeled->kb() : unlabeled->kb();
          knowledge.push_back(kb->find(h.entry_id));
        }
      }
    }

    // Stage 2: loss L2 on the input row, knowledge rows unsupervised.
    Grid grid;
    grid.push_back(row0);
    for (const KnowledgeEntry* e : knowledge) {
      GridRow r;
      r.tokens = env.vocab->encode(e->tokens);
      Segment seg;
      seg.len = static_cast<int>(e->tokens.size());
      if (e->labels.empty()) {
        seg.role = SegmentRole::unlabeled_knowledge;
      } else {
        seg.role = SegmentRole::labeled_knowledge;
        seg.labels = e->labels;
      }
      r.token_types = token_type_ids({seg}, work.cfg.num_labels);
      grid.push_back(std::move(r));
    }
    ForwardCache cache2;
    forward_logits(work, grid, cache2, &rng);
    Mat dlogits2(cache2.logits.rows, cache2.logits.cols);
    l2[static_cast<size_t>(slot)] = ce_loss_input_row(cache2, sent.labels, 1.0, dlogits2);
    backward(work, cache2, dlogits2, g);
  });

  // Reduce in slot order (thread-count independent), average, step.
  EncoderParams total = params.zeros_like();
  for (int slot = 0; slot < b; ++slot) total.add_scaled(grads[static_cast<size_t>(slot)], 1.0);
  total.scale(1.0 / b);
  if (!total.all_finite()) throw numeric_error("non-finite gradient in fine-tune step");
  adam.step(params, total);

  StepLosses losses;
  losses.l1 = std::accumulate(l1.begin(), l1.end(), 0.0) / b;
  losses.l2 = std::accumulate(l2.begin(), l2.end(), 0.0) / b;
  losses.total = losses.l2 + cfg.lambda1 * losses.l1;
  return losses;
}

namespace {
double dev_entity_f1(const EncoderParams& params, const std::vector<Sentence>& dev,
                     const TrainEnv& env, const TrainConfig& cfg) {
  TagContext ctx;
  ctx.params = &params;
  ctx.vocab = env.vocab;
  ctx.labels = env.labels;
  ctx.embedder = env.embedder;
  ctx.labeled_index = env.labeled_index;
  ctx.unlabeled_index = env.unlabeled_index;
  ctx.stopwords = env.stopwords;
  ctx.cfg = cfg.tag;
  ctx.cfg.lambda_conf = cfg.lambda_conf;
  ctx.cfg.m = cfg.m;
  ctx.cfg.n = cfg.n;

  std::vector<std::vector<int>> predicted(dev.size()), gold(dev.size());
  parallel_for(static_cast<int>(dev.size()), cfg.threads, [&](int i) {
    predicted[static_cast<size_t>(i)] = tag(dev[static_cast<size_t>(i)].tokens, ctx).labels;
    gold[static_cast<size_t>(i)] = dev[static_cast<size_t>(i)].labels;
  });
  return entity_f1(predicted, gold, *env.labels).f1;
}
}  // namespace

TrainStats fine_tune(EncoderParams& params, const std::vector<Sentence>& train,
                     const std::vector<Sentence>& dev, const TrainEnv& env,
                     const TrainConfig& cfg) {
  cfg.validate();
  check_data(!train.empty(), "no training sentences");

  auto self_ids = find_self_entry_ids(train, env.labeled_kb);
  Adam adam(params, cfg.lr);
  auto shuffle_rng = make_rng(cfg.seed, /*stream=*/11);

  // The frozen embedder never changes during fine-tuning; embed each training
  // sentence once.
  std::vector<TokenVecs> vec_cache;
  bool retrieval_on = cfg.tag.m != 0 || cfg.m > 0;
  if (retrieval_on && env.embedder != nullptr &&
      (env.labeled_index != nullptr || env.unlabeled_index != nullptr)) {
    vec_cache.resize(train.size());
    parallel_for(static_cast<int>(train.size()), cfg.threads, [&](int i) {
      vec_cache[static_cast<size_t>(i)] =
          env.embedder->embed_tokens(train[static_cast<size_t>(i)].tokens);
    });
  }
  const std::vector<TokenVecs>* cache_ptr = vec_cache.empty() ? nullptr : &vec_cache;

  TrainStats stats;
  EncoderParams best = params;
  double best_f1 = -1.0;
  int since_best = 0;
  uint64_t step = 0;

  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    StepLosses epoch_losses;
    int steps_in_epoch = 0;
    for (size_t off = 0; off < order.size(); off += static_cast<size_t>(cfg.batch_size)) {
      size_t end = std::min(order.size(), off + static_cast<size_t>(cfg.batch_size));
      std::vector<size_t> batch(order.begin() + static_cast<long>(off),
                                order.begin() + static_cast<long>(end));
      auto losses =
          fine_tune_step(train, batch, self_ids, params, adam, env, cfg, step++, cache_ptr);
      epoch_losses.l1 += losses.l1;
      epoch_losses.l2 += losses.l2;
      epoch_losses.total += losses.total;
      ++steps_in_epoch;
    }
    if (steps_in_epoch > 0) {
      epoch_losses.l1 /= steps_in_epoch;
      epoch_losses.l2 /= steps_in_epoch;
      epoch_losses.total /= steps_in_epoch;
    }
    stats.epoch_losses.push_back(epoch_losses);
    stats.epochs_run = epoch + 1;

    if (!dev.empty()) {
      double f1 = dev_entity_f1(params, dev, env, cfg);
      stats.dev_f1.push_back(f1);
      if (f1 > best_f1) {
        best_f1 = f1;
        best = params;
        stats.best_epoch = epoch;
        since_best = 0;
      } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
        break;
      }
    }
  }
  if (!dev.empty() && stats.best_epoch >= 0) params = best;
  return stats;
}

// ---- pre-training -------------------------------------------------------

std::vector<PretrainExample> read_pretrain_corpus(const std::string& path,
                                                  const LabelSet& pre_labels) {
  std::istringstream in(read_text_file(path));
  std::vector<PretrainExample> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw data_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    PretrainExample ex;
    ex.tokens = j.at("tokens").get<std::vector<std::string>>();
    for (const auto& tag : j.at("labels").get<std::vector<std::string>>())
      ex.labels.push_back(pre_labels.label_id(tag));
    check_data(ex.tokens.size() == ex.labels.size(),
               path + ":" + std::to_string(lineno) + ": token/label mismatch");
    if (j.contains("entities"))
      ex.entities = j["entities"].get<std::vector<std::string>>();
    out.push_back(std::move(ex));
  }
  return out;
}

void write_pretrain_corpus(const std::string& path,
                           const std::vector<PretrainExample>& examples,
                           const LabelSet& pre_labels) {
  std::ostringstream out;
  for (const auto& ex : examples) {
    json j;
    j["tokens"] = ex.tokens;
    json tags = json::array();
    for (int l : ex.labels) tags.push_back(pre_labels.label_name(l));
    j["labels"] = tags;
    j["entities"] = ex.entities;
    out << j.dump() << '\n';
  }
  write_text_file(path, out.str());
}

double multitask_pretrain_loss(const Mat& logits, const std::vector<int>& gold,
                               const LabelSet& pre_labels, int entity_type, double weight,
                               Mat* dlogits) {
  int len = logits.rows;
  int nl = logits.cols;
  check_data(static_cast<int>(gold.size()) == len, "gold labels must align with logits");
  check_data(nl == pre_labels.num_labels(), "logit width must match the pre-training labels");
  int b_ent = pre_labels.b_label(entity_type);
  int i_ent = pre_labels.i_label(entity_type);

  // Eligible typing tokens counted up front so per-token gradients normalize.
  int typing_count = 0;
  for (int i = 0; i < len; ++i) {
    int g = gold[static_cast<size_t>(i)];
    if (!LabelSet::is_o(g) && LabelSet::type_of(g) != entity_type) ++typing_count;
  }

  double ext_loss = 0.0, typ_loss = 0.0;
  std::vector<double> p(static_cast<size_t>(nl)), pm(static_cast<size_t>(nl));
  for (int i = 0; i < len; ++i) {
    const double* z = logits.row(i);
    int g = gold[static_cast<size_t>(i)];
    check_data(g >= 0 && g < nl, "gold label out of range");

    double mx = z[0];
    for (int c = 1; c < nl; ++c) mx = std::max(mx, z[c]);
    double sum = 0.0;
    for (int c = 0; c < nl; ++c) {
      p[static_cast<size_t>(c)] = std::exp(z[c] - mx);
      sum += p[static_cast<size_t>(c)];
    }
    for (int c = 0; c < nl; ++c) p[static_cast<size_t>(c)] /= sum;

    // Extraction: classes are the summed B / I / O probabilities.
    auto in_group = [&](int c) {
      if (LabelSet::is_o(g)) return LabelSet::is_o(c);
      return LabelSet::is_b(g) ? LabelSet::is_b(c) : LabelSet::is_i(c);
    };
    double q = 0.0;
    for (int c = 0; c < nl; ++c)
      if (in_group(c)) q += p[static_cast<size_t>(c)];
    ext_loss -= std::log(std::max(q, 1e-300));
    if (dlogits) {
      double* dz = dlogits->row(i);
      for (int c = 0; c < nl; ++c) {
        double grad = p[static_cast<size_t>(c)] -
                      (in_group(c) ? p[static_cast<size_t>(c)] / q : 0.0);
        dz[c] += weight * grad / len;
      }
    }

    // Typing: ENTITY logits masked out, gold type must be a real type.
    if (!LabelSet::is_o(g) && LabelSet::type_of(g) != entity_type) {
      double mmx = -1e300;
      for (int c = 0; c < nl; ++c)
        if (c != b_ent && c != i_ent) mmx = std::max(mmx, z[c]);
      double msum = 0.0;
      for (int c = 0; c < nl; ++c) {
        pm[static_cast<size_t>(c)] = (c == b_ent || c == i_ent) ? 0.0 : std::exp(z[c] - mmx);
        msum += pm[static_cast<size_t>(c)];
      }
      for (int c = 0; c < nl; ++c) pm[static_cast<size_t>(c)] /= msum;
      typ_loss -= std::log(std::max(pm[static_cast<size_t>(g)], 1e-300));
      if (dlogits) {
        double* dz = dlogits->row(i);
        for (int c = 0; c < nl; ++c) {
          if (c == b_ent || c == i_ent) continue;
          double grad = pm[static_cast<size_t>(c)] - (c == g ? 1.0 : 0.0);
          dz[c] += weight * grad / typing_count;
        }
      }
    }
  }
  ext_loss /= len;
  if (typing_count > 0) typ_loss /= typing_count;
  double loss = ext_loss + typ_loss;
  if (!std::isfinite(loss)) throw numeric_error("non-finite pre-training loss");
  return loss;
}

std::vector<long> count_entity_types(const std::vector<PretrainExample>& examples,
                                     const LabelSet& pre_labels) {
  std::vector<long> counts(static_cast<size_t>(pre_labels.num_types()), 0);
  for (const auto& ex : examples)
    for (const auto& span : decode_bio(ex.labels, pre_labels))
      ++counts[static_cast<size_t>(span.type)];
  return counts;
}

double sampling_weight(const PretrainExample& example, const std::vector<long>& type_counts,
                       double exponent) {
  long min_count = -1;
  for (int g : example.labels) {
    if (LabelSet::is_o(g)) continue;  // non-entity tokens excluded
    long c = type_counts[static_cast<size_t>(LabelSet::type_of(g))];
    check_data(c > 0, "entity type with zero count in sampling weights");
    if (min_count < 0 || c < min_count) min_count = c;
  }
  if (min_count < 0) return 1.0;
  return std::pow(static_cast<double>(min_count), exponent);
}

std::vector<PretrainExample> downsample_entity_only(
    const std::vector<PretrainExample>& examples, const LabelSet& pre_labels, int entity_type,
    int top_k, std::mt19937_64& rng) {
  auto counts = count_entity_types(examples, pre_labels);
  std::vector<int> order(counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return counts[static_cast<size_t>(a)] != counts[static_cast<size_t>(b)]
               ? counts[static_cast<size_t>(a)] > counts[static_cast<size_t>(b)]
               : a < b;
  });
  std::vector<bool> top(counts.size(), false);
  for (int i = 0; i < std::min<int>(top_k, static_cast<int>(order.size())); ++i)
    top[static_cast<size_t>(order[static_cast<size_t>(i)])] = true;

  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<PretrainExample> kept;
  for (const auto& ex : examples) {
    auto spans = decode_bio(ex.labels, pre_labels);
    int typed = 0, entity_only = 0;
    bool all_top = true;
    for (const auto& s : spans) {
      if (s.type == entity_type)
        ++entity_only;
      else
        ++typed;
      if (!top[static_cast<size_t>(s.type)]) all_top = false;
    }
    if (typed == 0) continue;  // no entity with a real type: removed outright
    double drop = 0.0;
    if (all_top) {
      if (entity_only == 3) drop = 0.3;
      else if (entity_only == 4) drop = 0.5;
      else if (entity_only > 4) drop = 0.7;
    }
    if (drop > 0.0 && u(rng) < drop) continue;
    kept.push_back(ex);
  }
  return kept;
}

std::unordered_map<std::string, std::vector<int>> build_surface_index(
    const std::vector<PretrainExample>& corpus) {
  std::unordered_map<std::string, std::vector<int>> by_surface;
  for (size_t i = 0; i < corpus.size(); ++i)
    for (const auto& s : corpus[i].entities)
      by_surface[s].push_back(static_cast<int>(i));
  return by_surface;
}

std::vector<SampledKnowledge> sample_pretrain_knowledge(
    const std::unordered_map<std::string, std::vector<int>>& by_surface,
    const PretrainExample& example, int self_index, int m, double deletion_prob,
    std::mt19937_64& rng) {
  std::vector<int> candidates;
  for (const auto& s : example.entities) {
    auto it = by_surface.find(s);
    if (it == by_surface.end()) continue;
    for (int c : it->second)
      if (c != self_index) candidates.push_back(c);
  }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  int take = std::min(m, static_cast<int>(candidates.size()));
  for (int i = 0; i < take; ++i) {  // partial Fisher-Yates
    std::uniform_int_distribution<int> pick(i, static_cast<int>(candidates.size()) - 1);
    std::swap(candidates[static_cast<size_t>(i)], candidates[static_cast<size_t>(pick(rng))]);
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<SampledKnowledge> out;
  for (int i = 0; i < take; ++i)
    out.push_back({candidates[static_cast<size_t>(i)], u(rng) < deletion_prob});
  return out;
}

PretrainStats pretrain(EncoderParams& params, const std::vector<PretrainExample>& corpus,
                       const LabelSet& pre_labels, const Vocab& vocab,
                       const PretrainConfig& cfg) {
  cfg.validate();
  check_data(!corpus.empty(), "empty pre-training corpus");
  int entity_type = pre_labels.find_type("ENTITY");
  check_data(entity_type >= 0, "pre-training label set must contain the ENTITY type");

  auto by_surface = build_surface_index(corpus);

  auto type_counts = count_entity_types(corpus, pre_labels);
  std::vector<double> weights(corpus.size());
  for (size_t i = 0; i < corpus.size(); ++i)
    weights[i] = sampling_weight(corpus[i], type_counts, cfg.sampling_exponent);
  std::discrete_distribution<int> pick(weights.begin(), weights.end());
  auto sample_rng = make_rng(cfg.seed, /*stream=*/21);

  Adam adam(params, cfg.lr);
  EncoderParams work;
  PretrainStats stats;

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<int> batch(static_cast<size_t>(cfg.batch_size));
    for (auto& idx : batch) idx = pick(sample_rng);

    work = params;
    work.cfg.dropout = cfg.dropout;
    std::vector<EncoderParams> grads(batch.size(), params.zeros_like());
    std::vector<double> losses(batch.size(), 0.0);

    parallel_for(static_cast<int>(batch.size()), cfg.threads, [&](int slot) {
      const auto& ex = corpus[static_cast<size_t>(batch[static_cast<size_t>(slot)])];
      auto rng = make_rng(cfg.seed,
                          0x51ULL + static_cast<uint64_t>(step) * 1000003ULL +
                              static_cast<uint64_t>(slot));

      auto sampled = sample_pretrain_knowledge(by_surface, ex, batch[static_cast<size_t>(slot)],
                                               cfg.m, cfg.label_deletion_prob, rng);

      Grid grid;
      GridRow row0;
      row0.tokens = vocab.encode(ex.tokens);
      row0.token_types.assign(ex.tokens.size(), 0);
      grid.push_back(std::move(row0));

      for (const auto& sk : sampled) {
        const auto& k = corpus[static_cast<size_t>(sk.example)];
        GridRow r;
        r.tokens = vocab.encode(k.tokens);
        Segment seg;
        seg.len = static_cast<int>(k.tokens.size());
        if (sk.labels_deleted) {
          seg.role = SegmentRole::unlabeled_knowledge;  // pseudo-labels deleted
        } else {
          seg.role = SegmentRole::labeled_knowledge;
          seg.labels = k.labels;
        }
        r.token_types = token_type_ids({seg}, work.cfg.num_labels);
        grid.push_back(std::move(r));
      }

      ForwardCache cache;
      forward_logits(work, grid, cache, &rng);
      Mat sub(static_cast<int>(ex.tokens.size()), cache.logits.cols);
      for (int i = 0; i < sub.rows; ++i)
        for (int c = 0; c < sub.cols; ++c) sub.at(i, c) = cache.logits.at(i, c);
      Mat dsub(sub.rows, sub.cols);
      losses[static_cast<size_t>(slot)] = multitask_pretrain_loss(
          sub, ex.labels, pre_labels, entity_type, 1.0 / cfg.batch_size, &dsub);
      Mat dlogits(cache.logits.rows, cache.logits.cols);
      for (int i = 0; i < sub.rows; ++i)
        for (int c = 0; c < sub.cols; ++c) dlogits.at(i, c) = dsub.at(i, c);
      backward(work, cache, dlogits, grads[static_cast<size_t>(slot)]);
    });

    EncoderParams total = params.zeros_like();
    for (size_t slot = 0; slot < grads.size(); ++slot) total.add_scaled(grads[slot], 1.0);
    if (!total.all_finite()) throw numeric_error("non-finite gradient in pre-training step");
    adam.step(params, total);
    stats.step_loss.push_back(std::accumulate(losses.begin(), losses.end(), 0.0) /
                              static_cast<double>(losses.size()));
  }
  return stats;
}

}  // namespace raner
