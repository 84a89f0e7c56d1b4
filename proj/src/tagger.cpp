#include "raner/tagger.hpp"

#include <algorithm>
#include <cmath>

namespace raner {

void TagConfig::validate() const {
  check_config(lambda_conf >= 0.0, "lambda_conf must be >= 0");
  check_config(m >= 0, "m must be >= 0");
  check_config(n >= 1, "n must be >= 1");
  check_config(use_entity_queries || use_sentence_query, "at least one query kind required");
  if (m > 0)
    check_config(use_labeled_kb || use_unlabeled_kb, "at least one KB required when m > 0");
  check_config(window_stride >= 1, "window stride must be >= 1");
}

FirstStageResult first_stage(const std::vector<int>& token_ids, const EncoderParams& params,
                             const LabelSet& ls, const TagConfig& cfg,
                             const std::vector<int>* gold) {
  check_data(!token_ids.empty(), "empty input");
  check_data(static_cast<int>(token_ids.size()) <= params.cfg.max_len,
             "input longer than max length");

  GridRow row;
  row.tokens = token_ids;
  row.token_types.assign(token_ids.size(), 0);

  FirstStageResult out;
  out.pred = forward(params, {row});
  out.labels = out.pred.argmax();
  out.entities = decode_bio(out.labels, ls);
  for (auto& e : out.entities) e.confidence = entity_confidence(out.pred, e, out.labels);
  double lambda = cfg.refine_all ? 2.0 : cfg.lambda_conf;
  out.unconfident = collect_unconfident(out.entities, lambda, out.labels, gold);
  return out;
}

std::vector<Query> build_queries(const std::vector<std::string>& tokens,
                                 const std::vector<EntitySpan>& unconfident,
                                 const std::vector<std::vector<double>>& token_vecs,
                                 const TagConfig& cfg, const Stopwords& sw) {
  std::vector<Query> queries;
  if (cfg.use_sentence_query) {
    Query q;
    q.kind = Query::Kind::sentence;
    q.vec = to_f32(pool_key(token_vecs));
    queries.push_back(std::move(q));
  }
  if (!cfg.use_entity_queries) return queries;

  int len = static_cast<int>(tokens.size());
  auto candidates = surface_filter(tokens, ngram_candidates(len, cfg.n), sw);
  for (const auto& u : unconfident) {
    for (const auto& span : candidates) {
      bool overlaps = span.start <= u.end && u.start <= span.end;
      if (!overlaps) continue;
      Query q;
      q.kind = Query::Kind::entity;
      q.vec = to_f32(pool_key(token_vecs, span.start, span.end));
      q.origin = u;
      queries.push_back(std::move(q));
    }
  }
  return queries;
}

Prediction second_stage(const std::vector<int>& input_ids,
                        const std::vector<const KnowledgeEntry*>& knowledge,
                        const EncoderParams& params, const Vocab& vocab) {
  Grid grid;
  GridRow input;
  input.tokens = input_ids;
  input.token_types.assign(input_ids.size(), 0);
  grid.push_back(std::move(input));

  for (const KnowledgeEntry* e : knowledge) {
    check_data(e != nullptr, "null knowledge entry");
    GridRow row;
    row.tokens = vocab.encode(e->tokens);
    Segment seg;
    seg.len = static_cast<int>(e->tokens.size());
    if (e->labels.empty()) {
      seg.role = SegmentRole::unlabeled_knowledge;
    } else {
      seg.role = SegmentRole::labeled_knowledge;
      seg.labels = e->labels;
    }
    row.token_types = token_type_ids({seg}, params.cfg.num_labels);
    grid.push_back(std::move(row));
  }
  return forward(params, grid);
}

namespace {

bool contains_span(const std::vector<EntitySpan>& list, const EntitySpan& e) {
  for (const auto& u : list)
    if (u.start == e.start && u.end == e.end && u.type == e.type) return true;
  return false;
}
}  // namespace

std::vector<int> merge_outputs(const Prediction& p, const Prediction& p_plus,
                               const std::vector<EntitySpan>& entities,
                               const std::vector<EntitySpan>& unconfident, const TagConfig& cfg,
                               const LabelSet& ls, std::vector<int>* token_stage,
                               std::vector<double>* token_prob) {
  check_data(p.len() == p_plus.len() && p.num_labels == p_plus.num_labels,
             "stage predictions must cover the same input");
  int len = p.len();

  // stage per token: 1 inside confident entities, else 2
  std::vector<int> stage(static_cast<size_t>(len), 2);
  if (cfg.reuse_first_stage_on_confident) {
    for (const auto& e : entities) {
      if (contains_span(unconfident, e)) continue;
      for (int i = e.start; i <= e.end; ++i) stage[static_cast<size_t>(i)] = 1;
    }
  }

  auto labels1 = p.argmax();
  auto labels2 = p_plus.argmax();
  std::vector<int> merged(static_cast<size_t>(len));
  for (int i = 0; i < len; ++i)
    merged[static_cast<size_t>(i)] =
        stage[static_cast<size_t>(i)] == 1 ? labels1[static_cast<size_t>(i)] : labels2[static_cast<size_t>(i)];

  // Repair only inconsistencies introduced by mixing stages: if the deciding
  // stage's own sequence had a compatible predecessor but the merged one does
  // not, the orphan I- becomes B-.
  for (int i = 0; i < len; ++i) {
    int id = merged[static_cast<size_t>(i)];
    if (!LabelSet::is_i(id)) continue;
    int t = LabelSet::type_of(id);
    auto compatible = [&](int prev) {
      return !LabelSet::is_o(prev) && LabelSet::type_of(prev) == t;
    };
    bool merged_ok = i > 0 && compatible(merged[static_cast<size_t>(i - 1)]);
    const auto& own = stage[static_cast<size_t>(i)] == 1 ? labels1 : labels2;
    bool own_ok = i > 0 && compatible(own[static_cast<size_t>(i - 1)]);
    if (!merged_ok && own_ok) merged[static_cast<size_t>(i)] = ls.b_label(t);
  }

  if (token_stage) *token_stage = stage;
  if (token_prob) {
    token_prob->assign(static_cast<size_t>(len), 0.0);
    for (int i = 0; i < len; ++i) {
      bool s1 = stage[static_cast<size_t>(i)] == 1;
      const Prediction& src = s1 ? p : p_plus;
      // Repaired B- keeps the probability mass of the underlying I- pick.
      int picked = s1 ? labels1[static_cast<size_t>(i)] : labels2[static_cast<size_t>(i)];
      (*token_prob)[static_cast<size_t>(i)] = src.at(i, picked);
    }
  }
  return merged;
}

TagResult tag(const std::vector<std::string>& tokens, const TagContext& ctx,
              const std::vector<int>* gold) {
  ctx.cfg.validate();
  check_config(ctx.params && ctx.vocab && ctx.labels && ctx.stopwords, "tag context incomplete");

  const KbIndex* labeled = ctx.cfg.use_labeled_kb ? ctx.labeled_index : nullptr;
  const KbIndex* unlabeled = ctx.cfg.use_unlabeled_kb ? ctx.unlabeled_index : nullptr;
  if (ctx.embedder != nullptr) {
    for (const KbIndex* idx : {labeled, unlabeled})
      check_config(idx == nullptr || idx->kb()->embed_fingerprint == ctx.embedder->fingerprint(),
                   "KB embedder fingerprint does not match the query embedder");
  }

  TagResult res;
  auto ids = ctx.vocab->encode(tokens);
  res.stage1 = first_stage(ids, *ctx.params, *ctx.labels, ctx.cfg, gold);

  std::vector<const KnowledgeEntry*> knowledge;
  if (ctx.cfg.m > 0 && (labeled != nullptr || unlabeled != nullptr) && ctx.embedder != nullptr) {
    auto token_vecs = ctx.embedder->embed_tokens(tokens);
    auto queries =
        build_queries(tokens, res.stage1.unconfident, token_vecs, ctx.cfg, *ctx.stopwords);
    for (const auto& q : queries)
      if (q.kind == Query::Kind::entity) ++res.num_entity_queries;
    if (!queries.empty()) {
      auto hits = gather_candidates(queries, ctx.cfg.m, labeled, unlabeled,
                                    ctx.exclude_labeled_id);
      res.retrieved = dedup_topm(std::move(hits), ctx.cfg.m);
      for (const auto& h : res.retrieved) {
        const UnstructuredKB* kb =
            h.kb_kind == KbKind::labeled ? labeled->kb() : unlabeled->kb();
        const KnowledgeEntry* e = kb->find(h.entry_id);
        check_data(e != nullptr, "retrieved entry missing from KB");
        knowledge.push_back(e);
      }
    }
  }

  if (knowledge.empty()) {
    res.p_plus = res.stage1.pred;  // no knowledge: stage 2 degenerates to stage 1
  } else {
    res.p_plus = second_stage(ids, knowledge, *ctx.params, *ctx.vocab);
  }
  res.labels = merge_outputs(res.stage1.pred, res.p_plus, res.stage1.entities,
                             res.stage1.unconfident, ctx.cfg, *ctx.labels, &res.token_stage,
                             &res.token_prob);
  return res;
}

std::vector<int> window_starts(int doc_len, int window_len, int stride) {
  check_config(window_len >= 1 && stride >= 1, "bad window shape");
  std::vector<int> starts{0};
  while (starts.back() + window_len < doc_len) starts.push_back(starts.back() + stride);
  return starts;
}

std::vector<int> merge_window_entities(int doc_len, const std::vector<WindowEntity>& found,
                                       const LabelSet& ls) {
  std::vector<WindowEntity> order = found;
  std::stable_sort(order.begin(), order.end(), [](const WindowEntity& a, const WindowEntity& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.window != b.window) return a.window < b.window;
    return a.span.start < b.span.start;
  });
  std::vector<int> out(static_cast<size_t>(doc_len), LabelSet::kOutside);
  std::vector<bool> taken(static_cast<size_t>(doc_len), false);
  for (const auto& we : order) {
    bool free = true;
    for (int i = we.span.start; i <= we.span.end && free; ++i)
      if (taken[static_cast<size_t>(i)]) free = false;
    if (!free) continue;
    out[static_cast<size_t>(we.span.start)] = ls.b_label(we.span.type);
    for (int i = we.span.start; i <= we.span.end; ++i) {
      taken[static_cast<size_t>(i)] = true;
      if (i > we.span.start) out[static_cast<size_t>(i)] = ls.i_label(we.span.type);
    }
  }
  return out;
}

std::vector<int> tag_document(const std::vector<std::string>& tokens, const TagContext& ctx) {
  int n = static_cast<int>(tokens.size());
  int L = ctx.params->cfg.max_len;
  if (n == 0) return {};

  std::vector<int> starts = window_starts(n, L, ctx.cfg.window_stride);

  std::vector<WindowEntity> found;
  std::vector<std::vector<int>> window_labels(starts.size());
  std::vector<std::vector<double>> window_probs(starts.size());

  for (size_t w = 0; w < starts.size(); ++w) {
    int s = starts[w];
    int e = std::min(n, s + L);
    std::vector<std::string> slice(tokens.begin() + s, tokens.begin() + e);
    TagResult r = tag(slice, ctx);
    window_labels[w] = r.labels;
    window_probs[w] = r.token_prob;
    for (auto span : decode_bio(r.labels, *ctx.labels)) {
      double conf = 1.0;
      for (int i = span.start; i <= span.end; ++i)
        conf = std::min(conf, r.token_prob[static_cast<size_t>(i)]);
      span.start += s;
      span.end += s;
      found.push_back({span, conf, static_cast<int>(w)});
    }
  }

  if (ctx.cfg.window_merge == WindowMerge::token_probability) {
    // Per token, the window with the highest emitted-label probability wins.
    std::vector<int> out(static_cast<size_t>(n), LabelSet::kOutside);
    std::vector<double> best(static_cast<size_t>(n), -1.0);
    for (size_t w = 0; w < starts.size(); ++w) {
      for (size_t i = 0; i < window_labels[w].size(); ++i) {
        size_t g = static_cast<size_t>(starts[w]) + i;
        if (window_probs[w][i] > best[g]) {
          best[g] = window_probs[w][i];
          out[g] = window_labels[w][i];
        }
      }
    }
    return repair_bio(out, *ctx.labels);
  }

  return merge_window_entities(n, found, *ctx.labels);
}

}  // namespace raner
