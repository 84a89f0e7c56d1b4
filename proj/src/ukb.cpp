#include "raner/ukb.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "raner/summarize.hpp"

namespace raner {

using json = nlohmann::json;

namespace {
// Mirror of data/stopwords.txt; a unit test keeps them in sync.
constexpr const char* kBuiltinStopwords =
    "a about above after again against all am an and any are aren't as at be because been "
    "before being below between both but by can cannot could couldn't did didn't do does "
    "doesn't doing don't down during each few for from further had hadn't has hasn't have "
    "haven't having he he'd he'll he's her here here's hers herself him himself his how how's "
    "i i'd i'll i'm i've if in into is isn't it it's its itself let's me more most mustn't my "
    "myself no nor not of off on once only or other ought our ours ourselves out over own "
    "same shan't she she'd she'll she's should shouldn't so some such than that that's the "
    "their theirs them themselves then there there's these they they'd they'll they're "
    "they've this those through to too under until up very was wasn't we we'd we'll we're "
    "we've were weren't what what's when when's where where's which while who who's whom why "
    "why's with won't would wouldn't you you'd you'll you're you've your yours yourself "
    "yourselves";

std::string lower(const std::string& s) {
  std::string out = s;
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}
}  // namespace

bool Stopwords::contains(const std::string& token) const {
  return words.count(lower(token)) > 0;
}

Stopwords Stopwords::from_file(const std::string& path) {
  Stopwords sw;
  std::istringstream in(read_text_file(path));
  std::string w;
  while (in >> w) sw.words.insert(lower(w));
  check_data(!sw.words.empty(), "empty stopword list: " + path);
  return sw;
}

Stopwords Stopwords::builtin() {
  Stopwords sw;
  std::istringstream in(kBuiltinStopwords);
  std::string w;
  while (in >> w) sw.words.insert(w);
  return sw;
}

bool has_capital(const std::string& token) {
  for (char c : token)
    if (c >= 'A' && c <= 'Z') return true;
  return false;
}

std::string span_surface(const std::vector<std::string>& tokens, const Span& span) {
  std::string out;
  for (int i = span.start; i <= span.end; ++i) {
    if (!out.empty()) out += ' ';
    out += tokens[static_cast<size_t>(i)];
  }
  return out;
}

const KnowledgeEntry* UnstructuredKB::find(int64_t id) const {
  for (const auto& e : entries)
    if (e.id == id) return &e;
  return nullptr;
}

std::vector<std::vector<std::string>> chunk_corpus(const std::vector<std::string>& corpus,
                                                   int L) {
  check_config(L >= 1, "chunk length must be >= 1");
  std::vector<std::vector<std::string>> chunks;
  for (size_t i = 0; i < corpus.size(); i += static_cast<size_t>(L)) {
    size_t end = std::min(corpus.size(), i + static_cast<size_t>(L));
    chunks.emplace_back(corpus.begin() + static_cast<long>(i),
                        corpus.begin() + static_cast<long>(end));
  }
  return chunks;
}

std::vector<std::vector<double>> FrozenEmbedder::embed_tokens(
    const std::vector<std::string>& tokens) const {
  check_data(!tokens.empty(), "cannot embed an empty chunk");
  check_data(static_cast<int>(tokens.size()) <= params->cfg.max_len,
             "chunk longer than embedder max length");
  GridRow row;
  row.tokens = vocab->encode(tokens);
  row.token_types.assign(tokens.size(), 0);
  ForwardCache cache;
  forward_logits(*params, {row}, cache);

  int d = params->cfg.d_model;
  std::vector<std::vector<double>> out(tokens.size(), std::vector<double>(2 * d));
  for (size_t i = 0; i < tokens.size(); ++i) {
    const double* ctx = cache.hf.row(static_cast<int>(i));
    const double* cf = params->tok_emb.row(row.tokens[i]);
    for (int j = 0; j < d; ++j) {
      out[i][static_cast<size_t>(j)] = cf[j];
      out[i][static_cast<size_t>(d + j)] = ctx[j];
    }
  }
  return out;
}

std::vector<double> pool_key(const std::vector<std::vector<double>>& vectors, int start,
                             int end) {
  check_data(start >= 0 && start <= end && end < static_cast<int>(vectors.size()),
             "empty or out-of-bounds pooling span");
  std::vector<double> out(vectors[static_cast<size_t>(start)].size(), 0.0);
  for (int i = start; i <= end; ++i)
    for (size_t j = 0; j < out.size(); ++j) out[j] += vectors[static_cast<size_t>(i)][j];
  double inv = 1.0 / (end - start + 1);
  for (auto& x : out) x *= inv;
  return out;
}

std::vector<Span> ngram_candidates(int len, int n_max) {
  check_config(n_max >= 1, "n_max must be >= 1");
  std::vector<Span> out;
  for (int n = 1; n <= n_max; ++n)
    for (int s = 0; s + n <= len; ++s) out.push_back({s, s + n - 1});
  return out;
}

std::vector<Span> surface_filter(const std::vector<std::string>& tokens,
                                 const std::vector<Span>& spans, const Stopwords& sw) {
  std::vector<Span> out;
  for (const auto& span : spans) {
    bool ok = true, capital = false;
    for (int i = span.start; i <= span.end && ok; ++i) {
      const auto& tok = tokens[static_cast<size_t>(i)];
      if (sw.contains(tok)) ok = false;
      if (has_capital(tok)) capital = true;
    }
    if (ok && capital) out.push_back(span);
  }
  return out;
}

void string_match_filter(UnstructuredKB& kb, const std::unordered_set<std::string>& allowed) {
  std::vector<KnowledgeEntry> kept;
  for (auto& e : kb.entries) {
    std::vector<NgramKey> keys;
    for (auto& k : e.ngram_keys)
      if (allowed.count(span_surface(e.tokens, k.span))) keys.push_back(std::move(k));
    if (keys.empty()) continue;
    e.ngram_keys = std::move(keys);
    kept.push_back(std::move(e));
  }
  kb.entries = std::move(kept);
}

std::unordered_set<std::string> collect_allowed_ngrams(const std::vector<Sentence>& sentences,
                                                       int n_max, const Stopwords& sw) {
  std::unordered_set<std::string> allowed;
  for (const auto& s : sentences) {
    auto spans = surface_filter(s.tokens, ngram_candidates(static_cast<int>(s.tokens.size()), n_max), sw);
    for (const auto& span : spans) allowed.insert(span_surface(s.tokens, span));
  }
  return allowed;
}

namespace {
KnowledgeEntry make_entry(int64_t id, const std::vector<std::string>& tokens,
                          const std::vector<int>& labels, const FrozenEmbedder& emb,
                          const KbBuildConfig& cfg, const Stopwords& sw) {
  KnowledgeEntry e;
  e.id = id;
  e.tokens = tokens;
  e.labels = labels;
  e.source = cfg.source_tag;

  auto vecs = emb.embed_tokens(tokens);
  e.sentence_key = to_f32(pool_key(vecs));

  auto candidates =
      surface_filter(tokens, ngram_candidates(static_cast<int>(tokens.size()), cfg.ngram_max), sw);
  std::vector<Span> spans;
  if (cfg.filter_mode == "summarization") {
    spans = summarization_filter(tokens, vecs, candidates, sw, cfg.ngram_max, cfg.sum_alpha,
                                 cfg.sum_lambda_div, cfg.sum_n_max);
  } else {
    check_config(cfg.filter_mode == "string-match", "unknown filter mode: " + cfg.filter_mode);
    spans = candidates;  // reduced against the allowed set after assembly
  }
  for (const auto& span : spans)
    e.ngram_keys.push_back({span, to_f32(pool_key(vecs, span.start, span.end))});
  return e;
}
}  // namespace

UnstructuredKB build_kb_from_corpus(const std::vector<std::string>& corpus_tokens,
                                    const FrozenEmbedder& emb, const KbBuildConfig& cfg,
                                    const Stopwords& sw) {
  UnstructuredKB kb;
  kb.kind = KbKind::unlabeled;
  kb.key_dim = emb.key_dim();
  kb.max_len = cfg.L;
  kb.ngram_max = cfg.ngram_max;
  kb.filter_mode = cfg.filter_mode;
  kb.embed_fingerprint = emb.fingerprint();

  int64_t id = 0;
  for (const auto& chunk : chunk_corpus(corpus_tokens, cfg.L))
    kb.entries.push_back(make_entry(id++, chunk, {}, emb, cfg, sw));
  if (cfg.filter_mode == "string-match") string_match_filter(kb, cfg.allowed_ngrams);
  return kb;
}

UnstructuredKB build_kb_from_labeled(const std::vector<Sentence>& sentences, const LabelSet& ls,
                                     const FrozenEmbedder& emb, const KbBuildConfig& cfg,
                                     const Stopwords& sw) {
  UnstructuredKB kb;
  kb.kind = KbKind::labeled;
  kb.key_dim = emb.key_dim();
  kb.max_len = cfg.L;
  kb.ngram_max = cfg.ngram_max;
  kb.filter_mode = cfg.filter_mode;
  kb.embed_fingerprint = emb.fingerprint();
  kb.label_types = ls.types;

  int64_t id = 0;
  for (const auto& sent : sentences) {
    check_data(sent.labels.size() == sent.tokens.size(),
               "labeled KB source sentence without aligned labels");
    // Sentences longer than L are split; labels stay aligned with tokens.
    for (size_t off = 0; off < sent.tokens.size(); off += static_cast<size_t>(cfg.L)) {
      size_t end = std::min(sent.tokens.size(), off + static_cast<size_t>(cfg.L));
      std::vector<std::string> toks(sent.tokens.begin() + static_cast<long>(off),
                                    sent.tokens.begin() + static_cast<long>(end));
      std::vector<int> labels(sent.labels.begin() + static_cast<long>(off),
                              sent.labels.begin() + static_cast<long>(end));
      kb.entries.push_back(make_entry(id++, toks, labels, emb, cfg, sw));
    }
  }
  if (cfg.filter_mode == "string-match") string_match_filter(kb, cfg.allowed_ngrams);
  return kb;
}

void save_kb(const std::string& dir, const UnstructuredKB& kb) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  std::vector<float> vectors;
  std::ostringstream entries;
  size_t total_keys = 0;
  for (const auto& e : kb.entries) {
    json line;
    line["id"] = e.id;
    line["tokens"] = e.tokens;
    if (!e.labels.empty()) line["labels"] = e.labels;
    json spans = json::array();
    for (const auto& k : e.ngram_keys) spans.push_back({k.span.start, k.span.end});
    line["ngrams"] = spans;
    line["source"] = e.source;
    entries << line.dump() << '\n';

    vectors.insert(vectors.end(), e.sentence_key.begin(), e.sentence_key.end());
    for (const auto& k : e.ngram_keys) vectors.insert(vectors.end(), k.vec.begin(), k.vec.end());
    total_keys += 1 + e.ngram_keys.size();
  }
  write_text_file((fs::path(dir) / "entries.jsonl").string(), entries.str());
  save_f32_file((fs::path(dir) / "vectors.bin").string(), vectors);

  json manifest;
  manifest["format"] = "raner-kb-v1";
  manifest["kind"] = kb.kind == KbKind::labeled ? "labeled" : "unlabeled";
  manifest["L"] = kb.max_len;
  manifest["key_dim"] = kb.key_dim;
  manifest["n"] = kb.ngram_max;
  manifest["filter_mode"] = kb.filter_mode;
  manifest["embedder_fingerprint"] = kb.embed_fingerprint;
  manifest["entry_count"] = kb.entries.size();
  manifest["key_count"] = total_keys;
  manifest["vector_layout"] = "per entry: sentence key then ngram keys, float32 LE";
  if (!kb.label_types.empty()) manifest["label_types"] = kb.label_types;
  write_text_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

UnstructuredKB load_kb(const std::string& dir) {
  namespace fs = std::filesystem;
  json manifest;
  try {
    manifest = json::parse(read_text_file((fs::path(dir) / "manifest.json").string()));
  } catch (const json::exception& e) {
    throw data_error("bad KB manifest in " + dir + ": " + e.what());
  }
  check_data(manifest.value("format", "") == "raner-kb-v1", "not a KB directory: " + dir);

  UnstructuredKB kb;
  kb.kind = manifest.at("kind") == "labeled" ? KbKind::labeled : KbKind::unlabeled;
  kb.max_len = manifest.at("L");
  kb.key_dim = manifest.at("key_dim");
  kb.ngram_max = manifest.at("n");
  kb.filter_mode = manifest.at("filter_mode");
  kb.embed_fingerprint = manifest.at("embedder_fingerprint");
  if (manifest.contains("label_types"))
    kb.label_types = manifest["label_types"].get<std::vector<std::string>>();

  auto vectors = load_f32_file((fs::path(dir) / "vectors.bin").string());
  size_t off = 0;
  auto take = [&](size_t n) {
    check_data(off + n <= vectors.size(), "vectors.bin too short in " + dir);
    std::vector<float> v(vectors.begin() + static_cast<long>(off),
                         vectors.begin() + static_cast<long>(off + n));
    off += n;
    return v;
  };

  std::istringstream in(read_text_file((fs::path(dir) / "entries.jsonl").string()));
  std::string line;
  std::unordered_set<int64_t> ids;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    KnowledgeEntry e;
    e.id = j.at("id");
    check_data(ids.insert(e.id).second, "duplicate entry id in " + dir);
    e.tokens = j.at("tokens").get<std::vector<std::string>>();
    if (j.contains("labels")) e.labels = j["labels"].get<std::vector<int>>();
    check_data(e.labels.empty() == (kb.kind == KbKind::unlabeled),
               "entry labels must match KB kind in " + dir);
    e.source = j.value("source", "");
    e.sentence_key = take(static_cast<size_t>(kb.key_dim));
    for (const auto& s : j.at("ngrams")) {
      NgramKey k;
      k.span = {s[0].get<int>(), s[1].get<int>()};
      check_data(k.span.start >= 0 && k.span.start <= k.span.end &&
                     k.span.end < static_cast<int>(e.tokens.size()),
                 "ngram span out of bounds in " + dir);
      k.vec = take(static_cast<size_t>(kb.key_dim));
      e.ngram_keys.push_back(std::move(k));
    }
    kb.entries.push_back(std::move(e));
  }
  check_data(off == vectors.size(), "vectors.bin has trailing data in " + dir);
  check_data(kb.entries.size() == manifest.at("entry_count").get<size_t>(),
             "entry count mismatch in " + dir);
  return kb;
}

}  // namespace raner
