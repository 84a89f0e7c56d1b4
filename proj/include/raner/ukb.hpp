#pragma once

#include <string>
#include <unordered_set>
#include <vector>

#include "raner/conll.hpp"
#include "raner/encoder.hpp"
#include "raner/labels.hpp"
#include "raner/vocab.hpp"

namespace raner {

// Pinned English stopword list; shipped at data/stopwords.txt and mirrored
// here so library users need no data path. Matching is case-insensitive.
struct Stopwords {
  std::unordered_set<std::string> words;

  bool contains(const std::string& token) const;
  static Stopwords from_file(const std::string& path);
  static Stopwords builtin();
};

// Inclusive token span.
struct Span {
  int start = 0;
  int end = 0;
  int len() const { return end - start + 1; }
  bool operator==(const Span& o) const { return start == o.start && end == o.end; }
};

bool has_capital(const std::string& token);
std::string span_surface(const std::vector<std::string>& tokens, const Span& span);

struct NgramKey {
  Span span;
  std::vector<float> vec;  // 2d
};

struct KnowledgeEntry {
  int64_t id = 0;
  std::vector<std::string> tokens;
  std::vector<int> labels;  // empty for the unlabeled KB
  std::vector<float> sentence_key;
  std::vector<NgramKey> ngram_keys;
  std::string source;
};

enum class KbKind { labeled, unlabeled };

struct UnstructuredKB {
  KbKind kind = KbKind::unlabeled;
  int key_dim = 0;   // 2d
  int max_len = 0;   // L
  int ngram_max = 3;
  std::string filter_mode = "string-match";
  std::string embed_fingerprint;
  std::vector<std::string> label_types;  // labeled KB only
  std::vector<KnowledgeEntry> entries;

  const KnowledgeEntry* find(int64_t id) const;
};

// Splits a token stream into consecutive non-overlapping chunks of exactly L
// tokens, keeping a shorter final chunk.
std::vector<std::vector<std::string>> chunk_corpus(const std::vector<std::string>& corpus,
                                                   int L);

// Frozen encoder used for all KB keys and retrieval queries. Token vectors
// are the concatenation of the input embedding (context-free half) and the
// final-layer output (contextualized half): 2*d_model components.
struct FrozenEmbedder {
  const EncoderParams* params = nullptr;
  const Vocab* vocab = nullptr;

  int key_dim() const { return 2 * params->cfg.d_model; }
  std::string fingerprint() const { return params_fingerprint(*params); }
  std::vector<std::vector<double>> embed_tokens(const std::vector<std::string>& tokens) const;
};

// Arithmetic mean of the vectors over [start, end] (inclusive).
std::vector<double> pool_key(const std::vector<std::vector<double>>& vectors, int start,
                             int end);
inline std::vector<double> pool_key(const std::vector<std::vector<double>>& vectors) {
  return pool_key(vectors, 0, static_cast<int>(vectors.size()) - 1);
}

// All contiguous spans of length 1..n_max.
std::vector<Span> ngram_candidates(int len, int n_max);

// Keeps spans with no stopword token and at least one A-Z character.
std::vector<Span> surface_filter(const std::vector<std::string>& tokens,
                                 const std::vector<Span>& spans, const Stopwords& sw);

// Drops entries with no n-gram whose surface is in `allowed`; surviving
// entries keep only matching n-gram keys. Idempotent.
void string_match_filter(UnstructuredKB& kb, const std::unordered_set<std::string>& allowed);

// Surface strings of all filtered n-grams in the given sentences; the allowed
// set for string-match filtering (train split at training time, train+eval at
// inference time).
std::unordered_set<std::string> collect_allowed_ngrams(const std::vector<Sentence>& sentences,
                                                       int n_max, const Stopwords& sw);

struct KbBuildConfig {
  int L = 64;
  int ngram_max = 3;
  std::string filter_mode = "string-match";  // or "summarization"
  std::unordered_set<std::string> allowed_ngrams;
  double sum_alpha = 0.1;
  double sum_lambda_div = 10.0;
  int sum_n_max = 3;
  std::string source_tag;
};

UnstructuredKB build_kb_from_corpus(const std::vector<std::string>& corpus_tokens,
                                    const FrozenEmbedder& emb, const KbBuildConfig& cfg,
                                    const Stopwords& sw);

UnstructuredKB build_kb_from_labeled(const std::vector<Sentence>& sentences, const LabelSet& ls,
                                     const FrozenEmbedder& emb, const KbBuildConfig& cfg,
                                     const Stopwords& sw);

// KB directory format: manifest.json, entries.jsonl, vectors.bin (raw LE
// float32, per entry: sentence key then n-gram keys).
void save_kb(const std::string& dir, const UnstructuredKB& kb);
UnstructuredKB load_kb(const std::string& dir);

}  // namespace raner
