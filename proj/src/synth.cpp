#include "raner/synth.hpp"

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include "json.hpp"

namespace raner {

using json = nlohmann::json;

namespace {
const std::vector<std::string> kFillers = {
    "the",  "a",      "of",     "in",    "and",   "to",    "was",    "on",
    "for",  "with",   "near",   "from",  "at",    "it",    "this",   "report",
    "note", "story",  "letter", "thing", "place", "group", "record", "matter",
    "item", "detail", "piece",  "talk",  "visit", "part"};

struct WordGen {
  std::mt19937_64 rng;
  std::set<std::string> used;

  explicit WordGen(uint64_t seed) : rng(make_rng(seed, 31)) {}

  std::string syllable() {
    static const std::vector<std::string> onsets = {"b",  "br", "d",  "dr", "f",  "g",
                                                    "gl", "k",  "kr", "l",  "m",  "n",
                                                    "p",  "pl", "r",  "s",  "sk", "t",
                                                    "tr", "v",  "z",  "zh", "th", "sm"};
    static const std::vector<std::string> nuclei = {"a",  "e",  "i",  "o",  "u",
                                                    "ai", "ea", "io", "or", "ul"};
    std::uniform_int_distribution<size_t> po(0, onsets.size() - 1);
    std::uniform_int_distribution<size_t> pn(0, nuclei.size() - 1);
    return onsets[po(rng)] + nuclei[pn(rng)];
  }

  std::string word(bool capitalize) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      std::uniform_int_distribution<int> ns(2, 3);
      std::string w;
      int n = ns(rng);
      for (int i = 0; i < n; ++i) w += syllable();
      if (capitalize) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
      if (used.insert(w).second) return w;
    }
    throw numeric_error("word generator exhausted");
  }
};

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string t;
  while (in >> t) out.push_back(t);
  return out;
}
}  // namespace

SynthData generate_synthetic(const SynthConfig& cfg) {
  check_config(cfg.num_types >= 2 && cfg.train_surfaces >= cfg.num_types &&
                   cfg.kb_only_surfaces >= cfg.num_types,
               "synthetic config too small");
  SynthData data;
  data.cfg = cfg;

  WordGen words(cfg.seed);
  auto rng = make_rng(cfg.seed, 32);
  std::uniform_int_distribution<size_t> pick_filler(0, kFillers.size() - 1);
  auto filler = [&]() { return kFillers[pick_filler(rng)]; };

  // Task label set.
  std::vector<std::string> type_names;
  for (int t = 0; t < cfg.num_types; ++t) {
    std::string n = words.word(false);
    for (auto& c : n) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    type_names.push_back(n);
  }
  data.task_labels = LabelSet(type_names);

  // Keywords: lowercase context words that reveal a type inside KB chunks.
  std::vector<std::vector<std::string>> keywords(static_cast<size_t>(cfg.num_types));
  for (int t = 0; t < cfg.num_types; ++t)
    for (int k = 0; k < cfg.keywords_per_type; ++k)
      keywords[static_cast<size_t>(t)].push_back(words.word(false));

  // Entity surfaces; about a quarter are two-token. Types round-robin so the
  // assignment is balanced and independent of the surface shape.
  int total_surfaces = cfg.train_surfaces + cfg.kb_only_surfaces;
  std::vector<std::string> surfaces;
  std::vector<int> surface_type;
  for (int i = 0; i < total_surfaces; ++i) {
    std::string s = words.word(true);
    if (i % 4 == 3) s += " " + words.word(true);
    surfaces.push_back(s);
    surface_type.push_back(i % cfg.num_types);
  }
  std::shuffle(surfaces.begin(), surfaces.end(), rng);  // decouple shape from type

  for (int i = 0; i < cfg.train_surfaces; ++i)
    data.train_surface_list.push_back(surfaces[static_cast<size_t>(i)]);
  for (int i = cfg.train_surfaces; i < total_surfaces; ++i)
    data.kb_only_surface_list.push_back(surfaces[static_cast<size_t>(i)]);

  auto type_of_surface = [&](int idx) { return surface_type[static_cast<size_t>(idx)]; };

  // Neutral sentence with the given surfaces; filler context only.
  auto make_sentence = [&](const std::vector<int>& surface_idx) {
    Sentence s;
    std::uniform_int_distribution<int> lead(1, 3);
    for (const int idx : surface_idx) {
      for (int f = lead(rng); f > 0; --f) {
        s.tokens.push_back(filler());
        s.labels.push_back(LabelSet::kOutside);
      }
      auto toks = split_ws(surfaces[static_cast<size_t>(idx)]);
      int t = type_of_surface(idx);
      for (size_t j = 0; j < toks.size(); ++j) {
        s.tokens.push_back(toks[j]);
        s.labels.push_back(j == 0 ? data.task_labels.b_label(t) : data.task_labels.i_label(t));
      }
    }
    for (int f = lead(rng); f > 0; --f) {
      s.tokens.push_back(filler());
      s.labels.push_back(LabelSet::kOutside);
    }
    while (static_cast<int>(s.tokens.size()) > cfg.L) {  // safety at small L
      s.tokens.pop_back();
      s.labels.pop_back();
    }
    return s;
  };

  // Training split: each train surface once alone and once paired.
  for (int i = 0; i < cfg.train_surfaces; ++i) data.train.push_back(make_sentence({i}));
  for (int i = 0; i + 1 < cfg.train_surfaces; i += 2)
    data.train.push_back(make_sentence({i, i + 1}));
  std::shuffle(data.train.begin(), data.train.end(), rng);

  // Dev: single-entity sentences over train surfaces.
  for (int i = 0; i < cfg.dev_sentences; ++i)
    data.dev.push_back(make_sentence({i % cfg.train_surfaces}));

  // Test: paired KB-only surfaces (group 0) and paired train surfaces (group 1).
  for (int i = 0; i + 1 < cfg.kb_only_surfaces; i += 2) {
    data.test.push_back(make_sentence({cfg.train_surfaces + i, cfg.train_surfaces + i + 1}));
    data.test_group.push_back(0);
  }
  for (int i = 0; i + 1 < cfg.train_surfaces; i += 2) {
    data.test.push_back(make_sentence({i, i + 1}));
    data.test_group.push_back(1);
  }

  // Unlabeled KB corpus: chunk-aligned, keywords disclose the type. Covered
  // surfaces are every KB-only surface plus the first share of train ones.
  int covered_train = static_cast<int>(cfg.kb_coverage_train * cfg.train_surfaces);
  std::vector<int> covered;
  for (int i = 0; i < covered_train; ++i) covered.push_back(i);
  for (int i = cfg.train_surfaces; i < total_surfaces; ++i) covered.push_back(i);

  auto emit_chunk = [&](const std::vector<std::string>& body) {
    std::vector<std::string> chunk = body;
    while (static_cast<int>(chunk.size()) < cfg.L) chunk.push_back(filler());
    chunk.resize(static_cast<size_t>(cfg.L));
    data.kb_corpus.insert(data.kb_corpus.end(), chunk.begin(), chunk.end());
  };

  for (int idx : covered) {
    int t = type_of_surface(idx);
    auto toks = split_ws(surfaces[static_cast<size_t>(idx)]);
    const auto& kw = keywords[static_cast<size_t>(t)];
    for (int c = 0; c < cfg.kb_chunks_per_surface; ++c) {
      std::vector<std::string> body;
      body.push_back(filler());
      if (c % 2 == 0) {
        body.insert(body.end(), toks.begin(), toks.end());
        body.push_back(kw[0]);
        body.push_back(filler());
        body.push_back(kw[1 % kw.size()]);
      } else {
        body.push_back(kw[c % kw.size()]);
        body.insert(body.end(), toks.begin(), toks.end());
        body.push_back(filler());
        body.push_back(kw[(c + 1) % kw.size()]);
      }
      emit_chunk(body);
    }
  }
  for (int i = 0; i < cfg.kb_distractor_chunks; ++i) emit_chunk({filler(), filler()});

  // Pre-training corpus: its own typed surfaces plus the benchmark surfaces
  // pseudo-labeled with the catch-all ENTITY type, so pre-training teaches
  // span detection without leaking benchmark types.
  std::vector<std::string> pre_types;
  for (int t = 0; t < cfg.pretrain_types; ++t) {
    std::string n = words.word(false);
    for (auto& c : n) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    pre_types.push_back(n);
  }
  pre_types.push_back("ENTITY");
  data.pretrain_labels = LabelSet(pre_types);
  int entity_type = data.pretrain_labels.find_type("ENTITY");

  std::vector<std::string> pre_surfaces;
  std::vector<int> pre_surface_type;
  for (int i = 0; i < cfg.pretrain_surfaces; ++i) {
    pre_surfaces.push_back(words.word(true));
    pre_surface_type.push_back(i % cfg.pretrain_types);
  }

  std::uniform_int_distribution<int> pick_pre(0, cfg.pretrain_surfaces - 1);
  std::uniform_int_distribution<int> pick_bench(0, total_surfaces - 1);
  std::uniform_int_distribution<int> bench_count(0, 2);
  for (int i = 0; i < cfg.pretrain_examples; ++i) {
    PretrainExample ex;
    auto add_filler = [&](int n) {
      for (int f = 0; f < n; ++f) {
        ex.tokens.push_back(filler());
        ex.labels.push_back(LabelSet::kOutside);
      }
    };
    auto add_mention = [&](const std::string& surface, int type) {
      auto toks = split_ws(surface);
      for (size_t j = 0; j < toks.size(); ++j) {
        ex.tokens.push_back(toks[j]);
        ex.labels.push_back(j == 0 ? data.pretrain_labels.b_label(type)
                                   : data.pretrain_labels.i_label(type));
      }
      ex.entities.push_back(surface);
    };
    std::uniform_int_distribution<int> lead(1, 2);
    add_filler(lead(rng));
    // Always at least one typed entity so ENTITY-only down-sampling keeps it.
    int p = i % cfg.pretrain_surfaces;
    add_mention(pre_surfaces[static_cast<size_t>(p)], pre_surface_type[static_cast<size_t>(p)]);
    int nb = bench_count(rng);
    if (i < 2 * total_surfaces) nb = std::max(nb, 1);
    for (int bcount = 0; bcount < nb; ++bcount) {
      add_filler(lead(rng));
      // Sweep benchmark surfaces first so every one is seen, then random.
      int bidx = (i < 2 * total_surfaces) ? (i % total_surfaces) : pick_bench(rng);
      if (bcount > 0) bidx = pick_bench(rng);
      add_mention(surfaces[static_cast<size_t>(bidx)], entity_type);
    }
    add_filler(lead(rng));
    if (static_cast<int>(ex.tokens.size()) > cfg.L) {
      ex.tokens.resize(static_cast<size_t>(cfg.L));
      ex.labels.resize(static_cast<size_t>(cfg.L));
    }
    data.pretrain.push_back(std::move(ex));
  }

  return data;
}

void save_synthetic(const std::string& dir, const SynthData& data) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_conll((fs::path(dir) / "train.conll").string(), data.train, data.task_labels);
  write_conll((fs::path(dir) / "dev.conll").string(), data.dev, data.task_labels);
  write_conll((fs::path(dir) / "test.conll").string(), data.test, data.task_labels);

  std::ostringstream kb;
  for (size_t i = 0; i < data.kb_corpus.size(); ++i) {
    kb << data.kb_corpus[i];
    kb << (((i + 1) % static_cast<size_t>(data.cfg.L)) == 0 ? '\n' : ' ');
  }
  write_text_file((fs::path(dir) / "kb_corpus.txt").string(), kb.str());

  write_pretrain_corpus((fs::path(dir) / "pretrain.jsonl").string(), data.pretrain,
                        data.pretrain_labels);

  json meta;
  meta["task_types"] = data.task_labels.types;
  meta["pretrain_types"] = data.pretrain_labels.types;
  meta["train_surfaces"] = data.train_surface_list;
  meta["kb_only_surfaces"] = data.kb_only_surface_list;
  meta["test_group"] = data.test_group;
  meta["L"] = data.cfg.L;
  meta["seed"] = data.cfg.seed;
  write_text_file((fs::path(dir) / "meta.json").string(), meta.dump(2) + "\n");
}

}  // namespace raner
