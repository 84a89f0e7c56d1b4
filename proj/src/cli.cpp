#include "raner/cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "raner/conll.hpp"
#include "raner/encoder.hpp"
#include "raner/index.hpp"
#include "raner/summarize.hpp"
#include "raner/synth.hpp"
#include "raner/tagger.hpp"
#include "raner/trainer.hpp"
#include "raner/ukb.hpp"
#include "raner/util.hpp"

namespace raner {

using json = nlohmann::json;
namespace fs = std::filesystem;

LabelSet label_set_from_conll(const std::string& path) {
  auto types = scan_conll_types(path);
  std::sort(types.begin(), types.end());
  return LabelSet(types);
}

namespace {

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

void write_manifest(const std::string& path, json manifest, const Timer& timer) {
  manifest["wall_seconds"] = timer.seconds();
  manifest["threads"] = worker_threads();
  write_text_file(path, manifest.dump(2) + "\n");
}

Stopwords load_stopwords(const std::string& path) {
  return path.empty() ? Stopwords::builtin() : Stopwords::from_file(path);
}

std::vector<std::string> read_token_stream(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::vector<std::string> tokens;
  std::string t;
  while (in >> t) tokens.push_back(t);
  return tokens;
}

// Entity surface inventory from a file: .conll uses gold spans, .jsonl the
// entities field, anything else one surface per line.
std::vector<std::string> read_surface_inventory(const std::string& path) {
  if (path.ends_with(".conll")) {
    LabelSet ls = label_set_from_conll(path);
    return entity_surfaces(read_conll(path, ls), ls);
  }
  if (path.ends_with(".jsonl")) {
    std::istringstream in(read_text_file(path));
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      if (j.contains("entities"))
        for (const auto& e : j["entities"]) out.push_back(e.get<std::string>());
    }
    return out;
  }
  std::istringstream in(read_text_file(path));
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

// ---- shared tagging environment ----------------------------------------

struct TagEnv {
  Checkpoint ckpt;
  Checkpoint embed_ckpt;
  bool has_embedder = false;
  std::optional<UnstructuredKB> labeled_kb, unlabeled_kb;
  std::optional<KbIndex> labeled_idx, unlabeled_idx;
  Stopwords stopwords;
  FrozenEmbedder embedder;

  TagContext context(const TagConfig& cfg) const {
    TagContext ctx;
    ctx.params = &ckpt.params;
    ctx.vocab = &ckpt.vocab;
    ctx.labels = &ckpt.labels;
    ctx.embedder = has_embedder ? &embedder : nullptr;
    ctx.labeled_index = labeled_idx ? &*labeled_idx : nullptr;
    ctx.unlabeled_index = unlabeled_idx ? &*unlabeled_idx : nullptr;
    ctx.stopwords = &stopwords;
    ctx.cfg = cfg;
    return ctx;
  }
};

TagEnv load_tag_env(const std::string& checkpoint, const std::string& labeled_dir,
                    const std::string& unlabeled_dir, const std::string& embedder_path,
                    Metric metric, const std::string& stopword_path) {
  TagEnv env;
  env.ckpt = load_checkpoint(checkpoint);
  env.stopwords = load_stopwords(stopword_path);
  if (!labeled_dir.empty()) {
    env.labeled_kb = load_kb(labeled_dir);
    check_data(env.labeled_kb->kind == KbKind::labeled, labeled_dir + " is not a labeled KB");
    check_config(env.labeled_kb->label_types == env.ckpt.labels.types,
                 "labeled KB label set does not match the checkpoint");
  }
  if (!unlabeled_dir.empty()) {
    env.unlabeled_kb = load_kb(unlabeled_dir);
    check_data(env.unlabeled_kb->kind == KbKind::unlabeled,
               unlabeled_dir + " is not an unlabeled KB");
  }
  if (env.labeled_kb || env.unlabeled_kb) {
    check_config(!embedder_path.empty(), "KBs require --embedder (the frozen key encoder)");
    env.embed_ckpt = load_checkpoint(embedder_path);
    env.embedder.params = &env.embed_ckpt.params;
    env.embedder.vocab = &env.embed_ckpt.vocab;
    env.has_embedder = true;
    std::string fp = env.embedder.fingerprint();
    for (const auto& kb : {&env.labeled_kb, &env.unlabeled_kb})
      if (kb->has_value())
        check_config((*kb)->embed_fingerprint == fp,
                     "KB was built with a different embedder (fingerprint mismatch)");
    if (env.labeled_kb) env.labeled_idx.emplace(*env.labeled_kb, metric);
    if (env.unlabeled_kb) env.unlabeled_idx.emplace(*env.unlabeled_kb, metric);
  }
  return env;
}

// ---- gen-synth -----------------------------------------------------------

int cmd_gen_synth(const std::string& out_dir, const SynthConfig& cfg) {
  Timer timer;
  auto data = generate_synthetic(cfg);
  save_synthetic(out_dir, data);
  std::cout << "synthetic benchmark written to " << out_dir << "\n"
            << "  types " << cfg.num_types << ", train surfaces " << cfg.train_surfaces
            << ", kb-only surfaces " << cfg.kb_only_surfaces << "\n"
            << "  train " << data.train.size() << ", dev " << data.dev.size() << ", test "
            << data.test.size() << " sentences, kb chunks "
            << data.kb_corpus.size() / static_cast<size_t>(cfg.L) << ", pretrain "
            << data.pretrain.size() << " examples\n";
  json manifest{{"command", "gen-synth"},
                {"out", out_dir},
                {"seed", cfg.seed},
                {"types", cfg.num_types},
                {"train_surfaces", cfg.train_surfaces},
                {"kb_only_surfaces", cfg.kb_only_surfaces},
                {"L", cfg.L}};
  write_manifest((fs::path(out_dir) / "run_manifest.json").string(), manifest, timer);
  return 0;
}

// ---- build-kb ------------------------------------------------------------

struct BuildKbOpts {
  std::string input, out_dir, embedder_path, stopword_path;
  bool labeled = false;
  std::string filter = "string-match";
  std::vector<std::string> split_vocab;
  int L = 64;
  int n = 3;
  double alpha = 0.1;
  double lambda_div = 10.0;
  int n_max_keys = 3;
};

int cmd_build_kb(const BuildKbOpts& o) {
  Timer timer;
  Checkpoint embed_ckpt = load_checkpoint(o.embedder_path);
  FrozenEmbedder emb{&embed_ckpt.params, &embed_ckpt.vocab};
  Stopwords sw = load_stopwords(o.stopword_path);

  KbBuildConfig cfg;
  cfg.L = o.L;
  cfg.ngram_max = o.n;
  cfg.filter_mode = o.filter;
  cfg.sum_alpha = o.alpha;
  cfg.sum_lambda_div = o.lambda_div;
  cfg.sum_n_max = o.n_max_keys;
  cfg.source_tag = fs::path(o.input).filename().string();
  check_config(o.L <= embed_ckpt.params.cfg.max_len,
               "--L exceeds the embedder maximum length");

  if (o.filter == "string-match") {
    check_config(!o.split_vocab.empty(),
                 "--filter string-match requires --split-vocab (train or train+eval files)");
    for (const auto& path : o.split_vocab) {
      LabelSet ls = label_set_from_conll(path);
      auto allowed = collect_allowed_ngrams(read_conll(path, ls), o.n, sw);
      cfg.allowed_ngrams.insert(allowed.begin(), allowed.end());
    }
  }

  UnstructuredKB kb;
  if (o.labeled) {
    LabelSet ls = label_set_from_conll(o.input);
    kb = build_kb_from_labeled(read_conll(o.input, ls), ls, emb, cfg, sw);
  } else {
    kb = build_kb_from_corpus(read_token_stream(o.input), emb, cfg, sw);
  }
  save_kb(o.out_dir, kb);

  size_t keys = 0;
  for (const auto& e : kb.entries) keys += e.ngram_keys.size();
  std::cout << "KB written to " << o.out_dir << ": " << kb.entries.size() << " entries, "
            << keys << " n-gram keys, key dim " << kb.key_dim << "\n";

  json manifest{{"command", "build-kb"},
                {"input", o.input},
                {"out", o.out_dir},
                {"labeled", o.labeled},
                {"filter", o.filter},
                {"split_vocab", o.split_vocab},
                {"L", o.L},
                {"n", o.n},
                {"embedder", o.embedder_path},
                {"embedder_fingerprint", kb.embed_fingerprint},
                {"entries", kb.entries.size()},
                {"ngram_keys", keys}};
  write_manifest((fs::path(o.out_dir) / "run_manifest.json").string(), manifest, timer);
  return 0;
}

// ---- pretrain --------------------------------------------------------------

struct PretrainOpts {
  std::string data, out;
  std::vector<std::string> vocab_extra;
  PretrainConfig cfg;
  int d_model = 64, layers = 2, heads = 4, ffn = 128, L = 64, max_m = 10;
  bool no_downsample = false;
};

int cmd_pretrain(const PretrainOpts& o) {
  Timer timer;

  // Pre-training label set from the data; ids sorted for stability.
  std::set<std::string> type_names;
  {
    std::istringstream in(read_text_file(o.data));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      for (const auto& t : j.at("labels")) {
        std::string tag = t.get<std::string>();
        if (tag.size() > 2 && tag[1] == '-') type_names.insert(tag.substr(2));
      }
    }
  }
  LabelSet pre_labels(std::vector<std::string>(type_names.begin(), type_names.end()));
  check_data(pre_labels.find_type("ENTITY") >= 0,
             "pre-training data must use the special ENTITY type");

  auto corpus = read_pretrain_corpus(o.data, pre_labels);
  if (!o.no_downsample) {
    auto rng = make_rng(o.cfg.seed, /*stream=*/41);
    size_t before = corpus.size();
    corpus = downsample_entity_only(corpus, pre_labels, pre_labels.find_type("ENTITY"),
                                    o.cfg.top_k_frequent, rng);
    std::cout << "down-sampling kept " << corpus.size() << "/" << before << " sequences\n";
  }

  std::vector<std::vector<std::string>> vocab_corpus;
  for (const auto& ex : corpus) vocab_corpus.push_back(ex.tokens);
  for (const auto& path : o.vocab_extra) vocab_corpus.push_back(read_token_stream(path));
  Vocab vocab = Vocab::build(vocab_corpus);

  EncoderConfig ecfg;
  ecfg.d_model = o.d_model;
  ecfg.layers = o.layers;
  ecfg.heads = o.heads;
  ecfg.ffn_dim = o.ffn;
  ecfg.vocab_size = vocab.size();
  ecfg.max_len = o.L;
  ecfg.max_knowledge = o.max_m;
  ecfg.num_labels = pre_labels.num_labels();
  ecfg.token_type_count = 2 * pre_labels.num_types() + 3;
  ecfg.dropout = o.cfg.dropout;

  EncoderParams params = EncoderParams::init(ecfg, o.cfg.seed);
  auto stats = pretrain(params, corpus, pre_labels, vocab, o.cfg);

  Checkpoint ckpt{std::move(params), std::move(vocab), pre_labels,
                  json{{"role", "pretrained"}}.dump()};
  save_checkpoint(o.out, ckpt);

  double last = stats.step_loss.empty() ? 0.0 : stats.step_loss.back();
  std::cout << "pretrained " << o.cfg.steps << " steps, final loss " << last << ", saved "
            << o.out << "\n";
  json manifest{{"command", "pretrain"},
                {"data", o.data},
                {"out", o.out},
                {"seed", o.cfg.seed},
                {"steps", o.cfg.steps},
                {"batch_size", o.cfg.batch_size},
                {"m", o.cfg.m},
                {"lr", o.cfg.lr},
                {"label_deletion_prob", o.cfg.label_deletion_prob},
                {"sampling_exponent", o.cfg.sampling_exponent},
                {"d_model", o.d_model},
                {"layers", o.layers},
                {"heads", o.heads},
                {"checkpoint_hash", params_fingerprint(ckpt.params)},
                {"step_loss_first", stats.step_loss.empty() ? 0.0 : stats.step_loss.front()},
                {"step_loss_last", last}};
  write_manifest(o.out + ".manifest.json", manifest, timer);
  return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainOpts {
  std::string train_path, dev_path, out, init, embedder_path;
  std::string labeled_dir, unlabeled_dir, stopword_path;
  std::string metric = "squared-euclidean";
  std::string ablate;    // none|no-entity-retrieval|no-sentence-retrieval|
                         // no-confident-distinction|no-first-stage-reuse|
                         // no-labeled-kb|no-unlabeled-kb
  std::string baseline;  // realm-ner
  TrainConfig cfg;
};

void apply_ablation(TagConfig& tag, const std::string& ablate) {
  if (ablate.empty() || ablate == "none") return;
  if (ablate == "no-entity-retrieval") tag.use_entity_queries = false;
  else if (ablate == "no-sentence-retrieval") tag.use_sentence_query = false;
  else if (ablate == "no-confident-distinction") tag.refine_all = true;
  else if (ablate == "no-first-stage-reuse") tag.reuse_first_stage_on_confident = false;
  else if (ablate == "no-labeled-kb") tag.use_labeled_kb = false;
  else if (ablate == "no-unlabeled-kb") tag.use_unlabeled_kb = false;
  else throw config_error("unknown ablation: " + ablate);
}

int cmd_train(const TrainOpts& o) {
  Timer timer;
  LabelSet task_labels = label_set_from_conll(o.train_path);
  auto train = read_conll(o.train_path, task_labels);
  std::vector<Sentence> dev;
  if (!o.dev_path.empty()) dev = read_conll(o.dev_path, task_labels);

  check_config(!o.init.empty(), "--init pretrained checkpoint required");
  Checkpoint init_ckpt = load_checkpoint(o.init);
  EncoderParams params =
      transplant_head(init_ckpt.params, task_labels.num_labels(),
                      2 * task_labels.num_types() + 3, o.cfg.seed);

  std::string embedder_path = o.embedder_path.empty() ? o.init : o.embedder_path;
  Checkpoint embed_ckpt = load_checkpoint(embedder_path);
  FrozenEmbedder embedder{&embed_ckpt.params, &embed_ckpt.vocab};
  Stopwords sw = load_stopwords(o.stopword_path);
  Metric metric = metric_from_name(o.metric);

  TrainConfig cfg = o.cfg;
  apply_ablation(cfg.tag, o.ablate);
  if (o.baseline == "realm-ner") {
    // REALM-style degenerate configuration: one sentence-level retrieval from
    // the unlabeled KB only.
    cfg.m = 1;
    cfg.tag.m = 1;
    cfg.tag.use_entity_queries = false;
    cfg.tag.use_labeled_kb = false;
  } else if (!o.baseline.empty()) {
    throw config_error("unknown baseline: " + o.baseline);
  }

  std::optional<UnstructuredKB> labeled_kb, unlabeled_kb;
  std::optional<KbIndex> labeled_idx, unlabeled_idx;
  std::string fp = embedder.fingerprint();
  if (!o.labeled_dir.empty() && cfg.tag.use_labeled_kb) {
    labeled_kb = load_kb(o.labeled_dir);
    check_config(labeled_kb->embed_fingerprint == fp,
                 "labeled KB fingerprint does not match the embedder; refusing to run");
    check_config(labeled_kb->label_types == task_labels.types,
                 "labeled KB label set does not match the training data");
    labeled_idx.emplace(*labeled_kb, metric);
  }
  if (!o.unlabeled_dir.empty() && cfg.tag.use_unlabeled_kb) {
    unlabeled_kb = load_kb(o.unlabeled_dir);
    check_config(unlabeled_kb->embed_fingerprint == fp,
                 "unlabeled KB fingerprint does not match the embedder; refusing to run");
    unlabeled_idx.emplace(*unlabeled_kb, metric);
  }

  TrainEnv env;
  env.vocab = &init_ckpt.vocab;
  env.labels = &task_labels;
  env.embedder = &embedder;
  env.labeled_kb = labeled_kb ? &*labeled_kb : nullptr;
  env.labeled_index = labeled_idx ? &*labeled_idx : nullptr;
  env.unlabeled_kb = unlabeled_kb ? &*unlabeled_kb : nullptr;
  env.unlabeled_index = unlabeled_idx ? &*unlabeled_idx : nullptr;
  env.stopwords = &sw;

  auto stats = fine_tune(params, train, dev, env, cfg);

  json extra{{"role", "fine-tuned"},
             {"init", o.init},
             {"embedder", embedder_path},
             {"embedder_fingerprint", fp}};
  Checkpoint out_ckpt{std::move(params), init_ckpt.vocab, task_labels, extra.dump()};
  save_checkpoint(o.out, out_ckpt);

  json epochs = json::array();
  for (size_t e = 0; e < stats.epoch_losses.size(); ++e) {
    json row{{"epoch", e},
             {"l1", stats.epoch_losses[e].l1},
             {"l2", stats.epoch_losses[e].l2},
             {"total", stats.epoch_losses[e].total}};
    if (e < stats.dev_f1.size()) row["dev_f1"] = stats.dev_f1[e];
    epochs.push_back(row);
  }
  std::cout << "fine-tuned " << stats.epochs_run << " epochs";
  if (stats.best_epoch >= 0)
    std::cout << ", best dev epoch " << stats.best_epoch << " (F1 "
              << stats.dev_f1[static_cast<size_t>(stats.best_epoch)] << ")";
  std::cout << ", saved " << o.out << "\n";

  json manifest{{"command", "train"},
                {"train", o.train_path},
                {"dev", o.dev_path},
                {"out", o.out},
                {"init", o.init},
                {"embedder", embedder_path},
                {"embedder_fingerprint", fp},
                {"labeled_kb", o.labeled_dir},
                {"unlabeled_kb", o.unlabeled_dir},
                {"metric", o.metric},
                {"ablate", o.ablate},
                {"baseline", o.baseline},
                {"seed", cfg.seed},
                {"lambda1", cfg.lambda1},
                {"lambda_conf", cfg.lambda_conf},
                {"m", cfg.m},
                {"n", cfg.n},
                {"batch_size", cfg.batch_size},
                {"epochs", cfg.epochs},
                {"patience", cfg.patience},
                {"lr", cfg.lr},
                {"dropout", cfg.dropout},
                {"checkpoint_hash", params_fingerprint(out_ckpt.params)},
                {"epoch_metrics", epochs}};
  write_manifest(o.out + ".manifest.json", manifest, timer);
  return 0;
}

// ---- tag -------------------------------------------------------------------

struct TagOpts {
  std::string input, out, audit, checkpoint, labeled_dir, unlabeled_dir, embedder_path,
      stopword_path;
  std::string format = "conll";
  std::string metric = "squared-euclidean";
  bool document = false;
  TagConfig cfg;
};

json audit_record(size_t index, const TagResult& r, const LabelSet& ls) {
  json rec;
  rec["sentence"] = index;
  rec["E"] = r.num_entity_queries;
  json unconf = json::array();
  for (const auto& u : r.stage1.unconfident)
    unconf.push_back({{"start", u.start},
                      {"end", u.end},
                      {"type", u.type >= 0 ? ls.types[static_cast<size_t>(u.type)] : "?"},
                      {"confidence", u.confidence}});
  rec["unconfident"] = unconf;
  json hits = json::array();
  for (const auto& h : r.retrieved)
    hits.push_back({{"kb", h.kb_kind == KbKind::labeled ? "labeled" : "unlabeled"},
                    {"id", h.entry_id},
                    {"distance", h.distance}});
  rec["retrieved"] = hits;
  rec["token_stage"] = r.token_stage;
  return rec;
}

int cmd_tag(const TagOpts& o) {
  Timer timer;
  TagEnv env = load_tag_env(o.checkpoint, o.labeled_dir, o.unlabeled_dir, o.embedder_path,
                            metric_from_name(o.metric), o.stopword_path);
  TagContext ctx = env.context(o.cfg);

  std::vector<Sentence> input = o.format == "text"
                                    ? read_plain_text(o.input)
                                    : read_conll(o.input, label_set_from_conll(o.input));

  std::vector<Sentence> output(input.size());
  std::ostringstream audit;
  for (size_t i = 0; i < input.size(); ++i) {
    output[i].tokens = input[i].tokens;
    if (o.document || static_cast<int>(input[i].tokens.size()) > env.ckpt.params.cfg.max_len) {
      output[i].labels = tag_document(input[i].tokens, ctx);
    } else {
      TagResult r = tag(input[i].tokens, ctx);
      output[i].labels = r.labels;
      if (!o.audit.empty()) audit << audit_record(i, r, env.ckpt.labels).dump() << '\n';
    }
  }
  write_conll(o.out, output, env.ckpt.labels);
  if (!o.audit.empty()) write_text_file(o.audit, audit.str());
  std::cout << "tagged " << output.size() << " sentences -> " << o.out << "\n";

  json manifest{{"command", "tag"},
                {"input", o.input},
                {"out", o.out},
                {"checkpoint", o.checkpoint},
                {"checkpoint_hash", params_fingerprint(env.ckpt.params)},
                {"labeled_kb", o.labeled_dir},
                {"unlabeled_kb", o.unlabeled_dir},
                {"metric", o.metric},
                {"lambda_conf", o.cfg.lambda_conf},
                {"m", o.cfg.m},
                {"n", o.cfg.n}};
  write_manifest(o.out + ".manifest.json", manifest, timer);
  return 0;
}

// ---- eval ------------------------------------------------------------------

struct EvalOpts {
  std::string gold, pred, out_prefix;
  std::string train_entities, pretrain_entities;
};

F1Result bucket_f1(const std::vector<Sentence>& pred, const std::vector<Sentence>& gold,
                   const LabelSet& ls, const std::vector<std::string>& bucket) {
  std::unordered_set<std::string> allowed;
  for (const auto& s : bucket) allowed.insert(normalize_surface(s));
  auto restrict = [&](const std::vector<Sentence>& sents) {
    std::vector<std::vector<int>> out;
    for (const auto& s : sents) {
      std::vector<EntitySpan> keep;
      for (const auto& e : decode_bio(s.labels, ls)) {
        if (e.inconsistent) continue;
        std::string surf = normalize_surface(
            span_surface(s.tokens, Span{e.start, e.end}));
        if (allowed.count(surf)) keep.push_back(e);
      }
      out.push_back(encode_bio(keep, static_cast<int>(s.tokens.size()), ls));
    }
    return out;
  };
  return entity_f1(restrict(pred), restrict(gold), ls);
}

int cmd_eval(const EvalOpts& o) {
  Timer timer;
  LabelSet ls = label_set_from_conll(o.gold);
  auto gold = read_conll(o.gold, ls);
  auto pred = read_conll(o.pred, ls);
  check_data(gold.size() == pred.size(), "gold and prediction sentence counts differ");

  std::vector<std::vector<int>> p, g;
  for (size_t i = 0; i < gold.size(); ++i) {
    p.push_back(pred[i].labels);
    g.push_back(gold[i].labels);
  }
  F1Result overall = entity_f1(p, g, ls);

  std::ostringstream tsv;
  tsv << "bucket\tentities\tprecision\trecall\tf1\n";
  json out{{"precision", overall.precision},
           {"recall", overall.recall},
           {"f1", overall.f1},
           {"tp", overall.tp},
           {"fp", overall.fp},
           {"fn", overall.fn}};
  tsv << "all\t" << (overall.tp + overall.fn) << '\t' << overall.precision << '\t'
      << overall.recall << '\t' << overall.f1 << '\n';

  if (!o.train_entities.empty()) {
    auto train_inv = read_surface_inventory(o.train_entities);
    std::vector<std::string> pretrain_inv;
    if (!o.pretrain_entities.empty())
      pretrain_inv = read_surface_inventory(o.pretrain_entities);
    auto eval_entities = entity_surfaces(gold, ls);
    auto parts = partition_seen_unseen(eval_entities, train_inv, pretrain_inv);

    auto add_bucket = [&](const std::string& name, const std::vector<std::string>& bucket) {
      F1Result r = bucket_f1(pred, gold, ls, bucket);
      tsv << name << '\t' << (r.tp + r.fn) << '\t' << r.precision << '\t' << r.recall << '\t'
          << r.f1 << '\n';
      out["buckets"][name] = {{"entities", r.tp + r.fn},
                              {"precision", r.precision},
                              {"recall", r.recall},
                              {"f1", r.f1}};
    };
    add_bucket("seen_in_training", parts.seen_in_training);
    add_bucket("unseen_in_training", parts.unseen_in_training);
    if (!o.pretrain_entities.empty()) {
      add_bucket("seen_in_pretraining", parts.seen_in_pretraining);
      add_bucket("unseen_in_pretraining", parts.unseen_in_pretraining);
    }
  }

  std::cout << tsv.str();
  std::cout << "F1 " << overall.f1 * 100.0 << " (P " << overall.precision * 100.0 << ", R "
            << overall.recall * 100.0 << ")\n";
  if (!o.out_prefix.empty()) {
    write_text_file(o.out_prefix + ".tsv", tsv.str());
    write_text_file(o.out_prefix + ".json", out.dump(2) + "\n");
    json manifest{{"command", "eval"}, {"gold", o.gold}, {"pred", o.pred}, {"f1", overall.f1}};
    write_manifest(o.out_prefix + ".manifest.json", manifest, timer);
  }
  return 0;
}

// ---- sweep -----------------------------------------------------------------

struct SweepOpts {
  std::string param = "lambda-conf";
  std::vector<double> values;
  std::string gold, checkpoint, labeled_dir, unlabeled_dir, embedder_path, stopword_path,
      out_prefix;
  std::string metric = "squared-euclidean";
  TagConfig cfg;
};

int cmd_sweep(const SweepOpts& o) {
  Timer timer;
  check_config(o.param == "lambda-conf" || o.param == "m", "--param must be lambda-conf or m");
  check_config(!o.values.empty(), "--values required");
  TagEnv env = load_tag_env(o.checkpoint, o.labeled_dir, o.unlabeled_dir, o.embedder_path,
                            metric_from_name(o.metric), o.stopword_path);
  LabelSet ls = env.ckpt.labels;
  auto gold = read_conll(o.gold, label_set_from_conll(o.gold));
  check_config(label_set_from_conll(o.gold).types == ls.types,
               "gold label set does not match the checkpoint");

  std::ostringstream tsv;
  tsv << o.param << "\tprecision\trecall\tf1\tunconfident_proportion\tseconds\n";
  json rows = json::array();

  for (double value : o.values) {
    Timer row_timer;
    TagConfig cfg = o.cfg;
    if (o.param == "lambda-conf")
      cfg.lambda_conf = value;
    else
      cfg.m = static_cast<int>(value);
    TagContext ctx = env.context(cfg);

    std::vector<std::vector<int>> p, g;
    size_t entities = 0, unconfident = 0;
    for (const auto& sent : gold) {
      TagResult r = tag(sent.tokens, ctx);
      p.push_back(r.labels);
      g.push_back(sent.labels);
      entities += r.stage1.entities.size();
      unconfident += r.stage1.unconfident.size();
    }
    F1Result f1 = entity_f1(p, g, ls);
    double prop = entities == 0 ? 0.0 : static_cast<double>(unconfident) / entities;
    double secs = row_timer.seconds();
    tsv << value << '\t' << f1.precision << '\t' << f1.recall << '\t' << f1.f1 << '\t' << prop
        << '\t' << secs << '\n';
    rows.push_back({{"value", value},
                    {"precision", f1.precision},
                    {"recall", f1.recall},
                    {"f1", f1.f1},
                    {"unconfident_proportion", prop},
                    {"seconds", secs}});
    std::cout << o.param << "=" << value << "  F1 " << f1.f1 * 100.0 << "  unconfident "
              << prop * 100.0 << "%  (" << secs << "s)\n";
  }

  if (!o.out_prefix.empty()) {
    write_text_file(o.out_prefix + ".tsv", tsv.str());
    write_text_file(o.out_prefix + ".json", json{{"rows", rows}}.dump(2) + "\n");
    json manifest{{"command", "sweep"},
                  {"param", o.param},
                  {"values", o.values},
                  {"gold", o.gold},
                  {"checkpoint", o.checkpoint},
                  {"checkpoint_hash", params_fingerprint(env.ckpt.params)}};
    write_manifest(o.out_prefix + ".manifest.json", manifest, timer);
  }
  return 0;
}

void add_tag_flags(CLI::App* app, TagConfig& cfg) {
  app->add_option("--lambda-conf", cfg.lambda_conf, "confidence threshold");
  app->add_option("--m", cfg.m, "knowledge pieces to retrieve");
  app->add_option("--n", cfg.n, "maximum n-gram length");
  app->add_flag("--no-entity-queries", [&cfg](int64_t) { cfg.use_entity_queries = false; });
  app->add_flag("--no-sentence-query", [&cfg](int64_t) { cfg.use_sentence_query = false; });
  app->add_flag("--no-labeled-kb", [&cfg](int64_t) { cfg.use_labeled_kb = false; });
  app->add_flag("--no-unlabeled-kb", [&cfg](int64_t) { cfg.use_unlabeled_kb = false; });
  app->add_flag("--refine-all", cfg.refine_all, "treat all entities as unconfident");
  app->add_flag("--no-first-stage-reuse",
                [&cfg](int64_t) { cfg.reuse_first_stage_on_confident = false; });
  app->add_option("--window-stride", cfg.window_stride, "sliding window stride");
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"retrieval-augmented self-adaptive NER pipeline"};
  app.require_subcommand(1);

  // gen-synth
  SynthConfig synth_cfg;
  std::string synth_out;
  auto* gen = app.add_subcommand("gen-synth", "generate the synthetic benchmark corpus");
  gen->add_option("--out", synth_out, "output directory")->required();
  gen->add_option("--seed", synth_cfg.seed, "RNG seed");
  gen->add_option("--types", synth_cfg.num_types, "entity types");
  gen->add_option("--train-surfaces", synth_cfg.train_surfaces, "surfaces in training data");
  gen->add_option("--kb-only-surfaces", synth_cfg.kb_only_surfaces, "surfaces only in the KB");
  gen->add_option("--L", synth_cfg.L, "chunk length");
  gen->add_option("--pretrain-examples", synth_cfg.pretrain_examples, "pre-training sequences");
  gen->add_option("--kb-chunks-per-surface", synth_cfg.kb_chunks_per_surface,
                  "KB chunks per covered surface");

  // build-kb
  BuildKbOpts kb_opts;
  auto* bkb = app.add_subcommand("build-kb", "build an unstructured knowledge base");
  bkb->add_option("--input", kb_opts.input, "corpus (text) or CoNLL file")->required();
  bkb->add_option("--out", kb_opts.out_dir, "output KB directory")->required();
  bkb->add_option("--embedder", kb_opts.embedder_path, "frozen embedder checkpoint")
      ->required();
  bkb->add_flag("--labeled", kb_opts.labeled, "input is labeled CoNLL training data");
  bkb->add_option("--filter", kb_opts.filter, "string-match | summarization");
  bkb->add_option("--split-vocab", kb_opts.split_vocab,
                  "CoNLL files providing the allowed n-gram set");
  bkb->add_option("--L", kb_opts.L, "chunk length");
  bkb->add_option("--n", kb_opts.n, "maximum n-gram length");
  bkb->add_option("--stopwords", kb_opts.stopword_path, "stopword list file");
  bkb->add_option("--alpha", kb_opts.alpha, "summarization coverage saturation");
  bkb->add_option("--lambda-div", kb_opts.lambda_div, "summarization diversity weight");
  bkb->add_option("--n-max-keys", kb_opts.n_max_keys, "summarization keys per entry");

  // pretrain
  PretrainOpts pre_opts;
  auto* pre = app.add_subcommand("pretrain", "retrieval-augmented pre-training");
  pre->add_option("--data", pre_opts.data, "pretrain JSONL corpus")->required();
  pre->add_option("--out", pre_opts.out, "output checkpoint")->required();
  pre->add_option("--vocab-extra", pre_opts.vocab_extra, "extra token files for the vocab");
  pre->add_option("--seed", pre_opts.cfg.seed, "RNG seed");
  pre->add_option("--steps", pre_opts.cfg.steps, "optimizer steps");
  pre->add_option("--batch", pre_opts.cfg.batch_size, "batch size");
  pre->add_option("--m", pre_opts.cfg.m, "knowledge pieces per example");
  pre->add_option("--lr", pre_opts.cfg.lr, "learning rate");
  pre->add_option("--dropout", pre_opts.cfg.dropout, "dropout rate");
  pre->add_option("--deletion-prob", pre_opts.cfg.label_deletion_prob,
                  "pseudo-label deletion probability");
  pre->add_option("--sampling-exponent", pre_opts.cfg.sampling_exponent,
                  "weighted-sampling exponent");
  pre->add_option("--top-k", pre_opts.cfg.top_k_frequent, "top-k frequent types");
  pre->add_option("--threads", pre_opts.cfg.threads, "worker threads (0 = auto)");
  pre->add_flag("--no-downsample", pre_opts.no_downsample, "skip ENTITY down-sampling");
  pre->add_option("--d-model", pre_opts.d_model, "model width");
  pre->add_option("--layers", pre_opts.layers, "transformer layers");
  pre->add_option("--heads", pre_opts.heads, "attention heads");
  pre->add_option("--ffn", pre_opts.ffn, "feed-forward width");
  pre->add_option("--L", pre_opts.L, "maximum sequence length");
  pre->add_option("--max-m", pre_opts.max_m, "maximum knowledge rows");

  // train
  TrainOpts train_opts;
  auto* tr = app.add_subcommand("train", "fine-tune with two-stage retrieval");
  tr->add_option("--train", train_opts.train_path, "training CoNLL file")->required();
  tr->add_option("--dev", train_opts.dev_path, "development CoNLL file (early stopping)");
  tr->add_option("--out", train_opts.out, "output checkpoint")->required();
  tr->add_option("--init", train_opts.init, "pretrained checkpoint to start from")->required();
  tr->add_option("--embedder", train_opts.embedder_path,
                 "frozen embedder checkpoint (defaults to --init)");
  tr->add_option("--labeled-kb", train_opts.labeled_dir, "labeled KB directory");
  tr->add_option("--unlabeled-kb", train_opts.unlabeled_dir, "unlabeled KB directory");
  tr->add_option("--stopwords", train_opts.stopword_path, "stopword list file");
  tr->add_option("--metric", train_opts.metric, "squared-euclidean | cosine");
  tr->add_option("--ablate", train_opts.ablate, "ablation configuration");
  tr->add_option("--baseline", train_opts.baseline, "realm-ner");
  tr->add_option("--seed", train_opts.cfg.seed, "RNG seed");
  tr->add_option("--lambda1", train_opts.cfg.lambda1, "stage-1 loss weight");
  tr->add_option("--lambda-conf", train_opts.cfg.lambda_conf, "confidence threshold");
  tr->add_option("--m", train_opts.cfg.m, "knowledge pieces");
  tr->add_option("--n", train_opts.cfg.n, "maximum n-gram length");
  tr->add_option("--batch", train_opts.cfg.batch_size, "batch size");
  tr->add_option("--epochs", train_opts.cfg.epochs, "epochs");
  tr->add_option("--patience", train_opts.cfg.patience, "early-stop patience (0 disables)");
  tr->add_option("--lr", train_opts.cfg.lr, "learning rate");
  tr->add_option("--dropout", train_opts.cfg.dropout, "dropout rate");
  tr->add_option("--threads", train_opts.cfg.threads, "worker threads (0 = auto)");

  // tag
  TagOpts tag_opts;
  auto* tg = app.add_subcommand("tag", "two-stage tagging");
  tg->add_option("--input", tag_opts.input, "input file")->required();
  tg->add_option("--format", tag_opts.format, "conll | text");
  tg->add_option("--out", tag_opts.out, "output CoNLL file")->required();
  tg->add_option("--audit", tag_opts.audit, "audit JSONL file");
  tg->add_option("--checkpoint", tag_opts.checkpoint, "fine-tuned checkpoint")->required();
  tg->add_option("--labeled-kb", tag_opts.labeled_dir, "labeled KB directory");
  tg->add_option("--unlabeled-kb", tag_opts.unlabeled_dir, "unlabeled KB directory");
  tg->add_option("--embedder", tag_opts.embedder_path, "frozen embedder checkpoint");
  tg->add_option("--stopwords", tag_opts.stopword_path, "stopword list file");
  tg->add_option("--metric", tag_opts.metric, "squared-euclidean | cosine");
  tg->add_flag("--document", tag_opts.document, "sliding-window tagging for long inputs");
  add_tag_flags(tg, tag_opts.cfg);

  // eval
  EvalOpts eval_opts;
  auto* ev = app.add_subcommand("eval", "entity-level F1 with seen/unseen breakdown");
  ev->add_option("--gold", eval_opts.gold, "gold CoNLL file")->required();
  ev->add_option("--pred", eval_opts.pred, "predicted CoNLL file")->required();
  ev->add_option("--out", eval_opts.out_prefix, "output prefix (.tsv/.json)");
  ev->add_option("--train-entities", eval_opts.train_entities,
                 "training entity inventory (conll/jsonl/plain)");
  ev->add_option("--pretrain-entities", eval_opts.pretrain_entities,
                 "pre-training entity inventory");

  // sweep
  SweepOpts sweep_opts;
  auto* sw = app.add_subcommand("sweep", "inference-time hyperparameter sweep");
  sw->add_option("--param", sweep_opts.param, "lambda-conf | m");
  sw->add_option("--values", sweep_opts.values, "values to sweep")->required();
  sw->add_option("--gold", sweep_opts.gold, "gold CoNLL file")->required();
  sw->add_option("--checkpoint", sweep_opts.checkpoint, "fine-tuned checkpoint")->required();
  sw->add_option("--labeled-kb", sweep_opts.labeled_dir, "labeled KB directory");
  sw->add_option("--unlabeled-kb", sweep_opts.unlabeled_dir, "unlabeled KB directory");
  sw->add_option("--embedder", sweep_opts.embedder_path, "frozen embedder checkpoint");
  sw->add_option("--stopwords", sweep_opts.stopword_path, "stopword list file");
  sw->add_option("--metric", sweep_opts.metric, "squared-euclidean | cosine");
  sw->add_option("--out", sweep_opts.out_prefix, "output prefix (.tsv/.json)");
  add_tag_flags(sw, sweep_opts.cfg);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_synth(synth_out, synth_cfg);
    if (bkb->parsed()) return cmd_build_kb(kb_opts);
    if (pre->parsed()) return cmd_pretrain(pre_opts);
    if (tr->parsed()) return cmd_train(train_opts);
    if (tg->parsed()) return cmd_tag(tag_opts);
    if (ev->parsed()) return cmd_eval(eval_opts);
    if (sw->parsed()) return cmd_sweep(sweep_opts);
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const numeric_error& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace raner
