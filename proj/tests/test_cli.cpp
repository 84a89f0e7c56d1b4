#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "raner/cli.hpp"
#include "raner/synth.hpp"
#include "raner/util.hpp"

using namespace raner;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct WorkDir {
  fs::path dir;
  WorkDir() {
    dir = fs::path("cli_test_work");
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~WorkDir() { fs::remove_all(dir); }
  std::string p(const std::string& name) const { return (dir / name).string(); }
};

SynthConfig tiny_synth() {
  SynthConfig cfg;
  cfg.num_types = 3;
  cfg.train_surfaces = 9;
  cfg.kb_only_surfaces = 9;
  cfg.keywords_per_type = 2;
  cfg.pretrain_types = 3;
  cfg.pretrain_surfaces = 9;
  cfg.pretrain_examples = 60;
  cfg.L = 10;
  cfg.kb_chunks_per_surface = 1;
  cfg.kb_distractor_chunks = 4;
  cfg.dev_sentences = 4;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("cli: no subcommand is a config error") {
  CHECK(run_cli(std::vector<std::string>{}) == 2);
  CHECK(run_cli({"definitely-not-a-command"}) == 2);
}

TEST_CASE("cli: full mini workflow") {
  WorkDir wd;
  auto data = generate_synthetic(tiny_synth());
  save_synthetic(wd.p("data"), data);

  std::string pretrain = wd.p("data/pretrain.jsonl");
  std::string train = wd.p("data/train.conll");
  std::string dev = wd.p("data/dev.conll");
  std::string test = wd.p("data/test.conll");
  std::string kb_corpus = wd.p("data/kb_corpus.txt");

  // pretrain
  int rc = run_cli({"pretrain", "--data", pretrain, "--out", wd.p("pre.ckpt"),
                    "--vocab-extra", kb_corpus, "--vocab-extra", train, "--vocab-extra", test,
                    "--steps", "25", "--batch", "4", "--m", "2", "--lr", "3e-3",
                    "--d-model", "16", "--layers", "1", "--heads", "2", "--ffn", "24",
                    "--L", "10", "--max-m", "4", "--seed", "5", "--threads", "1",
                    "--no-downsample"});
  REQUIRE(rc == 0);
  CHECK(fs::exists(wd.p("pre.ckpt")));
  CHECK(fs::exists(wd.p("pre.ckpt.bin")));
  CHECK(fs::exists(wd.p("pre.ckpt.manifest.json")));

  // build both KBs, twice, checking byte-identical vector files
  auto build_kbs = [&](const std::string& suffix) {
    int r1 = run_cli({"build-kb", "--input", kb_corpus, "--out", wd.p("ukb" + suffix),
                      "--embedder", wd.p("pre.ckpt"), "--filter", "string-match",
                      "--split-vocab", train, "--split-vocab", test, "--L", "10", "--n", "2"});
    REQUIRE(r1 == 0);
    int r2 = run_cli({"build-kb", "--input", train, "--out", wd.p("lkb" + suffix),
                      "--embedder", wd.p("pre.ckpt"), "--labeled", "--filter", "string-match",
                      "--split-vocab", train, "--L", "10", "--n", "2"});
    REQUIRE(r2 == 0);
  };
  build_kbs("");
  build_kbs("_again");
  CHECK(read_text_file(wd.p("ukb/vectors.bin")) == read_text_file(wd.p("ukb_again/vectors.bin")));
  CHECK(read_text_file(wd.p("lkb/vectors.bin")) == read_text_file(wd.p("lkb_again/vectors.bin")));
  CHECK(read_text_file(wd.p("ukb/entries.jsonl")) ==
        read_text_file(wd.p("ukb_again/entries.jsonl")));

  // train, twice, checking identical checkpoint hashes
  auto train_once = [&](const std::string& out) {
    return run_cli({"train", "--train", train, "--dev", dev, "--out", wd.p(out),
                    "--init", wd.p("pre.ckpt"), "--labeled-kb", wd.p("lkb"),
                    "--unlabeled-kb", wd.p("ukb"), "--epochs", "2", "--patience", "0",
                    "--batch", "4", "--m", "2", "--n", "2", "--lr", "3e-3",
                    "--seed", "9", "--threads", "1"});
  };
  REQUIRE(train_once("model.ckpt") == 0);
  REQUIRE(train_once("model2.ckpt") == 0);
  json m1 = json::parse(read_text_file(wd.p("model.ckpt.manifest.json")));
  json m2 = json::parse(read_text_file(wd.p("model2.ckpt.manifest.json")));
  CHECK(m1.at("checkpoint_hash") == m2.at("checkpoint_hash"));
  CHECK(read_text_file(wd.p("model.ckpt.bin")) == read_text_file(wd.p("model2.ckpt.bin")));

  // tag
  rc = run_cli({"tag", "--input", test, "--out", wd.p("pred.conll"), "--audit",
                wd.p("audit.jsonl"), "--checkpoint", wd.p("model.ckpt"), "--labeled-kb",
                wd.p("lkb"), "--unlabeled-kb", wd.p("ukb"), "--embedder", wd.p("pre.ckpt"),
                "--m", "2", "--n", "2"});
  REQUIRE(rc == 0);
  CHECK(fs::exists(wd.p("pred.conll")));
  // audit log has one record per sentence with the expected fields
  {
    std::ifstream audit(wd.p("audit.jsonl"));
    std::string line;
    size_t records = 0;
    while (std::getline(audit, line)) {
      if (line.empty()) continue;
      json rec = json::parse(line);
      CHECK(rec.contains("E"));
      CHECK(rec.contains("unconfident"));
      CHECK(rec.contains("retrieved"));
      CHECK(rec.contains("token_stage"));
      ++records;
    }
    CHECK(records == data.test.size());
  }

  // eval (predictions against gold, plus seen/unseen breakdown)
  rc = run_cli({"eval", "--gold", test, "--pred", wd.p("pred.conll"), "--out", wd.p("eval"),
                "--train-entities", train, "--pretrain-entities", pretrain});
  REQUIRE(rc == 0);
  json eval_out = json::parse(read_text_file(wd.p("eval.json")));
  CHECK(eval_out.contains("f1"));
  CHECK(eval_out.at("buckets").contains("seen_in_training"));
  CHECK(eval_out.at("buckets").contains("unseen_in_pretraining"));

  // sweep over lambda_conf: proportions hit the endpoints and stay monotone
  rc = run_cli({"sweep", "--param", "lambda-conf", "--values", "0", "0.5", "0.9", "1.1",
                "--gold", test, "--checkpoint", wd.p("model.ckpt"), "--labeled-kb", wd.p("lkb"),
                "--unlabeled-kb", wd.p("ukb"), "--embedder", wd.p("pre.ckpt"), "--m", "2",
                "--n", "2", "--out", wd.p("sweep")});
  REQUIRE(rc == 0);
  json sweep_out = json::parse(read_text_file(wd.p("sweep.json")));
  auto rows = sweep_out.at("rows");
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].at("unconfident_proportion").get<double>() == 0.0);
  CHECK(rows[3].at("unconfident_proportion").get<double>() == 1.0);
  double prev = -1;
  for (const auto& row : rows) {
    double p = row.at("unconfident_proportion").get<double>();
    CHECK(p >= prev);
    prev = p;
  }

  // error paths: missing data file -> 3; fingerprint mismatch -> 2
  CHECK(run_cli({"eval", "--gold", wd.p("nope.conll"), "--pred", wd.p("pred.conll")}) == 3);
  rc = run_cli({"pretrain", "--data", pretrain, "--out", wd.p("pre2.ckpt"),
                "--vocab-extra", kb_corpus, "--steps", "1", "--batch", "2",
                "--d-model", "16", "--layers", "1", "--heads", "2", "--ffn", "24",
                "--L", "10", "--seed", "6", "--threads", "1", "--no-downsample"});
  REQUIRE(rc == 0);
  CHECK(run_cli({"tag", "--input", test, "--out", wd.p("x.conll"), "--checkpoint",
                 wd.p("model.ckpt"), "--labeled-kb", wd.p("lkb"), "--unlabeled-kb", wd.p("ukb"),
                 "--embedder", wd.p("pre2.ckpt")}) == 2);
}

TEST_CASE("cli: gen-synth writes the corpus files") {
  WorkDir wd;
  int rc = run_cli({"gen-synth", "--out", wd.p("synth"), "--seed", "3", "--types", "3",
                    "--train-surfaces", "9", "--kb-only-surfaces", "9", "--L", "12",
                    "--pretrain-examples", "40"});
  REQUIRE(rc == 0);
  for (const char* f : {"train.conll", "dev.conll", "test.conll", "kb_corpus.txt",
                        "pretrain.jsonl", "meta.json", "run_manifest.json"})
    CHECK(fs::exists(wd.p(std::string("synth/") + f)));

  // chunk alignment: every kb_corpus line has exactly L tokens
  std::ifstream kb(wd.p("synth/kb_corpus.txt"));
  std::string line;
  while (std::getline(kb, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tok;
    int count = 0;
    while (ss >> tok) ++count;
    CHECK(count == 12);
  }
}
