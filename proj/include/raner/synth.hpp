#pragma once

#include <string>
#include <vector>

#include "raner/conll.hpp"
#include "raner/labels.hpp"
#include "raner/trainer.hpp"

namespace raner {

// Synthetic benchmark generator. Entity surfaces are made-up capitalized
// words whose type is decidable only from knowledge-base context: training
// and evaluation sentences keep entities in type-neutral filler contexts,
// while KB chunks pair each surface with keywords of its type. A share of
// training surfaces is covered only by the labeled KB (no unlabeled chunks).
struct SynthConfig {
  int num_types = 6;
  int train_surfaces = 80;
  int kb_only_surfaces = 160;
  int keywords_per_type = 3;
  int pretrain_types = 8;       // plus the special ENTITY type
  int pretrain_surfaces = 96;
  int pretrain_examples = 480;
  int L = 16;
  int kb_chunks_per_surface = 2;
  int kb_distractor_chunks = 30;
  double kb_coverage_train = 0.5;  // fraction of train surfaces with unlabeled chunks
  int dev_sentences = 24;
  uint64_t seed = 7;
};

struct SynthData {
  SynthConfig cfg;
  LabelSet task_labels;      // num_types entity types
  LabelSet pretrain_labels;  // pretrain_types + "ENTITY"

  std::vector<Sentence> train, dev, test;
  std::vector<std::string> kb_corpus;  // token stream, chunk-aligned to L
  std::vector<PretrainExample> pretrain;

  std::vector<std::string> train_surface_list;    // "seen in training"
  std::vector<std::string> kb_only_surface_list;  // appear only in KB chunks
  std::vector<int> test_group;  // per test sentence: 0 = KB-only surfaces, 1 = train surfaces
};

SynthData generate_synthetic(const SynthConfig& cfg);

// Writes train/dev/test.conll, kb_corpus.txt (one chunk per line),
// pretrain.jsonl and meta.json into dir.
void save_synthetic(const std::string& dir, const SynthData& data);

}  // namespace raner
