#pragma once

#include <string>
#include <vector>

#include "raner/labels.hpp"

namespace raner {

struct Sentence {
  std::vector<std::string> tokens;
  std::vector<int> labels;  // empty when unlabeled
};

// CoNLL column format: one token per line, whitespace-separated columns
// (token, BIO tag), blank line between sentences.
std::vector<Sentence> read_conll(const std::string& path, const LabelSet& ls);
void write_conll(const std::string& path, const std::vector<Sentence>& sentences,
                 const LabelSet& ls);

// Collects the entity type names appearing in a CoNLL file, in first-seen
// order, so a LabelSet can be derived from data.
std::vector<std::string> scan_conll_types(const std::string& path);

// Plain text: whitespace tokens, one sentence per line.
std::vector<Sentence> read_plain_text(const std::string& path);

// Surfaces of all gold entities in a labeled corpus (for seen/unseen
// bookkeeping).
std::vector<std::string> entity_surfaces(const std::vector<Sentence>& sentences,
                                         const LabelSet& ls);

}  // namespace raner
