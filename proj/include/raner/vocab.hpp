#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "raner/util.hpp"

namespace raner {

// Closed whitespace-token vocabulary with an unknown-token id at 0.
// Deterministic: tokens ordered by descending frequency, ties lexicographic.
struct Vocab {
  std::vector<std::string> tokens;  // id -> surface; tokens[0] == "<unk>"
  std::unordered_map<std::string, int> ids;

  static constexpr int kUnk = 0;

  int size() const { return static_cast<int>(tokens.size()); }
  int id(const std::string& tok) const {
    auto it = ids.find(tok);
    return it == ids.end() ? kUnk : it->second;
  }
  std::vector<int> encode(const std::vector<std::string>& toks) const {
    std::vector<int> out(toks.size());
    for (size_t i = 0; i < toks.size(); ++i) out[i] = id(toks[i]);
    return out;
  }

  static Vocab build(const std::vector<std::vector<std::string>>& corpus, int min_count = 1);
  static Vocab from_token_list(const std::vector<std::string>& tokens);
};

}  // namespace raner
