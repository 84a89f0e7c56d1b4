#include "raner/vocab.hpp"

#include <algorithm>
#include <map>

namespace raner {

Vocab Vocab::build(const std::vector<std::vector<std::string>>& corpus, int min_count) {
  std::map<std::string, long> counts;
  for (const auto& sent : corpus)
    for (const auto& tok : sent) ++counts[tok];

  std::vector<std::pair<std::string, long>> items(counts.begin(), counts.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });

  Vocab v;
  v.tokens.push_back("<unk>");
  for (const auto& [tok, n] : items)
    if (n >= min_count && tok != "<unk>") v.tokens.push_back(tok);
  for (size_t i = 0; i < v.tokens.size(); ++i) v.ids[v.tokens[i]] = static_cast<int>(i);
  return v;
}

Vocab Vocab::from_token_list(const std::vector<std::string>& tokens) {
  check_data(!tokens.empty() && tokens[0] == "<unk>", "vocab list must start with <unk>");
  Vocab v;
  v.tokens = tokens;
  for (size_t i = 0; i < v.tokens.size(); ++i) v.ids[v.tokens[i]] = static_cast<int>(i);
  return v;
}

}  // namespace raner
