#include "raner/conll.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace raner {

namespace {
std::ifstream open_or_throw(const std::string& path) {
  std::ifstream f(path);
  check_data(f.good(), "cannot open: " + path);
  return f;
}
}  // namespace

std::vector<Sentence> read_conll(const std::string& path, const LabelSet& ls) {
  auto f = open_or_throw(path);
  std::vector<Sentence> out;
  Sentence cur;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tok, tag;
    if (!(ss >> tok)) {
      if (!cur.tokens.empty()) out.push_back(std::move(cur)), cur = {};
      continue;
    }
    check_data(static_cast<bool>(ss >> tag),
               path + ":" + std::to_string(lineno) + ": missing BIO tag column");
    cur.tokens.push_back(tok);
    cur.labels.push_back(ls.label_id(tag));
  }
  if (!cur.tokens.empty()) out.push_back(std::move(cur));
  return out;
}

void write_conll(const std::string& path, const std::vector<Sentence>& sentences,
                 const LabelSet& ls) {
  std::ofstream f(path);
  check_data(f.good(), "cannot open for writing: " + path);
  for (const auto& s : sentences) {
    for (size_t i = 0; i < s.tokens.size(); ++i) {
      f << s.tokens[i] << ' ';
      f << (s.labels.empty() ? "O" : ls.label_name(s.labels[i])) << '\n';
    }
    f << '\n';
  }
  check_data(f.good(), "write failed: " + path);
}

std::vector<std::string> scan_conll_types(const std::string& path) {
  auto f = open_or_throw(path);
  std::vector<std::string> types;
  std::set<std::string> seen;
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string tok, tag;
    if (!(ss >> tok) || !(ss >> tag)) continue;
    if (tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') {
      std::string t = tag.substr(2);
      if (seen.insert(t).second) types.push_back(t);
    }
  }
  return types;
}

std::vector<Sentence> read_plain_text(const std::string& path) {
  auto f = open_or_throw(path);
  std::vector<Sentence> out;
  std::string line;
  while (std::getline(f, line)) {
    Sentence s;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) s.tokens.push_back(tok);
    if (!s.tokens.empty()) out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::string> entity_surfaces(const std::vector<Sentence>& sentences,
                                         const LabelSet& ls) {
  std::vector<std::string> out;
  for (const auto& s : sentences) {
    if (s.labels.empty()) continue;
    for (const auto& span : decode_bio(s.labels, ls)) {
      std::string surf;
      for (int i = span.start; i <= span.end; ++i) {
        if (!surf.empty()) surf += ' ';
        surf += s.tokens[static_cast<size_t>(i)];
      }
      out.push_back(surf);
    }
  }
  return out;
}

}  // namespace raner
