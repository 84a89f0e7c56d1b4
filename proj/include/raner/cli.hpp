#pragma once

#include <string>
#include <vector>

#include "raner/labels.hpp"

namespace raner {

// Subcommand dispatcher behind the raner binary. Exit codes: 0 success,
// 2 configuration error, 3 data error, 4 numeric failure.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, const char* const* argv);

// Sorted entity type names from a CoNLL file; the canonical way every
// command derives a label set from data so label-id orders always agree.
LabelSet label_set_from_conll(const std::string& path);

}  // namespace raner
