#pragma once

#include <ostream>

#include "gilt/corpus.hpp"

namespace gilt {

// Figure-style text dump of the tape of every token of a gold example.
void print_tape_walkthrough(std::ostream& out, const CorpusExample& example,
                           const TapeSettings& settings);

// Entry point of the gilt command-line tool. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gilt
