#pragma once

// Command-line front end: samic <encode|peaks|train|predict|eval|serve|export> ...
// Exit status 0 on success, 2 on a usage error, 1 on a runtime failure. Every
// subcommand writes its outputs and a run.json manifest into --out.

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

namespace samic {

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

// Stops a running `serve` after in-flight requests finish; what SIGINT/SIGTERM do.
void request_shutdown();

// Closest candidate within edit distance 3 (transpositions count once), or an empty string.
std::string closest_match(const std::string& word, const std::vector<std::string>& candidates);
std::size_t edit_distance(const std::string& a, const std::string& b);

}  // namespace samic
