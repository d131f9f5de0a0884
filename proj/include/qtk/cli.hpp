#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

namespace qtk {

// Exit codes of the command-line front end.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitParse = 2;       // bad arguments, unreadable or malformed files
inline constexpr int kExitDegenerate = 3;  // empty datasets, all-zero tensors

// Runs one qtk subcommand. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Indices of a calibration subset: all of [0, n) when size >= n, otherwise
// `size` indices drawn without replacement by a seeded mt19937_64 and sorted.
std::vector<std::size_t> choose_subset(std::size_t n, std::size_t size, unsigned long long seed);

}  // namespace qtk
