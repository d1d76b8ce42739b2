#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "strata/gradcheck.hpp"

namespace strata::cli {

/// Parses argv (argv[0] is the program name) and runs one subcommand.
/// Returns 0 on success, 1 on invalid input, 2 on numerical failure.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

inline constexpr double gradcheck_tolerance = 1e-4;

/// Central-difference checks of every differentiable op plus the full network
/// at the tiny configuration (n=8, k=3, d=4, 2 blocks, 2 heads, m=2), in eval
/// and train mode. Inputs are drawn from `seed`.
std::vector<num::GradCheckResult> gradcheck_suite(std::uint64_t seed);

}  // namespace strata::cli
