#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "physctl/gradcheck.hpp"

namespace physctl {

struct GradcheckRow {
  std::string name;
  std::size_t seeds = 0;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Names of every registered check: one per differentiable op plus the
// assembled model and actor losses of both tasks.
std::vector<std::string> gradcheck_names();

// Runs every check on toy shapes for `seeds` seeds derived from `seed`.
std::vector<GradcheckRow> run_gradcheck_suite(std::uint64_t seed, std::size_t seeds = 20, double tol = 1e-3);

}  // namespace physctl
