#pragma once

#include <functional>
#include <string>

#include "physctl/autodiff.hpp"
#include "physctl/parameters.hpp"

namespace physctl {

struct GradcheckReport {
  std::string name;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Builds a scalar loss on `graph` from the parameters bound through
// graph.parameter(). Must be a pure function of the parameter values, so any
// randomness has to be re-seeded on every call.
using LossBuilder = std::function<Var(Graph& graph, ParameterSet& params)>;

// Central differences (f(p+h) - f(p-h)) / 2h per coordinate against the
// analytic gradient. Error is |analytic - numeric| scaled by the largest
// gradient magnitude of the whole check, so tiny coordinates do not dominate.
GradcheckReport finite_difference_check(const std::string& name, const LossBuilder& f, ParameterSet& params,
                                        double h = 1e-6, double tol = 1e-3);

}  // namespace physctl
