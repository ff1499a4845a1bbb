#include "physctl/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "physctl/error.hpp"

namespace physctl {

namespace {

double evaluate(const LossBuilder& f, ParameterSet& params) {
  Graph graph;
  return f(graph, params).value().item();
}

}  // namespace

GradcheckReport finite_difference_check(const std::string& name, const LossBuilder& f, ParameterSet& params,
                                        double h, double tol) {
  if (!(h > 0.0)) throw DomainError("finite_difference_check: step must be positive");
  GradcheckReport report{name, 0, 0.0, tol, false};

  {
    Graph graph;
    Var loss = f(graph, params);
    graph.backward(loss);
  }
  std::vector<double> analytic, numeric;
  for (auto& p : params) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double up = evaluate(f, params);
      p.value[i] = saved - h;
      const double down = evaluate(f, params);
      p.value[i] = saved;
      analytic.push_back(p.grad[i]);
      numeric.push_back((up - down) / (2.0 * h));
    }
  }
  report.coordinates = analytic.size();

  double scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  if (scale == 0.0) {
    report.pass = true;
    return report;
  }
  for (std::size_t i = 0; i < analytic.size(); ++i)
    report.max_rel_error = std::max(report.max_rel_error, std::abs(analytic[i] - numeric[i]) / scale);
  report.pass = report.max_rel_error < tol;
  return report;
}

}  // namespace physctl
