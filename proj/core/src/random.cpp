#include "physctl/random.hpp"

#include "physctl/error.hpp"

namespace physctl {

double RandomStream::poisson(double rate) {
  if (!(rate >= 0.0)) throw DomainError("poisson rate must be non-negative");
  if (rate == 0.0) return 0.0;
  return static_cast<double>(std::poisson_distribution<long long>(rate)(engine_));
}

Tensor RandomStream::normal_tensor(Shape shape, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data()) v = dist(engine_);
  return t;
}

Tensor RandomStream::uniform_tensor(Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data()) v = dist(engine_);
  return t;
}

}  // namespace physctl
