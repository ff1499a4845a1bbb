#include "physctl/pca.hpp"

#include <cmath>
#include <vector>

#include "physctl/error.hpp"
#include "physctl/log.hpp"

namespace physctl {

PcaResult pca2d(const Tensor& points) {
  if (points.rank() != 2) throw DimensionError("pca2d expects [N x l], got " + shape_str(points.shape()));
  const std::size_t n = points.extent(0), l = points.extent(1);
  if (n < 2) throw ContractError("pca2d needs at least two points");

  std::vector<double> mean(l, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < l; ++j) mean[j] += points[i * l + j] / static_cast<double>(n);
  std::vector<double> cov(l * l, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < l; ++a) {
      const double da = points[i * l + a] - mean[a];
      for (std::size_t b = 0; b < l; ++b) cov[a * l + b] += da * (points[i * l + b] - mean[b]);
    }
  for (auto& v : cov) v /= static_cast<double>(n - 1);

  PcaResult res;
  res.embedding = Tensor({n, 2});
  for (std::size_t a = 0; a < l; ++a) res.total_variance += cov[a * l + a];
  const double floor = 1e-12 * std::max(res.total_variance, 1e-300);

  std::vector<double> v(l), w(l);
  for (std::size_t c = 0; c < 2 && c < l; ++c) {
    // Deterministic start that is not orthogonal to any axis in general.
    for (std::size_t j = 0; j < l; ++j) v[j] = 1.0 + 0.1 * static_cast<double>(j);
    double lambda = 0.0;
    for (int it = 0; it < 1000; ++it) {
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm == 0.0) break;
      for (auto& x : v) x /= norm;
      for (std::size_t a = 0; a < l; ++a) {
        w[a] = 0.0;
        for (std::size_t b = 0; b < l; ++b) w[a] += cov[a * l + b] * v[b];
      }
      double next = 0.0;
      for (std::size_t a = 0; a < l; ++a) next += v[a] * w[a];
      double diff = 0.0;
      for (std::size_t a = 0; a < l; ++a) {
        const double d = w[a] - next * v[a];
        diff += d * d;
      }
      v.swap(w);
      lambda = next;
      if (std::sqrt(diff) <= 1e-8 * std::max(std::abs(next), 1e-300)) break;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (!(lambda > floor) || norm == 0.0) break;
    for (auto& x : v) x /= norm;
    std::size_t big = 0;
    for (std::size_t a = 1; a < l; ++a)
      if (std::abs(v[a]) > std::abs(v[big])) big = a;
    if (v[big] < 0.0)
      for (auto& x : v) x = -x;
    for (std::size_t i = 0; i < n; ++i) {
      double p = 0.0;
      for (std::size_t a = 0; a < l; ++a) p += (points[i * l + a] - mean[a]) * v[a];
      res.embedding[i * 2 + c] = p;
    }
    res.variance[c] = lambda;
    res.components = c + 1;
    for (std::size_t a = 0; a < l; ++a)
      for (std::size_t b = 0; b < l; ++b) cov[a * l + b] -= lambda * v[a] * v[b];
  }
  if (res.components < 2)
    warn("pca2d: latent cloud has rank " + std::to_string(res.components) + " < 2, padding with zeros");
  return res;
}

}  // namespace physctl
