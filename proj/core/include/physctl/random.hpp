#pragma once

#include <cstdint>
#include <random>

#include "physctl/tensor.hpp"

namespace physctl {

// Seeded random source. Each consumer owns its own stream.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  double poisson(double rate);
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
  std::uint64_t next_u64() { return engine_(); }

  // Derive an independent child stream; advances this stream.
  RandomStream fork() { return RandomStream(engine_() ^ 0x9E3779B97F4A7C15ULL); }

  Tensor normal_tensor(Shape shape, double stddev = 1.0);
  Tensor uniform_tensor(Shape shape, double lo = 0.0, double hi = 1.0);

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace physctl
