#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "physctl/parameters.hpp"
#include "physctl/random.hpp"
#include "physctl/rate_net.hpp"
#include "physctl/tensor.hpp"

namespace physctl {

struct SampleTuple {
  Tensor x;
  Tensor y;
};

// A queryable "true" system. Gradients never flow through it.
class TrueSystem {
 public:
  virtual ~TrueSystem() = default;
  virtual Shape input_shape() const = 0;
  virtual Shape output_shape() const = 0;
  // One measurement; may advance internal state (drift, noise, counts).
  virtual Tensor query(const Tensor& x) = 0;
  // Response used to score control quality. Counting systems return the
  // expected value instead of a sample.
  virtual Tensor scoring_response(const Tensor& x) { return query(x); }
};

// Inputs uniform in [0,1] per element, outputs from the system.
std::vector<SampleTuple> sample_random_dataset(TrueSystem& system, std::size_t count, RandomStream& rng);

enum class MeasurementMode { FullComplex, Intensity };

struct OpticalConfig {
  std::size_t n = 64;
  std::size_t m = 256;
  MeasurementMode mode = MeasurementMode::Intensity;
  double drift_rate = 0.0;
  double noise_sigma = 0.0;
  // Saturation I / (1 + gamma I) of the measured intensity; 0 is linear.
  double nonlinearity = 0.0;
  std::uint64_t seed = 0;
};

// u = F exp(i 2 pi phase). F is m x n, stored as real and imaginary parts.
class OpticalSystem : public TrueSystem {
 public:
  explicit OpticalSystem(const OpticalConfig& config);
  OpticalSystem(const OpticalConfig& config, Tensor f_real, Tensor f_imag);

  Shape input_shape() const override { return {config_.n}; }
  // [m] in intensity mode, [m x 2] (re, im) in full-complex mode.
  Shape output_shape() const override;
  Tensor query(const Tensor& phase) override { return forward(phase); }

  // Measurement with the current F, then one drift step and additive noise.
  Tensor forward(const Tensor& phase);
  // Noise-free complex field [m x 2] for the current F; does not drift.
  Tensor field(const Tensor& phase) const;
  // Noise-free measurement for the current F; does not drift.
  Tensor measure(const Tensor& phase) const;
  void drift_step();

  const Tensor& f_real() const noexcept { return f_re_; }
  const Tensor& f_imag() const noexcept { return f_im_; }
  const OpticalConfig& config() const noexcept { return config_; }
  double frobenius_norm() const;

 private:
  Tensor to_measurement(const Tensor& field) const;

  OpticalConfig config_;
  Tensor f_re_, f_im_;
  double norm0_ = 0.0;
  RandomStream drift_rng_;
  RandomStream noise_rng_;
};

// Complex n x n unitary from QR of a complex Gaussian matrix.
void random_unitary(std::size_t n, RandomStream& rng, Tensor& real, Tensor& imag);

struct PseudoInverseResult {
  Tensor x;  // [n x 2]
  double condition = 0.0;
  bool regularized = false;
  std::string warning;
};

// Least-squares x = F+ y for complex F (m x n parts) and y [m x 2]. A
// rank-deficient F is solved with Tikhonov regularisation 1e-8.
PseudoInverseResult pseudo_inverse_control(const Tensor& f_real, const Tensor& f_imag, const Tensor& y);

// Complex matrix-vector product on [rows x cols] parts and a [cols x 2] vector.
Tensor complex_matvec(const Tensor& f_real, const Tensor& f_imag, const Tensor& x);

enum class SamplingMode { Rate, Counts };

struct RetinaConfig {
  RateNetShape net;
  SamplingMode mode = SamplingMode::Counts;
  double base_rate = 2.0;
  // Std of the per-cell log-rate over natural probe movies.
  double rate_gain = 0.5;
  std::size_t probe_count = 32;
  std::uint64_t seed = 0;
};

// Frozen Poisson encoder of [T x H x W] movies.
class RetinaSystem : public TrueSystem {
 public:
  explicit RetinaSystem(const RetinaConfig& config);

  Shape input_shape() const override;
  Shape output_shape() const override;
  Tensor query(const Tensor& stimulus) override { return forward(stimulus); }
  Tensor scoring_response(const Tensor& stimulus) override { return rates(stimulus); }

  // Rates, or Poisson counts in counts mode.
  Tensor forward(const Tensor& stimulus);
  // Deterministic rates [T x cells].
  Tensor rates(const Tensor& stimulus) const;
  // [B x T x H x W] -> [B x T x cells]
  Tensor rates_batch(const Tensor& stimuli) const;

  const ParameterSet& parameters() const noexcept { return params_; }
  const RetinaConfig& config() const noexcept { return config_; }

 private:
  void check_stimulus(const Tensor& stimulus, std::size_t rank) const;

  RetinaConfig config_;
  ParameterSet params_;
  RandomStream count_rng_;
};

// Drifting Gaussian blobs on a mid-grey background, clipped to [0,1].
// Returns [count x T x H x W].
Tensor natural_movies(std::size_t count, std::size_t frames, std::size_t height, std::size_t width,
                      RandomStream& rng);

}  // namespace physctl
