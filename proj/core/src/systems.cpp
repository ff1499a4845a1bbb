#include "physctl/systems.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <utility>

#include "physctl/error.hpp"
#include "physctl/layers.hpp"

namespace physctl {

namespace {

using cd = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;

CMat to_complex(const Tensor& re, const Tensor& im) {
  const std::size_t r = re.extent(0), c = re.extent(1);
  CMat out(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) = cd(re[i * c + j], im[i * c + j]);
  return out;
}

void from_complex(const CMat& m, Tensor& re, Tensor& im) {
  const auto r = static_cast<std::size_t>(m.rows()), c = static_cast<std::size_t>(m.cols());
  re = Tensor({r, c});
  im = Tensor({r, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      re[i * c + j] = m(i, j).real();
      im[i * c + j] = m(i, j).imag();
    }
}

CVec to_cvec(const Tensor& pairs) {
  if (pairs.rank() != 2 || pairs.extent(1) != 2)
    throw DimensionError("expected complex pairs [k x 2], got " + shape_str(pairs.shape()));
  CVec v(pairs.extent(0));
  for (std::size_t i = 0; i < pairs.extent(0); ++i) v(i) = cd(pairs[2 * i], pairs[2 * i + 1]);
  return v;
}

Tensor from_cvec(const CVec& v) {
  Tensor out({static_cast<std::size_t>(v.size()), 2});
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out[2 * i] = v(i).real();
    out[2 * i + 1] = v(i).imag();
  }
  return out;
}

void require_matrix_pair(const Tensor& re, const Tensor& im) {
  if (re.rank() != 2) throw DimensionError("complex matrix must be rank 2, got " + shape_str(re.shape()));
  require_same_shape(re, im, "complex matrix parts");
}

double frob(const Tensor& re, const Tensor& im) {
  double s = 0.0;
  for (std::size_t i = 0; i < re.size(); ++i) s += re[i] * re[i] + im[i] * im[i];
  return std::sqrt(s);
}

}  // namespace

std::vector<SampleTuple> sample_random_dataset(TrueSystem& system, std::size_t count, RandomStream& rng) {
  if (count == 0) throw ContractError("sample_random_dataset: count must be >= 1");
  std::vector<SampleTuple> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Tensor x = rng.uniform_tensor(system.input_shape());
    Tensor y = system.query(x);
    out.push_back({std::move(x), std::move(y)});
  }
  return out;
}

OpticalSystem::OpticalSystem(const OpticalConfig& config)
    : config_(config), drift_rng_(config.seed ^ 0xD1F7ULL), noise_rng_(config.seed ^ 0x0015EULL) {
  if (config.n == 0 || config.m == 0) throw DimensionError("optical system needs n, m >= 1");
  RandomStream rng(config.seed);
  // Circular complex Gaussian with variance 1/n.
  const double sd = std::sqrt(0.5 / static_cast<double>(config.n));
  f_re_ = rng.normal_tensor({config.m, config.n}, sd);
  f_im_ = rng.normal_tensor({config.m, config.n}, sd);
  norm0_ = frob(f_re_, f_im_);
}

OpticalSystem::OpticalSystem(const OpticalConfig& config, Tensor f_real, Tensor f_imag)
    : config_(config),
      f_re_(std::move(f_real)),
      f_im_(std::move(f_imag)),
      drift_rng_(config.seed ^ 0xD1F7ULL),
      noise_rng_(config.seed ^ 0x0015EULL) {
  require_matrix_pair(f_re_, f_im_);
  if (f_re_.extent(0) != config.m || f_re_.extent(1) != config.n)
    throw DimensionError("F has shape " + shape_str(f_re_.shape()) + " but the system is configured for m=" +
                         std::to_string(config.m) + ", n=" + std::to_string(config.n));
  norm0_ = frob(f_re_, f_im_);
}

Shape OpticalSystem::output_shape() const {
  if (config_.mode == MeasurementMode::Intensity) return {config_.m};
  return {config_.m, 2};
}

double OpticalSystem::frobenius_norm() const { return frob(f_re_, f_im_); }

Tensor OpticalSystem::field(const Tensor& phase) const {
  if (phase.size() != config_.n)
    throw DimensionError("optical input has shape " + shape_str(phase.shape()) + ", expected " +
                         std::to_string(config_.n) + " phases");
  Tensor x({config_.n, 2});
  for (std::size_t i = 0; i < config_.n; ++i) {
    const double p = phase[i];
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("phase " + std::to_string(p) + " outside [0,1]");
    const double a = 2.0 * std::numbers::pi * p;
    x[2 * i] = std::cos(a);
    x[2 * i + 1] = std::sin(a);
  }
  return complex_matvec(f_re_, f_im_, x);
}

Tensor OpticalSystem::to_measurement(const Tensor& u) const {
  if (config_.mode == MeasurementMode::FullComplex) return u;
  Tensor y({config_.m});
  for (std::size_t k = 0; k < config_.m; ++k) {
    const double intensity = u[2 * k] * u[2 * k] + u[2 * k + 1] * u[2 * k + 1];
    y[k] = intensity / (1.0 + config_.nonlinearity * intensity);
  }
  return y;
}

Tensor OpticalSystem::measure(const Tensor& phase) const { return to_measurement(field(phase)); }

Tensor OpticalSystem::forward(const Tensor& phase) {
  Tensor y = measure(phase);
  drift_step();
  if (config_.noise_sigma > 0.0) {
    for (auto& v : y.data()) v += noise_rng_.normal(0.0, config_.noise_sigma);
    if (config_.mode == MeasurementMode::Intensity)
      for (auto& v : y.data()) v = std::max(v, 0.0);
  }
  return y;
}

void OpticalSystem::drift_step() {
  if (config_.drift_rate == 0.0) return;
  const double sd = std::sqrt(0.5 / static_cast<double>(config_.n));
  for (std::size_t i = 0; i < f_re_.size(); ++i) {
    f_re_[i] += config_.drift_rate * drift_rng_.normal(0.0, sd);
    f_im_[i] += config_.drift_rate * drift_rng_.normal(0.0, sd);
  }
  const double s = norm0_ / frob(f_re_, f_im_);
  f_re_ *= s;
  f_im_ *= s;
}

Tensor complex_matvec(const Tensor& f_real, const Tensor& f_imag, const Tensor& x) {
  require_matrix_pair(f_real, f_imag);
  if (x.size() != 2 * f_real.extent(1))
    throw DimensionError("complex_matvec: matrix " + shape_str(f_real.shape()) + " and vector " + shape_str(x.shape()));
  const std::size_t r = f_real.extent(0), c = f_real.extent(1);
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> a(f_real.raw(), r, c), b(f_imag.raw(), r, c);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>> v(x.raw(), c, 2);
  Tensor out({r, 2});
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>> u(out.raw(), r, 2);
  u.col(0) = a * v.col(0) - b * v.col(1);
  u.col(1) = a * v.col(1) + b * v.col(0);
  return out;
}

void random_unitary(std::size_t n, RandomStream& rng, Tensor& real, Tensor& imag) {
  CMat g(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) g(i, j) = cd(rng.normal(), rng.normal());
  Eigen::HouseholderQR<CMat> qr(g);
  CMat q = qr.householderQ();
  const CMat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (std::size_t j = 0; j < n; ++j) {
    const double mag = std::abs(r(j, j));
    if (mag > 0.0) q.col(j) *= r(j, j) / mag;
  }
  from_complex(q, real, imag);
}

PseudoInverseResult pseudo_inverse_control(const Tensor& f_real, const Tensor& f_imag, const Tensor& y) {
  require_matrix_pair(f_real, f_imag);
  const CMat f = to_complex(f_real, f_imag);
  const CVec b = to_cvec(y);
  if (b.size() != f.rows())
    throw DimensionError("pseudo_inverse_control: target has " + std::to_string(b.size()) + " entries, F has " +
                         std::to_string(f.rows()) + " rows");
  Eigen::JacobiSVD<CMat> svd(f, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  PseudoInverseResult res;
  const double smax = sv(0), smin = sv(sv.size() - 1);
  res.condition = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
  const bool deficient = f.cols() > f.rows() || smin <= smax * 1e-10;
  if (deficient) {
    constexpr double reg = 1e-8;
    // Tikhonov: x = V diag(s / (s^2 + reg)) U^H b
    CVec coeff = svd.matrixU().adjoint() * b;
    for (Eigen::Index i = 0; i < sv.size(); ++i) coeff(i) *= sv(i) / (sv(i) * sv(i) + reg);
    res.x = from_cvec(svd.matrixV() * coeff);
    res.regularized = true;
    res.warning = "transmission matrix is rank deficient (condition " + std::to_string(res.condition) +
                  "); solved with regularisation 1e-8";
  } else {
    res.x = from_cvec(svd.solve(b));
  }
  return res;
}

Tensor natural_movies(std::size_t count, std::size_t frames, std::size_t height, std::size_t width,
                      RandomStream& rng) {
  Tensor out({count, frames, height, width}, 0.5);
  const double hs = static_cast<double>(height) / 16.0, ws = static_cast<double>(width) / 16.0;
  for (std::size_t k = 0; k < count; ++k) {
    double* movie = out.raw() + k * frames * height * width;
    for (int blob = 0; blob < 3; ++blob) {
      const double cx = rng.uniform(0.2 * width, 0.8 * width), cy = rng.uniform(0.2 * height, 0.8 * height);
      const double vx = rng.normal(0.0, 0.3 * ws), vy = rng.normal(0.0, 0.3 * hs);
      const double w = rng.uniform(2.0, 4.0) * std::sqrt(hs * ws);
      const double amp = rng.uniform(-0.5, 0.5);
      for (std::size_t t = 0; t < frames; ++t) {
        const double px = cx + vx * t, py = cy + vy * t;
        for (std::size_t i = 0; i < height; ++i)
          for (std::size_t j = 0; j < width; ++j) {
            const double dx = j - px, dy = i - py;
            movie[(t * height + i) * width + j] += amp * std::exp(-(dx * dx + dy * dy) / (2.0 * w * w));
          }
      }
    }
  }
  for (auto& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

RetinaSystem::RetinaSystem(const RetinaConfig& config) : config_(config), count_rng_(config.seed ^ 0xC0C0ULL) {
  RateNetShape& s = config_.net;
  if (s.in_channels != 1) throw DimensionError("retina proxy takes single-channel movies");
  if (!(config.base_rate > 0.0) || !(config.rate_gain >= 0.0) || config.probe_count < 2)
    throw DomainError("retina proxy needs base_rate > 0, rate_gain >= 0 and at least 2 probes");
  RandomStream rng(config.seed);
  add_rate_net(params_, "proxy", s, rng);

  // Low-pass, signed receptive fields centred on mid-grey.
  Parameter* k = params_.find("proxy.spatial1.w");
  Parameter* kb = params_.find("proxy.spatial1.b");
  const double centre = (static_cast<double>(s.k1) - 1.0) / 2.0;
  for (std::size_t c = 0; c < s.channels; ++c) {
    const double ox = rng.uniform(-1.0, 1.0), oy = rng.uniform(-1.0, 1.0), w = rng.uniform(0.8, 1.6);
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    double total = 0.0;
    double* kern = k->value.raw() + c * s.k1 * s.k1;
    for (std::size_t i = 0; i < s.k1; ++i)
      for (std::size_t j = 0; j < s.k1; ++j) {
        const double dx = j - centre - ox, dy = i - centre - oy;
        kern[i * s.k1 + j] = std::exp(-(dx * dx + dy * dy) / (2.0 * w * w));
        total += kern[i * s.k1 + j];
      }
    for (std::size_t i = 0; i < s.k1 * s.k1; ++i) kern[i] *= sign / total;
    kb->value[c] = -0.5 * sign;
  }

  // Calibrate the head so log-rates on natural movies have std rate_gain
  // around ln(base_rate).
  const Tensor probes = natural_movies(config.probe_count, s.frames, s.height, s.width, rng);
  Graph graph;
  ParamScope scope(graph, std::as_const(params_));
  Var x = graph.constant(probes.reshaped({config.probe_count * s.frames, 1, s.height, s.width}));
  const Tensor logits = rate_net_logits(scope, "proxy", s, x, config.probe_count).value();
  const std::size_t rows = config.probe_count * s.frames;
  Parameter* hw = params_.find("proxy.head.w");
  Parameter* hb = params_.find("proxy.head.b");
  for (std::size_t cell = 0; cell < s.cells; ++cell) {
    double mu = 0.0, sq = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mu += logits[r * s.cells + cell];
    mu /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) sq += std::pow(logits[r * s.cells + cell] - mu, 2);
    const double sd = std::sqrt(sq / static_cast<double>(rows - 1));
    const double g = sd > 0.0 ? config.rate_gain / sd : 0.0;
    for (std::size_t f = 0; f < s.features(); ++f) hw->value[f * s.cells + cell] *= g;
    hb->value[cell] = (hb->value[cell] - mu) * g + std::log(config.base_rate);
  }
}

Shape RetinaSystem::input_shape() const { return {config_.net.frames, config_.net.height, config_.net.width}; }
Shape RetinaSystem::output_shape() const { return {config_.net.frames, config_.net.cells}; }

void RetinaSystem::check_stimulus(const Tensor& stimulus, std::size_t rank) const {
  const Shape in = input_shape();
  bool ok = stimulus.rank() == rank;
  for (std::size_t i = 0; ok && i < 3; ++i) ok = stimulus.extent(rank - 3 + i) == in[i];
  if (!ok) throw DimensionError("retina stimulus " + shape_str(stimulus.shape()) + " does not match " + shape_str(in));
  for (double v : stimulus.data())
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("retina stimulus value " + std::to_string(v) + " outside [0,1]");
}

Tensor RetinaSystem::rates_batch(const Tensor& stimuli) const {
  check_stimulus(stimuli, 4);
  const RateNetShape& s = config_.net;
  const std::size_t b = stimuli.extent(0);
  Graph graph;
  ParamScope scope(graph, params_);
  Var x = graph.constant(stimuli.reshaped({b * s.frames, 1, s.height, s.width}));
  return exponential(rate_net_logits(scope, "proxy", s, x, b)).value();
}

Tensor RetinaSystem::rates(const Tensor& stimulus) const {
  check_stimulus(stimulus, 3);
  const Shape& in = stimulus.shape();
  return rates_batch(stimulus.reshaped({1, in[0], in[1], in[2]})).reshaped(output_shape());
}

Tensor RetinaSystem::forward(const Tensor& stimulus) {
  Tensor r = rates(stimulus);
  if (config_.mode == SamplingMode::Counts)
    for (auto& v : r.data()) v = count_rng_.poisson(v);
  return r;
}

}  // namespace physctl
