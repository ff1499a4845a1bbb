#include "physctl/targets.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string_view>

#include "physctl/error.hpp"
#include "physctl/idx.hpp"

namespace physctl {

namespace {

std::size_t square_side(std::size_t m) {
  std::size_t s = 1;
  while (s * s < m) ++s;
  if (s * s != m) throw DimensionError("image targets need a square output count, got m = " + std::to_string(m));
  return s;
}

Tensor uniform(const Shape& shape, RandomStream& rng) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.uniform();
  return t;
}

}  // namespace

Tensor synthetic_digits(std::size_t count, std::size_t side, RandomStream& rng) {
  if (count == 0 || side < 8) throw ContractError("synthetic_digits needs count >= 1 and side >= 8");
  static constexpr std::array<std::string_view, 10> kSegments = {"abcdef", "bc",  "abged",   "abgcd",  "fgbc",
                                                                 "afgcd",  "afgedc", "abc", "abcdefg", "abcdfg"};
  // Segment endpoints on a 28-pixel canvas, rescaled to `side`.
  const double s = static_cast<double>(side) / 28.0;
  const double x0 = 9 * s, x1 = 19 * s, y0 = 5 * s, y1 = 14 * s, y2 = 23 * s, half_width = 2.0 * s;
  auto endpoints = [&](char seg) -> std::array<double, 4> {
    switch (seg) {
      case 'a': return {x0, y0, x1, y0};
      case 'b': return {x1, y0, x1, y1};
      case 'c': return {x1, y1, x1, y2};
      case 'd': return {x0, y2, x1, y2};
      case 'e': return {x0, y1, x0, y2};
      case 'f': return {x0, y0, x0, y1};
      default: return {x0, y1, x1, y1};
    }
  };
  Tensor out({count, side, side});
  for (std::size_t k = 0; k < count; ++k) {
    const double jx = rng.uniform(-1.5, 1.5) * s, jy = rng.uniform(-1.5, 1.5) * s;
    double* img = out.raw() + k * side * side;
    for (char seg : kSegments[k % 10]) {
      auto [ax, ay, bx, by] = endpoints(seg);
      ax += jx, bx += jx, ay += jy, by += jy;
      const double len2 = std::max((bx - ax) * (bx - ax) + (by - ay) * (by - ay), 1e-9);
      for (std::size_t yy = 0; yy < side; ++yy)
        for (std::size_t xx = 0; xx < side; ++xx) {
          const double px = static_cast<double>(xx), py = static_cast<double>(yy);
          const double t = std::clamp(((px - ax) * (bx - ax) + (py - ay) * (by - ay)) / len2, 0.0, 1.0);
          const double d = std::hypot(px - (ax + t * (bx - ax)), py - (ay + t * (by - ay)));
          double& v = img[yy * side + xx];
          v = std::max(v, std::clamp(half_width - d, 0.0, 1.0));
        }
    }
  }
  return out;
}

Tensor area_downsample(const Tensor& images, std::size_t out) {
  if (images.rank() != 3 || images.extent(1) != images.extent(2))
    throw DimensionError("area_downsample expects [N x S x S], got " + shape_str(images.shape()));
  const std::size_t n = images.extent(0), s = images.extent(1);
  if (out == 0 || out > s) throw DimensionError("area_downsample: cannot resize " + std::to_string(s) + " to " +
                                                std::to_string(out));
  // w[i][j]: overlap of output cell i with input pixel j, rows normalised.
  std::vector<double> w(out * s, 0.0);
  for (std::size_t i = 0; i < out; ++i) {
    const double lo = static_cast<double>(i) * s / out, hi = static_cast<double>(i + 1) * s / out;
    double total = 0.0;
    for (std::size_t j = 0; j < s; ++j) {
      const double ov = std::max(0.0, std::min(hi, j + 1.0) - std::max(lo, static_cast<double>(j)));
      w[i * s + j] = ov;
      total += ov;
    }
    for (std::size_t j = 0; j < s; ++j) w[i * s + j] /= total;
  }
  Tensor res({n, out, out});
  for (std::size_t k = 0; k < n; ++k) {
    const double* img = images.raw() + k * s * s;
    for (std::size_t a = 0; a < out; ++a)
      for (std::size_t b = 0; b < out; ++b) {
        double acc = 0.0;
        for (std::size_t y = 0; y < s; ++y) {
          const double wy = w[a * s + y];
          if (wy == 0.0) continue;
          for (std::size_t x = 0; x < s; ++x) acc += wy * w[b * s + x] * img[y * s + x];
        }
        res.raw()[k * out * out + a * out + b] = acc;
      }
  }
  return res;
}

Tensor energy_match(const Tensor& targets, double energy) {
  if (!(energy > 0.0)) throw DomainError("energy_match: energy must be positive");
  Tensor out = targets;
  const std::size_t n = targets.extent(0), per = targets.size() / n;
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < per; ++j) sum += out[i * per + j];
    if (!(sum > 0.0)) throw DomainError("energy_match: target " + std::to_string(i) + " has no positive energy");
    for (std::size_t j = 0; j < per; ++j) out[i * per + j] *= energy / sum;
  }
  return out;
}

double mean_output_energy(const OpticalSystem& system, std::size_t samples, RandomStream& rng) {
  double acc = 0.0;
  for (std::size_t i = 0; i < samples; ++i) acc += system.measure(uniform({system.config().n}, rng)).sum();
  return acc / static_cast<double>(samples);
}

ControlProblem build_optical_problem(const OpticalSystem& system, const TargetConfig& config) {
  RandomStream rng(config.seed);
  const auto& oc = system.config();
  Tensor outputs;
  switch (config.source) {
    case TargetSource::InRange: {
      std::vector<Tensor> rows;
      for (std::size_t i = 0; i < config.count; ++i) rows.push_back(system.measure(uniform({oc.n}, rng)));
      outputs = stack(rows);
      break;
    }
    case TargetSource::Digits:
    case TargetSource::Mnist: {
      if (oc.mode != MeasurementMode::Intensity) throw ContractError("image targets need intensity measurements");
      const std::size_t side = square_side(oc.m);
      Tensor images;
      if (config.source == TargetSource::Digits) {
        images = synthetic_digits(config.count, 28, rng);
      } else {
        Tensor all = load_idx(config.path);
        if (all.rank() != 3) throw FormatError(config.path + ": expected a rank-3 image set");
        if (all.extent(0) < config.count)
          throw FormatError(config.path + ": holds " + std::to_string(all.extent(0)) + " images, need " +
                            std::to_string(config.count));
        images = slice_rows(all, 0, config.count);
      }
      Tensor small = area_downsample(images, side).reshaped({config.count, oc.m});
      outputs = energy_match(small, config.energy_fraction * mean_output_energy(system, 256, rng));
      break;
    }
    case TargetSource::Natural:
      throw ContractError("natural targets belong to the retina task");
  }
  Tensor flat = outputs.reshaped({config.count, outputs.size() / config.count});
  return {flat, outputs};
}

Tensor optical_target_fields(const OpticalSystem& system, const TargetConfig& config) {
  const auto& oc = system.config();
  if (config.source == TargetSource::InRange) {
    RandomStream rng(config.seed);
    std::vector<Tensor> rows;
    for (std::size_t i = 0; i < config.count; ++i) rows.push_back(system.field(uniform({oc.n}, rng)));
    return stack(rows);
  }
  const ControlProblem p = build_optical_problem(system, config);
  Tensor f({config.count, oc.m, 2});
  for (std::size_t i = 0; i < p.target_outputs.size(); ++i) f[2 * i] = std::sqrt(std::max(p.target_outputs[i], 0.0));
  return f;
}

ControlProblem build_retina_problem(RetinaSystem& system, const TargetConfig& config) {
  RandomStream rng(config.seed);
  const Shape in = system.input_shape();
  Tensor stimuli;
  if (config.source == TargetSource::Natural)
    stimuli = natural_movies(config.count, in[0], in[1], in[2], rng);
  else if (config.source == TargetSource::InRange)
    stimuli = uniform({config.count, in[0], in[1], in[2]}, rng);
  else
    throw ContractError("retina targets must be natural or in_range stimuli");
  std::vector<Tensor> rates;
  for (std::size_t i = 0; i < config.count; ++i) rates.push_back(system.scoring_response(row(stimuli, i)));
  return {stimuli, stack(rates)};
}

double random_input_sigma(TrueSystem& system, const ControlProblem& problem, TaskKind task, RandomStream& rng) {
  double acc = 0.0;
  for (std::size_t i = 0; i < problem.count(); ++i) {
    const Tensor out = system.scoring_response(uniform(system.input_shape(), rng));
    acc += task_distance(task, out, row(problem.target_outputs, i));
  }
  return acc / static_cast<double>(problem.count());
}

}  // namespace physctl
