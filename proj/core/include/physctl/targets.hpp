#pragma once

#include <cstdint>

#include "physctl/config.hpp"
#include "physctl/control_loop.hpp"
#include "physctl/random.hpp"
#include "physctl/systems.hpp"

namespace physctl {

// Seven-segment digits 0..9 (cycled), side x side, stroke values in [0,1],
// with a random sub-pixel offset per image. [count x side x side].
Tensor synthetic_digits(std::size_t count, std::size_t side, RandomStream& rng);

// Area-averaging resize of [N x S x S] images to [N x out x out].
Tensor area_downsample(const Tensor& images, std::size_t out);

// Scale each row of [N x ...] so its sum equals `energy`.
Tensor energy_match(const Tensor& targets, double energy);

// Mean total output of the noise-free system over uniform random phases.
double mean_output_energy(const OpticalSystem& system, std::size_t samples, RandomStream& rng);

// Targets for the configured task. Optical image sources are downsampled
// to sqrt(m) x sqrt(m) and energy matched; retina targets are stimuli whose
// desired outputs are the system's rates.
ControlProblem build_optical_problem(const OpticalSystem& system, const TargetConfig& config);
// Complex fields [N x m x 2] behind the optical targets: the generating
// fields for in-range targets, sqrt(intensity) with zero phase for images.
Tensor optical_target_fields(const OpticalSystem& system, const TargetConfig& config);
ControlProblem build_retina_problem(RetinaSystem& system, const TargetConfig& config);

// Mean task distance of the targets to responses of uniform random inputs.
double random_input_sigma(TrueSystem& system, const ControlProblem& problem, TaskKind task, RandomStream& rng);

}  // namespace physctl
