#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "physctl/control_loop.hpp"
#include "physctl/models.hpp"
#include "physctl/systems.hpp"

namespace physctl {

enum class TargetSource {
  Digits,   // synthetic seven-segment digits, downsampled to the output grid
  Mnist,    // IDX file at `path`, downsampled to the output grid
  InRange,  // noise-free system responses to uniform random inputs
  Natural,  // natural-like movies (retina)
};

struct TargetConfig {
  TargetSource source = TargetSource::Digits;
  std::size_t count = 10;
  std::string path;
  // Optical image targets: total intensity as a fraction of the mean output energy.
  double energy_fraction = 0.5;
  std::uint64_t seed = 7;
};

// Everything a run needs. Sections in the file: [run] [optical] [retina]
// [model] [actor] [loop] [targets]. System extents are given once (in the
// system section) and copied into the model and actor specs.
struct RunConfig {
  TaskKind task = TaskKind::Optical;
  std::uint64_t seed = 1;
  // Posterior samples dumped per outer iteration (0 disables the dumps).
  std::size_t latent_samples = 256;

  OpticalConfig optical;
  RetinaConfig retina;
  ModelSpec model;
  ActorSpec actor;
  LoopConfig loop;
  TargetConfig targets;

  // Specs with the system extents filled in.
  ModelSpec model_spec() const;
  ActorSpec actor_spec() const;
  void validate() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
// Complete, canonical INI text; parse_config(write_config(c)) reproduces c.
std::string write_config(const RunConfig& config);

BetaSchedule parse_beta(const std::string& text);

const char* task_name(TaskKind task);

}  // namespace physctl
