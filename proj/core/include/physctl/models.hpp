#pragma once

#include <cstdint>
#include <string>

#include "physctl/layers.hpp"
#include "physctl/rate_net.hpp"

namespace physctl {

enum class TaskKind { Optical, Retina };

// Optical decoder heads. Intensity: phasor features -> dense to 2m field
// components -> |.|^2 of each pair. Field: the same without the modulus.
// Mlp: two sigmoid dense layers.
enum class DecoderKind { Intensity, Field, Mlp };

struct ModelSpec {
  TaskKind task = TaskKind::Optical;
  std::size_t latent_dim = 16;
  bool encoder_uses_x = false;

  // Optical: n phases in, m outputs (pairs when full_complex).
  std::size_t n = 64;
  std::size_t m = 256;
  bool full_complex = false;
  DecoderKind decoder = DecoderKind::Intensity;
  std::size_t mlp_hidden = 0;  // 0 means n

  // Retina: stimulus pathway shape (two input channels: frame + latent map).
  RateNetShape net{2};
  std::size_t latent_channels = 4;

  Shape input_shape() const;   // per sample
  Shape output_shape() const;  // per sample
  void validate() const;
};

struct ActorSpec {
  TaskKind task = TaskKind::Optical;
  // Optical: target of `target_size` reals -> n phases.
  std::size_t n = 64;
  std::size_t target_size = 256;
  // Retina: per-frame U-net through `bottleneck` scalars.
  std::size_t frames = 20;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 4;
  std::size_t bottleneck = 4;

  Shape target_shape() const;
  Shape output_shape() const;
  void validate() const;
};

struct VaeModel {
  ModelSpec spec;
  ParameterSet params;
};

struct ActorModel {
  ActorSpec spec;
  ParameterSet params;
};

// Glorot-uniform weights, zero biases; deterministic per seed.
VaeModel init_vae(const ModelSpec& spec, std::uint64_t seed);
ActorModel init_actor(const ActorSpec& spec, std::uint64_t seed);

// Layer names and shapes, one per line, plus an FNV-1a hash of that text.
std::string architecture_manifest(const ParameterSet& params);
std::uint64_t architecture_hash(const ParameterSet& params);

struct Posterior {
  Var mu;       // [B x l]
  Var log_var;  // [B x l]
};

struct ModelOutput {
  Var prediction;
  Var mu;
  Var log_var;
  Var z;
};

// All graph-level functions take batched values: x [B x input...],
// y [B x output...], z [B x l].
Posterior encode(ParamScope& scope, const ModelSpec& spec, Var y, Var x);
Var decode(ParamScope& scope, const ModelSpec& spec, Var z, Var x);
// Training mode: encode y, reparameterise, decode.
ModelOutput model_forward(ParamScope& scope, const ModelSpec& spec, Var x, Var y, RandomStream& rng);
// Generation mode: z ~ N(0, I).
Var model_generate(ParamScope& scope, const ModelSpec& spec, Var x, RandomStream& rng);

struct LossParts {
  Var total;
  double reconstruction = 0.0;
  double kl = 0.0;
};

// Reconstruction (MSE optical, Poisson NLL retina) + beta * batch-mean KL.
LossParts vae_loss(ParamScope& scope, const ModelSpec& spec, Var x, Var y, double beta, RandomStream& rng);

Var actor_forward(ParamScope& scope, const ActorSpec& spec, Var target);

// Targets through the actor and the frozen model in generation mode; the
// distance is MSE to the target (optical) or Poisson NLL against the target
// rates (retina). `model` must be a frozen scope.
Var actor_loss(ParamScope& actor, const ActorSpec& actor_spec, ParamScope& model, const ModelSpec& model_spec,
               Var targets, Var target_outputs, RandomStream& rng);

}  // namespace physctl
