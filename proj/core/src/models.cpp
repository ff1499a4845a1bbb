#include "physctl/models.hpp"

#include <sstream>

#include "physctl/error.hpp"

namespace physctl {

namespace {

std::size_t flat(const Shape& s) { return shape_size(s); }

Shape batched(std::size_t b, const Shape& s) {
  Shape out{b};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

void require_batch(Var v, const Shape& per_sample, const char* what) {
  const Shape& s = v.shape();
  if (s.size() != per_sample.size() + 1 || !std::equal(per_sample.begin(), per_sample.end(), s.begin() + 1))
    throw DimensionError(std::string(what) + " has shape " + shape_str(s) + ", expected [B] + " +
                         shape_str(per_sample));
}

// Side length of the coarse map that upsample -> pad 1 -> upsample grows to `full`.
std::size_t coarse_extent(std::size_t full) { return full / 4 - 1; }

void require_unet_extent(std::size_t e, const char* what) {
  if (e < 8 || e % 4 != 0)
    throw DimensionError(std::string(what) + " must be a multiple of 4 and at least 8, got " + std::to_string(e));
}

Var flatten(Var v) {
  const Shape& s = v.shape();
  return reshape(v, {s[0], v.value().size() / s[0]});
}

// dense -> relu -> [C x s x s] -> conv relu -> up -> pad 1 -> conv relu -> up -> conv to 1 channel sigmoid
Var expanding_path(ParamScope& scope, const std::string& p, Var h, std::size_t channels, std::size_t height,
                   std::size_t width, bool relu_entry) {
  const std::size_t b = h.shape()[0], sh = coarse_extent(height), sw = coarse_extent(width);
  h = dense(scope, p + ".fc", h, relu_entry ? Activation::Relu : Activation::Identity);
  h = reshape(h, {b, channels, sh, sw});
  h = conv(scope, p + ".conv1", h, Activation::Relu);
  h = zero_pad4(upsample2x2(h), 1);
  h = conv(scope, p + ".conv2", h, Activation::Relu);
  h = upsample2x2(h);
  return conv(scope, p + ".out", h, Activation::Sigmoid);
}

void add_expanding_path(ParameterSet& ps, const std::string& p, std::size_t in, std::size_t channels,
                        std::size_t height, std::size_t width, RandomStream& rng) {
  add_dense(ps, p + ".fc", in, channels * coarse_extent(height) * coarse_extent(width), rng);
  add_conv(ps, p + ".conv1", channels, channels, 3, 3, rng);
  add_conv(ps, p + ".conv2", channels, channels, 3, 3, rng);
  add_conv(ps, p + ".out", 1, channels, 3, 3, rng);
}

}  // namespace

Shape ModelSpec::input_shape() const {
  if (task == TaskKind::Optical) return {n};
  return {net.frames, net.height, net.width};
}

Shape ModelSpec::output_shape() const {
  if (task == TaskKind::Optical) return full_complex ? Shape{m, 2} : Shape{m};
  return {net.frames, net.cells};
}

void ModelSpec::validate() const {
  if (latent_dim == 0) throw DimensionError("latent_dim must be >= 1");
  if (task == TaskKind::Optical) {
    if (n == 0 || m == 0) throw DimensionError("optical model needs n, m >= 1");
    if (full_complex && decoder == DecoderKind::Intensity)
      throw ContractError("intensity decoder cannot predict full-complex outputs");
    if (!full_complex && decoder == DecoderKind::Field)
      throw ContractError("field decoder predicts full-complex outputs only");
  } else {
    if (net.in_channels != 2) throw DimensionError("retina decoder stimulus pathway takes 2 channels");
    net.validate();
    require_unet_extent(net.height, "retina frame height");
    require_unet_extent(net.width, "retina frame width");
    if (latent_channels == 0) throw DimensionError("latent_channels must be >= 1");
  }
}

Shape ActorSpec::target_shape() const {
  if (task == TaskKind::Optical) return {target_size};
  return {frames, height, width};
}

Shape ActorSpec::output_shape() const {
  if (task == TaskKind::Optical) return {n};
  return {frames, height, width};
}

void ActorSpec::validate() const {
  if (task == TaskKind::Optical) {
    if (n == 0 || target_size == 0) throw DimensionError("optical actor needs n, target size >= 1");
    return;
  }
  if (bottleneck != 1 && bottleneck != 4 && bottleneck != 9)
    throw DimensionError("actor bottleneck must be 1, 4 or 9, got " + std::to_string(bottleneck));
  if (frames == 0 || channels == 0) throw DimensionError("retina actor needs frames, channels >= 1");
  require_unet_extent(height, "retina frame height");
  require_unet_extent(width, "retina frame width");
}

VaeModel init_vae(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  VaeModel model{spec, {}};
  RandomStream rng(seed);
  ParameterSet& ps = model.params;
  const std::size_t l = spec.latent_dim;
  const std::size_t x_in = spec.encoder_uses_x ? flat(spec.input_shape()) : 0;
  add_dense(ps, "encoder.fc", flat(spec.output_shape()) + x_in, 2 * l, rng);
  if (spec.task == TaskKind::Optical) {
    const std::size_t in = l + 2 * spec.n;
    switch (spec.decoder) {
      case DecoderKind::Intensity:
      case DecoderKind::Field:
        add_dense(ps, "decoder.fc", in, 2 * spec.m, rng);
        break;
      case DecoderKind::Mlp: {
        const std::size_t hidden = spec.mlp_hidden ? spec.mlp_hidden : spec.n;
        add_dense(ps, "decoder.fc1", in, hidden, rng);
        add_dense(ps, "decoder.fc2", hidden, flat(spec.output_shape()), rng);
        break;
      }
    }
  } else {
    add_expanding_path(ps, "decoder.latent", l, spec.latent_channels, spec.net.height, spec.net.width, rng);
    add_rate_net(ps, "decoder.rate", spec.net, rng);
  }
  return model;
}

ActorModel init_actor(const ActorSpec& spec, std::uint64_t seed) {
  spec.validate();
  ActorModel actor{spec, {}};
  RandomStream rng(seed);
  ParameterSet& ps = actor.params;
  if (spec.task == TaskKind::Optical) {
    add_dense(ps, "actor.fc", spec.target_size, spec.n, rng);
    return actor;
  }
  const std::size_t c = spec.channels;
  const std::size_t h4 = (spec.height + 3) / 4, w4 = (spec.width + 3) / 4;
  add_conv(ps, "actor.down1", c, 1, 3, 3, rng);
  add_conv(ps, "actor.down2", c, c, 3, 3, rng);
  add_conv(ps, "actor.down3", c, c, 3, 3, rng);
  add_dense(ps, "actor.bottleneck", c * h4 * w4, spec.bottleneck, rng);
  add_expanding_path(ps, "actor.up", spec.bottleneck, c, spec.height, spec.width, rng);
  return actor;
}

std::string architecture_manifest(const ParameterSet& params) {
  std::ostringstream os;
  for (const auto& p : params) os << p.name << ' ' << shape_str(p.value.shape()) << '\n';
  return os.str();
}

std::uint64_t architecture_hash(const ParameterSet& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : architecture_manifest(params)) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

Posterior encode(ParamScope& scope, const ModelSpec& spec, Var y, Var x) {
  require_batch(y, spec.output_shape(), "encoder input");
  Var in = flatten(y);
  if (spec.encoder_uses_x) {
    require_batch(x, spec.input_shape(), "encoder conditioning input");
    Var parts[] = {in, flatten(x)};
    in = concat(parts, 1);
  }
  Var h = dense(scope, "encoder.fc", in);
  const std::size_t l = spec.latent_dim;
  return {slice(h, 1, 0, l), slice(h, 1, l, 2 * l)};
}

Var decode(ParamScope& scope, const ModelSpec& spec, Var z, Var x) {
  require_batch(x, spec.input_shape(), "decoder input");
  const std::size_t b = x.shape()[0];
  if (z.shape() != Shape{b, spec.latent_dim})
    throw DimensionError("latent batch " + shape_str(z.shape()) + " does not match " +
                         shape_str({b, spec.latent_dim}));
  if (spec.task == TaskKind::Optical) {
    Var parts[] = {z, phasor(x)};
    Var in = concat(parts, 1);
    switch (spec.decoder) {
      case DecoderKind::Intensity:
        return intensity_pairs(dense(scope, "decoder.fc", in));
      case DecoderKind::Field:
        return reshape(dense(scope, "decoder.fc", in), {b, spec.m, 2});
      case DecoderKind::Mlp: {
        Var h = dense(scope, "decoder.fc1", in, Activation::Sigmoid);
        return reshape(dense(scope, "decoder.fc2", h, Activation::Sigmoid), batched(b, spec.output_shape()));
      }
    }
    throw ContractError("unknown decoder kind");
  }
  const RateNetShape& s = spec.net;
  Var g = expanding_path(scope, "decoder.latent", z, spec.latent_channels, s.height, s.width, true);
  Var frames = reshape(x, {b * s.frames, 1, s.height, s.width});
  Var parts[] = {frames, repeat_interleave(g, s.frames)};
  Var in = concat(parts, 1);
  return exponential(rate_net_logits(scope, "decoder.rate", s, in, b));
}

ModelOutput model_forward(ParamScope& scope, const ModelSpec& spec, Var x, Var y, RandomStream& rng) {
  Posterior q = encode(scope, spec, y, x);
  Var z = reparameterize(q.mu, q.log_var, rng);
  return {decode(scope, spec, z, x), q.mu, q.log_var, z};
}

Var model_generate(ParamScope& scope, const ModelSpec& spec, Var x, RandomStream& rng) {
  require_batch(x, spec.input_shape(), "decoder input");
  Var z = scope.graph().constant(rng.normal_tensor({x.shape()[0], spec.latent_dim}));
  return decode(scope, spec, z, x);
}

namespace {

Var reconstruction(const ModelSpec& spec, Var prediction, Var observed) {
  if (spec.task == TaskKind::Optical) return mse_loss(prediction, observed);
  return poisson_nll(prediction, observed, PoissonOptions{true, 1e-8});
}

}  // namespace

LossParts vae_loss(ParamScope& scope, const ModelSpec& spec, Var x, Var y, double beta, RandomStream& rng) {
  if (!(beta >= 0.0)) throw DomainError("beta must be non-negative");
  if (x.shape().empty() || y.shape()[0] == 0) throw ContractError("vae_loss: empty batch");
  ModelOutput out = model_forward(scope, spec, x, y, rng);
  Var rec = reconstruction(spec, out.prediction, y);
  Var kl = kl_diag_gaussian(out.mu, out.log_var);
  Var total = add(rec, scale(kl, beta));
  return {total, rec.value().item(), kl.value().item()};
}

Var actor_forward(ParamScope& scope, const ActorSpec& spec, Var target) {
  require_batch(target, spec.target_shape(), "actor input");
  const std::size_t b = target.shape()[0];
  if (spec.task == TaskKind::Optical) return dense(scope, "actor.fc", flatten(target), Activation::Sigmoid);
  const std::size_t t = spec.frames;
  Var h = reshape(target, {b * t, 1, spec.height, spec.width});
  h = maxpool2x2(conv(scope, "actor.down1", h, Activation::Relu));
  h = maxpool2x2(conv(scope, "actor.down2", h, Activation::Relu));
  h = conv(scope, "actor.down3", h, Activation::Relu);
  h = dense(scope, "actor.bottleneck", flatten(h));
  h = expanding_path(scope, "actor.up", h, spec.channels, spec.height, spec.width, false);
  return reshape(h, {b, t, spec.height, spec.width});
}

Var actor_loss(ParamScope& actor, const ActorSpec& actor_spec, ParamScope& model, const ModelSpec& model_spec,
               Var targets, Var target_outputs, RandomStream& rng) {
  if (model.trainable()) throw ContractError("actor_loss requires a frozen model scope");
  Var x = actor_forward(actor, actor_spec, targets);
  Var prediction = model_generate(model, model_spec, x, rng);
  return reconstruction(model_spec, prediction, target_outputs);
}

}  // namespace physctl
