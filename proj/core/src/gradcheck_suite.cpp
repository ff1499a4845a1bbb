#include "physctl/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <utility>

#include "physctl/models.hpp"
#include "physctl/ops.hpp"

namespace physctl {

namespace {

// Builds parameters for one seed and returns the loss to check.
struct Case {
  std::string name;
  std::function<LossBuilder(ParameterSet&, RandomStream&)> make;
};

// Contract an arbitrary tensor to a scalar with fixed random weights so every
// output coordinate carries a distinct upstream gradient.
Var weighted(Var v, const Tensor& w) { return sum(mul(v, v.graph->constant(w))); }

Case unary_case(std::string name, Shape shape, std::function<Var(Var)> op, double lo = -2.0, double hi = 2.0) {
  return {name, [=](ParameterSet& ps, RandomStream& rng) -> LossBuilder {
            ps.add("x", rng.uniform_tensor(shape, lo, hi));
            Graph probe;
            const Shape out = op(probe.constant(ps[0].value)).shape();
            Tensor w = rng.normal_tensor(out);
            return [op, w](Graph& g, ParameterSet& p) { return weighted(op(g.parameter(p[0])), w); };
          }};
}

Case binary_case(std::string name, Shape a, Shape b, std::function<Var(Var, Var)> op) {
  return {name, [=](ParameterSet& ps, RandomStream& rng) -> LossBuilder {
            ps.add("a", rng.normal_tensor(a));
            ps.add("b", rng.normal_tensor(b));
            Graph probe;
            const Shape out = op(probe.constant(ps[0].value), probe.constant(ps[1].value)).shape();
            Tensor w = rng.normal_tensor(out);
            return [op, w](Graph& g, ParameterSet& p) {
              return weighted(op(g.parameter(p[0]), g.parameter(p[1])), w);
            };
          }};
}

ModelSpec toy_optical_model(DecoderKind kind) {
  ModelSpec s;
  s.task = TaskKind::Optical;
  s.n = 4;
  s.m = 6;
  s.latent_dim = 3;
  s.decoder = kind;
  s.full_complex = kind == DecoderKind::Field;
  s.mlp_hidden = 5;
  return s;
}

ModelSpec toy_retina_model() {
  ModelSpec s;
  s.task = TaskKind::Retina;
  s.latent_dim = 3;
  s.net = RateNetShape{2, 2, 3, 8, 8, 3, 3, 3, 2};
  s.latent_channels = 2;
  return s;
}

ActorSpec toy_actor(const ModelSpec& m) {
  ActorSpec a;
  a.task = m.task;
  a.n = m.n;
  a.target_size = shape_size(m.output_shape());
  a.frames = m.net.frames;
  a.height = m.net.height;
  a.width = m.net.width;
  a.channels = 2;
  a.bottleneck = 4;
  return a;
}

Shape batched(std::size_t b, Shape s) {
  s.insert(s.begin(), b);
  return s;
}

// Counts-like observations for the retina, positive reals for the optical task.
Tensor observations(const ModelSpec& spec, std::size_t batch, RandomStream& rng) {
  Tensor y = rng.uniform_tensor(batched(batch, spec.output_shape()), 0.0, 1.0);
  if (spec.task == TaskKind::Retina)
    for (auto& v : y.data()) v = std::floor(4.0 * v);
  return y;
}

Case vae_case(std::string name, ModelSpec spec) {
  return {name, [=](ParameterSet& ps, RandomStream& rng) -> LossBuilder {
            VaeModel model = init_vae(spec, rng.next_u64());
            // Non-zero biases so their gradients are exercised too.
            for (auto& p : model.params) ps.add(p.name, p.value + rng.normal_tensor(p.value.shape(), 0.05));
            const std::size_t b = 2;
            Tensor x = rng.uniform_tensor(batched(b, spec.input_shape()), 0.05, 0.95);
            Tensor y = observations(spec, b, rng);
            const std::uint64_t noise = rng.next_u64();
            return [=](Graph& g, ParameterSet& p) {
              ParamScope scope(g, p);
              RandomStream eps(noise);
              return vae_loss(scope, spec, g.constant(x), g.constant(y), 0.7, eps).total;
            };
          }};
}

Case actor_case(std::string name, ModelSpec spec) {
  return {name, [=](ParameterSet& ps, RandomStream& rng) -> LossBuilder {
            const ActorSpec aspec = toy_actor(spec);
            ActorModel actor = init_actor(aspec, rng.next_u64());
            for (auto& p : actor.params) ps.add(p.name, p.value + rng.normal_tensor(p.value.shape(), 0.05));
            auto model = std::make_shared<VaeModel>(init_vae(spec, rng.next_u64()));
            const std::size_t b = 2;
            Tensor targets = rng.uniform_tensor(batched(b, aspec.target_shape()), 0.05, 0.95);
            Tensor outputs = spec.task == TaskKind::Retina ? rng.uniform_tensor(batched(b, spec.output_shape()), 0.5, 3.0)
                                                           : targets.reshaped(batched(b, spec.output_shape()));
            const std::uint64_t noise = rng.next_u64();
            return [=](Graph& g, ParameterSet& p) {
              ParamScope a(g, p);
              ParamScope m(g, std::as_const(model->params));
              RandomStream prior(noise);
              return actor_loss(a, aspec, m, spec, g.constant(targets), g.constant(outputs), prior);
            };
          }};
}

std::vector<Case> registry() {
  std::vector<Case> c;
  c.push_back(binary_case("matmul", {3, 4}, {4, 2}, [](Var a, Var b) { return matmul(a, b); }));
  c.push_back(binary_case("add", {2, 3}, {2, 3}, [](Var a, Var b) { return add(a, b); }));
  c.push_back(binary_case("sub", {2, 3}, {2, 3}, [](Var a, Var b) { return sub(a, b); }));
  c.push_back(binary_case("mul", {2, 3}, {2, 3}, [](Var a, Var b) { return mul(a, b); }));
  c.push_back(unary_case("scale", {5}, [](Var a) { return scale(a, -1.7); }));
  c.push_back(binary_case("add_bias", {2, 3, 2, 2}, {3}, [](Var a, Var b) { return add_bias(a, b); }));
  c.push_back(binary_case("conv2d", {2, 5, 4}, {3, 2, 3, 3}, [](Var a, Var b) { return conv2d(a, b); }));
  c.push_back(binary_case("conv2d_batched_valid_stride2", {2, 2, 7, 6}, {2, 2, 3, 2},
                          [](Var a, Var b) { return conv2d(a, b, 2, Padding::None); }));
  c.push_back(unary_case("maxpool2x2", {2, 5, 4}, [](Var a) { return maxpool2x2(a); }));
  c.push_back(unary_case("upsample2x2", {2, 2, 3}, [](Var a) { return upsample2x2(a); }));
  c.push_back(unary_case("zero_pad4", {2, 2, 3}, [](Var a) { return zero_pad4(a, 2); }));
  c.push_back(unary_case("relu", {10}, [](Var a) { return relu(a); }));
  c.push_back(unary_case("sigmoid", {10}, [](Var a) { return sigmoid(a); }));
  c.push_back(unary_case("exponential", {10}, [](Var a) { return exponential(a); }));
  c.push_back(unary_case("identity", {10}, [](Var a) { return activation(a, Activation::Identity); }));
  c.push_back(binary_case("mse_loss", {2, 3}, {2, 3}, [](Var a, Var b) { return mse_loss(a, b); }));
  c.push_back({"poisson_nll", [](ParameterSet& ps, RandomStream& rng) -> LossBuilder {
                 ps.add("rate", rng.uniform_tensor({2, 3}, 0.5, 3.0));
                 Tensor counts = rng.uniform_tensor({2, 3}, 0.0, 5.0);
                 for (auto& v : counts.data()) v = std::floor(v);
                 return [counts](Graph& g, ParameterSet& p) {
                   return poisson_nll(g.parameter(p[0]), g.constant(counts));
                 };
               }});
  c.push_back(binary_case("kl_diag_gaussian", {3, 4}, {3, 4}, [](Var a, Var b) { return kl_diag_gaussian(a, b); }));
  c.push_back({"reparameterize", [](ParameterSet& ps, RandomStream& rng) -> LossBuilder {
                 ps.add("mu", rng.normal_tensor({2, 3}));
                 ps.add("log_var", rng.normal_tensor({2, 3}));
                 Tensor w = rng.normal_tensor({2, 3});
                 const std::uint64_t noise = rng.next_u64();
                 return [w, noise](Graph& g, ParameterSet& p) {
                   RandomStream eps(noise);
                   return weighted(reparameterize(g.parameter(p[0]), g.parameter(p[1]), eps), w);
                 };
               }});
  c.push_back(unary_case("reshape", {2, 6}, [](Var a) { return reshape(a, {3, 4}); }));
  c.push_back(unary_case("permute", {2, 3, 4}, [](Var a) { return permute(a, {2, 0, 1}); }));
  c.push_back(binary_case("concat", {2, 3}, {2, 2}, [](Var a, Var b) {
    Var parts[] = {a, b, a};
    return concat(parts, 1);
  }));
  c.push_back(unary_case("slice", {3, 5}, [](Var a) { return slice(a, 1, 1, 4); }));
  c.push_back(unary_case("repeat_interleave", {2, 3}, [](Var a) { return repeat_interleave(a, 3); }));
  c.push_back(unary_case("phasor", {2, 4}, [](Var a) { return phasor(a); }, 0.0, 1.0));
  c.push_back(unary_case("intensity_pairs", {2, 6}, [](Var a) { return intensity_pairs(a); }));
  c.push_back(unary_case("sum", {2, 3}, [](Var a) { return scale(sum(a), 1.3); }));
  c.push_back(unary_case("mean", {2, 3}, [](Var a) { return scale(mean(a), 1.3); }));
  c.push_back(vae_case("vae_loss_optical_intensity", toy_optical_model(DecoderKind::Intensity)));
  c.push_back(vae_case("vae_loss_optical_field", toy_optical_model(DecoderKind::Field)));
  c.push_back(vae_case("vae_loss_optical_mlp", toy_optical_model(DecoderKind::Mlp)));
  c.push_back(vae_case("vae_loss_retina", toy_retina_model()));
  c.push_back(actor_case("actor_loss_optical", toy_optical_model(DecoderKind::Intensity)));
  c.push_back(actor_case("actor_loss_retina", toy_retina_model()));
  return c;
}

}  // namespace

std::vector<std::string> gradcheck_names() {
  std::vector<std::string> names;
  for (const auto& c : registry()) names.push_back(c.name);
  return names;
}

std::vector<GradcheckRow> run_gradcheck_suite(std::uint64_t seed, std::size_t seeds, double tol) {
  std::vector<GradcheckRow> rows;
  std::size_t index = 0;
  for (const auto& c : registry()) {
    GradcheckRow row{c.name, seeds, 0, 0.0, tol, true};
    for (std::size_t s = 0; s < seeds; ++s) {
      RandomStream rng(seed * 1000003ULL + index * 7919ULL + s);
      ParameterSet ps;
      LossBuilder f = c.make(ps, rng);
      GradcheckReport rep = finite_difference_check(c.name, f, ps, 1e-6, tol);
      row.coordinates = rep.coordinates;
      row.max_rel_error = std::max(row.max_rel_error, rep.max_rel_error);
      row.pass = row.pass && rep.pass;
    }
    rows.push_back(row);
    ++index;
  }
  return rows;
}

}  // namespace physctl
