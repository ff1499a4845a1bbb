#pragma once

#include <span>
#include <vector>

#include "physctl/autodiff.hpp"
#include "physctl/random.hpp"

namespace physctl {

enum class Activation { Relu, Sigmoid, Exponential, Identity };
enum class Padding { Same, None };

// [r x k] . [k x c] -> [r x c]
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);

// Broadcast a bias over the feature axis: rank 1 elementwise, rank 2 columns
// [B x c], rank 3 channels [C x H x W], rank 4 channels [N x C x H x W].
Var add_bias(Var x, Var bias);

// Cross-correlation. input [C x H x W] or [N x C x H x W], kernels
// [O x C x kh x kw]. Same padding gives ceil(H / stride) rows.
Var conv2d(Var input, Var kernels, std::size_t stride = 1, Padding padding = Padding::Same);

// 2x2 max pooling over the last two axes. An odd trailing row or column pools
// over its truncated window, so extents become ceil(H / 2), ceil(W / 2).
Var maxpool2x2(Var input);
// Nearest-neighbour 2x upsampling over the last two axes.
Var upsample2x2(Var input);
// Zero border of width p on all four sides of the last two axes.
Var zero_pad4(Var input, std::size_t p);

Var activation(Var x, Activation kind);
inline Var relu(Var x) { return activation(x, Activation::Relu); }
inline Var sigmoid(Var x) { return activation(x, Activation::Sigmoid); }
inline Var exponential(Var x) { return activation(x, Activation::Exponential); }

// Mean of squared differences.
Var mse_loss(Var pred, Var target);

struct PoissonOptions {
  bool clamp = false;
  double floor = 1e-8;
};
// Mean of (rate - counts * ln rate); the ln(counts!) constant is dropped.
Var poisson_nll(Var rate, Var counts, PoissonOptions options = {});

// KL(N(mu, exp(log_var)) || N(0, I)). For [B x l] inputs the per-row KL is
// averaged over rows.
Var kl_diag_gaussian(Var mu, Var log_var);

// mu + exp(log_var / 2) * eps with eps ~ N(0, I) drawn from rng.
Var reparameterize(Var mu, Var log_var, RandomStream& rng);

Var reshape(Var x, Shape shape);
Var permute(Var x, std::vector<std::size_t> axes);
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);
// Repeat every slice of the leading axis `times` times in place.
Var repeat_interleave(Var x, std::size_t times);

// Last axis n -> 2n: [cos(2 pi x), sin(2 pi x)].
Var phasor(Var x);
// Last axis 2m -> m: re^2 + im^2 of interleaved (re, im) pairs.
Var intensity_pairs(Var x);

Var sum(Var x);
Var mean(Var x);

}  // namespace physctl
