#include "physctl/rate_net.hpp"

#include "physctl/error.hpp"

namespace physctl {

void RateNetShape::validate() const {
  if (in_channels == 0 || channels == 0 || frames == 0 || cells == 0)
    throw DimensionError("rate net: channel, frame and cell counts must be positive");
  if (kt % 2 == 0) throw DimensionError("rate net: temporal kernel must be odd");
  if (k1 == 0 || k2 == 0 || k1 + k2 > height + 1 || k1 + k2 > width + 1)
    throw DimensionError("rate net: spatial kernels do not fit a " + std::to_string(height) + "x" +
                         std::to_string(width) + " frame");
}

void add_rate_net(ParameterSet& ps, const std::string& prefix, const RateNetShape& s, RandomStream& rng) {
  s.validate();
  add_conv(ps, prefix + ".spatial1", s.channels, s.in_channels, s.k1, s.k1, rng);
  add_conv(ps, prefix + ".temporal", s.channels, s.channels, s.kt, 1, rng);
  add_conv(ps, prefix + ".spatial2", s.channels, s.channels, s.k2, s.k2, rng);
  add_dense(ps, prefix + ".head", s.features(), s.cells, rng);
}

Var rate_net_logits(ParamScope& scope, const std::string& prefix, const RateNetShape& s, Var x,
                    std::size_t batch) {
  const std::size_t t = s.frames, c = s.channels, p1 = s.h1() * s.w1();
  Var h = conv(scope, prefix + ".spatial1", x, Padding::None);
  // Temporal conv runs over [B x C x T x pixels] so movies never mix.
  h = permute(reshape(h, {batch, t, c, p1}), {0, 2, 1, 3});
  h = conv(scope, prefix + ".temporal", h, Activation::Relu, Padding::Same);
  h = reshape(permute(h, {0, 2, 1, 3}), {batch * t, c, s.h1(), s.w1()});
  h = conv(scope, prefix + ".spatial2", h, Activation::Relu, Padding::None);
  h = dense(scope, prefix + ".head", reshape(h, {batch * t, s.features()}));
  return reshape(h, {batch, t, s.cells});
}

}  // namespace physctl
