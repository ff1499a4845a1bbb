#pragma once

#include "physctl/layers.hpp"

namespace physctl {

// Spatio-temporal rate CNN shared by the retina proxy and the retina decoder:
// spatial conv k1 (no pad) -> temporal conv kt x 1 (same) + relu -> spatial
// conv k2 (no pad) + relu -> per-frame dense to `cells` log-rates.
struct RateNetShape {
  std::size_t in_channels = 1;
  std::size_t channels = 4;
  std::size_t frames = 20;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t k1 = 5;
  std::size_t kt = 5;
  std::size_t k2 = 5;
  std::size_t cells = 4;

  std::size_t h1() const { return height - k1 + 1; }
  std::size_t w1() const { return width - k1 + 1; }
  std::size_t h2() const { return h1() - k2 + 1; }
  std::size_t w2() const { return w1() - k2 + 1; }
  std::size_t features() const { return channels * h2() * w2(); }
  void validate() const;
};

void add_rate_net(ParameterSet& ps, const std::string& prefix, const RateNetShape& shape, RandomStream& rng);

// x [B*T x in_channels x H x W] -> log-rates [B x T x cells].
Var rate_net_logits(ParamScope& scope, const std::string& prefix, const RateNetShape& shape, Var x,
                    std::size_t batch);

}  // namespace physctl
