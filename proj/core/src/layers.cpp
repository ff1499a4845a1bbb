#include "physctl/layers.hpp"

#include <cmath>

#include "physctl/error.hpp"

namespace physctl {

Var ParamScope::operator()(const std::string& name) {
  if (auto it = bound_.find(name); it != bound_.end()) return it->second;
  Var v;
  if (mutable_) {
    Parameter* p = mutable_->find(name);
    if (!p) throw ContractError("no parameter named " + name);
    v = graph_.parameter(*p);
  } else {
    const Parameter* p = params_->find(name);
    if (!p) throw ContractError("no parameter named " + name);
    v = graph_.constant(p->value);
  }
  bound_.emplace(name, v);
  return v;
}

namespace {

Tensor glorot(Shape shape, double fan_in, double fan_out, RandomStream& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  return rng.uniform_tensor(std::move(shape), -limit, limit);
}

}  // namespace

void add_dense(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t out, RandomStream& rng) {
  ps.add(prefix + ".w", glorot({in, out}, static_cast<double>(in), static_cast<double>(out), rng));
  ps.add(prefix + ".b", Tensor({out}));
}

void add_conv(ParameterSet& ps, const std::string& prefix, std::size_t out_channels, std::size_t in_channels,
              std::size_t kh, std::size_t kw, RandomStream& rng) {
  const double area = static_cast<double>(kh * kw);
  ps.add(prefix + ".w", glorot({out_channels, in_channels, kh, kw}, in_channels * area, out_channels * area, rng));
  ps.add(prefix + ".b", Tensor({out_channels}));
}

Var dense(ParamScope& scope, const std::string& prefix, Var x) {
  return add_bias(matmul(x, scope(prefix + ".w")), scope(prefix + ".b"));
}

Var dense(ParamScope& scope, const std::string& prefix, Var x, Activation act) {
  return activation(dense(scope, prefix, x), act);
}

Var conv(ParamScope& scope, const std::string& prefix, Var x, Padding padding, std::size_t stride) {
  return add_bias(conv2d(x, scope(prefix + ".w"), stride, padding), scope(prefix + ".b"));
}

Var conv(ParamScope& scope, const std::string& prefix, Var x, Activation act, Padding padding) {
  return activation(conv(scope, prefix, x, padding), act);
}

}  // namespace physctl
