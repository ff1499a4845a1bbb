#include "physctl/adam.hpp"

#include <cmath>

#include "physctl/error.hpp"

namespace physctl {

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& config) {
  require_same_shape(param, grad, "adam_step");
  if (state.first_moment.shape() != param.shape()) {
    state.first_moment = Tensor(param.shape());
    state.second_moment = Tensor(param.shape());
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  auto p = param.data();
  auto g = grad.data();
  auto m = state.first_moment.data();
  auto v = state.second_moment.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
    v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    p[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

}  // namespace physctl
