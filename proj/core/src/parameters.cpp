#include "physctl/parameters.hpp"

#include <cstring>

#include "physctl/error.hpp"

namespace physctl {

std::size_t ParameterSet::add(std::string name, Tensor value) {
  if (find(name)) throw ContractError("duplicate parameter name " + name);
  params_.emplace_back(std::move(name), std::move(value));
  return params_.size() - 1;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

Parameter* ParameterSet::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_)
    for (auto& g : p.grad.data()) g = 0.0;
}

void ParameterSet::adam_step(const AdamConfig& config) {
  for (auto& p : params_) physctl::adam_step(p.value, p.grad, p.adam, config);
}

std::uint64_t ParameterSet::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& p : params_) {
    mix(p.name.data(), p.name.size());
    for (auto e : p.value.shape()) mix(&e, sizeof e);
    mix(p.value.raw(), p.value.size() * sizeof(double));
  }
  return h;
}

}  // namespace physctl
