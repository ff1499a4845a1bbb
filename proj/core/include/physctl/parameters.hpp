#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "physctl/adam.hpp"
#include "physctl/tensor.hpp"

namespace physctl {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  AdamState adam;

  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), adam(value.shape()) {}
};

// Ordered, named collection of parameters owned by one network.
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor value);

  Parameter& operator[](std::size_t i) { return params_.at(i); }
  const Parameter& operator[](std::size_t i) const { return params_.at(i); }
  std::size_t size() const noexcept { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  const Parameter* find(const std::string& name) const;
  Parameter* find(const std::string& name);
  std::size_t element_count() const;

  void zero_grad();
  // One Adam update of every parameter from its current gradient.
  void adam_step(const AdamConfig& config);

  // FNV-1a over names, shapes and raw bytes of the values.
  std::uint64_t checksum() const;

 private:
  std::vector<Parameter> params_;
};

}  // namespace physctl
