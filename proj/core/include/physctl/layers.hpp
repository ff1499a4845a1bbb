#pragma once

#include <map>
#include <string>

#include "physctl/ops.hpp"
#include "physctl/parameters.hpp"

namespace physctl {

// Binds named parameters of one set into a graph, once per name. A trainable
// scope creates parameter leaves; a frozen scope copies values in as
// constants, so no gradient can reach them.
class ParamScope {
 public:
  ParamScope(Graph& graph, ParameterSet& params) : graph_(graph), params_(&params), mutable_(&params) {}
  ParamScope(Graph& graph, const ParameterSet& params) : graph_(graph), params_(&params) {}

  Var operator()(const std::string& name);
  Graph& graph() noexcept { return graph_; }
  bool trainable() const noexcept { return mutable_ != nullptr; }

 private:
  Graph& graph_;
  const ParameterSet* params_;
  ParameterSet* mutable_ = nullptr;
  std::map<std::string, Var> bound_;
};

// Glorot-uniform weights, zero bias.
void add_dense(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t out, RandomStream& rng);
void add_conv(ParameterSet& ps, const std::string& prefix, std::size_t out_channels, std::size_t in_channels,
              std::size_t kh, std::size_t kw, RandomStream& rng);

// x [B x in] -> [B x out]
Var dense(ParamScope& scope, const std::string& prefix, Var x);
Var dense(ParamScope& scope, const std::string& prefix, Var x, Activation act);
Var conv(ParamScope& scope, const std::string& prefix, Var x, Padding padding = Padding::Same,
         std::size_t stride = 1);
Var conv(ParamScope& scope, const std::string& prefix, Var x, Activation act, Padding padding = Padding::Same);

}  // namespace physctl
