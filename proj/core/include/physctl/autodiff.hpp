#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "physctl/tensor.hpp"

namespace physctl {

struct Parameter;
class Graph;

enum class OpKind {
  Constant,
  Parameter,
  MatMul,
  Add,
  Sub,
  Mul,
  Scale,
  AddBias,
  Conv2d,
  MaxPool2x2,
  Upsample2x2,
  ZeroPad4,
  Relu,
  Sigmoid,
  Exponential,
  Identity,
  MseLoss,
  PoissonNll,
  KlDiagGaussian,
  Reparameterize,
  Reshape,
  Permute,
  Concat,
  Slice,
  RepeatInterleave,
  Phasor,
  IntensityPairs,
  Sum,
  Mean,
};

std::string_view op_name(OpKind kind);

using NodeId = std::size_t;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  NodeId id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Define-by-run tape. Nodes are appended in evaluation order, so the node
// list is always topologically sorted.
class Graph {
 public:
  // Rule receives the gradient of node `self`'s output and pushes gradients
  // to inputs through Graph::accumulate.
  using BackwardFn = std::function<void(const Tensor& out_grad, Graph& graph, NodeId self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Trainable leaf; backward() writes its gradient into `p.grad`.
  Var parameter(Parameter& p);

  Var record(OpKind kind, Tensor value, std::vector<NodeId> inputs, BackwardFn backward);

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient of the last backward() target with respect to node `id`; zeros
  // when the node was not reached.
  Tensor grad(NodeId id) const;
  Tensor grad(Var v) const { return grad(v.id); }

  void accumulate(NodeId id, const Tensor& g);
  // Gradient buffer for in-place accumulation (allocated on first use).
  Tensor& grad_buffer(NodeId id);

  // Reverse sweep from a scalar node. Every bound parameter receives a
  // gradient (zeros if unreachable).
  void backward(Var loss);

 private:
  struct Node {
    OpKind kind;
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<NodeId> inputs;
    BackwardFn backward;
  };

  // deque keeps value references stable while nodes are appended.
  std::deque<Node> nodes_;
  std::vector<std::pair<NodeId, Parameter*>> bound_;
};

// Test-only hook: corrupts the backward rule of one op kind (its incoming
// gradient is scaled by 1.25) so the gradient checker can be shown to fail.
void inject_backward_fault(std::optional<OpKind> kind);
std::optional<OpKind> injected_backward_fault();

}  // namespace physctl
