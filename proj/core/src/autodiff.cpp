#include "physctl/autodiff.hpp"


#include "physctl/error.hpp"
#include "physctl/parameters.hpp"

namespace physctl {

namespace {
std::optional<OpKind> g_fault;
}

void inject_backward_fault(std::optional<OpKind> kind) { g_fault = kind; }
std::optional<OpKind> injected_backward_fault() { return g_fault; }

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Parameter: return "parameter";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddBias: return "add_bias";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::MaxPool2x2: return "maxpool2x2";
    case OpKind::Upsample2x2: return "upsample2x2";
    case OpKind::ZeroPad4: return "zero_pad4";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Exponential: return "exponential";
    case OpKind::Identity: return "identity";
    case OpKind::MseLoss: return "mse_loss";
    case OpKind::PoissonNll: return "poisson_nll";
    case OpKind::KlDiagGaussian: return "kl_diag_gaussian";
    case OpKind::Reparameterize: return "reparameterize";
    case OpKind::Reshape: return "reshape";
    case OpKind::Permute: return "permute";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::RepeatInterleave: return "repeat_interleave";
    case OpKind::Phasor: return "phasor";
    case OpKind::IntensityPairs: return "intensity_pairs";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (!graph) throw ContractError("use of unbound Var");
  return graph->value(id);
}

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{OpKind::Constant, std::move(value), Tensor(), false, false, {}, nullptr});
  return Var{this, nodes_.size() - 1};
}

Var Graph::parameter(Parameter& p) {
  nodes_.push_back(Node{OpKind::Parameter, p.value, Tensor(), false, true, {}, nullptr});
  bound_.emplace_back(nodes_.size() - 1, &p);
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(OpKind kind, Tensor value, std::vector<NodeId> inputs, BackwardFn backward) {
  bool needs = false;
  for (auto id : inputs) {
    if (id >= nodes_.size()) throw ContractError("graph input id out of range");
    needs = needs || nodes_[id].requires_grad;
  }
  nodes_.push_back(Node{kind, std::move(value), Tensor(), false, needs, std::move(inputs),
                        needs ? std::move(backward) : nullptr});
  return Var{this, nodes_.size() - 1};
}

Tensor Graph::grad(NodeId id) const {
  const Node& n = nodes_.at(id);
  if (n.has_grad) return n.grad;
  return Tensor(n.value.shape());
}

Tensor& Graph::grad_buffer(NodeId id) {
  Node& n = nodes_.at(id);
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Graph::accumulate(NodeId id, const Tensor& g) {
  if (!nodes_.at(id).requires_grad) return;
  Tensor& buf = grad_buffer(id);
  require_same_shape(buf, g, "gradient accumulation");
  buf += g;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw ContractError("backward on a Var of another graph");
  if (value(loss.id).size() != 1)
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(value(loss.id).shape()));
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  grad_buffer(loss.id)[0] = 1.0;
  for (NodeId i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    if (g_fault && *g_fault == n.kind) {
      Tensor corrupted = n.grad;
      corrupted *= 1.25;
      n.backward(corrupted, *this, i);
    } else {
      // Copy: the rule may append to other nodes' buffers but never to its own.
      const Tensor g = n.grad;
      n.backward(g, *this, i);
    }
  }
  for (auto& [id, p] : bound_) p->grad = Tensor(p->value.shape());
  for (auto& [id, p] : bound_)
    if (nodes_[id].has_grad) p->grad += nodes_[id].grad;
}

}  // namespace physctl
