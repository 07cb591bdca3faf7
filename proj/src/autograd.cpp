#include "binrep/autograd.hpp"

#include <cmath>
#include <memory>

#include "binrep/error.hpp"

namespace binrep {

Parameter::Parameter(std::string n, Tensor v, bool d)
    : name(std::move(n)), value(std::move(v)), grad(value.shape()), velocity(value.shape()),
      decay(d) {}

const Tape::Node& Tape::node(NodeId id) const {
  if (id >= nodes_.size()) {
    throw StateError("node " + std::to_string(id) + " does not exist on this tape");
  }
  return nodes_[id];
}

const Tensor& Tape::value(NodeId id) const { return node(id).value; }

const Tensor& Tape::grad(NodeId id) const {
  const Node& n = node(id);
  if (!swept_) throw StateError("gradients requested before backward()");
  return n.grad;
}

OpTag Tape::tag(NodeId id) const { return node(id).tag; }

Tensor* Tape::grad_slot(NodeId id) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return nullptr;
  if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
  return &n.grad;
}

NodeId Tape::push(OpTag tag, std::vector<NodeId> inputs, Tensor value, Backprop backprop) {
  if (swept_) throw StateError("cannot record onto a tape that has already been swept");
  bool needs = false;
  for (NodeId in : inputs) needs = needs || node(in).needs_grad;
  nodes_.push_back(Node{tag, std::move(inputs), std::move(value), Tensor{}, nullptr, needs,
                        std::move(backprop)});
  return nodes_.size() - 1;
}

NodeId Tape::constant(Tensor value) {
  return push(OpTag::Constant, {}, std::move(value), nullptr);
}

NodeId Tape::parameter(Parameter& p) {
  NodeId id = push(OpTag::Param, {}, p.value, nullptr);
  nodes_[id].param = &p;
  nodes_[id].needs_grad = p.trainable;
  return id;
}

NodeId Tape::fc(NodeId input, NodeId weight, NodeId bias) {
  Tensor out = kernels::fc_forward(value(input), value(weight), value(bias));
  return push(OpTag::Fc, {input, weight, bias}, std::move(out), [](Tape& t, NodeId self) {
    const Node& n = t.nodes_[self];
    const auto [x, w, b] = std::tuple{n.inputs[0], n.inputs[1], n.inputs[2]};
    kernels::fc_backward(t.nodes_[x].value, t.nodes_[w].value, n.grad, t.grad_slot(x),
                         t.grad_slot(w), t.grad_slot(b));
  });
}

NodeId Tape::conv2d(NodeId input, NodeId weight, NodeId bias, kernels::ConvGeometry g) {
  Tensor out = kernels::conv2d_forward(value(input), value(weight), value(bias), g);
  return push(OpTag::Conv2d, {input, weight, bias}, std::move(out), [g](Tape& t, NodeId self) {
    const Node& n = t.nodes_[self];
    const auto [x, w, b] = std::tuple{n.inputs[0], n.inputs[1], n.inputs[2]};
    kernels::conv2d_backward(t.nodes_[x].value, t.nodes_[w].value, n.grad, g, t.grad_slot(x),
                             t.grad_slot(w), t.grad_slot(b));
  });
}

NodeId Tape::maxpool(NodeId input, std::size_t window, std::size_t stride) {
  auto pooled = kernels::maxpool_forward(value(input), window, stride);
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(std::move(pooled.argmax));
  return push(OpTag::MaxPool, {input}, std::move(pooled.output),
              [argmax](Tape& t, NodeId self) {
                const Node& n = t.nodes_[self];
                Tensor* gin = t.grad_slot(n.inputs[0]);
                if (!gin) return;
                for (std::size_t o = 0; o < argmax->size(); ++o) (*gin)[(*argmax)[o]] += n.grad[o];
              });
}

NodeId Tape::relu(NodeId input) {
  const Tensor& x = value(input);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return push(OpTag::Relu, {input}, std::move(out), [](Tape& t, NodeId self) {
    const Node& n = t.nodes_[self];
    Tensor* gin = t.grad_slot(n.inputs[0]);
    if (!gin) return;
    const Tensor& x = t.nodes_[n.inputs[0]].value;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] > 0.0) (*gin)[i] += n.grad[i];
  });
}

NodeId Tape::bounded(NodeId input, NodeId slopes, ActivationMode mode) {
  const Tensor& k = value(slopes);
  BoundedRectifierLayer layer{std::vector<double>(k.values().begin(), k.values().end()), mode, 1};
  auto op = std::make_shared<BoundedRectifier>(std::move(layer));
  Tensor out = op->forward(value(input));
  return push(OpTag::Bounded, {input, slopes}, std::move(out), [op](Tape& t, NodeId self) {
    const Node& n = t.nodes_[self];
    Tensor* gin = t.grad_slot(n.inputs[0]);
    Tensor* gk = t.grad_slot(n.inputs[1]);
    if (!gin && !gk) return;
    const BoundedGradients g = op->backward(n.grad);
    if (gin)
      for (std::size_t i = 0; i < gin->size(); ++i) (*gin)[i] += g.grad_input[i];
    if (gk)
      for (std::size_t c = 0; c < gk->size(); ++c) (*gk)[c] += g.grad_slopes[c];
  });
}

NodeId Tape::flatten(NodeId input) {
  const Tensor& x = value(input);
  const std::size_t batch = x.dim(0);
  Tensor out = x.reshaped(Shape{batch, x.size() / batch});
  return push(OpTag::Flatten, {input}, std::move(out), [](Tape& t, NodeId self) {
    const Node& n = t.nodes_[self];
    Tensor* gin = t.grad_slot(n.inputs[0]);
    if (!gin) return;
    for (std::size_t i = 0; i < gin->size(); ++i) (*gin)[i] += n.grad[i];
  });
}

NodeId Tape::softmax_ce(NodeId logits, std::span<const int> labels) {
  auto r = kernels::softmax_ce_loss(value(logits), labels);
  auto dlogits = std::make_shared<Tensor>(std::move(r.grad));
  return push(OpTag::SoftmaxCe, {logits}, Tensor::scalar(r.loss),
              [dlogits](Tape& t, NodeId self) {
                const Node& n = t.nodes_[self];
                Tensor* gin = t.grad_slot(n.inputs[0]);
                if (!gin) return;
                const double up = n.grad[0];
                for (std::size_t i = 0; i < gin->size(); ++i) (*gin)[i] += up * (*dlogits)[i];
              });
}

NodeId Tape::growth_loss(NodeId slopes) {
  const Tensor& k = value(slopes);
  double loss = 0.0;
  for (double v : k.values()) {
    if (v == 0.0) throw SingularityError("growth loss undefined for a zero slope");
    loss -= std::log(std::abs(v));
  }
  return push(OpTag::GrowthLoss, {slopes}, Tensor::scalar(loss), [](Tape& t, NodeId self) {
    const Node& n = t.nodes_[self];
    Tensor* gk = t.grad_slot(n.inputs[0]);
    if (!gk) return;
    const Tensor& k = t.nodes_[n.inputs[0]].value;
    // d(-ln|k|)/dk = -1/k for either sign of k.
    for (std::size_t i = 0; i < k.size(); ++i) (*gk)[i] -= n.grad[0] / k[i];
  });
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (x.shape() != y.shape()) {
    throw DimensionError("add: shape mismatch " + shape_string(x.shape()) + " vs " +
                         shape_string(y.shape()));
  }
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  return push(OpTag::Add, {a, b}, std::move(out), [](Tape& t, NodeId self) {
    const Node& n = t.nodes_[self];
    for (NodeId in : n.inputs) {
      Tensor* g = t.grad_slot(in);
      if (!g) continue;
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
    }
  });
}

NodeId Tape::scale(NodeId a, double factor) {
  Tensor out = value(a);
  for (double& v : out.values()) v *= factor;
  return push(OpTag::Scale, {a}, std::move(out), [factor](Tape& t, NodeId self) {
    const Node& n = t.nodes_[self];
    Tensor* g = t.grad_slot(n.inputs[0]);
    if (!g) return;
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += factor * n.grad[i];
  });
}

NodeId Tape::dot(NodeId input, Tensor weights) {
  const Tensor& x = value(input);
  if (weights.size() != x.size()) {
    throw DimensionError("dot: weight count " + std::to_string(weights.size()) +
                         " does not match input " + shape_string(x.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += weights[i] * x[i];
  auto w = std::make_shared<Tensor>(std::move(weights));
  return push(OpTag::Dot, {input}, Tensor::scalar(s), [w](Tape& t, NodeId self) {
    const Node& n = t.nodes_[self];
    Tensor* g = t.grad_slot(n.inputs[0]);
    if (!g) return;
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[0] * (*w)[i];
  });
}

void Tape::backward(NodeId root) {
  if (nodes_.empty()) throw StateError("backward called before any forward computation");
  if (root >= nodes_.size()) throw StateError("backward root is not on this tape");
  if (swept_) throw StateError("tape has already been swept; rebuild the graph per batch");
  swept_ = true;

  std::vector<bool> reachable(root + 1, false);
  reachable[root] = true;
  for (NodeId id = root + 1; id-- > 0;) {
    if (!reachable[id]) continue;
    for (NodeId in : nodes_[id].inputs) reachable[in] = true;
  }

  if (!nodes_[root].needs_grad) return;
  nodes_[root].grad = Tensor(nodes_[root].value.shape(), 1.0);

  for (NodeId id = root + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!reachable[id] || !n.needs_grad || n.grad.size() != n.value.size()) continue;
    if (n.backprop) n.backprop(*this, id);
    if (n.param && n.param->trainable) {
      Tensor& pg = n.param->grad;
      if (pg.shape() != n.grad.shape()) pg = Tensor(n.grad.shape());
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
    }
  }
}

void sgd_step(std::span<Parameter* const> params, double learning_rate, double momentum,
              double weight_decay) {
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    if (p->velocity.shape() != p->value.shape()) p->velocity = Tensor(p->value.shape());
    const double wd = p->decay ? weight_decay : 0.0;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      p->velocity[i] = momentum * p->velocity[i] - learning_rate * (p->grad[i] + wd * p->value[i]);
      p->value[i] += p->velocity[i];
    }
  }
}

}  // namespace binrep
