#pragma once

// Define-by-run reverse-mode differentiation. A Tape records one forward
// pass; nodes are appended in evaluation order, so the node vector is already
// a topological order and backward() is a single reverse sweep.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "binrep/activation.hpp"
#include "binrep/kernels.hpp"
#include "binrep/tensor.hpp"

namespace binrep {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor velocity;  // momentum buffer owned by the solver
  bool trainable = true;
  bool decay = true;  // weight decay applies

  Parameter() = default;
  Parameter(std::string name, Tensor value, bool decay = true);

  void zero_grad() noexcept { grad.fill(0.0); }
};

using NodeId = std::size_t;

enum class OpTag : std::uint8_t {
  Constant,
  Param,
  Fc,
  Conv2d,
  MaxPool,
  Relu,
  Bounded,
  Flatten,
  SoftmaxCe,
  GrowthLoss,
  Add,
  Scale,
  Dot,
};

class Tape {
 public:
  NodeId constant(Tensor value);
  NodeId parameter(Parameter& p);

  NodeId fc(NodeId input, NodeId weight, NodeId bias);
  NodeId conv2d(NodeId input, NodeId weight, NodeId bias, kernels::ConvGeometry g);
  NodeId maxpool(NodeId input, std::size_t window, std::size_t stride);
  NodeId relu(NodeId input);
  NodeId bounded(NodeId input, NodeId slopes, ActivationMode mode);
  NodeId flatten(NodeId input);
  NodeId softmax_ce(NodeId logits, std::span<const int> labels);
  /// sum_i -ln|k_i|; throws SingularityError on a zero slope.
  NodeId growth_loss(NodeId slopes);
  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  /// sum_i w_i * x_i with fixed weights; used to project outputs to a scalar.
  NodeId dot(NodeId input, Tensor weights);

  const Tensor& value(NodeId id) const;
  const Tensor& grad(NodeId id) const;
  OpTag tag(NodeId id) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Seeds the root with ones and propagates to every node it depends on,
  /// accumulating into trainable Parameter gradients. A tape can be swept
  /// once; throws StateError on an empty tape, a bad root, or a second call.
  void backward(NodeId root);

 private:
  using Backprop = std::function<void(Tape&, NodeId)>;

  struct Node {
    OpTag tag;
    std::vector<NodeId> inputs;
    Tensor value;
    Tensor grad;
    Parameter* param = nullptr;
    bool needs_grad = false;
    Backprop backprop;
  };

  NodeId push(OpTag tag, std::vector<NodeId> inputs, Tensor value, Backprop backprop);
  const Node& node(NodeId id) const;
  Tensor* grad_slot(NodeId id);

  std::vector<Node> nodes_;
  bool swept_ = false;
};

/// Momentum SGD with L2 decay on parameters flagged `decay`:
///   v <- momentum*v - lr*(g + wd*p);  p <- p + v
/// Frozen parameters are skipped.
void sgd_step(std::span<Parameter* const> params, double learning_rate, double momentum,
              double weight_decay);

}  // namespace binrep
