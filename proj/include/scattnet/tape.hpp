#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "scattnet/tensor.hpp"

namespace scattnet {

enum class Padding { Same, Valid };
enum class PoolMode { Max, Avg };
enum class PoolScope { Windowed, GlobalSpatial, GlobalChannel };
enum class Activation { Sigmoid, Relu };

// Reverse-mode tape. Node ids index an append-only list, so every node's
// inputs precede it and backward() is a single reverse sweep. A tape is
// confined to one logical thread; tensors it hands out are immutable values.
class Tape {
 public:
  using NodeId = int;
  static constexpr NodeId kNone = -1;

  // Backward hooks receive the tape and their own node id, read
  // grad(node), and accumulate into their inputs via accumulate_grad.
  using BackwardFn = std::function<void(Tape&, NodeId)>;

  NodeId leaf(Tensor value);
  // Registers a computed node. Throws NumericError if the value is
  // non-finite.
  NodeId push(Tensor value, std::vector<NodeId> inputs, BackwardFn backward,
              const char* op_name);

  const Tensor& value(NodeId id) const;
  // Valid after backward(); nodes the loss never reached report zeros.
  const Tensor& grad(NodeId id) const;
  void accumulate_grad(NodeId id, const Tensor& g);
  std::size_t size() const { return nodes_.size(); }

  void backward(NodeId loss);

  // ---- primitive ops -------------------------------------------------
  // Cross-correlation (no kernel flip), zero padding for Same mode.
  // input [N,Cin,H,W], kernel [Cout,Cin,kh,kw], bias [Cout] or kNone.
  NodeId conv2d(NodeId input, NodeId kernel, NodeId bias, int stride,
                Padding padding);
  // window/stride only used for Windowed scope.
  NodeId pool2d(NodeId input, PoolMode mode, PoolScope scope, int window = 0,
                int stride = 0);
  // input [...,K] x weights [K,M] (+ bias [M]); leading dims broadcast.
  NodeId dense(NodeId input, NodeId weights, NodeId bias = kNone);
  NodeId activation(NodeId input, Activation kind);
  NodeId sigmoid(NodeId input) { return activation(input, Activation::Sigmoid); }
  NodeId relu(NodeId input) { return activation(input, Activation::Relu); }
  // logits [N,K,H,W] -> per-pixel distribution over K, max-subtracted.
  NodeId softmax_channels(NodeId logits);

  NodeId add(NodeId a, NodeId b);                 // same shape
  // a [N,C,H,W] times w of shape [N,C,H,W], [N,C,1,1] or [N,1,H,W].
  NodeId mul_broadcast(NodeId a, NodeId w);
  NodeId scale(NodeId a, float factor);
  NodeId reshape(NodeId a, std::vector<int> new_shape);
  NodeId concat_channels(NodeId a, NodeId b);     // along dim 1
  NodeId upsample2x_nearest(NodeId input);        // [N,C,H,W]->[N,C,2H,2W]
  NodeId sum_all(NodeId a);                       // -> scalar [1]

 private:
  struct Node {
    Tensor value;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    const char* op_name;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> grad_set_;
  Tensor zero_grad_scratch_;

  const Node& node(NodeId id) const;
};

// Output spatial size of a convolution/pool along one axis.
int conv_out_extent(int in, int kernel, int stride, int pad_total);

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t coords = 0;
};

// Central-difference comparison of the tape gradient of a scalar-valued
// tensor function. `f` must be deterministic: it maps (tape, input node)
// to a scalar loss node. rel err denominator is max(|analytic|,|numeric|,
// denom_floor).
GradCheckResult finite_diff_check(
    const std::function<Tape::NodeId(Tape&, Tape::NodeId)>& f,
    const Tensor& at, float eps, double denom_floor = 0.1);

}  // namespace scattnet
