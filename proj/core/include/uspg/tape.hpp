#pragma once

#include <functional>
#include <vector>

#include "uspg/tensor.hpp"

namespace uspg {

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Define-by-run reverse-mode tape over dense double tensors.
///
/// Values are recorded in program order; backward() replays the recorded
/// closures in exact reverse order and accumulates gradients additively.
/// A tape is single-owner: one forward recording, one backward pass.
class Tape {
 public:
  Var constant(Tensor t);
  Var param(Tensor t);

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;
  bool is_param(Var v) const;

  // Elementwise; shapes must match exactly.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var divide(Var a, Var b);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var relu(Var a);
  Var sigmoid(Var a);
  Var abs(Var a);
  Var square(Var a);

  /// Mean over all elements -> scalar.
  Var mean(Var a);

  /// x: (Ci,H,W), w: (Co,Ci,3,3) -> (Co,H,W); stride 1, zero "same" padding.
  Var conv2d(Var x, Var w);

  /// x: (C,H,W) + b: (C) broadcast over space.
  Var bias_add(Var x, Var b);

  /// Concatenate along the channel axis: (Ca,H,W) + (Cb,H,W) -> (Ca+Cb,H,W).
  Var concat_channels(Var a, Var b);

  /// Separable blur with a fixed (non-differentiated) symmetric 1-D kernel,
  /// zero padding, applied per channel of (C,H,W) or to (H,W).
  Var blur2d(Var x, const std::vector<double>& kernel1d);

  /// Drop a margin of `m` pixels on every spatial border.
  Var crop(Var x, int m);

  /// Same element count, new shape.
  Var reshape(Var x, Shape s);

  /// Mean of a list of same-shaped vars.
  Var mean_of(const std::vector<Var>& xs);

  /// Sum of a list of scalars (or same-shaped vars).
  Var add_n(const std::vector<Var>& xs);

  /// Escape hatch for hand-differentiated ops (rasterizer, pose chain).
  /// `backward` runs with the tape during the reverse sweep; it should read
  /// grad(out) and accumulate into grads of its inputs via accumulate_grad().
  Var custom(Tensor value, std::function<void(Tape&, Var out)> backward);

  void accumulate_grad(Var v, const Tensor& g);
  void accumulate_grad(Var v, int index, double g);

  /// Reverse sweep from a scalar loss. Gradients of every recorded value are
  /// available afterwards; values not reachable from `loss` keep exact zeros.
  void backward(Var loss);

  int node_count() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Tape&, Var)> backward;
    bool is_param = false;
  };

  Var push(Tensor value, std::function<void(Tape&, Var)> bw, bool is_param = false);
  Node& node(Var v);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

/// One-sided wrappers used by tests and the FD harness.
Tensor conv2d_forward(const Tensor& x, const Tensor& w);

}  // namespace uspg
