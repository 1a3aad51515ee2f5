// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "faststi/tensor.hpp"

namespace faststi {

struct Var {
  int id = -1;
};

// Reverse-accumulation tape over a small fixed operator set: enough to
// express the conditional prior and the noise prediction network without an
// external framework. One tape per forward pass; backward() walks the ops in
// reverse build order.
class Tape {
 public:
  // Leaf that never needs gradients.
  Var constant(Tensor v);
  // Leaf backed by external parameter storage; backward() accumulates the
  // gradient into grad_sink (same length as the value).
  Var param(const double* values, std::vector<std::size_t> shape,
            double* grad_sink);

  Var add(Var a, Var b);
  Var scale(Var a, double s);
  // x[..., Cin] -> [..., Cout]; W is [Cin, Cout], b (optional, id < 0) is [Cout].
  Var linear(Var x, Var W, Var b = Var{-1});
  Var silu(Var x);
  // Normalization over the last axis with learnable gain/bias [C].
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
  // Multi-head attention over already-projected q,k,v of shape [B,S,C];
  // softmax(q k^T / sqrt(C/heads)) v per head.
  Var mha(Var q, Var k, Var v, int heads);
  // Mixes the node axis of x [L,N,C] with a constant N x N matrix.
  Var node_mix(Var x, const std::vector<double>& P, std::size_t N);
  // [L,N,C] -> [N,L,C]
  Var transpose_ln(Var x);
  Var concat_channels(Var a, Var b);
  // Adds a channel vector v[C] to every [.,.,C] row of x.
  Var add_channel_vec(Var x, Var v);
  // Elementwise product with a constant field of the same size.
  Var mul_const(Var x, const std::vector<double>& m);
  Var reshape(Var x, std::vector<std::size_t> shape);
  // Mean of (pred - target)^2 over mask-true entries; scalar output.
  Var masked_mse(Var pred, const std::vector<double>& target,
                 const std::vector<std::uint8_t>& mask);

  const Tensor& value(Var v) const { return nodes_[v.id].val; }
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }

  // Seeds d(loss)/d(loss) = 1 and propagates to all parameter leaves.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    bool needs_grad = false;
    std::function<void(Tape&)> pull;  // accumulate into parents / sink
  };

  int push(Tensor val, bool needs_grad, std::function<void(Tape&)> pull);
  Node& node(int id) { return nodes_[id]; }

  std::vector<Node> nodes_;
};

}  // namespace faststi
