#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "contactsense/tensor.hpp"

namespace contactsense {

using VarId = std::int32_t;

// Reverse-mode tape. Ops append records in construction order, which is a
// valid topological order; backward() replays it once in reverse. A Graph is
// single-threaded; run independent graphs on independent threads.
//
// Every op validates shapes and checks its output for NaN/Inf, throwing
// NumericError on violation.
class Graph {
 public:
  explicit Graph(std::uint64_t seed = 0);

  VarId leaf(Tensor t);                    // gradient tracked iff t.requires_grad
  VarId constant(Tensor t);                // never tracked

  const Tensor& value(VarId id) const;
  const Tensor& grad(VarId id) const;      // valid after backward()
  std::size_t num_nodes() const { return nodes_.size(); }
  std::mt19937_64& rng() { return rng_; }

  // --- core ops ---
  VarId matmul(VarId a, VarId b);          // (m,k)x(k,n); (b,m,k)x(k,n); (b,m,k)x(b,k,n)
  VarId add(VarId a, VarId b);             // equal shapes, or b broadcast over leading dims
  VarId sub(VarId a, VarId b);
  VarId mul(VarId a, VarId b);             // elementwise, equal shapes
  VarId affine(VarId a, double scale, double shift);  // scale*x + shift
  VarId sigmoid(VarId a);
  VarId tanh(VarId a);
  VarId relu(VarId a);
  VarId softmax(VarId a);                  // along last axis, numerically stable
  VarId log(VarId a);
  VarId mean_all(VarId a);                 // scalar [1]
  VarId mean_axis(VarId a, int axis);
  VarId max_axis(VarId a, int axis);       // gradient routed to first argmax
  VarId conv1d(VarId x, VarId w, VarId bias, int stride, int padding);
                                           // x (B,Cin,L), w (Cout,Cin,K), bias (Cout) or -1
  VarId dropout(VarId a, double p, bool train);  // inverted dropout; identity if !train or p==0
  VarId layer_norm(VarId x, VarId gamma, VarId beta, double eps = 1e-5);  // last axis
  VarId concat(const std::vector<VarId>& parts, int axis);
  VarId slice(VarId a, int axis, int start, int length);
  VarId transpose(VarId a, int axis0, int axis1);
  VarId reshape(VarId a, std::vector<int> shape);

  // R[i,j] = w[i - j + L - 1] from a (2L-1)-entry table of relative weights.
  VarId relative_position_matrix(VarId w, int length);

  // Mean of -log_probs[row, target[row]] over rows; log_probs is (B,C).
  VarId nll_loss(VarId log_probs, const std::vector<int>& targets);

  // Backpropagate from a scalar output through the tape (reverse
  // topological order, each node visited exactly once).
  void backward(VarId output);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::function<void(Graph&)> backward_fn;  // accumulates into input grads
  };

  std::vector<Node> nodes_;
  std::mt19937_64 rng_;

  VarId push(Tensor value, bool needs_grad, std::function<void(Graph&)> backward_fn,
             const char* op_name);
  Tensor& grad_mut(VarId id);
  bool tracked(VarId id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  void check_id(VarId id) const;
};

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for a scalar function built by `f` from a single leaf. eps must lie in
// [1e-6, 1e-3]. Throws NumericError on a non-finite gradient.
double grad_check(const std::function<VarId(Graph&, VarId)>& f, const Tensor& x, double eps);

}  // namespace contactsense
