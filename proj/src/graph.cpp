#include "contactsense/graph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "contactsense/errors.hpp"

namespace contactsense {

namespace {

// C[m,n] += A[m,k] * B[k,n]
void mm_acc(double* c, const double* a, const double* b, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * n;
    const double* arow = a + static_cast<std::size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = b + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,k] += A[m,n] * B[k,n]^T
void mm_abt(double* c, const double* a, const double* b, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * n;
    double* crow = c + static_cast<std::size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const double* brow = b + static_cast<std::size_t>(kk) * n;
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[kk] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
void mm_atb(double* c, const double* a, const double* b, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    const double* brow = b + static_cast<std::size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      double* crow = c + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Product of dims before/after an axis.
void split_at_axis(const std::vector<int>& shape, int axis, int* outer, int* inner) {
  *outer = 1;
  *inner = 1;
  for (int i = 0; i < axis; ++i) *outer *= shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i)
    *inner *= shape[i];
}

}  // namespace

Graph::Graph(std::uint64_t seed) : rng_(seed) {}

void Graph::check_id(VarId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
    throw NumericError("invalid graph variable id " + std::to_string(id));
}

VarId Graph::push(Tensor value, bool needs_grad, std::function<void(Graph&)> backward_fn,
                  const char* op_name) {
  if (!value.all_finite())
    throw NumericError(std::string(op_name) + ": non-finite value in output " +
                       value.shape_string());
  Node node;
  node.value = std::move(value);
  node.needs_grad = needs_grad;
  node.backward_fn = std::move(backward_fn);
  nodes_.push_back(std::move(node));
  return static_cast<VarId>(nodes_.size() - 1);
}

VarId Graph::leaf(Tensor t) {
  const bool track = t.requires_grad;
  return push(std::move(t), track, nullptr, "leaf");
}

VarId Graph::constant(Tensor t) {
  t.requires_grad = false;
  return push(std::move(t), false, nullptr, "constant");
}

const Tensor& Graph::value(VarId id) const {
  check_id(id);
  return nodes_[static_cast<std::size_t>(id)].value;
}

const Tensor& Graph::grad(VarId id) const {
  check_id(id);
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.needs_grad || n.grad.empty())
    throw NumericError("gradient not available for variable " + std::to_string(id));
  return n.grad;
}

Tensor& Graph::grad_mut(VarId id) { return nodes_[static_cast<std::size_t>(id)].grad; }

void Graph::backward(VarId output) {
  check_id(output);
  const Node& out = nodes_[static_cast<std::size_t>(output)];
  if (out.value.size() != 1)
    throw NumericError("backward requires a scalar output, got " + out.value.shape_string());
  if (!out.needs_grad) throw NumericError("backward on an output with no tracked inputs");
  for (std::size_t i = 0; i <= static_cast<std::size_t>(output); ++i) {
    Node& n = nodes_[i];
    if (n.needs_grad) n.grad = Tensor(n.value.shape());
  }
  grad_mut(output)[0] = 1.0;
  for (VarId id = output; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.needs_grad && n.backward_fn) n.backward_fn(*this);
  }
}

VarId Graph::matmul(VarId a, VarId b) {
  check_id(a);
  check_id(b);
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  const int ra = ta.rank(), rb = tb.rank();

  int batch = 1, m = 0, k = 0, n = 0;
  bool a_batched = false, b_batched = false;
  if (ra == 2 && rb == 2) {
    m = ta.dim(0), k = ta.dim(1), n = tb.dim(1);
    if (tb.dim(0) != k)
      throw NumericError("matmul: incompatible shapes " + ta.shape_string() + " x " +
                         tb.shape_string());
  } else if (ra == 3 && rb == 2) {
    batch = ta.dim(0), m = ta.dim(1), k = ta.dim(2), n = tb.dim(1);
    a_batched = true;
    if (tb.dim(0) != k)
      throw NumericError("matmul: incompatible shapes " + ta.shape_string() + " x " +
                         tb.shape_string());
  } else if (ra == 3 && rb == 3) {
    batch = ta.dim(0), m = ta.dim(1), k = ta.dim(2), n = tb.dim(2);
    a_batched = b_batched = true;
    if (tb.dim(0) != batch || tb.dim(1) != k)
      throw NumericError("matmul: incompatible shapes " + ta.shape_string() + " x " +
                         tb.shape_string());
  } else {
    throw NumericError("matmul: unsupported ranks " + ta.shape_string() + " x " +
                       tb.shape_string());
  }

  std::vector<int> out_shape = a_batched ? std::vector<int>{batch, m, n} : std::vector<int>{m, n};
  Tensor out(out_shape);
  for (int bi = 0; bi < batch; ++bi) {
    const double* pa = ta.data() + (a_batched ? static_cast<std::size_t>(bi) * m * k : 0);
    const double* pb = tb.data() + (b_batched ? static_cast<std::size_t>(bi) * k * n : 0);
    mm_acc(out.data() + static_cast<std::size_t>(bi) * m * n, pa, pb, m, k, n);
  }

  const bool track = tracked(a) || tracked(b);
  VarId id = push(std::move(out), track, nullptr, "matmul");
  if (track) {
    nodes_[static_cast<std::size_t>(id)].backward_fn = [id, a, b, batch, m, k, n, a_batched,
                                                        b_batched](Graph& g) {
      const Tensor& gout = g.grad_mut(id);
      const Tensor& ta2 = g.value(a);
      const Tensor& tb2 = g.value(b);
      if (g.tracked(a)) {
        Tensor& ga = g.grad_mut(a);
        for (int bi = 0; bi < batch; ++bi) {
          const double* pg = gout.data() + static_cast<std::size_t>(bi) * m * n;
          const double* pb = tb2.data() + (b_batched ? static_cast<std::size_t>(bi) * k * n : 0);
          double* pga = ga.data() + (a_batched ? static_cast<std::size_t>(bi) * m * k : 0);
          mm_abt(pga, pg, pb, m, n, k);
        }
      }
      if (g.tracked(b)) {
        Tensor& gb = g.grad_mut(b);
        for (int bi = 0; bi < batch; ++bi) {
          const double* pg = gout.data() + static_cast<std::size_t>(bi) * m * n;
          const double* pa = ta2.data() + (a_batched ? static_cast<std::size_t>(bi) * m * k : 0);
          double* pgb = gb.data() + (b_batched ? static_cast<std::size_t>(bi) * k * n : 0);
          mm_atb(pgb, pa, pg, m, k, n);
        }
      }
    };
  }
  return id;
}

VarId Graph::add(VarId a, VarId b) {
  check_id(a);
  check_id(b);
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  const bool scalar_b = tb.size() == 1;
  const bool suffix_b = !scalar_b && tb.size() < ta.size() &&
                        std::equal(tb.shape().begin(), tb.shape().end(),
                                   ta.shape().end() - tb.rank());
  if (!scalar_b && !suffix_b && ta.shape() != tb.shape())
    throw NumericError("add: incompatible shapes " + ta.shape_string() + " + " +
                       tb.shape_string());

  Tensor out(ta.shape());
  const int nb = tb.size();
  if (scalar_b) {
    const double v = tb[0];
    for (int i = 0; i < ta.size(); ++i) out[i] = ta[i] + v;
  } else {
    for (int i = 0; i < ta.size(); ++i) out[i] = ta[i] + tb[i % nb];
  }

  const bool track = tracked(a) || tracked(b);
  VarId id = push(std::move(out), track, nullptr, "add");
  if (track) {
    nodes_[static_cast<std::size_t>(id)].backward_fn = [id, a, b, scalar_b, nb](Graph& g) {
      const Tensor& gout = g.grad_mut(id);
      if (g.tracked(a)) {
        Tensor& ga = g.grad_mut(a);
        for (int i = 0; i < gout.size(); ++i) ga[i] += gout[i];
      }
      if (g.tracked(b)) {
        Tensor& gb = g.grad_mut(b);
        if (scalar_b) {
          double acc = 0.0;
          for (int i = 0; i < gout.size(); ++i) acc += gout[i];
          gb[0] += acc;
        } else {
          for (int i = 0; i < gout.size(); ++i) gb[i % nb] += gout[i];
        }
      }
    };
  }
  return id;
}

VarId Graph::sub(VarId a, VarId b) {
  check_id(a);
  check_id(b);
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  const bool scalar_b = tb.size() == 1;
  if (!scalar_b && ta.shape() != tb.shape())
    throw NumericError("sub: incompatible shapes " + ta.shape_string() + " - " +
                       tb.shape_string());

  Tensor out(ta.shape());
  if (scalar_b) {
    const double v = tb[0];
    for (int i = 0; i < ta.size(); ++i) out[i] = ta[i] - v;
  } else {
    for (int i = 0; i < ta.size(); ++i) out[i] = ta[i] - tb[i];
  }

  const bool track = tracked(a) || tracked(b);
  VarId id = push(std::move(out), track, nullptr, "sub");
  if (track) {
    nodes_[static_cast<std::size_t>(id)].backward_fn = [id, a, b, scalar_b](Graph& g) {
      const Tensor& gout = g.grad_mut(id);
      if (g.tracked(a)) {
        Tensor& ga = g.grad_mut(a);
        for (int i = 0; i < gout.size(); ++i) ga[i] += gout[i];
      }
      if (g.tracked(b)) {
        Tensor& gb = g.grad_mut(b);
        if (scalar_b) {
          double acc = 0.0;
          for (int i = 0; i < gout.size(); ++i) acc += gout[i];
          gb[0] -= acc;
        } else {
          for (int i = 0; i < gout.size(); ++i) gb[i] -= gout[i];
        }
      }
    };
  }
  return id;
}

VarId Graph::mul(VarId a, VarId b) {
  check_id(a);
  check_id(b);
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  const bool scalar_b = tb.size() == 1;
  if (!scalar_b && ta.shape() != tb.shape())
    throw NumericError("mul: incompatible shapes " + ta.shape_string() + " * " +
                       tb.shape_string());

  Tensor out(ta.shape());
  if (scalar_b) {
    const double v = tb[0];
    for (int i = 0; i < ta.size(); ++i) out[i] = ta[i] * v;
  } else {
    for (int i = 0; i < ta.size(); ++i) out[i] = ta[i] * tb[i];
  }

  const bool track = tracked(a) || tracked(b);
  VarId id = push(std::move(out), track, nullptr, "mul");
  if (track) {
    nodes_[static_cast<std::size_t>(id)].backward_fn = [id, a, b, scalar_b](Graph& g) {
      const Tensor& gout = g.grad_mut(id);
      const Tensor& ta2 = g.value(a);
      const Tensor& tb2 = g.value(b);
      if (g.tracked(a)) {
        Tensor& ga = g.grad_mut(a);
        if (scalar_b) {
          const double v = tb2[0];
          for (int i = 0; i < gout.size(); ++i) ga[i] += gout[i] * v;
        } else {
          for (int i = 0; i < gout.size(); ++i) ga[i] += gout[i] * tb2[i];
        }
      }
      if (g.tracked(b)) {
        Tensor& gb = g.grad_mut(b);
        if (scalar_b) {
          double acc = 0.0;
          for (int i = 0; i < gout.size(); ++i) acc += gout[i] * ta2[i];
          gb[0] += acc;
        } else {
          for (int i = 0; i < gout.size(); ++i) gb[i] += gout[i] * ta2[i];
        }
      }
    };
  }
  return id;
}

VarId Graph::affine(VarId a, double scale, double shift) {
  check_id(a);
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  for (int i = 0; i < ta.size(); ++i) out[i] = scale * ta[i] + shift;
  const bool track = tracked(a);
  VarId id = push(std::move(out), track, nullptr, "affine");
  if (track) {
    nodes_[static_cast<std::size_t>(id)].backward_fn = [id, a, scale](Graph& g) {
      const Tensor& gout = g.grad_mut(id);
      Tensor& ga = g.grad_mut(a);
      for (int i = 0; i < gout.size(); ++i) ga[i] += scale * gout[i];
    };
  }
  return id;
}

VarId Graph::sigmoid(VarId a) {
  check_id(a);
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  for (int i = 0; i < ta.size(); ++i) out[i] = stable_sigmoid(ta[i]);
  const bool track = tracked(a);
  VarId id = push(std::move(out), track, nullptr, "sigmoid");
  if (track) {
    nodes_[static_cast<std::size_t>(id)].backward_fn = [id, a](Graph& g) {
      const Tensor& gout = g.grad_mut(id);
      const Tensor& y = g.value(id);
      Tensor& ga = g.grad_mut(a);
      for (int i = 0; i < gout.size(); ++i) ga[i] += gout[i] * y[i] * (1.0 - y[i]);
    };
  }
  return id;
}

VarId Graph::tanh(VarId a) {
  check_id(a);
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  for (int i = 0; i < ta.size(); ++i) out[i] = std::tanh(ta[i]);
  const bool track = tracked(a);
  VarId id = push(std::move(out), track, nullptr, "tanh");
  if (track) {
    nodes_[static_cast<std::size_t>(id)].backward_fn = [id, a](Graph& g) {
      const Tensor& gout = g.grad_mut(id);
      const Tensor& y = g.value(id);
      Tensor& ga = g.grad_mut(a);
      for (int i = 0; i < gout.size(); ++i) ga[i] += gout[i] * (1.0 - y[i] * y[i]);
    };
  }
  return id;
}

VarId Graph::relu(VarId a) {
  check_id(a);
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  for (int i = 0; i < ta.size(); ++i) out[i] = ta[i] > 0.0 ? ta[i] : 0.0;
  const bool track = tracked(a);
  VarId id = push(std::move(out), track, nullptr, "relu");
  if (track) {
    nodes_[static_cast<std::size_t>(id)].backward_fn = [id, a](Graph& g) {
      const Tensor& gout = g.grad_mut(id);
      const Tensor& x = g.value(a);
      Tensor& ga = g.grad_mut(a);
      for (int i = 0; i < gout.size(); ++i) ga[i] += x[i] > 0.0 ? gout[i] : 0.0;
    };
  }
  return id;
}

VarId Graph::softmax(VarId a) {
  check_id(a);
  const Tensor& ta = value(a);
  if (ta.rank() < 1) throw NumericError("softmax: rank must be >= 1");
  const int cols = ta.dim(ta.rank() - 1);
  const int rows = ta.size() / cols;
  Tensor out(ta.shape());
  for (int r = 0; r < rows; ++r) {
    const double* x = ta.data() + static_cast<std::size_t>(r) * cols;
    double* y = out.data() + static_cast<std::size_t>(r) * cols;
    double mx = x[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (int j = 0; j < cols; ++j) y[j] /= sum;
  }
  const bool track = tracked(a);
  VarId id = push(std::move(out), track, nullptr, "softmax");
  if (track) {
    nodes_[static_cast<std::size_t>(id)].backward_fn = [id, a, rows, cols](Graph& g) {
      const Tensor& gout = g.grad_mut(id);
      const Tensor& y = g.value(id);
      Tensor& ga = g.grad_mut(a);
      for (int r = 0; r < rows; ++r) {
        const double* gy = gout.data() + static_cast<std::size_t>(r) * cols;
        const double* py = y.data() + static_cast<std::size_t>(r) * cols;
        double* gx = ga.data() + static_cast<std::size_t>(r) * cols;
        double dot = 0.0;
        for (int j = 0; j < cols; ++j) dot += gy[j] * py[j];
        for (int j = 0; j < cols; ++j) gx[j] += py[j] * (gy[j] - dot);
      }
    };
  }
  return id;
}

VarId Graph::log(VarId a) {
  check_id(a);
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  for (int i = 0; i < ta.size(); ++i) out[i] = std::log(ta[i]);
  const bool track = tracked(a);
  VarId id = push(std::move(out), track, nullptr, "log");
  if (track) {
    nodes_[static_cast<std::size_t>(id)].backward_fn = [id, a](Graph& g) {
      const Tensor& gout = g.grad_mut(id);
      const Tensor& x = g.value(a);
      Tensor& ga = g.grad_mut(a);
      for (int i = 0; i < gout.size(); ++i) ga[i] += gout[i] / x[i];
    };
  }
  return id;
}

VarId Graph::mean_all(VarId a) {
  check_id(a);
  const Tensor& ta = value(a);
  const int n = ta.size();
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += ta[i];
  Tensor out({1}, {acc / n});
  const bool track = tracked(a);
  VarId id = push(std::move(out), track, nullptr, "mean");
  if (track) {
    nodes_[static_cast<std::size_t>(id)].backward_fn = [id, a, n](Graph& g) {
      const double gv = g.grad_mut(id)[0] / n;
      Tensor& ga = g.grad_mut(a);
      for (int i = 0; i < n; ++i) ga[i] += gv;
    };
  }
  return id;
}

VarId Graph::mean_axis(VarId a, int axis) {
  check_id(a);
  const Tensor& ta = value(a);
  if (axis < 0 || axis >= ta.rank()) throw NumericError("mean_axis: axis out of range");
  int outer = 0, inner = 0;
  split_at_axis(ta.shape(), axis, &outer, &inner);
  const int depth = ta.dim(axis);
  std::vector<int> out_shape;
  for (int i = 0; i < ta.rank(); ++i)
    if (i != axis) out_shape.push_back(ta.dim(i));
  if (out_shape.empty()) out_shape.push_back(1);

  Tensor out(out_shape);
  for (int o = 0; o < outer; ++o)
    for (int d = 0; d < depth; ++d) {
      const double* src = ta.data() + (static_cast<std::size_t>(o) * depth + d) * inner;
      double* dst = out.data() + static_cast<std::size_t>(o) * inner;
      for (int in = 0; in < inner; ++in) dst[in] += src[in];
    }
  for (int i = 0; i < out.size(); ++i) out[i] /= depth;

  const bool track = tracked(a);
  VarId id = push(std::move(out), track, nullptr, "mean_axis");
  if (track) {
    nodes_[static_cast<std::size_t>(id)].backward_fn = [id, a, outer, depth, inner](Graph& g) {
      const Tensor& gout = g.grad_mut(id);
      Tensor& ga = g.grad_mut(a);
      for (int o = 0; o < outer; ++o)
        for (int d = 0; d < depth; ++d) {
          double* dst = ga.data() + (static_cast<std::size_t>(o) * depth + d) * inner;
          const double* src = gout.data() + static_cast<std::size_t>(o) * inner;
          for (int in = 0; in < inner; ++in) dst[in] += src[in] / depth;
        }
    };
  }
  return id;
}

VarId Graph::max_axis(VarId a, int axis) {
  check_id(a);
  const Tensor& ta = value(a);
  if (axis < 0 || axis >= ta.rank()) throw NumericError("max_axis: axis out of range");
  int outer = 0, inner = 0;
  split_at_axis(ta.shape(), axis, &outer, &inner);
  const int depth = ta.dim(axis);
  std::vector<int> out_shape;
  for (int i = 0; i < ta.rank(); ++i)
    if (i != axis) out_shape.push_back(ta.dim(i));
  if (out_shape.empty()) out_shape.push_back(1);

  Tensor out(out_shape);
  auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(outer) * inner, 0);
  for (int o = 0; o < outer; ++o)
    for (int in = 0; in < inner; ++in) {
      double best = ta[(static_cast<std::size_t>(o) * depth) * inner + in];
      int best_d = 0;
      for (int d = 1; d < depth; ++d) {
        const double v = ta[(static_cast<std::size_t>(o) * depth + d) * inner + in];
        if (v > best) {
          best = v;
          best_d = d;
        }
      }
      out[static_cast<std::size_t>(o) * inner + in] = best;
      (*argmax)[static_cast<std::size_t>(o) * inner + in] = best_d;
    }

  const bool track = tracked(a);
  VarId id = push(std::move(out), track, nullptr, "max_axis");
  if (track) {
    nodes_[static_cast<std::size_t>(id)].backward_fn = [id, a, outer, depth, inner,
                                                        argmax](Graph& g) {
      const Tensor& gout = g.grad_mut(id);
      Tensor& ga = g.grad_mut(a);
      for (int o = 0; o < outer; ++o)
        for (int in = 0; in < inner; ++in) {
          const int d = (*argmax)[static_cast<std::size_t>(o) * inner + in];
          ga[(static_cast<std::size_t>(o) * depth + d) * inner + in] +=
              gout[static_cast<std::size_t>(o) * inner + in];
        }
    };
  }
  return id;
}

VarId Graph::conv1d(VarId x, VarId w, VarId bias, int stride, int padding) {
  check_id(x);
  check_id(w);
  if (bias >= 0) check_id(bias);
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  if (tx.rank() != 3 || tw.rank() != 3)
    throw NumericError("conv1d: expected x (B,Cin,L) and w (Cout,Cin,K), got " +
                       tx.shape_string() + " and " + tw.shape_string());
  const int batch = tx.dim(0), cin = tx.dim(1), len = tx.dim(2);
  const int cout = tw.dim(0), k = tw.dim(2);
  if (tw.dim(1) != cin)
    throw NumericError("conv1d: channel mismatch " + tx.shape_string() + " vs " +
                       tw.shape_string());
  if (stride < 1 || padding < 0) throw NumericError("conv1d: bad stride/padding");
  const int lout = (len + 2 * padding - k) / stride + 1;
  if (len + 2 * padding < k) throw NumericError("conv1d: kernel longer than padded input");
  if (bias >= 0 && value(bias).size() != cout)
    throw NumericError("conv1d: bias size must equal out channels");

  Tensor out({batch, cout, lout});
  const double* pb = bias >= 0 ? value(bias).data() : nullptr;
  for (int b = 0; b < batch; ++b)
    for (int co = 0; co < cout; ++co) {
      double* orow = out.data() + (static_cast<std::size_t>(b) * cout + co) * lout;
      for (int t = 0; t < lout; ++t) {
        double acc = pb != nullptr ? pb[co] : 0.0;
        for (int ci = 0; ci < cin; ++ci) {
          const double* xrow = tx.data() + (static_cast<std::size_t>(b) * cin + ci) * len;
          const double* wrow = tw.data() + (static_cast<std::size_t>(co) * cin + ci) * k;
          const int base = t * stride - padding;
          for (int kk = 0; kk < k; ++kk) {
            const int ix = base + kk;
            if (ix >= 0 && ix < len) acc += wrow[kk] * xrow[ix];
          }
        }
        orow[t] = acc;
      }
    }

  const bool track = tracked(x) || tracked(w) || (bias >= 0 && tracked(bias));
  VarId id = push(std::move(out), track, nullptr, "conv1d");
  if (track) {
    nodes_[static_cast<std::size_t>(id)].backward_fn = [id, x, w, bias, stride, padding, batch,
                                                        cin, len, cout, k, lout](Graph& g) {
      const Tensor& gout = g.grad_mut(id);
      const Tensor& tx2 = g.value(x);
      const Tensor& tw2 = g.value(w);
      for (int b = 0; b < batch; ++b)
        for (int co = 0; co < cout; ++co) {
          const double* grow = gout.data() + (static_cast<std::size_t>(b) * cout + co) * lout;
          for (int t = 0; t < lout; ++t) {
            const double gv = grow[t];
            if (gv == 0.0) continue;
            const int base = t * stride - padding;
            for (int ci = 0; ci < cin; ++ci) {
              const double* xrow = tx2.data() + (static_cast<std::size_t>(b) * cin + ci) * len;
              const double* wrow = tw2.data() + (static_cast<std::size_t>(co) * cin + ci) * k;
              double* gxrow = g.tracked(x) ? g.grad_mut(x).data() +
                                                 (static_cast<std::size_t>(b) * cin + ci) * len
                                           : nullptr;
              double* gwrow = g.tracked(w) ? g.grad_mut(w).data() +
                                                 (static_cast<std::size_t>(co) * cin + ci) * k
                                           : nullptr;
              for (int kk = 0; kk < k; ++kk) {
                const int ix = base + kk;
                if (ix < 0 || ix >= len) continue;
                if (gxrow != nullptr) gxrow[ix] += gv * wrow[kk];
                if (gwrow != nullptr) gwrow[kk] += gv * xrow[ix];
              }
            }
            if (bias >= 0 && g.tracked(bias)) g.grad_mut(bias)[co] += gv;
          }
        }
    };
  }
  return id;
}

VarId Graph::dropout(VarId a, double p, bool train) {
  check_id(a);
  if (p < 0.0 || p >= 1.0) throw NumericError("dropout: p must be in [0,1)");
  if (!train || p == 0.0) return a;
  const Tensor& ta = value(a);
  const double scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(static_cast<std::size_t>(ta.size()));
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Tensor out(ta.shape());
  for (int i = 0; i < ta.size(); ++i) {
    const double keep = uniform(rng_) < p ? 0.0 : scale;
    (*mask)[static_cast<std::size_t>(i)] = keep;
    out[i] = ta[i] * keep;
  }
  const bool track = tracked(a);
  VarId id = push(std::move(out), track, nullptr, "dropout");
  if (track) {
    nodes_[static_cast<std::size_t>(id)].backward_fn = [id, a, mask](Graph& g) {
      const Tensor& gout = g.grad_mut(id);
      Tensor& ga = g.grad_mut(a);
      for (int i = 0; i < gout.size(); ++i) ga[i] += gout[i] * (*mask)[static_cast<std::size_t>(i)];
    };
  }
  return id;
}

VarId Graph::layer_norm(VarId x, VarId gamma, VarId beta, double eps) {
  check_id(x);
  check_id(gamma);
  check_id(beta);
  const Tensor& tx = value(x);
  const int cols = tx.dim(tx.rank() - 1);
  const int rows = tx.size() / cols;
  if (value(gamma).size() != cols || value(beta).size() != cols)
    throw NumericError("layer_norm: gamma/beta must have size " + std::to_string(cols));

  Tensor out(tx.shape());
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(tx.size()));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  const double* pg = value(gamma).data();
  const double* pb = value(beta).data();
  for (int r = 0; r < rows; ++r) {
    const double* xr = tx.data() + static_cast<std::size_t>(r) * cols;
    double mu = 0.0;
    for (int j = 0; j < cols; ++j) mu += xr[j];
    mu /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= cols;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(r)] = is;
    double* yr = out.data() + static_cast<std::size_t>(r) * cols;
    for (int j = 0; j < cols; ++j) {
      const double xh = (xr[j] - mu) * is;
      (*xhat)[static_cast<std::size_t>(r) * cols + j] = xh;
      yr[j] = xh * pg[j] + pb[j];
    }
  }

  const bool track = tracked(x) || tracked(gamma) || tracked(beta);
  VarId id = push(std::move(out), track, nullptr, "layer_norm");
  if (track) {
    nodes_[static_cast<std::size_t>(id)].backward_fn = [id, x, gamma, beta, rows, cols, xhat,
                                                        inv_std](Graph& g) {
      const Tensor& gout = g.grad_mut(id);
      const double* pg2 = g.value(gamma).data();
      for (int r = 0; r < rows; ++r) {
        const double* gy = gout.data() + static_cast<std::size_t>(r) * cols;
        const double* xh = xhat->data() + static_cast<std::size_t>(r) * cols;
        if (g.tracked(gamma)) {
          Tensor& gg = g.grad_mut(gamma);
          for (int j = 0; j < cols; ++j) gg[j] += gy[j] * xh[j];
        }
        if (g.tracked(beta)) {
          Tensor& gb = g.grad_mut(beta);
          for (int j = 0; j < cols; ++j) gb[j] += gy[j];
        }
        if (g.tracked(x)) {
          const double is = (*inv_std)[static_cast<std::size_t>(r)];
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (int j = 0; j < cols; ++j) {
            const double dxh = gy[j] * pg2[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xh[j];
          }
          mean_dxhat /= cols;
          mean_dxhat_xhat /= cols;
          Tensor& gx = g.grad_mut(x);
          double* gxr = gx.data() + static_cast<std::size_t>(r) * cols;
          for (int j = 0; j < cols; ++j) {
            const double dxh = gy[j] * pg2[j];
            gxr[j] += is * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
          }
        }
      }
    };
  }
  return id;
}

VarId Graph::concat(const std::vector<VarId>& parts, int axis) {
  if (parts.empty()) throw NumericError("concat: no inputs");
  for (VarId p : parts) check_id(p);
  const Tensor& first = value(parts[0]);
  if (axis < 0 || axis >= first.rank()) throw NumericError("concat: axis out of range");

  int total_axis = 0;
  for (VarId p : parts) {
    const Tensor& t = value(p);
    if (t.rank() != first.rank())
      throw NumericError("concat: rank mismatch " + t.shape_string() + " vs " +
                         first.shape_string());
    for (int i = 0; i < first.rank(); ++i)
      if (i != axis && t.dim(i) != first.dim(i))
        throw NumericError("concat: shape mismatch " + t.shape_string() + " vs " +
                           first.shape_string());
    total_axis += t.dim(axis);
  }

  std::vector<int> out_shape = first.shape();
  out_shape[static_cast<std::size_t>(axis)] = total_axis;
  int outer = 0, inner = 0;
  split_at_axis(out_shape, axis, &outer, &inner);

  Tensor out(out_shape);
  std::vector<int> part_dims;
  for (VarId p : parts) part_dims.push_back(value(p).dim(axis));

  int offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor& t = value(parts[pi]);
    const int d = part_dims[pi];
    for (int o = 0; o < outer; ++o) {
      const double* src = t.data() + static_cast<std::size_t>(o) * d * inner;
      double* dst = out.data() +
                    (static_cast<std::size_t>(o) * total_axis + offset) * inner;
      std::copy(src, src + static_cast<std::size_t>(d) * inner, dst);
    }
    offset += d;
  }

  bool track = false;
  for (VarId p : parts) track = track || tracked(p);
  VarId id = push(std::move(out), track, nullptr, "concat");
  if (track) {
    auto parts_copy = std::make_shared<std::vector<VarId>>(parts);
    auto dims_copy = std::make_shared<std::vector<int>>(part_dims);
    nodes_[static_cast<std::size_t>(id)].backward_fn = [id, parts_copy, dims_copy, outer, inner,
                                                        total_axis](Graph& g) {
      const Tensor& gout = g.grad_mut(id);
      int off = 0;
      for (std::size_t pi = 0; pi < parts_copy->size(); ++pi) {
        const VarId p = (*parts_copy)[pi];
        const int d = (*dims_copy)[pi];
        if (g.tracked(p)) {
          Tensor& gp = g.grad_mut(p);
          for (int o = 0; o < outer; ++o) {
            const double* src =
                gout.data() + (static_cast<std::size_t>(o) * total_axis + off) * inner;
            double* dst = gp.data() + static_cast<std::size_t>(o) * d * inner;
            for (int i = 0; i < d * inner; ++i) dst[i] += src[i];
          }
        }
        off += d;
      }
    };
  }
  return id;
}

VarId Graph::slice(VarId a, int axis, int start, int length) {
  check_id(a);
  const Tensor& ta = value(a);
  if (axis < 0 || axis >= ta.rank()) throw NumericError("slice: axis out of range");
  const int depth = ta.dim(axis);
  if (start < 0 || length < 1 || start + length > depth)
    throw NumericError("slice: range [" + std::to_string(start) + ", " +
                       std::to_string(start + length) + ") out of axis size " +
                       std::to_string(depth));
  int outer = 0, inner = 0;
  split_at_axis(ta.shape(), axis, &outer, &inner);

  std::vector<int> out_shape = ta.shape();
  out_shape[static_cast<std::size_t>(axis)] = length;
  Tensor out(out_shape);
  for (int o = 0; o < outer; ++o) {
    const double* src = ta.data() + (static_cast<std::size_t>(o) * depth + start) * inner;
    double* dst = out.data() + static_cast<std::size_t>(o) * length * inner;
    std::copy(src, src + static_cast<std::size_t>(length) * inner, dst);
  }

  const bool track = tracked(a);
  VarId id = push(std::move(out), track, nullptr, "slice");
  if (track) {
    nodes_[static_cast<std::size_t>(id)].backward_fn = [id, a, outer, inner, depth, start,
                                                        length](Graph& g) {
      const Tensor& gout = g.grad_mut(id);
      Tensor& ga = g.grad_mut(a);
      for (int o = 0; o < outer; ++o) {
        const double* src = gout.data() + static_cast<std::size_t>(o) * length * inner;
        double* dst = ga.data() + (static_cast<std::size_t>(o) * depth + start) * inner;
        for (int i = 0; i < length * inner; ++i) dst[i] += src[i];
      }
    };
  }
  return id;
}

namespace {

// Copy src into dst with two axes swapped.
void transpose_copy(const Tensor& src, Tensor& dst, int axis0, int axis1) {
  const std::vector<int>& in_shape = src.shape();
  const int rank = src.rank();
  std::vector<int> in_strides(static_cast<std::size_t>(rank), 1);
  for (int i = rank - 2; i >= 0; --i)
    in_strides[static_cast<std::size_t>(i)] =
        in_strides[static_cast<std::size_t>(i) + 1] * in_shape[static_cast<std::size_t>(i) + 1];

  const std::vector<int>& out_shape = dst.shape();
  std::vector<int> idx(static_cast<std::size_t>(rank), 0);
  const int n = src.size();
  for (int lin = 0; lin < n; ++lin) {
    // idx is the multi-index into dst; map to src by swapping the two axes.
    int src_lin = 0;
    for (int i = 0; i < rank; ++i) {
      int src_axis = i;
      if (i == axis0) src_axis = axis1;
      else if (i == axis1) src_axis = axis0;
      src_lin += idx[static_cast<std::size_t>(i)] * in_strides[static_cast<std::size_t>(src_axis)];
    }
    dst.data()[lin] = src.data()[src_lin];
    for (int i = rank - 1; i >= 0; --i) {
      if (++idx[static_cast<std::size_t>(i)] < out_shape[static_cast<std::size_t>(i)]) break;
      idx[static_cast<std::size_t>(i)] = 0;
    }
  }
}

}  // namespace

VarId Graph::transpose(VarId a, int axis0, int axis1) {
  check_id(a);
  const Tensor& ta = value(a);
  if (axis0 < 0 || axis0 >= ta.rank() || axis1 < 0 || axis1 >= ta.rank())
    throw NumericError("transpose: axis out of range for " + ta.shape_string());
  std::vector<int> out_shape = ta.shape();
  std::swap(out_shape[static_cast<std::size_t>(axis0)], out_shape[static_cast<std::size_t>(axis1)]);
  Tensor out(out_shape);
  transpose_copy(ta, out, axis0, axis1);

  const bool track = tracked(a);
  VarId id = push(std::move(out), track, nullptr, "transpose");
  if (track) {
    nodes_[static_cast<std::size_t>(id)].backward_fn = [id, a, axis0, axis1](Graph& g) {
      const Tensor& gout = g.grad_mut(id);
      Tensor back(g.value(a).shape());
      transpose_copy(gout, back, axis0, axis1);
      Tensor& ga = g.grad_mut(a);
      for (int i = 0; i < back.size(); ++i) ga[i] += back[i];
    };
  }
  return id;
}

VarId Graph::reshape(VarId a, std::vector<int> shape) {
  check_id(a);
  const Tensor& ta = value(a);
  if (shape_size(shape) != ta.size())
    throw NumericError("reshape: cannot view " + ta.shape_string() + " as " +
                       shape_string(shape));
  Tensor out(shape, ta.values());
  const bool track = tracked(a);
  VarId id = push(std::move(out), track, nullptr, "reshape");
  if (track) {
    nodes_[static_cast<std::size_t>(id)].backward_fn = [id, a](Graph& g) {
      const Tensor& gout = g.grad_mut(id);
      Tensor& ga = g.grad_mut(a);
      for (int i = 0; i < gout.size(); ++i) ga[i] += gout[i];
    };
  }
  return id;
}

VarId Graph::relative_position_matrix(VarId w, int length) {
  check_id(w);
  const Tensor& tw = value(w);
  if (tw.size() != 2 * length - 1)
    throw NumericError("relative_position_matrix: table has " + std::to_string(tw.size()) +
                       " entries, expected " + std::to_string(2 * length - 1) + " for length " +
                       std::to_string(length));
  Tensor out({length, length});
  for (int i = 0; i < length; ++i)
    for (int j = 0; j < length; ++j) out.at(i, j) = tw[i - j + length - 1];

  const bool track = tracked(w);
  VarId id = push(std::move(out), track, nullptr, "relative_position_matrix");
  if (track) {
    nodes_[static_cast<std::size_t>(id)].backward_fn = [id, w, length](Graph& g) {
      const Tensor& gout = g.grad_mut(id);
      Tensor& gw = g.grad_mut(w);
      for (int i = 0; i < length; ++i)
        for (int j = 0; j < length; ++j) gw[i - j + length - 1] += gout.at(i, j);
    };
  }
  return id;
}

VarId Graph::nll_loss(VarId log_probs, const std::vector<int>& targets) {
  check_id(log_probs);
  const Tensor& lp = value(log_probs);
  if (lp.rank() != 2) throw NumericError("nll_loss: expected (B,C), got " + lp.shape_string());
  const int batch = lp.dim(0), classes = lp.dim(1);
  if (static_cast<int>(targets.size()) != batch)
    throw NumericError("nll_loss: " + std::to_string(targets.size()) + " targets for batch " +
                       std::to_string(batch));
  double acc = 0.0;
  for (int r = 0; r < batch; ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= classes) throw NumericError("nll_loss: target out of range");
    acc -= lp.at(r, t);
  }
  Tensor out({1}, {acc / batch});

  const bool track = tracked(log_probs);
  VarId id = push(std::move(out), track, nullptr, "nll_loss");
  if (track) {
    auto tgt = std::make_shared<std::vector<int>>(targets);
    nodes_[static_cast<std::size_t>(id)].backward_fn = [id, log_probs, tgt, batch](Graph& g) {
      const double gv = g.grad_mut(id)[0] / batch;
      Tensor& glp = g.grad_mut(log_probs);
      for (int r = 0; r < batch; ++r) glp.at(r, (*tgt)[static_cast<std::size_t>(r)]) -= gv;
    };
  }
  return id;
}

double grad_check(const std::function<VarId(Graph&, VarId)>& f, const Tensor& x, double eps) {
  if (eps < 1e-6 || eps > 1e-3) throw NumericError("grad_check: eps must be in [1e-6, 1e-3]");

  Tensor x0 = x;
  x0.requires_grad = true;
  Graph g;
  const VarId xv = g.leaf(x0);
  const VarId out = f(g, xv);
  if (g.value(out).size() != 1) throw NumericError("grad_check: f must be scalar-valued");
  g.backward(out);
  const Tensor analytic = g.grad(xv);
  if (!analytic.all_finite()) throw NumericError("grad_check: non-finite analytic gradient");

  auto eval = [&f](const Tensor& point) {
    Graph h;
    Tensor p = point;
    p.requires_grad = false;
    const VarId pv = h.leaf(p);
    const VarId o = f(h, pv);
    if (h.value(o).size() != 1) throw NumericError("grad_check: f must be scalar-valued");
    return h.value(o)[0];
  };

  double max_err = 0.0;
  Tensor probe = x;
  probe.requires_grad = false;
  for (int i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double up = eval(probe);
    probe[i] = saved - eps;
    const double down = eval(probe);
    probe[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    if (!std::isfinite(numeric)) throw NumericError("grad_check: non-finite central difference");
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace contactsense
