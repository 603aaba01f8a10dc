#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "protoadapt/linalg.hpp"
#include "protoadapt/tensor.hpp"

namespace protoadapt {

inline constexpr double kProbabilityFloor = 1e-12;

/// Reverse-mode tape over matrices. Nodes are appended in evaluation order,
/// so walking them backwards is a valid topological order. A tape supports
/// exactly one backward pass.
template <typename T>
class Tape {
 public:
  using TensorT = BasicTensor<T>;

  class Var {
   public:
    Var() = default;
    std::size_t id() const { return id_; }
    bool valid() const { return id_ != kNone; }

   private:
    friend class Tape;
    explicit Var(std::size_t id) : id_(id) {}
    static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
    std::size_t id_ = kNone;
  };

  Var leaf(TensorT value, bool requires_grad) {
    return push(std::move(value), requires_grad, nullptr);
  }

  const TensorT& value(Var v) const { return nodes_.at(v.id_).value; }

  /// Gradient of the backward root w.r.t. `v`; zeros if nothing flowed into it.
  TensorT grad(Var v) const {
    const Node& n = nodes_.at(v.id_);
    if (n.grad.empty()) return TensorT(n.value.shape());
    return n.grad;
  }

  T scalar(Var v) const { return value(v)[0]; }

  Var matmul(Var a, Var b) {
    TensorT out = protoadapt::matmul(value(a), value(b));
    return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const TensorT& g) {
      if (t.needs(a)) t.accumulate(a, matmul_transposed_rhs(g, t.value(b)));
      if (t.needs(b)) t.accumulate(b, matmul_transposed_lhs(t.value(a), g));
    });
  }

  /// x[m x n] + bias[n] broadcast over rows.
  Var add_bias(Var x, Var bias) {
    const TensorT& xv = value(x);
    const TensorT& bv = value(bias);
    if (xv.rank() != 2 || bv.size() != xv.dim(1)) {
      throw DimensionError("add_bias: bias of shape " + shape_string(bv.shape()) +
                           " does not match " + shape_string(xv.shape()));
    }
    TensorT out = xv;
    for (std::size_t r = 0; r < out.rows(); ++r) {
      auto row = out.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
    }
    return push(std::move(out), needs(x) || needs(bias), [x, bias](Tape& t, const TensorT& g) {
      if (t.needs(x)) t.accumulate(x, g);
      if (t.needs(bias)) {
        const std::size_t cols = g.cols();
        std::vector<double> acc(cols, 0.0);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          auto row = g.row(r);
          for (std::size_t c = 0; c < cols; ++c) acc[c] += static_cast<double>(row[c]);
        }
        TensorT gb(t.value(bias).shape());
        for (std::size_t c = 0; c < cols; ++c) gb[c] = static_cast<T>(acc[c]);
        t.accumulate(bias, gb);
      }
    });
  }

  Var relu(Var x) {
    TensorT out = value(x);
    for (auto& v : out.data()) v = v > T{0} ? v : T{0};
    return push(std::move(out), needs(x), [x](Tape& t, const TensorT& g) {
      const TensorT& xv = t.value(x);
      TensorT gx(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] = xv[i] > T{0} ? g[i] : T{0};
      t.accumulate(x, gx);
    });
  }

  /// Mean over rows of -log softmax(logits)[label], probabilities floored at
  /// 1e-12 before the log.
  Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
    const TensorT& lv = value(logits);
    require_rank(lv, 2, "softmax_cross_entropy");
    if (labels.size() != lv.dim(0)) {
      throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                           " labels for " + std::to_string(lv.dim(0)) + " rows");
    }
    const std::size_t k = lv.dim(1);
    TensorT probs = softmax_rows(lv);
    double loss = 0.0;
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      const int y = labels[r];
      if (y < 0 || static_cast<std::size_t>(y) >= k) {
        throw ValueError("label index " + std::to_string(y) + " out of range for " +
                         std::to_string(k) + " classes");
      }
      loss -= std::log(std::max(static_cast<double>(probs.at(r, static_cast<std::size_t>(y))),
                                kProbabilityFloor));
    }
    const std::size_t n = probs.rows();
    loss /= static_cast<double>(n);
    std::vector<int> owned(labels.begin(), labels.end());
    return push(TensorT({1}, {static_cast<T>(loss)}), needs(logits),
                [logits, probs = std::move(probs), owned = std::move(owned), n](
                    Tape& t, const TensorT& g) {
                  const T scale = g[0] / static_cast<T>(n);
                  TensorT gl = probs;
                  for (std::size_t r = 0; r < n; ++r) {
                    gl.at(r, static_cast<std::size_t>(owned[r])) -= T{1};
                  }
                  for (auto& v : gl.data()) v *= scale;
                  t.accumulate(logits, gl);
                });
  }

  /// Sum of squared differences against a constant target.
  Var squared_error(Var x, const TensorT& target) {
    const TensorT& xv = value(x);
    if (xv.shape() != target.shape()) throw DimensionError("squared_error: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double d = static_cast<double>(xv[i]) - static_cast<double>(target[i]);
      s += d * d;
    }
    return push(TensorT({1}, {static_cast<T>(s)}), needs(x), [x, target](Tape& t, const TensorT& g) {
      const TensorT& xv = t.value(x);
      TensorT gx(xv.shape());
      for (std::size_t i = 0; i < xv.size(); ++i) gx[i] = T{2} * (xv[i] - target[i]) * g[0];
      t.accumulate(x, gx);
    });
  }

  /// Scalar node whose value and gradient w.r.t. `x` were computed outside
  /// the tape (e.g. a sliced transport cost).
  Var external(Var x, T scalar_value, TensorT grad_x) {
    if (grad_x.shape() != value(x).shape()) throw DimensionError("external: gradient shape mismatch");
    return push(TensorT({1}, {scalar_value}), needs(x),
                [x, grad_x = std::move(grad_x)](Tape& t, const TensorT& g) {
                  TensorT gx = grad_x;
                  for (auto& v : gx.data()) v *= g[0];
                  t.accumulate(x, gx);
                });
  }

  Var add(Var a, Var b) {
    if (value(a).shape() != value(b).shape()) throw DimensionError("add: shape mismatch");
    TensorT out = value(a);
    const TensorT& bv = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const TensorT& g) {
      if (t.needs(a)) t.accumulate(a, g);
      if (t.needs(b)) t.accumulate(b, g);
    });
  }

  Var scale(Var a, T s) {
    TensorT out = value(a);
    for (auto& v : out.data()) v *= s;
    return push(std::move(out), needs(a), [a, s](Tape& t, const TensorT& g) {
      TensorT ga = g;
      for (auto& v : ga.data()) v *= s;
      t.accumulate(a, ga);
    });
  }

  /// Propagates `seed` * d(root)/d(node) to every node that requires grad.
  void backward(Var root, T seed = T{1}) {
    if (backward_done_) throw UsageError("backward already ran on this tape");
    backward_done_ = true;
    if (value(root).size() != 1) throw DimensionError("backward: root must be a scalar");
    if (!needs(root)) return;
    nodes_[root.id_].grad = TensorT(value(root).shape(), seed);
    for (std::size_t i = root.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
    }
  }

  static TensorT softmax_rows(const TensorT& logits) {
    TensorT out(logits.shape());
    const std::size_t k = logits.cols();
    for (std::size_t r = 0; r < logits.rows(); ++r) {
      auto in = logits.row(r);
      auto o = out.row(r);
      T mx = in[0];
      for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, in[c]);
      double z = 0.0;
      for (std::size_t c = 0; c < k; ++c) z += std::exp(static_cast<double>(in[c] - mx));
      for (std::size_t c = 0; c < k; ++c) {
        o[c] = static_cast<T>(std::exp(static_cast<double>(in[c] - mx)) / z);
      }
    }
    return out;
  }

 private:
  using Backward = std::function<void(Tape&, const TensorT&)>;

  struct Node {
    TensorT value;
    TensorT grad;
    bool requires_grad = false;
    Backward backward;
  };

  bool needs(Var v) const { return nodes_.at(v.id_).requires_grad; }

  Var push(TensorT value, bool requires_grad, Backward fn) {
    nodes_.push_back(Node{std::move(value), TensorT{}, requires_grad,
                          requires_grad ? std::move(fn) : Backward{}});
    return Var(nodes_.size() - 1);
  }

  void accumulate(Var v, const TensorT& g) {
    Node& n = nodes_[v.id_];
    if (n.grad.empty()) {
      n.grad = g.shape() == n.value.shape() ? g : g.reshaped(n.value.shape());
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace protoadapt
