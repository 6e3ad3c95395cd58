#pragma once

// Dense 64-bit tensors with tape-based reverse-mode autodiff.
//
// A Tensor is a shared handle: copying it aliases the same storage, which is
// what lets the tape route gradients back to parameters held elsewhere.
// Tensors are treated as immutable once an op has produced them.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mfunet/error.hpp"

namespace mfunet {

using Shape = std::vector<std::size_t>;
using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMajorMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMajorMatrix>;

/// Tensor storage. A fixed base alignment keeps Eigen's vectorized
/// reductions from splitting differently depending on the heap address,
/// which would make results vary in the last bit between runs.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

struct TensorNode {
  Shape shape;
  Buffer value;
  Buffer grad;  // empty until a gradient is accumulated
  bool requires_grad = false;

  Buffer& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, Buffer values, bool requires_grad = false)
      : node_(std::make_shared<detail::TensorNode>()) {
    for (auto e : shape)
      if (e == 0) throw ShapeError("tensor extents must be positive: " + shape_str(shape));
    if (shape_numel(shape) != values.size())
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  template <class A>
    requires(!std::same_as<A, Buffer::allocator_type>)
  Tensor(Shape shape, const std::vector<double, A>& values, bool requires_grad = false)
      : Tensor(std::move(shape), Buffer(values.begin(), values.end()), requires_grad) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), Buffer(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), Buffer(n, v), requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor({1}, {v}, requires_grad);
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, Buffer v,
                       bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(v), requires_grad);
  }
  template <class A>
    requires(!std::same_as<A, Buffer::allocator_type>)
  static Tensor matrix(std::size_t rows, std::size_t cols, const std::vector<double, A>& v,
                       bool requires_grad = false) {
    return Tensor({rows, cols}, Buffer(v.begin(), v.end()), requires_grad);
  }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false) {
    Buffer v;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != cols) throw ShapeError("ragged matrix literal");
      v.insert(v.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(v), requires_grad);
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t rows() const { return node_->shape.empty() ? 1 : node_->shape[0]; }
  std::size_t cols() const { return rows() ? numel() / rows() : 0; }

  std::span<const double> data() const { return node_->value; }
  /// Mutable access is for parameter updates and initialization only.
  std::span<double> mutable_data() { return node_->value; }
  double item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  ConstMatrixMap mat() const {
    return ConstMatrixMap(node_->value.data(), static_cast<Eigen::Index>(rows()),
                          static_cast<Eigen::Index>(cols()));
  }

  /// Deep copy detached from any tape.
  Tensor clone(bool requires_grad = false) const {
    return Tensor(node_->shape, node_->value, requires_grad);
  }

  detail::TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<detail::TensorNode>& handle() const { return node_; }
  bool same_storage(const Tensor& o) const { return node_ == o.node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

/// Ordered record of differentiable operations. Entries are appended in
/// execution order, so replaying them in reverse is a valid topological
/// order for the backward pass.
class Tape {
 public:
  enum class Mode { Record, Inference };

  explicit Tape(Mode mode = Mode::Record) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  bool recording() const noexcept { return mode_ == Mode::Record; }
  std::size_t size() const noexcept { return entries_.size(); }
  void clear() { entries_.clear(); }

  void record(std::function<void()> backward) { entries_.push_back(std::move(backward)); }

  /// Populates dLoss/dT for every requires_grad tensor reachable from `loss`,
  /// accumulating into existing parameter gradients, then clears the tape.
  void backward(const Tensor& loss) {
    if (loss.numel() != 1)
      throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) {
      entries_.clear();
      return;
    }
    auto& g = loss.node()->ensure_grad();
    g[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();
  }

 private:
  Mode mode_;
  std::vector<std::function<void()>> entries_;
};

inline void zero_grad(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

namespace detail {

inline void check_finite(const TensorNode& n, const char* op) {
  for (double v : n.value)
    if (!std::isfinite(v))
      throw NumericalError(std::string("non-finite value produced by ") + op);
}

inline bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  for (auto* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

// Output tensor that joins the tape when recording and any input needs grad.
inline Tensor make_output(Tape& tape, Shape shape, Buffer values,
                          std::initializer_list<const Tensor*> inputs, const char* op) {
  bool rg = tape.recording() && any_requires_grad(inputs);
  Tensor out(std::move(shape), std::move(values), rg);
  check_finite(*out.node(), op);
  return out;
}

inline void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

inline MatrixMap grad_map(const Tensor& t) {
  auto& g = t.node()->ensure_grad();
  return MatrixMap(g.data(), static_cast<Eigen::Index>(t.rows()),
                   static_cast<Eigen::Index>(t.cols()));
}

inline ConstMatrixMap out_grad_map(const Tensor& t) {
  auto& g = t.node()->ensure_grad();
  return ConstMatrixMap(g.data(), static_cast<Eigen::Index>(t.rows()),
                        static_cast<Eigen::Index>(t.cols()));
}

inline void check_indices(std::span<const int> index, std::size_t bound, const char* op) {
  for (int i : index)
    if (i < 0 || static_cast<std::size_t>(i) >= bound)
      throw IndexError(std::string(op) + ": index " + std::to_string(i) +
                       " out of range [0, " + std::to_string(bound) + ")");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()));
  Buffer v(a.rows() * b.cols());
  MatrixMap(v.data(), a.rows(), b.cols()).noalias() = a.mat() * b.mat();
  Tensor out = detail::make_output(tape, {a.rows(), b.cols()}, std::move(v), {&a, &b}, "matmul");
  if (out.requires_grad()) {
    tape.record([a, b, out] {
      auto dc = detail::out_grad_map(out);
      if (a.requires_grad()) detail::grad_map(a).noalias() += dc * b.mat().transpose();
      if (b.requires_grad()) detail::grad_map(b).noalias() += a.mat().transpose() * dc;
    });
  }
  return out;
}

/// x[n×i]·W[i×o] + b, with b of length o broadcast over rows.
inline Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  detail::require_rank2(x, "linear");
  detail::require_rank2(w, "linear");
  if (x.cols() != w.rows())
    throw ShapeError("linear: input width " + std::to_string(x.cols()) +
                     " does not match weight " + shape_str(w.shape()));
  if (b.numel() != w.cols())
    throw ShapeError("linear: bias " + shape_str(b.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  const auto n = x.rows(), o = w.cols();
  Buffer v(n * o);
  MatrixMap y(v.data(), n, o);
  y.noalias() = x.mat() * w.mat();
  Eigen::Map<const Eigen::RowVectorXd> bias(b.data().data(), o);
  y.rowwise() += bias;
  Tensor out = detail::make_output(tape, {n, o}, std::move(v), {&x, &w, &b}, "linear");
  if (out.requires_grad()) {
    tape.record([x, w, b, out] {
      auto dy = detail::out_grad_map(out);
      if (x.requires_grad()) detail::grad_map(x).noalias() += dy * w.mat().transpose();
      if (w.requires_grad()) detail::grad_map(w).noalias() += x.mat().transpose() * dy;
      if (b.requires_grad()) {
        auto& gb = b.node()->ensure_grad();
        Eigen::Map<Eigen::RowVectorXd>(gb.data(), static_cast<Eigen::Index>(gb.size())) +=
            dy.colwise().sum();
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor relu(Tape& tape, const Tensor& x) {
  Buffer v(x.numel());
  auto xs = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = xs[i] > 0.0 ? xs[i] : 0.0;
  Tensor out = detail::make_output(tape, x.shape(), std::move(v), {&x}, "relu");
  if (out.requires_grad()) {
    tape.record([x, out] {
      auto& gx = x.node()->ensure_grad();
      const auto& gy = out.node()->ensure_grad();
      auto xs = x.data();
      // subgradient at exactly zero is 0
      for (std::size_t i = 0; i < gx.size(); ++i)
        if (xs[i] > 0.0) gx[i] += gy[i];
    });
  }
  return out;
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Buffer v(a.numel());
  auto as = a.data(), bs = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = as[i] + bs[i];
  Tensor out = detail::make_output(tape, a.shape(), std::move(v), {&a, &b}, "add");
  if (out.requires_grad()) {
    tape.record([a, b, out] {
      const auto& gy = out.node()->ensure_grad();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto& g = t->node()->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
      }
    });
  }
  return out;
}

inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("sub: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Buffer v(a.numel());
  auto as = a.data(), bs = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = as[i] - bs[i];
  Tensor out = detail::make_output(tape, a.shape(), std::move(v), {&a, &b}, "sub");
  if (out.requires_grad()) {
    tape.record([a, b, out] {
      const auto& gy = out.node()->ensure_grad();
      if (a.requires_grad()) {
        auto& g = a.node()->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
      }
      if (b.requires_grad()) {
        auto& g = b.node()->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= gy[i];
      }
    });
  }
  return out;
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Buffer v(a.numel());
  auto as = a.data(), bs = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = as[i] * bs[i];
  Tensor out = detail::make_output(tape, a.shape(), std::move(v), {&a, &b}, "mul");
  if (out.requires_grad()) {
    tape.record([a, b, out] {
      const auto& gy = out.node()->ensure_grad();
      auto as = a.data(), bs = b.data();
      if (a.requires_grad()) {
        auto& g = a.node()->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * bs[i];
      }
      if (b.requires_grad()) {
        auto& g = b.node()->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * as[i];
      }
    });
  }
  return out;
}

/// Multiplies every element of x by a learnable scalar tensor.
inline Tensor scale(Tape& tape, const Tensor& x, const Tensor& factor) {
  if (factor.numel() != 1)
    throw ShapeError("scale: factor must hold one element, got " + shape_str(factor.shape()));
  const double s = factor.item();
  Buffer v(x.numel());
  auto xs = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = s * xs[i];
  Tensor out = detail::make_output(tape, x.shape(), std::move(v), {&x, &factor}, "scale");
  if (out.requires_grad()) {
    tape.record([x, factor, out] {
      const auto& gy = out.node()->ensure_grad();
      auto xs = x.data();
      if (x.requires_grad()) {
        auto& g = x.node()->ensure_grad();
        const double s = factor.item();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * gy[i];
      }
      if (factor.requires_grad()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < gy.size(); ++i) acc += xs[i] * gy[i];
        factor.node()->ensure_grad()[0] += acc;
      }
    });
  }
  return out;
}

inline Tensor mul_const(Tape& tape, const Tensor& x, double c) {
  Buffer v(x.numel());
  auto xs = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = c * xs[i];
  Tensor out = detail::make_output(tape, x.shape(), std::move(v), {&x}, "mul_const");
  if (out.requires_grad()) {
    tape.record([x, c, out] {
      const auto& gy = out.node()->ensure_grad();
      auto& g = x.node()->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * gy[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and losses (sequential summation order)

inline Tensor sum(Tape& tape, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor out = detail::make_output(tape, {1}, {acc}, {&x}, "sum");
  if (out.requires_grad()) {
    tape.record([x, out] {
      const double gy = out.node()->ensure_grad()[0];
      for (auto& g : x.node()->ensure_grad()) g += gy;
    });
  }
  return out;
}

inline Tensor mean(Tape& tape, const Tensor& x) {
  return mul_const(tape, sum(tape, x), 1.0 / static_cast<double>(x.numel()));
}

/// mean((pred - target)^2) over all elements. `target` never receives gradient.
inline Tensor mse(Tape& tape, const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("mse: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  auto p = pred.data(), t = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double d = p[i] - t[i];
    acc += d * d;
  }
  const double n = static_cast<double>(p.size());
  Tensor out = detail::make_output(tape, {1}, {acc / n}, {&pred}, "mse");
  if (out.requires_grad()) {
    tape.record([pred, target, out, n] {
      const double gy = out.node()->ensure_grad()[0];
      auto& g = pred.node()->ensure_grad();
      auto p = pred.data(), t = target.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy * 2.0 * (p[i] - t[i]) / n;
    });
  }
  return out;
}

/// ||pred - target||_2 / ||target||_2 over all elements.
inline Tensor relative_l2_loss(Tape& tape, const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("relative_l2_loss: " + shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  auto p = pred.data(), t = target.data();
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double d = p[i] - t[i];
    num += d * d;
    den += t[i] * t[i];
  }
  if (den <= 0.0) throw NumericalError("relative_l2_loss: target has zero norm");
  const double nrm = std::sqrt(num), tn = std::sqrt(den);
  Tensor out = detail::make_output(tape, {1}, {nrm / tn}, {&pred}, "relative_l2_loss");
  if (out.requires_grad()) {
    tape.record([pred, target, out, nrm, tn] {
      if (nrm == 0.0) return;
      const double gy = out.node()->ensure_grad()[0];
      auto& g = pred.node()->ensure_grad();
      auto p = pred.data(), t = target.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy * (p[i] - t[i]) / (nrm * tn);
    });
  }
  return out;
}

/// sum_i weights[i] * terms[i] for scalar terms.
inline Tensor weighted_sum(Tape& tape, std::span<const Tensor> terms,
                           std::span<const double> weights) {
  if (terms.size() != weights.size() || terms.empty())
    throw ShapeError("weighted_sum: " + std::to_string(terms.size()) + " terms vs " +
                     std::to_string(weights.size()) + " weights");
  double acc = 0.0;
  bool rg = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    acc += weights[i] * terms[i].item();
    rg = rg || terms[i].requires_grad();
  }
  Tensor out({1}, {acc}, tape.recording() && rg);
  detail::check_finite(*out.node(), "weighted_sum");
  if (out.requires_grad()) {
    std::vector<Tensor> ts(terms.begin(), terms.end());
    Buffer ws(weights.begin(), weights.end());
    tape.record([ts, ws, out] {
      const double gy = out.node()->ensure_grad()[0];
      for (std::size_t i = 0; i < ts.size(); ++i)
        if (ts[i].requires_grad()) ts[i].node()->ensure_grad()[0] += ws[i] * gy;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Graph gather / scatter

inline Tensor gather_rows(Tape& tape, const Tensor& x, std::span<const int> index) {
  detail::require_rank2(x, "gather_rows");
  detail::check_indices(index, x.rows(), "gather_rows");
  const auto d = x.cols();
  Buffer v(index.size() * d);
  auto xs = x.data();
  for (std::size_t e = 0; e < index.size(); ++e)
    std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>(index[e] * d), d,
                v.begin() + static_cast<std::ptrdiff_t>(e * d));
  Tensor out = detail::make_output(tape, {index.size(), d}, std::move(v), {&x}, "gather_rows");
  if (out.requires_grad()) {
    std::vector<int> idx(index.begin(), index.end());
    tape.record([x, out, idx = std::move(idx), d] {
      auto& gx = x.node()->ensure_grad();
      const auto& gy = out.node()->ensure_grad();
      for (std::size_t e = 0; e < idx.size(); ++e) {
        double* dst = gx.data() + static_cast<std::size_t>(idx[e]) * d;
        const double* src = gy.data() + e * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    });
  }
  return out;
}

namespace detail {

enum class ScatterReduce { Sum, Mean };

inline Tensor scatter(Tape& tape, const Tensor& values, std::span<const int> index,
                      std::size_t n_out, ScatterReduce reduce, const char* op) {
  require_rank2(values, op);
  if (index.size() != values.rows())
    throw ShapeError(std::string(op) + ": " + std::to_string(index.size()) +
                     " indices for " + std::to_string(values.rows()) + " rows");
  if (n_out == 0) throw ShapeError(std::string(op) + ": n_out must be positive");
  check_indices(index, n_out, op);
  const auto d = values.cols();
  Buffer v(n_out * d, 0.0);
  Buffer count(n_out, 1.0);
  auto xs = values.data();
  for (std::size_t e = 0; e < index.size(); ++e) {
    double* dst = v.data() + static_cast<std::size_t>(index[e]) * d;
    const double* src = xs.data() + e * d;
    for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
  }
  if (reduce == ScatterReduce::Mean) {
    std::vector<std::size_t> hits(n_out, 0);
    for (int i : index) ++hits[static_cast<std::size_t>(i)];
    for (std::size_t r = 0; r < n_out; ++r) {
      if (hits[r] == 0) continue;
      count[r] = static_cast<double>(hits[r]);
      for (std::size_t c = 0; c < d; ++c) v[r * d + c] /= count[r];
    }
  }
  Tensor out = make_output(tape, {n_out, d}, std::move(v), {&values}, op);
  if (out.requires_grad()) {
    std::vector<int> idx(index.begin(), index.end());
    tape.record([values, out, idx = std::move(idx), count = std::move(count), d] {
      auto& gx = values.node()->ensure_grad();
      const auto& gy = out.node()->ensure_grad();
      for (std::size_t e = 0; e < idx.size(); ++e) {
        const auto r = static_cast<std::size_t>(idx[e]);
        const double w = count[r];
        const double* src = gy.data() + r * d;
        double* dst = gx.data() + e * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c] / w;
      }
    });
  }
  return out;
}

}  // namespace detail

/// Row i of the result is the mean of the rows of `values` whose index is i;
/// rows nobody scatters into stay zero.
inline Tensor scatter_mean(Tape& tape, const Tensor& values, std::span<const int> index,
                           std::size_t n_out) {
  return detail::scatter(tape, values, index, n_out, detail::ScatterReduce::Mean,
                         "scatter_mean");
}

inline Tensor scatter_sum(Tape& tape, const Tensor& values, std::span<const int> index,
                          std::size_t n_out) {
  return detail::scatter(tape, values, index, n_out, detail::ScatterReduce::Sum, "scatter_sum");
}

inline Tensor concat_cols(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const auto n = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_rank2(p, "concat_cols");
    if (p.rows() != n) throw ShapeError("concat_cols: row counts differ");
    total += p.cols();
  }
  Buffer v(n * total);
  std::size_t off = 0;
  bool rg = false;
  for (const auto& p : parts) {
    auto ps = p.data();
    const auto w = p.cols();
    for (std::size_t r = 0; r < n; ++r)
      std::copy_n(ps.begin() + static_cast<std::ptrdiff_t>(r * w), w,
                  v.begin() + static_cast<std::ptrdiff_t>(r * total + off));
    off += w;
    rg = rg || p.requires_grad();
  }
  Tensor out({n, total}, std::move(v), tape.recording() && rg);
  detail::check_finite(*out.node(), "concat_cols");
  if (out.requires_grad()) {
    std::vector<Tensor> ps(parts.begin(), parts.end());
    tape.record([ps, out, n, total] {
      const auto& gy = out.node()->ensure_grad();
      std::size_t off = 0;
      for (const auto& p : ps) {
        const auto w = p.cols();
        if (p.requires_grad()) {
          auto& g = p.node()->ensure_grad();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < w; ++c) g[r * w + c] += gy[r * total + off + c];
        }
        off += w;
      }
    });
  }
  return out;
}

/// Fused equivalent of linear(concat(x[recv], x[send], e), W, b) where W
/// stacks the receiver, sender and edge blocks row-wise. Projects the nodes
/// once and gathers, instead of materializing the concatenated edge input.
inline Tensor edge_linear(Tape& tape, const Tensor& nodes, const Tensor& edges,
                          std::span<const int> receivers, std::span<const int> senders,
                          const Tensor& w, const Tensor& b) {
  detail::require_rank2(nodes, "edge_linear");
  detail::require_rank2(edges, "edge_linear");
  detail::require_rank2(w, "edge_linear");
  const auto dn = nodes.cols(), de = edges.cols(), o = w.cols();
  const auto n_edges = edges.rows();
  if (w.rows() != 2 * dn + de)
    throw ShapeError("edge_linear: weight " + shape_str(w.shape()) + " incompatible with node width " +
                     std::to_string(dn) + " and edge width " + std::to_string(de));
  if (b.numel() != o) throw ShapeError("edge_linear: bias length mismatch");
  if (receivers.size() != n_edges || senders.size() != n_edges)
    throw ShapeError("edge_linear: edge index length does not match edge rows");
  detail::check_indices(receivers, nodes.rows(), "edge_linear");
  detail::check_indices(senders, nodes.rows(), "edge_linear");

  const auto W = w.mat();
  const auto w_recv = W.topRows(static_cast<Eigen::Index>(dn));
  const auto w_send = W.middleRows(static_cast<Eigen::Index>(dn), static_cast<Eigen::Index>(dn));
  const auto w_edge = W.bottomRows(static_cast<Eigen::Index>(de));
  RowMajorMatrix proj_recv = nodes.mat() * w_recv;
  RowMajorMatrix proj_send = nodes.mat() * w_send;

  Buffer v(n_edges * o);
  MatrixMap y(v.data(), static_cast<Eigen::Index>(n_edges), static_cast<Eigen::Index>(o));
  y.noalias() = edges.mat() * w_edge;
  auto bs = b.data();
  for (std::size_t e = 0; e < n_edges; ++e) {
    double* row = v.data() + e * o;
    const double* pr = proj_recv.data() + static_cast<std::size_t>(receivers[e]) * o;
    const double* ps = proj_send.data() + static_cast<std::size_t>(senders[e]) * o;
    for (std::size_t c = 0; c < o; ++c) row[c] += pr[c] + ps[c] + bs[c];
  }
  Tensor out =
      detail::make_output(tape, {n_edges, o}, std::move(v), {&nodes, &edges, &w, &b}, "edge_linear");
  if (out.requires_grad()) {
    std::vector<int> recv(receivers.begin(), receivers.end());
    std::vector<int> send(senders.begin(), senders.end());
    tape.record([nodes, edges, w, b, out, recv = std::move(recv), send = std::move(send), dn, de,
                 o] {
      const auto dy = detail::out_grad_map(out);
      const auto n_nodes = static_cast<Eigen::Index>(nodes.rows());
      // Scatter edge gradients back to node-level projections.
      RowMajorMatrix g_recv = RowMajorMatrix::Zero(n_nodes, static_cast<Eigen::Index>(o));
      RowMajorMatrix g_send = RowMajorMatrix::Zero(n_nodes, static_cast<Eigen::Index>(o));
      for (std::size_t e = 0; e < recv.size(); ++e) {
        g_recv.row(recv[e]) += dy.row(static_cast<Eigen::Index>(e));
        g_send.row(send[e]) += dy.row(static_cast<Eigen::Index>(e));
      }
      const auto W = w.mat();
      const auto dni = static_cast<Eigen::Index>(dn), dei = static_cast<Eigen::Index>(de);
      if (nodes.requires_grad()) {
        auto gn = detail::grad_map(nodes);
        gn.noalias() += g_recv * W.topRows(dni).transpose();
        gn.noalias() += g_send * W.middleRows(dni, dni).transpose();
      }
      if (edges.requires_grad())
        detail::grad_map(edges).noalias() += dy * W.bottomRows(dei).transpose();
      if (w.requires_grad()) {
        auto gw = detail::grad_map(w);
        gw.topRows(dni).noalias() += nodes.mat().transpose() * g_recv;
        gw.middleRows(dni, dni).noalias() += nodes.mat().transpose() * g_send;
        gw.bottomRows(dei).noalias() += edges.mat().transpose() * dy;
      }
      if (b.requires_grad()) {
        auto& gb = b.node()->ensure_grad();
        Eigen::Map<Eigen::RowVectorXd>(gb.data(), static_cast<Eigen::Index>(gb.size())) +=
            dy.colwise().sum();
      }
    });
  }
  return out;
}

}  // namespace mfunet
