#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace fdnflow {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int e : s) {
    if (e <= 0) throw std::invalid_argument("shape extents must be positive");
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s[i]);
    if (i + 1 < s.size()) out += "x";
  }
  return out + "]";
}

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized iff requires_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;  // reads this->grad, adds into parents' grad

  bool is_leaf() const { return parents.empty(); }
};

// Value-semantic handle over a shared autodiff graph node. Ops are free
// functions; backward() walks the graph in reverse topological order.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<TensorNode>();
    n->value.assign(shape_numel(shape), 0.0);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    if (requires_grad) n->grad.assign(n->value.size(), 0.0);
    return Tensor(std::move(n));
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.data().begin(), t.data().end(), v);
    return t;
  }

  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw std::invalid_argument("data length does not match shape");
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    if (requires_grad) n->grad.assign(n->value.size(), 0.0);
    return Tensor(std::move(n));
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::vector<double>& data() { return node_->value; }
  const std::vector<double>& data() const { return node_->value; }
  std::vector<double>& grad() {
    if (!node_->requires_grad)
      throw std::invalid_argument("tensor does not track gradients");
    return node_->grad;
  }
  const std::vector<double>& grad() const {
    return const_cast<Tensor*>(this)->grad();
  }

  void zero_grad() {
    if (node_->requires_grad)
      std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  std::shared_ptr<TensorNode> node() const { return node_; }

  double item() const {
    if (numel() != 1) throw std::invalid_argument("item() requires a scalar");
    return node_->value[0];
  }

  // Reverse-mode pass from a scalar. Leaf grads accumulate across calls;
  // interior grads are scratch and reset on every pass.
  void backward() const {
    if (numel() != 1)
      throw std::invalid_argument("backward requires a scalar tensor");
    if (!node_->requires_grad)
      throw std::invalid_argument("backward requires a tracked scalar");

    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        TensorNode* p = n->parents[idx++].get();
        if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    for (TensorNode* n : order)
      if (!n->is_leaf()) std::fill(n->grad.begin(), n->grad.end(), 0.0);
    if (node_->is_leaf())
      node_->grad[0] += 1.0;
    else
      node_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->backprop) (*it)->backprop(**it);
  }

 private:
  std::shared_ptr<TensorNode> node_;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> value,
                          std::vector<Tensor> parents,
                          std::function<void(TensorNode&)> backprop) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  for (const Tensor& p : parents)
    if (p.node()->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->grad.assign(n->value.size(), 0.0);
    for (const Tensor& p : parents) n->parents.push_back(p.node());
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

// Optional tracing of nondifferentiable decisions (relu/abs sign
// patterns, maxpool argmax choices). When enabled, every kinked op folds
// its decisions into a running hash; two evaluations of the same graph
// with different signatures crossed a kink somewhere in between. Used by
// finite-difference checks to exclude contaminated coordinates.
inline thread_local bool trace_kinks = false;
inline thread_local std::uint64_t kink_signature = 1469598103934665603ull;

inline void reset_kink_signature() { kink_signature = 1469598103934665603ull; }

inline void fold_kink(std::uint64_t v) {
  kink_signature = (kink_signature ^ v) * 1099511628211ull;
}

inline void check_same_shape(const Tensor& a, const Tensor& b,
                             const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

}  // namespace detail

// ---- elementwise arithmetic (scalar-with-tensor broadcast only) ----

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.numel() == 1 && b.numel() > 1) return add(b, a);
  if (b.numel() == 1 && a.numel() > 1) {
    const double s = b.data()[0];
    std::vector<double> out(a.data());
    for (double& x : out) x += s;
    auto an = a.node().get();
    auto bn = b.node().get();
    return detail::make_result(a.shape(), std::move(out), {a, b},
                               [an, bn](TensorNode& n) {
                                 if (an->requires_grad)
                                   for (std::size_t i = 0; i < n.grad.size(); ++i)
                                     an->grad[i] += n.grad[i];
                                 if (bn->requires_grad)
                                   for (double g : n.grad) bn->grad[0] += g;
                               });
  }
  detail::check_same_shape(a, b, "add");
  std::vector<double> out(a.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
  auto an = a.node().get();
  auto bn = b.node().get();
  return detail::make_result(a.shape(), std::move(out), {a, b},
                             [an, bn](TensorNode& n) {
                               if (an->requires_grad)
                                 for (std::size_t i = 0; i < n.grad.size(); ++i)
                                   an->grad[i] += n.grad[i];
                               if (bn->requires_grad)
                                 for (std::size_t i = 0; i < n.grad.size(); ++i)
                                   bn->grad[i] += n.grad[i];
                             });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> out(a.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.data()[i];
  auto an = a.node().get();
  auto bn = b.node().get();
  return detail::make_result(a.shape(), std::move(out), {a, b},
                             [an, bn](TensorNode& n) {
                               if (an->requires_grad)
                                 for (std::size_t i = 0; i < n.grad.size(); ++i)
                                   an->grad[i] += n.grad[i];
                               if (bn->requires_grad)
                                 for (std::size_t i = 0; i < n.grad.size(); ++i)
                                   bn->grad[i] -= n.grad[i];
                             });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.numel() == 1 && b.numel() > 1) return mul(b, a);
  if (b.numel() == 1 && a.numel() > 1) {
    const double s = b.data()[0];
    std::vector<double> out(a.data());
    for (double& x : out) x *= s;
    auto an = a.node().get();
    auto bn = b.node().get();
    return detail::make_result(
        a.shape(), std::move(out), {a, b}, [an, bn, s](TensorNode& n) {
          if (an->requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i)
              an->grad[i] += s * n.grad[i];
          if (bn->requires_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i)
              bn->grad[0] += an->value[i] * n.grad[i];
        });
  }
  detail::check_same_shape(a, b, "mul");
  std::vector<double> out(a.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.data()[i];
  auto an = a.node().get();
  auto bn = b.node().get();
  return detail::make_result(
      a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& n) {
        if (an->requires_grad)
          for (std::size_t i = 0; i < n.grad.size(); ++i)
            an->grad[i] += bn->value[i] * n.grad[i];
        if (bn->requires_grad)
          for (std::size_t i = 0; i < n.grad.size(); ++i)
            bn->grad[i] += an->value[i] * n.grad[i];
      });
}

inline Tensor scalar_mul(const Tensor& a, double s) {
  std::vector<double> out(a.data());
  for (double& x : out) x *= s;
  auto an = a.node().get();
  return detail::make_result(a.shape(), std::move(out), {a},
                             [an, s](TensorNode& n) {
                               for (std::size_t i = 0; i < n.grad.size(); ++i)
                                 an->grad[i] += s * n.grad[i];
                             });
}

inline Tensor abs(const Tensor& a) {
  std::vector<double> out(a.data());
  for (double& x : out) x = std::fabs(x);
  if (detail::trace_kinks)
    for (double x : a.data())
      detail::fold_kink(x > 0.0 ? 2u : (x < 0.0 ? 1u : 0u));
  auto an = a.node().get();
  return detail::make_result(
      a.shape(), std::move(out), {a}, [an](TensorNode& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          const double x = an->value[i];
          // subgradient at 0 is 0
          an->grad[i] += (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0)) * n.grad[i];
        }
      });
}

inline Tensor square(const Tensor& a) {
  std::vector<double> out(a.data());
  for (double& x : out) x *= x;
  auto an = a.node().get();
  return detail::make_result(a.shape(), std::move(out), {a},
                             [an](TensorNode& n) {
                               for (std::size_t i = 0; i < n.grad.size(); ++i)
                                 an->grad[i] += 2.0 * an->value[i] * n.grad[i];
                             });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data());
  for (double& x : out) x = std::max(0.0, x);
  if (detail::trace_kinks)
    for (double x : a.data()) detail::fold_kink(x > 0.0 ? 1u : 0u);
  auto an = a.node().get();
  return detail::make_result(a.shape(), std::move(out), {a},
                             [an](TensorNode& n) {
                               for (std::size_t i = 0; i < n.grad.size(); ++i)
                                 if (an->value[i] > 0.0)
                                   an->grad[i] += n.grad[i];
                             });
}

// ---- reductions ----

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  auto an = a.node().get();
  return detail::make_result({1}, {s}, {a}, [an](TensorNode& n) {
    const double g = n.grad[0];
    for (double& x : an->grad) x += g;
  });
}

inline Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  double s = 0.0;
  for (double x : a.data()) s += x;
  auto an = a.node().get();
  return detail::make_result({1}, {s * inv}, {a}, [an, inv](TensorNode& n) {
    const double g = n.grad[0] * inv;
    for (double& x : an->grad) x += g;
  });
}

// ---- structural ops on B x C x H x W tensors ----

namespace detail {
inline void check_4d(const Tensor& t, const char* op) {
  if (t.shape().size() != 4)
    throw std::invalid_argument(std::string(op) + ": expected 4-d tensor, got " +
                                shape_str(t.shape()));
}
}  // namespace detail

inline Tensor slice_channel(const Tensor& t, int c) {
  detail::check_4d(t, "slice_channel");
  const int B = t.shape()[0], C = t.shape()[1], H = t.shape()[2],
            W = t.shape()[3];
  if (c < 0 || c >= C) throw std::invalid_argument("slice_channel: bad index");
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<double> out(static_cast<std::size_t>(B) * plane);
  for (int b = 0; b < B; ++b)
    std::copy_n(t.data().begin() + (static_cast<std::size_t>(b) * C + c) * plane,
                plane, out.begin() + static_cast<std::size_t>(b) * plane);
  auto tn = t.node().get();
  return detail::make_result(
      {B, 1, H, W}, std::move(out), {t}, [tn, B, C, c, plane](TensorNode& n) {
        for (int b = 0; b < B; ++b) {
          double* dst = tn->grad.data() + (static_cast<std::size_t>(b) * C + c) * plane;
          const double* src = n.grad.data() + static_cast<std::size_t>(b) * plane;
          for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
        }
      });
}

// Zero padding on the bottom/right edges.
inline Tensor pad_bottom_right(const Tensor& t, int pad_h, int pad_w) {
  detail::check_4d(t, "pad_bottom_right");
  if (pad_h < 0 || pad_w < 0)
    throw std::invalid_argument("pad_bottom_right: negative padding");
  if (pad_h == 0 && pad_w == 0) return t;
  const int B = t.shape()[0], C = t.shape()[1], H = t.shape()[2],
            W = t.shape()[3];
  const int Ho = H + pad_h, Wo = W + pad_w;
  std::vector<double> out(static_cast<std::size_t>(B) * C * Ho * Wo, 0.0);
  for (int bc = 0; bc < B * C; ++bc)
    for (int i = 0; i < H; ++i)
      std::copy_n(t.data().begin() + (static_cast<std::size_t>(bc) * H + i) * W, W,
                  out.begin() + (static_cast<std::size_t>(bc) * Ho + i) * Wo);
  auto tn = t.node().get();
  return detail::make_result(
      {B, C, Ho, Wo}, std::move(out), {t},
      [tn, B, C, H, W, Ho, Wo](TensorNode& n) {
        for (int bc = 0; bc < B * C; ++bc)
          for (int i = 0; i < H; ++i) {
            const double* src =
                n.grad.data() + (static_cast<std::size_t>(bc) * Ho + i) * Wo;
            double* dst = tn->grad.data() + (static_cast<std::size_t>(bc) * H + i) * W;
            for (int j = 0; j < W; ++j) dst[j] += src[j];
          }
      });
}

// Keep the top-left h x w window.
inline Tensor crop_top_left(const Tensor& t, int h, int w) {
  detail::check_4d(t, "crop_top_left");
  const int B = t.shape()[0], C = t.shape()[1], H = t.shape()[2],
            W = t.shape()[3];
  if (h < 1 || w < 1 || h > H || w > W)
    throw std::invalid_argument("crop_top_left: bad crop extents");
  if (h == H && w == W) return t;
  std::vector<double> out(static_cast<std::size_t>(B) * C * h * w);
  for (int bc = 0; bc < B * C; ++bc)
    for (int i = 0; i < h; ++i)
      std::copy_n(t.data().begin() + (static_cast<std::size_t>(bc) * H + i) * W, w,
                  out.begin() + (static_cast<std::size_t>(bc) * h + i) * w);
  auto tn = t.node().get();
  return detail::make_result(
      {B, C, h, w}, std::move(out), {t},
      [tn, B, C, H, W, h, w](TensorNode& n) {
        for (int bc = 0; bc < B * C; ++bc)
          for (int i = 0; i < h; ++i) {
            const double* src = n.grad.data() + (static_cast<std::size_t>(bc) * h + i) * w;
            double* dst = tn->grad.data() + (static_cast<std::size_t>(bc) * H + i) * W;
            for (int j = 0; j < w; ++j) dst[j] += src[j];
          }
      });
}

// Forward difference along height (axis 0) or width (axis 1) with a zero
// (Neumann) boundary on the last row/column.
inline Tensor forward_diff(const Tensor& t, int axis) {
  detail::check_4d(t, "forward_diff");
  if (axis != 0 && axis != 1)
    throw std::invalid_argument("forward_diff: axis must be 0 or 1");
  const int B = t.shape()[0], C = t.shape()[1], H = t.shape()[2],
            W = t.shape()[3];
  std::vector<double> out(t.numel(), 0.0);
  for (int bc = 0; bc < B * C; ++bc) {
    const double* in = t.data().data() + static_cast<std::size_t>(bc) * H * W;
    double* o = out.data() + static_cast<std::size_t>(bc) * H * W;
    if (axis == 0) {
      for (int i = 0; i + 1 < H; ++i)
        for (int j = 0; j < W; ++j)
          o[i * W + j] = in[(i + 1) * W + j] - in[i * W + j];
    } else {
      for (int i = 0; i < H; ++i)
        for (int j = 0; j + 1 < W; ++j)
          o[i * W + j] = in[i * W + j + 1] - in[i * W + j];
    }
  }
  auto tn = t.node().get();
  return detail::make_result(
      t.shape(), std::move(out), {t},
      [tn, B, C, H, W, axis](TensorNode& n) {
        for (int bc = 0; bc < B * C; ++bc) {
          const double* g = n.grad.data() + static_cast<std::size_t>(bc) * H * W;
          double* d = tn->grad.data() + static_cast<std::size_t>(bc) * H * W;
          if (axis == 0) {
            for (int i = 0; i + 1 < H; ++i)
              for (int j = 0; j < W; ++j) {
                d[(i + 1) * W + j] += g[i * W + j];
                d[i * W + j] -= g[i * W + j];
              }
          } else {
            for (int i = 0; i < H; ++i)
              for (int j = 0; j + 1 < W; ++j) {
                d[i * W + j + 1] += g[i * W + j];
                d[i * W + j] -= g[i * W + j];
              }
          }
        }
      });
}

}  // namespace fdnflow
