#pragma once

#include <cblas.h>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "fdnflow/tensor.hpp"

namespace fdnflow {

namespace detail {

// input plane (C x H x W) -> column matrix (C*k*k) x (Ho*Wo)
inline void im2col(const double* in, int C, int H, int W, int k, int stride,
                   int pad, int Ho, int Wo, double* col) {
  const int K = C * k * k;
  for (int r = 0; r < K; ++r) {
    const int c = r / (k * k);
    const int ki = (r / k) % k;
    const int kj = r % k;
    const double* plane = in + static_cast<std::size_t>(c) * H * W;
    double* row = col + static_cast<std::size_t>(r) * Ho * Wo;
    for (int oi = 0; oi < Ho; ++oi) {
      const int ii = oi * stride + ki - pad;
      if (ii < 0 || ii >= H) {
        for (int oj = 0; oj < Wo; ++oj) row[oi * Wo + oj] = 0.0;
        continue;
      }
      for (int oj = 0; oj < Wo; ++oj) {
        const int jj = oj * stride + kj - pad;
        row[oi * Wo + oj] = (jj < 0 || jj >= W) ? 0.0 : plane[ii * W + jj];
      }
    }
  }
}

// adjoint of im2col: scatter-add columns back into the input plane
inline void col2im(const double* col, int C, int H, int W, int k, int stride,
                   int pad, int Ho, int Wo, double* in) {
  const int K = C * k * k;
  for (int r = 0; r < K; ++r) {
    const int c = r / (k * k);
    const int ki = (r / k) % k;
    const int kj = r % k;
    double* plane = in + static_cast<std::size_t>(c) * H * W;
    const double* row = col + static_cast<std::size_t>(r) * Ho * Wo;
    for (int oi = 0; oi < Ho; ++oi) {
      const int ii = oi * stride + ki - pad;
      if (ii < 0 || ii >= H) continue;
      for (int oj = 0; oj < Wo; ++oj) {
        const int jj = oj * stride + kj - pad;
        if (jj >= 0 && jj < W) plane[ii * W + jj] += row[oi * Wo + oj];
      }
    }
  }
}

inline void gemm(bool ta, bool tb, int m, int n, int kk, double alpha,
                 const double* a, int lda, const double* b, int ldb,
                 double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, m, n, kk, alpha, a, lda, b, ldb,
              beta, c, ldc);
}

}  // namespace detail

// 2-d convolution, weight Cout x Cin x k x k, square kernel/stride/padding.
inline Tensor conv2d(const Tensor& input, const Tensor& weight,
                     const Tensor& bias, int stride = 1, int padding = 0) {
  detail::check_4d(input, "conv2d");
  detail::check_4d(weight, "conv2d weight");
  const int B = input.shape()[0], Cin = input.shape()[1], H = input.shape()[2],
            W = input.shape()[3];
  const int Cout = weight.shape()[0], k = weight.shape()[2];
  if (weight.shape()[1] != Cin)
    throw std::invalid_argument("conv2d: input channels do not match weight");
  if (weight.shape()[3] != k)
    throw std::invalid_argument("conv2d: kernel must be square");
  if (bias.numel() != static_cast<std::size_t>(Cout))
    throw std::invalid_argument("conv2d: bias length must equal Cout");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  const int Ho = (H + 2 * padding - k) / stride + 1;
  const int Wo = (W + 2 * padding - k) / stride + 1;
  if (Ho < 1 || Wo < 1)
    throw std::invalid_argument("conv2d: output would be empty");

  const int K = Cin * k * k;
  const std::size_t out_plane = static_cast<std::size_t>(Ho) * Wo;
  std::vector<double> out(static_cast<std::size_t>(B) * Cout * out_plane);
  std::vector<double> col(static_cast<std::size_t>(K) * out_plane);
  for (int b = 0; b < B; ++b) {
    detail::im2col(input.data().data() + static_cast<std::size_t>(b) * Cin * H * W,
                   Cin, H, W, k, stride, padding, Ho, Wo, col.data());
    double* ob = out.data() + static_cast<std::size_t>(b) * Cout * out_plane;
    detail::gemm(false, false, Cout, static_cast<int>(out_plane), K, 1.0,
                 weight.data().data(), K, col.data(), static_cast<int>(out_plane),
                 0.0, ob, static_cast<int>(out_plane));
    for (int c = 0; c < Cout; ++c) {
      const double bv = bias.data()[c];
      double* p = ob + static_cast<std::size_t>(c) * out_plane;
      for (std::size_t i = 0; i < out_plane; ++i) p[i] += bv;
    }
  }

  auto in_n = input.node().get();
  auto w_n = weight.node().get();
  auto b_n = bias.node().get();
  return detail::make_result(
      {B, Cout, Ho, Wo}, std::move(out), {input, weight, bias},
      [=](TensorNode& n) {
        const std::size_t plane = static_cast<std::size_t>(Ho) * Wo;
        std::vector<double> col(static_cast<std::size_t>(K) * plane);
        std::vector<double> dcol;
        for (int b = 0; b < B; ++b) {
          const double* dy = n.grad.data() + static_cast<std::size_t>(b) * Cout * plane;
          if (w_n->requires_grad || b_n->requires_grad || in_n->requires_grad)
            detail::im2col(in_n->value.data() + static_cast<std::size_t>(b) * Cin * H * W,
                           Cin, H, W, k, stride, padding, Ho, Wo, col.data());
          if (w_n->requires_grad)
            detail::gemm(false, true, Cout, K, static_cast<int>(plane), 1.0, dy,
                         static_cast<int>(plane), col.data(), static_cast<int>(plane),
                         1.0, w_n->grad.data(), K);
          if (b_n->requires_grad)
            for (int c = 0; c < Cout; ++c) {
              double s = 0.0;
              const double* p = dy + static_cast<std::size_t>(c) * plane;
              for (std::size_t i = 0; i < plane; ++i) s += p[i];
              b_n->grad[c] += s;
            }
          if (in_n->requires_grad) {
            dcol.assign(static_cast<std::size_t>(K) * plane, 0.0);
            detail::gemm(true, false, K, static_cast<int>(plane), Cout, 1.0,
                         w_n->value.data(), K, dy, static_cast<int>(plane), 0.0,
                         dcol.data(), static_cast<int>(plane));
            detail::col2im(dcol.data(), Cin, H, W, k, stride, padding, Ho, Wo,
                           in_n->grad.data() + static_cast<std::size_t>(b) * Cin * H * W);
          }
        }
      });
}

// Transposed convolution with the fixed 2x2 kernel / stride 2 used by the
// decoder. weight Cin x Cout x 2 x 2; output spatial extents double.
inline Tensor conv_transpose2d(const Tensor& input, const Tensor& weight,
                               const Tensor& bias) {
  detail::check_4d(input, "conv_transpose2d");
  detail::check_4d(weight, "conv_transpose2d weight");
  const int B = input.shape()[0], Cin = input.shape()[1], H = input.shape()[2],
            W = input.shape()[3];
  const int Cout = weight.shape()[1];
  if (weight.shape()[0] != Cin)
    throw std::invalid_argument(
        "conv_transpose2d: input channels do not match weight");
  if (weight.shape()[2] != 2 || weight.shape()[3] != 2)
    throw std::invalid_argument("conv_transpose2d: kernel must be 2x2");
  if (bias.numel() != static_cast<std::size_t>(Cout))
    throw std::invalid_argument("conv_transpose2d: bias length must equal Cout");
  const int Ho = 2 * H, Wo = 2 * W;

  std::vector<double> out(static_cast<std::size_t>(B) * Cout * Ho * Wo);
  for (int b = 0; b < B; ++b)
    for (int co = 0; co < Cout; ++co) {
      double* op = out.data() +
                   (static_cast<std::size_t>(b) * Cout + co) * Ho * Wo;
      const double bv = bias.data()[co];
      for (int i = 0; i < Ho * Wo; ++i) op[i] = bv;
      for (int ci = 0; ci < Cin; ++ci) {
        const double* ip = input.data().data() +
                           (static_cast<std::size_t>(b) * Cin + ci) * H * W;
        const double* wp = weight.data().data() +
                           (static_cast<std::size_t>(ci) * Cout + co) * 4;
        for (int i = 0; i < H; ++i)
          for (int j = 0; j < W; ++j) {
            const double x = ip[i * W + j];
            double* o = op + (2 * i) * Wo + 2 * j;
            o[0] += x * wp[0];
            o[1] += x * wp[1];
            o[Wo] += x * wp[2];
            o[Wo + 1] += x * wp[3];
          }
      }
    }

  auto in_n = input.node().get();
  auto w_n = weight.node().get();
  auto b_n = bias.node().get();
  return detail::make_result(
      {B, Cout, Ho, Wo}, std::move(out), {input, weight, bias},
      [=](TensorNode& n) {
        for (int b = 0; b < B; ++b)
          for (int co = 0; co < Cout; ++co) {
            const double* dy = n.grad.data() +
                               (static_cast<std::size_t>(b) * Cout + co) * Ho * Wo;
            if (b_n->requires_grad) {
              double s = 0.0;
              for (int i = 0; i < Ho * Wo; ++i) s += dy[i];
              b_n->grad[co] += s;
            }
            for (int ci = 0; ci < Cin; ++ci) {
              const double* ip = in_n->value.data() +
                                 (static_cast<std::size_t>(b) * Cin + ci) * H * W;
              const double* wp = w_n->value.data() +
                                 (static_cast<std::size_t>(ci) * Cout + co) * 4;
              double* dwp = w_n->requires_grad
                                ? w_n->grad.data() +
                                      (static_cast<std::size_t>(ci) * Cout + co) * 4
                                : nullptr;
              double* dip = in_n->requires_grad
                                ? in_n->grad.data() +
                                      (static_cast<std::size_t>(b) * Cin + ci) * H * W
                                : nullptr;
              for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                  const double* g = dy + (2 * i) * Wo + 2 * j;
                  if (dwp) {
                    const double x = ip[i * W + j];
                    dwp[0] += x * g[0];
                    dwp[1] += x * g[1];
                    dwp[2] += x * g[Wo];
                    dwp[3] += x * g[Wo + 1];
                  }
                  if (dip)
                    dip[i * W + j] += wp[0] * g[0] + wp[1] * g[1] +
                                      wp[2] * g[Wo] + wp[3] * g[Wo + 1];
                }
            }
          }
      });
}

// 2x2/stride-2 max pooling; gradient routes to the first maximum in
// row-major window order.
inline Tensor maxpool2d(const Tensor& input) {
  detail::check_4d(input, "maxpool2d");
  const int B = input.shape()[0], C = input.shape()[1], H = input.shape()[2],
            W = input.shape()[3];
  if (H % 2 != 0 || W % 2 != 0)
    throw std::invalid_argument("maxpool2d: spatial extents must be even");
  const int Ho = H / 2, Wo = W / 2;
  std::vector<double> out(static_cast<std::size_t>(B) * C * Ho * Wo);
  auto argmax = std::make_shared<std::vector<int>>(out.size());
  for (int bc = 0; bc < B * C; ++bc) {
    const double* ip = input.data().data() + static_cast<std::size_t>(bc) * H * W;
    double* op = out.data() + static_cast<std::size_t>(bc) * Ho * Wo;
    int* ap = argmax->data() + static_cast<std::size_t>(bc) * Ho * Wo;
    for (int oi = 0; oi < Ho; ++oi)
      for (int oj = 0; oj < Wo; ++oj) {
        const int base = (2 * oi) * W + 2 * oj;
        const int idx[4] = {base, base + 1, base + W, base + W + 1};
        int best = idx[0];
        double bv = ip[idx[0]];
        for (int t = 1; t < 4; ++t)
          if (ip[idx[t]] > bv) {
            bv = ip[idx[t]];
            best = idx[t];
          }
        op[oi * Wo + oj] = bv;
        ap[oi * Wo + oj] = best;
      }
  }
  if (fdnflow::detail::trace_kinks)
    for (int a : *argmax) fdnflow::detail::fold_kink(static_cast<std::uint64_t>(a));
  auto in_n = input.node().get();
  return detail::make_result(
      {B, C, Ho, Wo}, std::move(out), {input},
      [in_n, argmax, B, C, H, W, Ho, Wo](TensorNode& n) {
        for (int bc = 0; bc < B * C; ++bc) {
          const double* g = n.grad.data() + static_cast<std::size_t>(bc) * Ho * Wo;
          const int* ap = argmax->data() + static_cast<std::size_t>(bc) * Ho * Wo;
          double* d = in_n->grad.data() + static_cast<std::size_t>(bc) * H * W;
          for (int i = 0; i < Ho * Wo; ++i) d[ap[i]] += g[i];
        }
      });
}

// Running statistics owned by the caller, updated in training mode.
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;

  static BatchNormState init(int channels) {
    BatchNormState s;
    s.running_mean.assign(channels, 0.0);
    s.running_var.assign(channels, 1.0);
    return s;
  }
};

inline Tensor batchnorm2d(const Tensor& input, const Tensor& gamma,
                          const Tensor& beta, BatchNormState& state,
                          bool training, double eps = 1e-5) {
  detail::check_4d(input, "batchnorm2d");
  const int B = input.shape()[0], C = input.shape()[1], H = input.shape()[2],
            W = input.shape()[3];
  if (gamma.numel() != static_cast<std::size_t>(C) ||
      beta.numel() != static_cast<std::size_t>(C))
    throw std::invalid_argument("batchnorm2d: affine length must equal C");
  const std::size_t m = static_cast<std::size_t>(B) * H * W;
  if (m < 2)
    throw std::invalid_argument("batchnorm2d: needs at least 2 values per channel");
  if (state.running_mean.size() != static_cast<std::size_t>(C))
    throw std::invalid_argument("batchnorm2d: running stats length must equal C");

  auto mu = std::make_shared<std::vector<double>>(C);
  auto invstd = std::make_shared<std::vector<double>>(C);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    for (int b = 0; b < B; ++b) {
      const double* p = input.data().data() +
                        (static_cast<std::size_t>(b) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
    }
    const double mean_c = s / static_cast<double>(m);
    double v = 0.0;
    for (int b = 0; b < B; ++b) {
      const double* p = input.data().data() +
                        (static_cast<std::size_t>(b) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = p[i] - mean_c;
        v += d * d;
      }
    }
    const double var_c = v / static_cast<double>(m);
    if (training) {
      state.running_mean[c] =
          (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mean_c;
      state.running_var[c] =
          (1.0 - state.momentum) * state.running_var[c] + state.momentum * var_c;
      (*mu)[c] = mean_c;
      (*invstd)[c] = 1.0 / std::sqrt(var_c + eps);
    } else {
      (*mu)[c] = state.running_mean[c];
      (*invstd)[c] = 1.0 / std::sqrt(state.running_var[c] + eps);
    }
  }

  std::vector<double> out(input.numel());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const double* p = input.data().data() +
                        (static_cast<std::size_t>(b) * C + c) * plane;
      double* o = out.data() + (static_cast<std::size_t>(b) * C + c) * plane;
      const double g = gamma.data()[c], bt = beta.data()[c];
      const double mc = (*mu)[c], is = (*invstd)[c];
      for (std::size_t i = 0; i < plane; ++i) o[i] = g * (p[i] - mc) * is + bt;
    }

  auto in_n = input.node().get();
  auto g_n = gamma.node().get();
  auto b_n = beta.node().get();
  return detail::make_result(
      input.shape(), std::move(out), {input, gamma, beta},
      [=](TensorNode& n) {
        const double inv_m = 1.0 / static_cast<double>(m);
        for (int c = 0; c < C; ++c) {
          const double mc = (*mu)[c], is = (*invstd)[c];
          const double gm = g_n->value[c];
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int b = 0; b < B; ++b) {
            const std::size_t off = (static_cast<std::size_t>(b) * C + c) * plane;
            const double* dy = n.grad.data() + off;
            const double* x = in_n->value.data() + off;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_dy += dy[i];
              sum_dy_xhat += dy[i] * (x[i] - mc) * is;
            }
          }
          if (g_n->requires_grad) g_n->grad[c] += sum_dy_xhat;
          if (b_n->requires_grad) b_n->grad[c] += sum_dy;
          if (!in_n->requires_grad) continue;
          for (int b = 0; b < B; ++b) {
            const std::size_t off = (static_cast<std::size_t>(b) * C + c) * plane;
            const double* dy = n.grad.data() + off;
            const double* x = in_n->value.data() + off;
            double* dx = in_n->grad.data() + off;
            if (training) {
              for (std::size_t i = 0; i < plane; ++i) {
                const double xhat = (x[i] - mc) * is;
                dx[i] += gm * is *
                         (dy[i] - inv_m * sum_dy - inv_m * xhat * sum_dy_xhat);
              }
            } else {
              for (std::size_t i = 0; i < plane; ++i) dx[i] += gm * is * dy[i];
            }
          }
        }
      });
}

// Corner-aligned bilinear resampling; corner pixels map exactly.
inline Tensor bilinear_resize(const Tensor& input, int out_h, int out_w) {
  detail::check_4d(input, "bilinear_resize");
  if (out_h < 1 || out_w < 1)
    throw std::invalid_argument("bilinear_resize: output extents must be >= 1");
  const int B = input.shape()[0], C = input.shape()[1], H = input.shape()[2],
            W = input.shape()[3];
  if (out_h == H && out_w == W) return input;

  const double sy = out_h > 1 ? static_cast<double>(H - 1) / (out_h - 1) : 0.0;
  const double sx = out_w > 1 ? static_cast<double>(W - 1) / (out_w - 1) : 0.0;
  std::vector<std::pair<std::pair<int, int>, double>> rows(out_h), cols(out_w);
  for (int i = 0; i < out_h; ++i) {
    const double f = i * sy;
    int i0 = static_cast<int>(std::floor(f));
    if (i0 > H - 2) i0 = H - 2;
    if (i0 < 0) i0 = 0;
    const int i1 = H > 1 ? i0 + 1 : 0;
    rows[i] = {{i0, i1}, H > 1 ? f - i0 : 0.0};
  }
  for (int j = 0; j < out_w; ++j) {
    const double f = j * sx;
    int j0 = static_cast<int>(std::floor(f));
    if (j0 > W - 2) j0 = W - 2;
    if (j0 < 0) j0 = 0;
    const int j1 = W > 1 ? j0 + 1 : 0;
    cols[j] = {{j0, j1}, W > 1 ? f - j0 : 0.0};
  }

  std::vector<double> out(static_cast<std::size_t>(B) * C * out_h * out_w);
  for (int bc = 0; bc < B * C; ++bc) {
    const double* ip = input.data().data() + static_cast<std::size_t>(bc) * H * W;
    double* op = out.data() + static_cast<std::size_t>(bc) * out_h * out_w;
    for (int i = 0; i < out_h; ++i) {
      const auto [ii, wi] = rows[i];
      for (int j = 0; j < out_w; ++j) {
        const auto [jj, wj] = cols[j];
        op[i * out_w + j] =
            (1 - wi) * ((1 - wj) * ip[ii.first * W + jj.first] +
                        wj * ip[ii.first * W + jj.second]) +
            wi * ((1 - wj) * ip[ii.second * W + jj.first] +
                  wj * ip[ii.second * W + jj.second]);
      }
    }
  }

  auto in_n = input.node().get();
  auto rows_p = std::make_shared<decltype(rows)>(std::move(rows));
  auto cols_p = std::make_shared<decltype(cols)>(std::move(cols));
  return detail::make_result(
      {B, C, out_h, out_w}, std::move(out), {input},
      [in_n, rows_p, cols_p, B, C, H, W, out_h, out_w](TensorNode& n) {
        for (int bc = 0; bc < B * C; ++bc) {
          const double* g = n.grad.data() + static_cast<std::size_t>(bc) * out_h * out_w;
          double* d = in_n->grad.data() + static_cast<std::size_t>(bc) * H * W;
          for (int i = 0; i < out_h; ++i) {
            const auto [ii, wi] = (*rows_p)[i];
            for (int j = 0; j < out_w; ++j) {
              const auto [jj, wj] = (*cols_p)[j];
              const double gv = g[i * out_w + j];
              d[ii.first * W + jj.first] += (1 - wi) * (1 - wj) * gv;
              d[ii.first * W + jj.second] += (1 - wi) * wj * gv;
              d[ii.second * W + jj.first] += wi * (1 - wj) * gv;
              d[ii.second * W + jj.second] += wi * wj * gv;
            }
          }
        }
      });
}

}  // namespace fdnflow
