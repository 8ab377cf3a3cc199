#pragma once

#include <stdexcept>
#include <utility>
#include <vector>

#include "fdnflow/tensor.hpp"

namespace fdnflow {

struct EnergyWeights {
  double lambda1 = 0.2;
  double lambda2 = 0.8;
  double lambda_tv = 0.0;

  void validate() const {
    if (lambda1 < 0.0 || lambda2 < 0.0 || lambda_tv < 0.0)
      throw std::invalid_argument("energy weights must be non-negative");
  }
};

enum class LossNorm { Mean, Sum };

struct EnergyBreakdown {
  double data_l1 = 0.0;
  double data_l2 = 0.0;
  double tv = 0.0;
  double total = 0.0;
  Tensor total_tensor;  // scalar, differentiable w.r.t. the flow
};

// Central differences at interior pixels, one-sided at the boundary.
// gx runs along width, gy along height. The result does not track
// gradients: the image is data.
inline std::pair<Tensor, Tensor> image_gradient(const Tensor& image) {
  detail::check_4d(image, "image_gradient");
  const int B = image.shape()[0], C = image.shape()[1], H = image.shape()[2],
            W = image.shape()[3];
  if (H < 2 || W < 2)
    throw std::invalid_argument("image_gradient: needs at least 2x2 pixels");
  std::vector<double> gx(image.numel()), gy(image.numel());
  for (int bc = 0; bc < B * C; ++bc) {
    const double* p = image.data().data() + static_cast<std::size_t>(bc) * H * W;
    double* ox = gx.data() + static_cast<std::size_t>(bc) * H * W;
    double* oy = gy.data() + static_cast<std::size_t>(bc) * H * W;
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        ox[i * W + j] = j == 0       ? p[i * W + 1] - p[i * W]
                        : j == W - 1 ? p[i * W + j] - p[i * W + j - 1]
                                     : 0.5 * (p[i * W + j + 1] - p[i * W + j - 1]);
        oy[i * W + j] = i == 0       ? p[W + j] - p[j]
                        : i == H - 1 ? p[i * W + j] - p[(i - 1) * W + j]
                                     : 0.5 * (p[(i + 1) * W + j] - p[(i - 1) * W + j]);
      }
  }
  return {Tensor::from_data(image.shape(), std::move(gx)),
          Tensor::from_data(image.shape(), std::move(gy))};
}

// Linearized brightness-constancy residual r = gx*u + gy*v + I2 - I1.
inline Tensor data_residual(const Tensor& frame1, const Tensor& frame2,
                            const Tensor& flow) {
  detail::check_4d(frame1, "data_residual");
  detail::check_4d(flow, "data_residual flow");
  detail::check_same_shape(frame1, frame2, "data_residual");
  if (flow.shape()[1] != 2)
    throw std::invalid_argument("data_residual: flow must have 2 channels");
  if (flow.shape()[0] != frame1.shape()[0] ||
      flow.shape()[2] != frame1.shape()[2] ||
      flow.shape()[3] != frame1.shape()[3])
    throw std::invalid_argument("data_residual: flow/image shape mismatch");

  auto [gx, gy] = image_gradient(frame2);
  Tensor u = slice_channel(flow, 0);
  Tensor v = slice_channel(flow, 1);
  Tensor diff = sub(frame2, frame1);
  return add(add(mul(gx, u), mul(gy, v)), diff);
}

// Anisotropic total variation of the flow: sum (or per-pixel mean) of the
// absolute forward differences of u and v along both axes.
inline Tensor anisotropic_tv(const Tensor& flow, LossNorm norm = LossNorm::Mean) {
  detail::check_4d(flow, "anisotropic_tv");
  if (flow.shape()[1] != 2)
    throw std::invalid_argument("anisotropic_tv: flow must have 2 channels");
  if (flow.shape()[2] < 2 || flow.shape()[3] < 2)
    throw std::invalid_argument("anisotropic_tv: needs at least 2x2 pixels");
  Tensor u = slice_channel(flow, 0);
  Tensor v = slice_channel(flow, 1);
  Tensor total = add(add(sum(abs(forward_diff(u, 1))), sum(abs(forward_diff(u, 0)))),
                     add(sum(abs(forward_diff(v, 1))), sum(abs(forward_diff(v, 0)))));
  if (norm == LossNorm::Mean) {
    const double pixels = static_cast<double>(flow.shape()[0]) *
                          flow.shape()[2] * flow.shape()[3];
    total = scalar_mul(total, 1.0 / pixels);
  }
  return total;
}

inline EnergyBreakdown total_energy(const Tensor& frame1, const Tensor& frame2,
                                    const Tensor& flow,
                                    const EnergyWeights& weights,
                                    LossNorm norm = LossNorm::Mean) {
  weights.validate();
  Tensor r = data_residual(frame1, frame2, flow);
  Tensor l1 = norm == LossNorm::Mean ? mean(abs(r)) : sum(abs(r));
  Tensor l2 = norm == LossNorm::Mean ? mean(square(r)) : sum(square(r));
  Tensor tv = anisotropic_tv(flow, norm);
  Tensor total = add(add(scalar_mul(l1, weights.lambda1),
                         scalar_mul(l2, weights.lambda2)),
                     scalar_mul(tv, weights.lambda_tv));
  EnergyBreakdown out;
  out.data_l1 = l1.item();
  out.data_l2 = l2.item();
  out.tv = tv.item();
  out.total = total.item();
  out.total_tensor = total;
  return out;
}

}  // namespace fdnflow
