#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "fdnflow/flo.hpp"
#include "fdnflow/image.hpp"

namespace fdnflow {

namespace detail {

// Middlebury 55-bin color wheel: RY 15, YG 6, GC 4, CB 11, BM 13, MR 6.
inline const std::vector<std::array<double, 3>>& color_wheel() {
  static const std::vector<std::array<double, 3>> wheel = [] {
    const int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
    std::vector<std::array<double, 3>> w;
    for (int i = 0; i < RY; ++i)
      w.push_back({255.0, 255.0 * i / RY, 0.0});
    for (int i = 0; i < YG; ++i)
      w.push_back({255.0 - 255.0 * i / YG, 255.0, 0.0});
    for (int i = 0; i < GC; ++i)
      w.push_back({0.0, 255.0, 255.0 * i / GC});
    for (int i = 0; i < CB; ++i)
      w.push_back({0.0, 255.0 - 255.0 * i / CB, 255.0});
    for (int i = 0; i < BM; ++i)
      w.push_back({255.0 * i / BM, 0.0, 255.0});
    for (int i = 0; i < MR; ++i)
      w.push_back({255.0, 0.0, 255.0 - 255.0 * i / MR});
    return w;
  }();
  return wheel;
}

inline void flow_pixel_color(double u, double v, std::uint8_t* rgb) {
  const auto& wheel = color_wheel();
  const int ncols = static_cast<int>(wheel.size());
  const double rad = std::sqrt(u * u + v * v);
  const double a = std::atan2(-v, -u) / M_PI;
  const double fk = (a + 1.0) / 2.0 * (ncols - 1);
  int k0 = static_cast<int>(std::floor(fk));
  if (k0 >= ncols) k0 = ncols - 1;
  const int k1 = (k0 + 1) % ncols;
  const double f = fk - k0;
  for (int b = 0; b < 3; ++b) {
    const double col0 = wheel[k0][b] / 255.0;
    const double col1 = wheel[k1][b] / 255.0;
    double col = (1.0 - f) * col0 + f * col1;
    if (rad <= 1.0)
      col = 1.0 - rad * (1.0 - col);  // saturation scales with magnitude
    else
      col *= 0.75;  // out of range
    rgb[b] = static_cast<std::uint8_t>(std::lround(255.0 * col));
  }
}

}  // namespace detail

// Direction-to-hue, magnitude-to-saturation encoding. Magnitudes are
// normalized by max_magnitude (the field maximum when not supplied), so
// the strongest motion renders fully saturated; zero flow renders white;
// unknown pixels render black.
inline RgbImage flow_to_color(const FlowField& flow,
                              std::optional<double> max_magnitude = {}) {
  RgbImage out;
  out.height = flow.height;
  out.width = flow.width;
  out.pixels.assign(static_cast<std::size_t>(flow.height) * flow.width * 3, 0);

  double maxrad = max_magnitude.value_or(0.0);
  if (!max_magnitude) {
    for (std::size_t i = 0; i < flow.u.size(); ++i) {
      if (std::abs(flow.u[i]) >= kFlowUnknown || std::abs(flow.v[i]) >= kFlowUnknown)
        continue;
      maxrad = std::max(maxrad, std::sqrt(flow.u[i] * flow.u[i] +
                                          flow.v[i] * flow.v[i]));
    }
  }
  const double scale = maxrad > 0.0 ? 1.0 / maxrad : 0.0;
  for (std::size_t i = 0; i < flow.u.size(); ++i) {
    if (std::abs(flow.u[i]) >= kFlowUnknown || std::abs(flow.v[i]) >= kFlowUnknown)
      continue;  // unknown stays black
    detail::flow_pixel_color(flow.u[i] * scale, flow.v[i] * scale,
                             out.pixels.data() + 3 * i);
  }
  return out;
}

}  // namespace fdnflow
