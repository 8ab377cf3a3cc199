#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fdnflow/image.hpp"

namespace fdnflow {

struct MetricReport {
  double aee = 0.0;   // pixels
  double sdee = 0.0;  // pixels
  double aae = 0.0;   // degrees
  double sdae = 0.0;  // degrees
  std::size_t pixel_count = 0;
};

namespace detail {

inline std::pair<double, double> mean_and_population_sd(
    const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  return {mean, std::sqrt(var)};
}

inline void check_metric_inputs(const FlowField& pred, const FlowField& gt,
                                const std::vector<std::uint8_t>& mask) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw std::invalid_argument("metrics: flow shapes do not match");
  if (!mask.empty() &&
      mask.size() != static_cast<std::size_t>(pred.height) * pred.width)
    throw std::invalid_argument("metrics: mask size does not match flow");
}

}  // namespace detail

// Mean / population standard deviation of the per-pixel Euclidean error.
// An empty mask vector means "all pixels"; a mask with no set entries is an
// error.
inline std::pair<double, double> endpoint_error(
    const FlowField& pred, const FlowField& gt,
    const std::vector<std::uint8_t>& mask = {}) {
  detail::check_metric_inputs(pred, gt, mask);
  std::vector<double> errs;
  const std::size_t n = static_cast<std::size_t>(pred.height) * pred.width;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const double du = pred.u[i] - gt.u[i];
    const double dv = pred.v[i] - gt.v[i];
    errs.push_back(std::sqrt(du * du + dv * dv));
  }
  if (errs.empty())
    throw std::invalid_argument("endpoint_error: no unmasked pixels");
  return detail::mean_and_population_sd(errs);
}

// Angular error in degrees using the +1-stabilized cosine formula.
inline std::pair<double, double> angular_error(
    const FlowField& pred, const FlowField& gt,
    const std::vector<std::uint8_t>& mask = {}) {
  detail::check_metric_inputs(pred, gt, mask);
  std::vector<double> errs;
  const std::size_t n = static_cast<std::size_t>(pred.height) * pred.width;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const double up = pred.u[i], vp = pred.v[i];
    const double ug = gt.u[i], vg = gt.v[i];
    double c = (up * ug + vp * vg + 1.0) /
               std::sqrt((up * up + vp * vp + 1.0) * (ug * ug + vg * vg + 1.0));
    c = std::min(1.0, std::max(-1.0, c));
    errs.push_back(std::acos(c) * 180.0 / M_PI);
  }
  if (errs.empty())
    throw std::invalid_argument("angular_error: no unmasked pixels");
  return detail::mean_and_population_sd(errs);
}

inline MetricReport evaluate_flow(const FlowField& pred, const FlowField& gt,
                                  const std::vector<std::uint8_t>& mask = {}) {
  MetricReport r;
  auto [aee, sdee] = endpoint_error(pred, gt, mask);
  auto [aae, sdae] = angular_error(pred, gt, mask);
  r.aee = aee;
  r.sdee = sdee;
  r.aae = aae;
  r.sdae = sdae;
  if (mask.empty()) {
    r.pixel_count = static_cast<std::size_t>(pred.height) * pred.width;
  } else {
    for (std::uint8_t m : mask) r.pixel_count += m ? 1 : 0;
  }
  return r;
}

}  // namespace fdnflow
