#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "fdnflow/tensor.hpp"

namespace fdnflow {

// Adam with bias correction. Moments are kept per parameter in the same
// order as the parameter list handed to adam_step.
struct AdamState {
  long step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  static AdamState init(const std::vector<Tensor>& params) {
    AdamState s;
    s.first_moment.reserve(params.size());
    s.second_moment.reserve(params.size());
    for (const Tensor& p : params) {
      s.first_moment.emplace_back(p.numel(), 0.0);
      s.second_moment.emplace_back(p.numel(), 0.0);
    }
    return s;
  }
};

inline void adam_step(std::vector<Tensor>& params, AdamState& state,
                      double lr) {
  if (params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size())
    throw std::invalid_argument("adam_step: state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (state.first_moment[i].size() != params[i].numel())
      throw std::invalid_argument("adam_step: moment shape mismatch");

  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, state.step_count);
  const double bc2 = 1.0 - std::pow(state.beta2, state.step_count);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].data();
    const auto& g = params[i].grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

}  // namespace fdnflow
