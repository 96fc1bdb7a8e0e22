#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "finetag/errors.hpp"

namespace finetag {

enum class OptimizerKind { sgd_momentum, adam };

inline const char* optimizer_kind_name(OptimizerKind kind) {
  return kind == OptimizerKind::sgd_momentum ? "sgd-momentum" : "adam";
}

// Slot buffers are kept in double no matter what the parameter scalar is,
// and are allocated lazily on the first step from the parameter shapes.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-5;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  std::vector<std::vector<double>> slot_m;  // velocity, or Adam first moment
  std::vector<std::vector<double>> slot_v;  // Adam second moment
  std::uint64_t step = 0;
};

namespace detail {

template <typename S>
void check_step_shapes(OptimizerState& state, std::span<const std::span<S>> params,
                       std::span<const std::span<const S>> grads, bool want_v) {
  if (params.size() != grads.size())
    throw Error(ErrorCode::ShapeMismatch, "parameter/gradient tensor count mismatch");
  if (state.slot_m.empty()) {
    for (const auto& p : params) state.slot_m.emplace_back(p.size(), 0.0);
    if (want_v)
      for (const auto& p : params) state.slot_v.emplace_back(p.size(), 0.0);
  }
  if (state.slot_m.size() != params.size())
    throw Error(ErrorCode::ShapeMismatch, "optimizer state tracks a different model");
  for (std::size_t t = 0; t < params.size(); ++t)
    if (state.slot_m[t].size() != params[t].size() || params[t].size() != grads[t].size())
      throw Error(ErrorCode::ShapeMismatch,
                  "tensor " + std::to_string(t) + " changed size under the optimizer");
}

}  // namespace detail

// Classical momentum: v <- mu*v + g, p <- p - lr*v.
template <typename S>
void sgd_momentum_step(OptimizerState& state, std::span<const std::span<S>> params,
                       std::span<const std::span<const S>> grads) {
  detail::check_step_shapes(state, params, grads, /*want_v=*/false);
  ++state.step;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& vel = state.slot_m[t];
    for (std::size_t i = 0; i < vel.size(); ++i) {
      vel[i] = state.momentum * vel[i] + double(grads[t][i]);
      params[t][i] = S(double(params[t][i]) - state.learning_rate * vel[i]);
    }
  }
}

// Adam with the standard bias correction.
template <typename S>
void adam_step(OptimizerState& state, std::span<const std::span<S>> params,
               std::span<const std::span<const S>> grads) {
  detail::check_step_shapes(state, params, grads, /*want_v=*/true);
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, double(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& m = state.slot_m[t];
    auto& v = state.slot_v[t];
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = double(grads[t][i]);
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + state.epsilon);
      params[t][i] = S(double(params[t][i]) - state.learning_rate * update);
    }
  }
}

template <typename S>
void optimizer_step(OptimizerState& state, std::span<const std::span<S>> params,
                    std::span<const std::span<const S>> grads) {
  if (state.kind == OptimizerKind::sgd_momentum)
    sgd_momentum_step(state, params, grads);
  else
    adam_step(state, params, grads);
}

}  // namespace finetag
