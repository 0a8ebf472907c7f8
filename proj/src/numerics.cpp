/*
 * Copyright 2026 The resfair Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "resfair/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "resfair/common.hpp"

namespace resfair {

Normalized l2_normalize(const Vector& v) {
  Normalized out;
  out.norm = v.norm();
  if (out.norm <= kNormEpsilon) {
    out.value = v;
    out.degenerate = true;
    return out;
  }
  out.value = v / out.norm;
  return out;
}

Vector softmax(const Vector& logits) {
  Vector out = (logits.array() - logits.maxCoeff()).exp();
  out /= out.sum();
  return out;
}

double cross_entropy(const Vector& logits, std::size_t label) {
  if (label >= static_cast<std::size_t>(logits.size())) {
    throw ValidationError("cross_entropy: label " + std::to_string(label) +
                          " out of range for " +
                          std::to_string(logits.size()) + " classes");
  }
  // log-sum-exp with the max factored out.
  const double max = logits.maxCoeff();
  const double lse = max + std::log((logits.array() - max).exp().sum());
  return lse - logits(static_cast<Eigen::Index>(label));
}

std::size_t argmax(const Vector& v) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(static_cast<Eigen::Index>(best))) {
      best = static_cast<std::size_t>(i);
    }
  }
  return best;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }
bool all_finite(const Vector& v) { return v.allFinite(); }

AdamState make_adam_state(std::size_t size, const AdamOptions& options) {
  if (!(options.beta1 > 0.0 && options.beta1 < 1.0) ||
      !(options.beta2 > 0.0 && options.beta2 < 1.0)) {
    throw ValidationError("adam: betas must lie in (0, 1)");
  }
  if (!(options.epsilon > 0.0)) {
    throw ValidationError("adam: epsilon must be positive");
  }
  if (options.weight_decay < 0.0 || options.learning_rate < 0.0) {
    throw ValidationError(
        "adam: learning rate and weight decay must be non-negative");
  }
  AdamState state;
  state.first_moment.assign(size, 0.0);
  state.second_moment.assign(size, 0.0);
  state.options = options;
  return state;
}

void adam_step(std::span<double> param, std::span<const double> grad,
               AdamState& state) {
  if (param.size() != grad.size() ||
      param.size() != state.first_moment.size() ||
      param.size() != state.second_moment.size()) {
    throw ValidationError("adam_step: shape mismatch (param " +
                          std::to_string(param.size()) + ", grad " +
                          std::to_string(grad.size()) + ", state " +
                          std::to_string(state.first_moment.size()) + ")");
  }
  const AdamOptions& o = state.options;
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(o.beta1, t);
  const double correction2 = 1.0 - std::pow(o.beta2, t);
  const double decay = 1.0 - o.learning_rate * o.weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    const double g = grad[i];
    m = o.beta1 * m + (1.0 - o.beta1) * g;
    v = o.beta2 * v + (1.0 - o.beta2) * g * g;
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    if (o.weight_decay > 0.0) param[i] *= decay;
    param[i] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
  }
}

void adam_step(Matrix& param, const Matrix& grad, AdamState& state) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols()) {
    throw ValidationError("adam_step: matrix shape mismatch");
  }
  adam_step(std::span<double>(param.data(), static_cast<std::size_t>(param.size())),
            std::span<const double>(grad.data(), static_cast<std::size_t>(grad.size())),
            state);
}

void adam_step(Vector& param, const Vector& grad, AdamState& state) {
  adam_step(std::span<double>(param.data(), static_cast<std::size_t>(param.size())),
            std::span<const double>(grad.data(), static_cast<std::size_t>(grad.size())),
            state);
}

GradientCheckResult check_gradient(
    const std::function<double(const Vector&)>& f, const Vector& params,
    const Vector& analytic, double h,
    std::span<const std::size_t> coordinates) {
  if (analytic.size() != params.size()) {
    throw ValidationError("check_gradient: analytic gradient size mismatch");
  }
  GradientCheckResult result;
  Vector x = params;
  bool first = true;
  auto check_one = [&](std::size_t i) {
    const auto idx = static_cast<Eigen::Index>(i);
    const double saved = x(idx);
    x(idx) = saved + h;
    const double f_plus = f(x);
    x(idx) = saved - h;
    const double f_minus = f(x);
    x(idx) = saved;
    const double numeric = (f_plus - f_minus) / (2.0 * h);
    const double a = analytic(idx);
    const double denom =
        std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double rel = std::abs(a - numeric) / denom;
    if (first || rel > result.max_relative_error) {
      first = false;
      result.max_relative_error = rel;
      result.worst_index = i;
      result.analytic = a;
      result.numeric = numeric;
    }
  };
  if (coordinates.empty()) {
    for (Eigen::Index i = 0; i < params.size(); ++i) {
      check_one(static_cast<std::size_t>(i));
    }
  } else {
    for (const std::size_t i : coordinates) {
      if (i >= static_cast<std::size_t>(params.size())) {
        throw ValidationError("check_gradient: coordinate out of range");
      }
      check_one(i);
    }
  }
  return result;
}

}  // namespace resfair
