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

// Dense linear algebra aliases, activation and loss primitives, the Adam
// optimizer and a central-difference gradient checker. All training math is
// carried out in 64-bit floating point.

#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace resfair {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr double kNormEpsilon = 1e-12;

struct Normalized {
  Vector value;
  double norm = 0.0;
  // True when the input norm is <= kNormEpsilon; `value` is then the input.
  bool degenerate = false;
};

Normalized l2_normalize(const Vector& v);

// Numerically stable softmax (max-subtracted).
Vector softmax(const Vector& logits);

// -log softmax(logits)[label]. Throws ValidationError if label is out of
// range.
double cross_entropy(const Vector& logits, std::size_t label);

// Index of the largest entry; lowest index wins ties.
std::size_t argmax(const Vector& v);

bool all_finite(const Matrix& m);
bool all_finite(const Vector& v);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Decoupled: parameters are scaled by (1 - lr * weight_decay) before the
  // moment update.
  double weight_decay = 0.0;
};

struct AdamState {
  std::int64_t step_count = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  AdamOptions options;
};

// Fresh state with zeroed moments. Throws ValidationError on invalid
// constants (betas outside (0,1), epsilon <= 0, negative decay).
AdamState make_adam_state(std::size_t size, const AdamOptions& options);

void adam_step(std::span<double> param, std::span<const double> grad,
               AdamState& state);
void adam_step(Matrix& param, const Matrix& grad, AdamState& state);
void adam_step(Vector& param, const Vector& grad, AdamState& state);

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares `analytic` against central differences (f(x+h)-f(x-h))/2h.
// Relative error uses the denominator max(|analytic|, |numeric|, 1e-8). When
// `coordinates` is non-empty only those indices are checked.
GradientCheckResult check_gradient(
    const std::function<double(const Vector&)>& f, const Vector& params,
    const Vector& analytic, double h,
    std::span<const std::size_t> coordinates = {});

}  // namespace resfair
