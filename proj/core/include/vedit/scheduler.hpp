// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vedit/common.hpp"
#include "vedit/types.hpp"

#include <vector>

namespace vedit {

// Descending noise levels sigma_0 .. sigma_T with sigma_0 = 1 and sigma_T = 0.
struct SigmaSchedule {
    int steps = 0;               // T
    std::vector<double> sigmas;  // length T + 1, strictly decreasing
};

struct SchedulerConfig {
    int steps = 24;
    float shift = 1.0f;  // reserved; only 1.0 is implemented
};

// Uniform grid sigma_i = 1 - i / T.
SigmaSchedule make_schedule(const SchedulerConfig& cfg);

// Straight-path forward process: (1 - sigma) * z0 + sigma * eps.
template <typename S>
Mat<S> forward_interpolate(const Mat<S>& z0, const Mat<S>& eps, double sigma) {
    require(z0.rows() == eps.rows() && z0.cols() == eps.cols(), ErrorCode::ShapeMismatch,
            "forward_interpolate operands differ in shape");
    require(sigma >= 0.0 && sigma <= 1.0, ErrorCode::SigmaOutOfRange,
            "sigma must lie in [0, 1]");
    const S s = static_cast<S>(sigma);
    return (static_cast<S>(1) - s) * z0 + s * eps;
}

inline EmbeddingMatrix forward_interpolate(const EmbeddingMatrix& z0, const EmbeddingMatrix& eps,
                                           double sigma) {
    return EmbeddingMatrix(forward_interpolate<float>(z0.data, eps.data, sigma));
}

// One explicit Euler update: sample + (sigma_to - sigma_from) * velocity.
template <typename S>
Mat<S> euler_step(const Mat<S>& sample, const Mat<S>& velocity, double sigma_from, double sigma_to) {
    require(sample.rows() == velocity.rows() && sample.cols() == velocity.cols(),
            ErrorCode::ShapeMismatch, "euler_step operands differ in shape");
    require(sigma_to < sigma_from, ErrorCode::NonDecreasingSigma,
            "sigma_to must be strictly below sigma_from");
    return sample + static_cast<S>(sigma_to - sigma_from) * velocity;
}

// Uniform draw from the interior grid {sigma_0 .. sigma_{T-1}}.
double sample_training_sigma(const SigmaSchedule& schedule, Rng& rng);

}  // namespace vedit
