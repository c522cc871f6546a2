// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
#include "vedit/scheduler.hpp"

namespace vedit {

SigmaSchedule make_schedule(const SchedulerConfig& cfg) {
    require(cfg.steps >= 1, ErrorCode::InvalidSteps, "schedule needs at least one step");
    SigmaSchedule out;
    out.steps = cfg.steps;
    out.sigmas.resize(static_cast<size_t>(cfg.steps) + 1);
    for (int i = 0; i <= cfg.steps; ++i) {
        out.sigmas[static_cast<size_t>(i)] = 1.0 - static_cast<double>(i) / cfg.steps;
    }
    out.sigmas.front() = 1.0;
    out.sigmas.back() = 0.0;
    return out;
}

double sample_training_sigma(const SigmaSchedule& schedule, Rng& rng) {
    const auto idx = rng.uniform_int(static_cast<uint64_t>(schedule.steps));
    return schedule.sigmas[static_cast<size_t>(idx)];
}

}  // namespace vedit
