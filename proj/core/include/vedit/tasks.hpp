// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
//
// Task wiring: which clips are masked out, and which label each denoised
// target slot is classified against.
#pragma once

#include "vedit/common.hpp"
#include "vedit/types.hpp"

#include <string>
#include <vector>

namespace vedit {

enum class Task { Forecast, Plan, TaskClassify, Anticipate };

inline const char* task_name(Task t) {
    switch (t) {
        case Task::Forecast: return "forecast";
        case Task::Plan: return "plan";
        case Task::TaskClassify: return "task-classify";
        case Task::Anticipate: return "anticipate";
    }
    return "?";
}

inline Task parse_task(const std::string& s) {
    if (s == "forecast") return Task::Forecast;
    if (s == "plan") return Task::Plan;
    if (s == "task-classify") return Task::TaskClassify;
    if (s == "anticipate") return Task::Anticipate;
    raise(ErrorCode::InvalidConfig, "unknown task " + s);
}

struct TaskOptions {
    Task task = Task::Forecast;
    int horizon = 3;        // plan: number of masked intermediates; requires N == horizon + 2
    int anticipate_z = 1;   // anticipate: trailing clips to predict
    int candidates = 5;     // anticipate: K denoising runs per sample
};

// Planning mask: first and last clip seen, all intermediates hidden.
inline std::vector<bool> plan_mask(int n, int horizon) {
    require(n == horizon + 2, ErrorCode::InvalidConfig,
            "plan horizon " + std::to_string(horizon) + " needs sequences of length " +
                std::to_string(horizon + 2));
    std::vector<bool> mask(static_cast<size_t>(n), true);
    mask.front() = false;
    mask.back() = false;
    return mask;
}

// Rewrites a sample's target mask for the task. TaskClassify appends one
// masked summary slot at position N whose denoised embedding is classified
// against the task label.
inline ProcedureSample apply_task_view(const ProcedureSample& s, const TaskOptions& opt) {
    ProcedureSample out = s;
    const int n = s.length();
    switch (opt.task) {
        case Task::Forecast: {
            require(n >= 2, ErrorCode::InvalidConfig, "forecast needs at least two clips");
            out.target_mask.assign(static_cast<size_t>(n), false);
            out.target_mask.back() = true;
            break;
        }
        case Task::Plan: {
            out.target_mask = plan_mask(n, opt.horizon);
            break;
        }
        case Task::Anticipate: {
            require(opt.anticipate_z >= 1 && opt.anticipate_z < n, ErrorCode::InvalidConfig,
                    "anticipate needs 1 <= Z < N");
            out.target_mask.assign(static_cast<size_t>(n), false);
            for (int i = n - opt.anticipate_z; i < n; ++i) {
                out.target_mask[static_cast<size_t>(i)] = true;
            }
            break;
        }
        case Task::TaskClassify: {
            const int k = s.clips.front().tokens_per_clip;
            const int d = s.clips.front().dim;
            out.clips.emplace_back(k, d);  // placeholder; targets start as noise anyway
            out.step_labels.push_back(0);
            out.target_mask.assign(static_cast<size_t>(n), false);
            out.target_mask.push_back(true);
            break;
        }
    }
    return out;
}

// Classification label for each target slot of a task view, in mask order.
inline std::vector<int> slot_labels(const ProcedureSample& view, Task task) {
    std::vector<int> labels;
    for (int idx : view.target_indices()) {
        labels.push_back(task == Task::TaskClassify ? view.task_label
                                                    : view.step_labels[static_cast<size_t>(idx)]);
    }
    return labels;
}

}  // namespace vedit
