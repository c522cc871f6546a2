// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vedit/common.hpp"

#include <vector>

namespace vedit {

// Ground truth plus K candidate label sequences of equal length Z.
struct PredictionRecord {
    std::vector<int> ground_truth;
    std::vector<std::vector<int>> candidates;
};

// Fraction of positions where predictions match ground truth, in [0, 1].
double top1_accuracy(const std::vector<int>& preds, const std::vector<int>& gts);

// Unrestricted Damerau-Levenshtein distance: inserts, deletes, substitutions
// and adjacent transpositions, with no one-edit-per-pair restriction.
int damerau_levenshtein(const std::vector<int>& a, const std::vector<int>& b);

// min over candidates of damerau_levenshtein(candidate, ground_truth) / Z.
double ed_at_z(const PredictionRecord& record);

struct PlanningMetrics {
    double success_rate = 0.0;  // percent
    double mean_accuracy = 0.0; // percent
    double mean_iou = 0.0;      // percent
};

// SR / mAcc / mIoU over full predicted sequences, each in [0, 100].
PlanningMetrics planning_metrics(const std::vector<std::vector<int>>& preds,
                                 const std::vector<std::vector<int>>& gts);

}  // namespace vedit
