// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
#include "vedit/metrics.hpp"

#include <algorithm>
#include <set>
#include <unordered_map>

namespace vedit {

double top1_accuracy(const std::vector<int>& preds, const std::vector<int>& gts) {
    require(preds.size() == gts.size(), ErrorCode::LengthMismatch,
            "prediction and ground-truth lists differ in length");
    require(!preds.empty(), ErrorCode::Empty, "cannot score empty prediction list");
    size_t hits = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        hits += preds[i] == gts[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

// Lowrance-Wagner algorithm. d is offset by one so row/column -1 can hold the
// max-distance sentinel required by the transposition lookup.
int damerau_levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
    const int n = static_cast<int>(a.size());
    const int m = static_cast<int>(b.size());
    if (n == 0) {
        return m;
    }
    if (m == 0) {
        return n;
    }
    const int max_dist = n + m;
    std::vector<std::vector<int>> d(static_cast<size_t>(n) + 2,
                                    std::vector<int>(static_cast<size_t>(m) + 2, 0));
    d[0][0] = max_dist;
    for (int i = 0; i <= n; ++i) {
        d[static_cast<size_t>(i) + 1][0] = max_dist;
        d[static_cast<size_t>(i) + 1][1] = i;
    }
    for (int j = 0; j <= m; ++j) {
        d[0][static_cast<size_t>(j) + 1] = max_dist;
        d[1][static_cast<size_t>(j) + 1] = j;
    }
    std::unordered_map<int, int> last_row;  // symbol -> last row of a where it occurred
    for (int i = 1; i <= n; ++i) {
        int last_col = 0;  // last column of this row where a[i-1] == b[j-1]
        for (int j = 1; j <= m; ++j) {
            const int row_of_match = [&] {
                auto it = last_row.find(b[static_cast<size_t>(j) - 1]);
                return it == last_row.end() ? 0 : it->second;
            }();
            const int col_of_match = last_col;
            int cost = 1;
            if (a[static_cast<size_t>(i) - 1] == b[static_cast<size_t>(j) - 1]) {
                cost = 0;
                last_col = j;
            }
            const int substitution = d[static_cast<size_t>(i)][static_cast<size_t>(j)] + cost;
            const int insertion = d[static_cast<size_t>(i) + 1][static_cast<size_t>(j)] + 1;
            const int deletion = d[static_cast<size_t>(i)][static_cast<size_t>(j) + 1] + 1;
            const int transposition = d[static_cast<size_t>(row_of_match)]
                                       [static_cast<size_t>(col_of_match)] +
                                      (i - row_of_match - 1) + 1 + (j - col_of_match - 1);
            d[static_cast<size_t>(i) + 1][static_cast<size_t>(j) + 1] =
                std::min(std::min(substitution, insertion), std::min(deletion, transposition));
        }
        last_row[a[static_cast<size_t>(i) - 1]] = i;
    }
    return d[static_cast<size_t>(n) + 1][static_cast<size_t>(m) + 1];
}

double ed_at_z(const PredictionRecord& record) {
    const size_t z = record.ground_truth.size();
    require(!record.candidates.empty(), ErrorCode::InvariantViolation,
            "prediction record needs at least one candidate");
    require(z > 0, ErrorCode::InvariantViolation, "prediction record has empty ground truth");
    int best = -1;
    for (const std::vector<int>& cand : record.candidates) {
        require(cand.size() == z, ErrorCode::InvariantViolation,
                "candidate length differs from Z");
        const int dist = damerau_levenshtein(cand, record.ground_truth);
        if (best < 0 || dist < best) {
            best = dist;
        }
    }
    return static_cast<double>(best) / static_cast<double>(z);
}

PlanningMetrics planning_metrics(const std::vector<std::vector<int>>& preds,
                                 const std::vector<std::vector<int>>& gts) {
    require(preds.size() == gts.size(), ErrorCode::ShapeMismatch,
            "prediction and ground-truth sample counts differ");
    require(!preds.empty(), ErrorCode::ShapeMismatch, "no samples to score");
    const size_t horizon = gts.front().size();
    require(horizon > 0, ErrorCode::ShapeMismatch, "empty sequences");
    size_t exact = 0;
    size_t position_hits = 0;
    double iou_sum = 0.0;
    for (size_t i = 0; i < preds.size(); ++i) {
        require(preds[i].size() == horizon && gts[i].size() == horizon, ErrorCode::ShapeMismatch,
                "all sequences must share the horizon");
        size_t hits = 0;
        for (size_t j = 0; j < horizon; ++j) {
            hits += preds[i][j] == gts[i][j] ? 1 : 0;
        }
        position_hits += hits;
        exact += hits == horizon ? 1 : 0;
        const std::set<int> ps(preds[i].begin(), preds[i].end());
        const std::set<int> gs(gts[i].begin(), gts[i].end());
        std::vector<int> inter;
        std::set_intersection(ps.begin(), ps.end(), gs.begin(), gs.end(),
                              std::back_inserter(inter));
        std::vector<int> uni;
        std::set_union(ps.begin(), ps.end(), gs.begin(), gs.end(), std::back_inserter(uni));
        iou_sum += static_cast<double>(inter.size()) / static_cast<double>(uni.size());
    }
    PlanningMetrics out;
    const double n = static_cast<double>(preds.size());
    out.success_rate = 100.0 * static_cast<double>(exact) / n;
    out.mean_accuracy = 100.0 * static_cast<double>(position_hits) / (n * static_cast<double>(horizon));
    out.mean_iou = 100.0 * iou_sum / n;
    return out;
}

}  // namespace vedit
