// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vedit/common.hpp"

#include <optional>
#include <string>
#include <vector>

namespace vedit {

// One clip in latent space: k tokens of dimension D, float32.
struct EmbeddingMatrix {
    int tokens_per_clip = 0;  // k
    int dim = 0;              // D
    MatF data;                // k x D

    EmbeddingMatrix() = default;
    EmbeddingMatrix(int k, int d) : tokens_per_clip(k), dim(d), data(MatF::Zero(k, d)) {}
    explicit EmbeddingMatrix(MatF m)
        : tokens_per_clip(static_cast<int>(m.rows())), dim(static_cast<int>(m.cols())), data(std::move(m)) {}
};

// An ordered clip sequence with labels and the seen/target split.
// target_mask[i] == true marks clip i as unseen (to be denoised).
struct ProcedureSample {
    std::vector<EmbeddingMatrix> clips;
    std::vector<int> step_labels;
    int task_label = 0;
    std::vector<bool> target_mask;

    int length() const { return static_cast<int>(clips.size()); }

    std::vector<int> seen_indices() const {
        std::vector<int> out;
        for (int i = 0; i < length(); ++i) {
            if (!target_mask[static_cast<size_t>(i)]) {
                out.push_back(i);
            }
        }
        return out;
    }

    std::vector<int> target_indices() const {
        std::vector<int> out;
        for (int i = 0; i < length(); ++i) {
            if (target_mask[static_cast<size_t>(i)]) {
                out.push_back(i);
            }
        }
        return out;
    }
};

enum class AttentionVariant {
    Joint,  // default: concat both branches, branch-specific projections
    Self,   // concat both branches, one shared projection set
    Cross,  // target queries attend to seen keys/values only
};

struct ModelConfig {
    int layers = 12;
    int hidden_dim = 2048;
    int attn_heads = 32;
    int head_dim = 64;
    int max_len = 64;
    float rope_base = 10000.0f;
    int token_dim = 0;       // D
    int tokens_per_clip = 1; // k
    int timestep_freq_dim = 256;
    AttentionVariant attention = AttentionVariant::Joint;

    void validate() const {
        require(layers >= 1, ErrorCode::InvalidConfig, "layers must be >= 1");
        require(hidden_dim >= 1, ErrorCode::InvalidConfig, "hidden_dim must be >= 1");
        require(attn_heads >= 1 && head_dim >= 1 && attn_heads * head_dim == hidden_dim,
                ErrorCode::InvalidConfig, "attn_heads * head_dim must equal hidden_dim");
        require(head_dim % 2 == 0, ErrorCode::OddHeadDim, "head_dim must be even for rotary pairs");
        require(max_len >= 1, ErrorCode::InvalidConfig, "max_len must be >= 1");
        require(token_dim >= 2 && token_dim % 2 == 0, ErrorCode::InvalidConfig,
                "token_dim must be even and >= 2");
        require(tokens_per_clip >= 1, ErrorCode::InvalidConfig, "tokens_per_clip must be >= 1");
        require(timestep_freq_dim >= 2 && timestep_freq_dim % 2 == 0, ErrorCode::InvalidConfig,
                "timestep_freq_dim must be even and >= 2");
    }
};

struct ValidationResult {
    std::optional<ErrorCode> error;
    std::string detail;

    bool ok() const { return !error.has_value(); }
};

// Checks every ProcedureSample invariant against a model configuration.
// Pure: never mutates, never throws.
inline ValidationResult validate_sample(const ProcedureSample& s, const ModelConfig& c) {
    const int n = s.length();
    if (n == 0) {
        return {ErrorCode::Empty, "sample has no clips"};
    }
    if (s.step_labels.size() != static_cast<size_t>(n) || s.target_mask.size() != static_cast<size_t>(n)) {
        return {ErrorCode::LengthMismatch, "labels/mask length differs from clip count"};
    }
    if (n > c.max_len) {
        return {ErrorCode::SequenceTooLong, "sample length exceeds model max_len"};
    }
    int targets = 0;
    for (int i = 0; i < n; ++i) {
        const EmbeddingMatrix& clip = s.clips[static_cast<size_t>(i)];
        if (clip.tokens_per_clip != c.tokens_per_clip || clip.dim != c.token_dim ||
            clip.data.rows() != clip.tokens_per_clip || clip.data.cols() != clip.dim) {
            return {ErrorCode::DimensionMismatch, "clip " + std::to_string(i) + " has wrong (k, D)"};
        }
        if (clip.dim < 2 || clip.dim % 2 != 0) {
            return {ErrorCode::DimensionMismatch, "clip dim must be even and >= 2"};
        }
        if (!all_finite(clip.data)) {
            return {ErrorCode::NonFiniteValue, "clip " + std::to_string(i) + " contains NaN/Inf"};
        }
        targets += s.target_mask[static_cast<size_t>(i)] ? 1 : 0;
    }
    if (targets == 0) {
        return {ErrorCode::EmptyTargetSet, "target mask selects no clips"};
    }
    if (targets == n) {
        return {ErrorCode::InvariantViolation, "target mask leaves no seen clips"};
    }
    return {};
}

}  // namespace vedit
