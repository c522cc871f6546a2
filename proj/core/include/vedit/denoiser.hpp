// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
//
// Iterative denoising from Gaussian noise to target embeddings with
// classifier-free guidance. The loop is built on the tape so training can
// differentiate end to end; inference simply never calls backward.
#pragma once

#include "vedit/common.hpp"
#include "vedit/model.hpp"
#include "vedit/scheduler.hpp"
#include "vedit/tape.hpp"
#include "vedit/types.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace vedit {

struct DenoiseConfig {
    int steps = 24;
    float cfg_scale = 7.0f;
    bool track_gradients = false;

    void validate() const {
        require(steps >= 1, ErrorCode::InvalidSteps, "denoise steps must be >= 1");
        require(cfg_scale >= 0.0f, ErrorCode::InvalidConfig, "cfg scale must be >= 0");
    }
};

// Test hook: AllButLastStep detaches the state entering the final Euler step,
// so gradients flow through that step only.
enum class DetachMode { None, AllButLastStep };

// Divergence guard threshold for intermediate states.
inline constexpr double kDenoiseActivationLimit = 1e6;

// The generic loop: start at `noise`, integrate the guided velocity down the
// sigma grid. velocity_fn(state, conditional, sigma) returns the model output
// for the conditional (true) or null-conditioned (false) pass; the second
// pass is skipped entirely when cfg_scale == 1.
template <typename S>
NodeId denoise_loop(Tape<S>& tape, Mat<S> noise, const DenoiseConfig& dcfg,
                    const std::function<NodeId(NodeId, bool, double)>& velocity_fn,
                    DetachMode detach = DetachMode::None) {
    dcfg.validate();
    const SigmaSchedule schedule = make_schedule({dcfg.steps, 1.0f});
    const S s = static_cast<S>(dcfg.cfg_scale);
    NodeId state = tape.constant(std::move(noise));
    for (int i = 0; i < dcfg.steps; ++i) {
        if (detach == DetachMode::AllButLastStep && i == dcfg.steps - 1) {
            state = tape.detach(state);
        }
        const double sigma = schedule.sigmas[static_cast<size_t>(i)];
        const double sigma_next = schedule.sigmas[static_cast<size_t>(i) + 1];
        NodeId v_cond = velocity_fn(state, true, sigma);
        NodeId v;
        if (dcfg.cfg_scale == 1.0f) {
            v = v_cond;
        } else {
            NodeId v_uncond = velocity_fn(state, false, sigma);
            v = tape.axpy(S(1) - s, v_uncond, s, v_cond);
        }
        state = tape.axpy(S(1), state, static_cast<S>(sigma_next - sigma), v);
        const Mat<S>& cur = tape.value(state);
        require(cur.allFinite() && cur.array().abs().maxCoeff() < S(kDenoiseActivationLimit),
                ErrorCode::NonFiniteValue, "denoising diverged at step " + std::to_string(i));
    }
    return state;
}

// Seen-conditioning rows for a stacked batch. Samples flagged in `drop` have
// every seen clip replaced by the learned null embedding (gradients for those
// rows flow into the null tensor).
template <typename S>
NodeId compose_seen_op(Tape<S>& tape, const Mat<S>& data, NodeId null_clip,
                       const std::vector<bool>& drop, int clips_per_sample, int k) {
    const int batch = static_cast<int>(drop.size());
    const Eigen::Index rows_per_sample = static_cast<Eigen::Index>(clips_per_sample) * k;
    require(data.rows() == batch * rows_per_sample, ErrorCode::ShapeMismatch,
            "seen rows disagree with batch layout");
    require(tape.value(null_clip).rows() == k && tape.value(null_clip).cols() == data.cols(),
            ErrorCode::ShapeMismatch, "null embedding must be k x D");
    Mat<S> v = data;
    bool any_drop = false;
    for (int b = 0; b < batch; ++b) {
        if (!drop[static_cast<size_t>(b)]) {
            continue;
        }
        any_drop = true;
        for (int c = 0; c < clips_per_sample; ++c) {
            v.middleRows(b * rows_per_sample + static_cast<Eigen::Index>(c) * k, k) =
                tape.value(null_clip);
        }
    }
    const bool req = any_drop && tape.requires_grad(null_clip);
    NodeId out = tape.custom(std::move(v), req, nullptr);
    if (req) {
        tape.set_backward_fn(out, [&tape, out, null_clip, drop, clips_per_sample, k,
                                   rows_per_sample]() {
            const Mat<S>& g = tape.grad(out);
            Mat<S>& gn = tape.grad_ref(null_clip);
            for (size_t b = 0; b < drop.size(); ++b) {
                if (!drop[b]) {
                    continue;
                }
                for (int c = 0; c < clips_per_sample; ++c) {
                    gn += g.middleRows(static_cast<Eigen::Index>(b) * rows_per_sample +
                                           static_cast<Eigen::Index>(c) * k,
                                       k);
                }
            }
        });
    }
    return out;
}

// Stacked inputs for denoising a batch of structurally identical samples.
template <typename S>
struct DenoiseBatch {
    int batch = 1;
    Mat<S> seen_tokens;             // (batch * Ns * k) x D
    std::vector<int> target_clips;  // per-sample clip indices (shared layout)
    std::vector<int> seen_clips;
    std::vector<bool> drop_cond;    // per-sample conditioning dropout
};

// Guided denoising of a stacked batch through the model.
template <typename S>
NodeId denoise_batch_op(Tape<S>& tape, Mat<S> noise, const DenoiseBatch<S>& in,
                        const VeditParamIds& ids, const ModelConfig& cfg, const RopeTable<S>& rope,
                        const DenoiseConfig& dcfg, DetachMode detach = DetachMode::None) {
    const int k = cfg.tokens_per_clip;
    SequenceLayout layout{in.batch, token_positions(in.target_clips, k),
                          token_positions(in.seen_clips, k)};
    const int ns = static_cast<int>(in.seen_clips.size());
    NodeId cond_seen = compose_seen_op(tape, in.seen_tokens, tape.param(ids.null_seen),
                                       in.drop_cond, ns, k);
    NodeId null_seen = -1;
    if (dcfg.cfg_scale != 1.0f) {
        const std::vector<bool> all_drop(static_cast<size_t>(in.batch), true);
        null_seen =
            compose_seen_op(tape, in.seen_tokens, tape.param(ids.null_seen), all_drop, ns, k);
    }
    auto velocity = [&](NodeId state, bool conditional, double sigma) {
        return vedit_forward_op(tape, state, conditional ? cond_seen : null_seen, sigma, ids, cfg,
                                rope, layout);
    };
    return denoise_loop(tape, std::move(noise), dcfg, velocity, detach);
}

namespace detail {

template <typename S>
Mat<S> draw_target_noise(Rng& rng, int num_targets, int k, int dim) {
    Mat<S> noise(static_cast<Eigen::Index>(num_targets) * k, dim);
    rng.fill_normal(noise);
    return noise;
}

}  // namespace detail

// Denoises one sample's target clips from fresh Gaussian noise.
inline std::vector<EmbeddingMatrix> denoise(const ProcedureSample& sample, ParamStore<float>& store,
                                            const VeditParamIds& ids, const ModelConfig& cfg,
                                            const DenoiseConfig& dcfg, Rng& rng) {
    const ValidationResult check = validate_sample(sample, cfg);
    if (!check.ok()) {
        raise(*check.error, check.detail);
    }
    const int k = cfg.tokens_per_clip;
    DenoiseBatch<float> in;
    in.batch = 1;
    in.target_clips = sample.target_indices();
    in.seen_clips = sample.seen_indices();
    in.drop_cond = {false};
    in.seen_tokens.resize(static_cast<Eigen::Index>(in.seen_clips.size()) * k, cfg.token_dim);
    for (size_t i = 0; i < in.seen_clips.size(); ++i) {
        in.seen_tokens.middleRows(static_cast<Eigen::Index>(i) * k, k) =
            sample.clips[static_cast<size_t>(in.seen_clips[i])].data;
    }
    MatF noise = detail::draw_target_noise<float>(rng, static_cast<int>(in.target_clips.size()), k,
                                                  cfg.token_dim);
    const RopeTable<float> rope = RopeTable<float>::build(cfg.max_len, cfg.head_dim, cfg.rope_base);
    Tape<float> tape(&store);
    NodeId out = denoise_batch_op(tape, std::move(noise), in, ids, cfg, rope, dcfg);
    std::vector<EmbeddingMatrix> result;
    result.reserve(in.target_clips.size());
    for (size_t i = 0; i < in.target_clips.size(); ++i) {
        result.emplace_back(
            MatF(tape.value(out).middleRows(static_cast<Eigen::Index>(i) * k, k)));
    }
    return result;
}

// K candidate predictions from independent noise draws.
inline std::vector<std::vector<EmbeddingMatrix>> denoise_k(const ProcedureSample& sample,
                                                           ParamStore<float>& store,
                                                           const VeditParamIds& ids,
                                                           const ModelConfig& cfg,
                                                           const DenoiseConfig& dcfg, int k_runs,
                                                           Rng& rng) {
    require(k_runs >= 1, ErrorCode::InvalidConfig, "K must be >= 1");
    std::vector<std::vector<EmbeddingMatrix>> out;
    out.reserve(static_cast<size_t>(k_runs));
    for (int i = 0; i < k_runs; ++i) {
        out.push_back(denoise(sample, store, ids, cfg, dcfg, rng));
    }
    return out;
}

}  // namespace vedit
