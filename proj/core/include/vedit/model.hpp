// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
//
// The prediction stack: timestep embedding, AdaLN-Zero modulation, a pile of
// dual-branch blocks fused by joint attention, and a zero-initialized output
// head. Forward passes run on a Tape so training can differentiate through
// the whole denoising loop.
#pragma once

#include "vedit/common.hpp"
#include "vedit/model_ops.hpp"
#include "vedit/tape.hpp"
#include "vedit/types.hpp"

#include <string>
#include <vector>

namespace vedit {

struct BranchParamIds {
    int mod_w = -1, mod_b = -1;
    int q_w = -1, q_b = -1, k_w = -1, k_b = -1, v_w = -1, v_b = -1, o_w = -1, o_b = -1;
    int ff1_w = -1, ff1_b = -1, ff2_w = -1, ff2_b = -1;
};

struct BlockParamIds {
    BranchParamIds target;
    BranchParamIds seen;
};

// Indices of every learnable tensor of the stack inside a ParamStore.
struct VeditParamIds {
    int temb1_w = -1, temb1_b = -1, temb2_w = -1, temb2_b = -1;
    int in_t_w = -1, in_t_b = -1, in_s_w = -1, in_s_b = -1;
    int null_seen = -1;
    std::vector<BlockParamIds> blocks;
    int final_mod_w = -1, final_mod_b = -1, final_w = -1, final_b = -1;
};

// Names and shapes the checkpoint loader must find for a given config.
std::vector<std::string> expected_tensor_names(const ModelConfig& cfg);

// Create registers fresh zero tensors (then initializes them); Resolve binds
// against tensors already present (checkpoint loading) and validates shapes.
enum class ParamBind { Create, Resolve };

namespace detail {

template <typename S>
int bind_tensor(ParamStore<S>& store, ParamBind mode, const std::string& name, int rows, int cols) {
    if (mode == ParamBind::Create) {
        return store.add(name, rows, cols);
    }
    const int idx = store.find(name);
    require(idx >= 0, ErrorCode::MissingTensor, "checkpoint lacks tensor " + name);
    require(store.entry(idx).rows == rows && store.entry(idx).cols == cols,
            ErrorCode::ShapeMismatch, "tensor " + name + " has unexpected shape");
    return idx;
}

template <typename S>
void init_normal(ParamStore<S>& store, int idx, Rng& rng, double std_dev) {
    auto m = store.view(idx);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            m(r, c) = static_cast<S>(rng.normal() * std_dev);
        }
    }
}

// Xavier scale: keeps activation variance roughly constant through a map.
template <typename S>
void init_xavier(ParamStore<S>& store, int idx, Rng& rng) {
    const auto& e = store.entry(idx);
    init_normal(store, idx, rng, std::sqrt(2.0 / (e.rows + e.cols)));
}

template <typename S>
BranchParamIds register_branch(ParamStore<S>& store, const std::string& prefix, int hidden,
                               Rng& rng, ParamBind mode) {
    BranchParamIds b;
    b.mod_w = bind_tensor(store, mode, prefix + ".mod.weight", hidden, 6 * hidden);  // zero-init
    b.mod_b = bind_tensor(store, mode, prefix + ".mod.bias", 1, 6 * hidden);
    b.q_w = bind_tensor(store, mode, prefix + ".attn_q.weight", hidden, hidden);
    b.q_b = bind_tensor(store, mode, prefix + ".attn_q.bias", 1, hidden);
    b.k_w = bind_tensor(store, mode, prefix + ".attn_k.weight", hidden, hidden);
    b.k_b = bind_tensor(store, mode, prefix + ".attn_k.bias", 1, hidden);
    b.v_w = bind_tensor(store, mode, prefix + ".attn_v.weight", hidden, hidden);
    b.v_b = bind_tensor(store, mode, prefix + ".attn_v.bias", 1, hidden);
    b.o_w = bind_tensor(store, mode, prefix + ".attn_out.weight", hidden, hidden);
    b.o_b = bind_tensor(store, mode, prefix + ".attn_out.bias", 1, hidden);
    b.ff1_w = bind_tensor(store, mode, prefix + ".ffn1.weight", hidden, 4 * hidden);
    b.ff1_b = bind_tensor(store, mode, prefix + ".ffn1.bias", 1, 4 * hidden);
    b.ff2_w = bind_tensor(store, mode, prefix + ".ffn2.weight", 4 * hidden, hidden);
    b.ff2_b = bind_tensor(store, mode, prefix + ".ffn2.bias", 1, hidden);
    if (mode == ParamBind::Create) {
        init_xavier(store, b.q_w, rng);
        init_xavier(store, b.k_w, rng);
        init_xavier(store, b.v_w, rng);
        init_xavier(store, b.o_w, rng);
        init_xavier(store, b.ff1_w, rng);
        init_xavier(store, b.ff2_w, rng);
    }
    return b;
}

}  // namespace detail

// Registers and initializes every tensor of the stack. Modulation maps, the
// final modulation and the final projection start at zero, which makes each
// block an exact identity and the whole stack emit zero velocity at init.
template <typename S>
VeditParamIds register_vedit_params(ParamStore<S>& store, const ModelConfig& cfg, Rng& rng,
                                    ParamBind mode = ParamBind::Create) {
    cfg.validate();
    const int h = cfg.hidden_dim;
    VeditParamIds ids;
    ids.temb1_w = detail::bind_tensor(store, mode, "temb.mlp1.weight", cfg.timestep_freq_dim, h);
    ids.temb1_b = detail::bind_tensor(store, mode, "temb.mlp1.bias", 1, h);
    ids.temb2_w = detail::bind_tensor(store, mode, "temb.mlp2.weight", h, h);
    ids.temb2_b = detail::bind_tensor(store, mode, "temb.mlp2.bias", 1, h);
    ids.in_t_w = detail::bind_tensor(store, mode, "input.target.weight", cfg.token_dim, h);
    ids.in_t_b = detail::bind_tensor(store, mode, "input.target.bias", 1, h);
    ids.in_s_w = detail::bind_tensor(store, mode, "input.seen.weight", cfg.token_dim, h);
    ids.in_s_b = detail::bind_tensor(store, mode, "input.seen.bias", 1, h);
    ids.null_seen = detail::bind_tensor(store, mode, "null_seen", cfg.tokens_per_clip, cfg.token_dim);
    if (mode == ParamBind::Create) {
        detail::init_xavier(store, ids.temb1_w, rng);
        detail::init_xavier(store, ids.temb2_w, rng);
        detail::init_xavier(store, ids.in_t_w, rng);
        detail::init_xavier(store, ids.in_s_w, rng);
        detail::init_normal(store, ids.null_seen, rng, 0.02);
    }
    ids.blocks.reserve(static_cast<size_t>(cfg.layers));
    for (int i = 0; i < cfg.layers; ++i) {
        const std::string base = "block" + std::to_string(i);
        BlockParamIds blk;
        blk.target = detail::register_branch(store, base + ".target", h, rng, mode);
        blk.seen = detail::register_branch(store, base + ".seen", h, rng, mode);
        ids.blocks.push_back(blk);
    }
    ids.final_mod_w = detail::bind_tensor(store, mode, "final.mod.weight", h, 2 * h);
    ids.final_mod_b = detail::bind_tensor(store, mode, "final.mod.bias", 1, 2 * h);
    ids.final_w = detail::bind_tensor(store, mode, "final.proj.weight", h, cfg.token_dim);
    ids.final_b = detail::bind_tensor(store, mode, "final.proj.bias", 1, cfg.token_dim);
    return ids;
}

// Raw sinusoidal features of sigma * 1000: cosine half then sine half.
template <typename S>
Mat<S> timestep_features(double sigma, int freq_dim) {
    require(sigma >= 0.0 && sigma <= 1.0, ErrorCode::SigmaOutOfRange, "sigma must lie in [0, 1]");
    const int half = freq_dim / 2;
    Mat<S> out(1, freq_dim);
    const double t = sigma * 1000.0;
    for (int j = 0; j < half; ++j) {
        const double freq = std::exp(-std::log(10000.0) * j / half);
        out(0, j) = static_cast<S>(std::cos(t * freq));
        out(0, half + j) = static_cast<S>(std::sin(t * freq));
    }
    return out;
}

// Clip index repeated across the k tokens of each clip.
inline std::vector<int> token_positions(const std::vector<int>& clip_indices, int tokens_per_clip) {
    std::vector<int> out;
    out.reserve(clip_indices.size() * static_cast<size_t>(tokens_per_clip));
    for (int idx : clip_indices) {
        for (int t = 0; t < tokens_per_clip; ++t) {
            out.push_back(idx);
        }
    }
    return out;
}

template <typename S>
NodeId timestep_embedding_op(Tape<S>& tape, double sigma, const VeditParamIds& ids,
                             const ModelConfig& cfg) {
    NodeId feats = tape.constant(timestep_features<S>(sigma, cfg.timestep_freq_dim));
    NodeId h = tape.add_bias(tape.matmul(feats, tape.param(ids.temb1_w)), tape.param(ids.temb1_b));
    h = tape.silu(h);
    return tape.add_bias(tape.matmul(h, tape.param(ids.temb2_w)), tape.param(ids.temb2_b));
}

struct AdaLnChunks {
    NodeId modulated;
    NodeId gate_msa;
    NodeId shift_mlp;
    NodeId scale_mlp;
    NodeId gate_mlp;
};

// shift/scale/gate chunks from the branch modulation map applied to
// SiLU(temb); modulated = layernorm(x) * (1 + scale_msa) + shift_msa.
template <typename S>
AdaLnChunks ada_ln_zero_op(Tape<S>& tape, NodeId x, NodeId silu_temb, const BranchParamIds& p) {
    const Eigen::Index h = tape.value(x).cols();
    NodeId mod = tape.add_bias(tape.matmul(silu_temb, tape.param(p.mod_w)), tape.param(p.mod_b));
    NodeId shift_msa = tape.slice_cols(mod, 0, h);
    NodeId scale_msa = tape.slice_cols(mod, h, h);
    NodeId gate_msa = tape.slice_cols(mod, 2 * h, h);
    NodeId shift_mlp = tape.slice_cols(mod, 3 * h, h);
    NodeId scale_mlp = tape.slice_cols(mod, 4 * h, h);
    NodeId gate_mlp = tape.slice_cols(mod, 5 * h, h);
    NodeId modulated = tape.modulate(tape.layernorm_rows(x), scale_msa, shift_msa);
    return {modulated, gate_msa, shift_mlp, scale_mlp, gate_mlp};
}

template <typename S>
NodeId linear_op(Tape<S>& tape, NodeId x, int w, int b) {
    return tape.add_bias(tape.matmul(x, tape.param(w)), tape.param(b));
}

template <typename S>
NodeId ffn_op(Tape<S>& tape, NodeId x, const BranchParamIds& p) {
    return linear_op(tape, tape.gelu(linear_op(tape, x, p.ff1_w, p.ff1_b)), p.ff2_w, p.ff2_b);
}

// Per-sample token positions for both branches of a stacked batch.
struct SequenceLayout {
    int batch = 1;
    std::vector<int> pos_target;  // length Nt * k
    std::vector<int> pos_seen;    // length Ns * k
};

// Joint attention including the branch projections: modulated inputs in,
// per-branch projected outputs out. Target tokens come first in the joint
// sequence. Returns (target_out, seen_out).
template <typename S>
std::pair<NodeId, NodeId> joint_attention_projected(Tape<S>& tape, NodeId mod_t, NodeId mod_s,
                                                    const BlockParamIds& p, const ModelConfig& cfg,
                                                    const RopeTable<S>& rope,
                                                    const SequenceLayout& layout) {
    switch (cfg.attention) {
        case AttentionVariant::Joint: {
            NodeId q_t = linear_op(tape, mod_t, p.target.q_w, p.target.q_b);
            NodeId k_t = linear_op(tape, mod_t, p.target.k_w, p.target.k_b);
            NodeId v_t = linear_op(tape, mod_t, p.target.v_w, p.target.v_b);
            NodeId q_s = linear_op(tape, mod_s, p.seen.q_w, p.seen.q_b);
            NodeId k_s = linear_op(tape, mod_s, p.seen.k_w, p.seen.k_b);
            NodeId v_s = linear_op(tape, mod_s, p.seen.v_w, p.seen.v_b);
            auto [a_t, a_s] =
                joint_attention_op(tape, q_t, k_t, v_t, q_s, k_s, v_s, layout.pos_target,
                                   layout.pos_seen, &rope, layout.batch, cfg.attn_heads);
            return {linear_op(tape, a_t, p.target.o_w, p.target.o_b),
                    linear_op(tape, a_s, p.seen.o_w, p.seen.o_b)};
        }
        case AttentionVariant::Self: {
            // One shared projection set (the target branch's) over the
            // concatenated sequence.
            NodeId q_t = linear_op(tape, mod_t, p.target.q_w, p.target.q_b);
            NodeId k_t = linear_op(tape, mod_t, p.target.k_w, p.target.k_b);
            NodeId v_t = linear_op(tape, mod_t, p.target.v_w, p.target.v_b);
            NodeId q_s = linear_op(tape, mod_s, p.target.q_w, p.target.q_b);
            NodeId k_s = linear_op(tape, mod_s, p.target.k_w, p.target.k_b);
            NodeId v_s = linear_op(tape, mod_s, p.target.v_w, p.target.v_b);
            auto [a_t, a_s] =
                joint_attention_op(tape, q_t, k_t, v_t, q_s, k_s, v_s, layout.pos_target,
                                   layout.pos_seen, &rope, layout.batch, cfg.attn_heads);
            return {linear_op(tape, a_t, p.target.o_w, p.target.o_b),
                    linear_op(tape, a_s, p.target.o_w, p.target.o_b)};
        }
        case AttentionVariant::Cross: {
            // Target queries over seen keys/values; no intra-branch attention,
            // so the seen branch receives no attention update.
            NodeId q_t = linear_op(tape, mod_t, p.target.q_w, p.target.q_b);
            NodeId k_s = linear_op(tape, mod_s, p.seen.k_w, p.seen.k_b);
            NodeId v_s = linear_op(tape, mod_s, p.seen.v_w, p.seen.v_b);
            NodeId a_t = cross_attention_op(tape, q_t, k_s, v_s, layout.pos_target, layout.pos_seen,
                                            &rope, layout.batch, cfg.attn_heads);
            return {linear_op(tape, a_t, p.target.o_w, p.target.o_b), -1};
        }
    }
    raise(ErrorCode::InvalidConfig, "unknown attention variant");
}

// One block: AdaLN-Zero modulation, joint attention, gated residual, second
// modulated layernorm, feed-forward, gated residual — on both branches.
template <typename S>
std::pair<NodeId, NodeId> vedit_block_op(Tape<S>& tape, NodeId x_t, NodeId x_s, NodeId silu_temb,
                                         const BlockParamIds& p, const ModelConfig& cfg,
                                         const RopeTable<S>& rope, const SequenceLayout& layout) {
    AdaLnChunks c_t = ada_ln_zero_op(tape, x_t, silu_temb, p.target);
    AdaLnChunks c_s = ada_ln_zero_op(tape, x_s, silu_temb, p.seen);
    auto [attn_t, attn_s] =
        joint_attention_projected(tape, c_t.modulated, c_s.modulated, p, cfg, rope, layout);
    x_t = tape.add(x_t, tape.row_scale(attn_t, c_t.gate_msa));
    if (attn_s >= 0) {
        x_s = tape.add(x_s, tape.row_scale(attn_s, c_s.gate_msa));
    }
    NodeId h_t = tape.modulate(tape.layernorm_rows(x_t), c_t.scale_mlp, c_t.shift_mlp);
    NodeId h_s = tape.modulate(tape.layernorm_rows(x_s), c_s.scale_mlp, c_s.shift_mlp);
    x_t = tape.add(x_t, tape.row_scale(ffn_op(tape, h_t, p.target), c_t.gate_mlp));
    x_s = tape.add(x_s, tape.row_scale(ffn_op(tape, h_s, p.seen), c_s.gate_mlp));
    return {x_t, x_s};
}

// Full stack on stacked batch tokens: branch input projections, L blocks,
// final modulated layernorm + projection on the target branch.
// target_tokens: (B*Nt*k) x D, seen_tokens: (B*Ns*k) x D -> velocity of the
// same shape as target_tokens.
template <typename S>
NodeId vedit_forward_op(Tape<S>& tape, NodeId target_tokens, NodeId seen_tokens, double sigma,
                        const VeditParamIds& ids, const ModelConfig& cfg, const RopeTable<S>& rope,
                        const SequenceLayout& layout) {
    for (int pos : layout.pos_target) {
        require(pos >= 0 && pos < cfg.max_len, ErrorCode::PositionOutOfRange,
                "target clip position exceeds max_len");
    }
    for (int pos : layout.pos_seen) {
        require(pos >= 0 && pos < cfg.max_len, ErrorCode::PositionOutOfRange,
                "seen clip position exceeds max_len");
    }
    NodeId temb = timestep_embedding_op(tape, sigma, ids, cfg);
    NodeId silu_temb = tape.silu(temb);
    NodeId x_t = linear_op(tape, target_tokens, ids.in_t_w, ids.in_t_b);
    NodeId x_s = linear_op(tape, seen_tokens, ids.in_s_w, ids.in_s_b);
    for (const BlockParamIds& blk : ids.blocks) {
        auto [t, s] = vedit_block_op(tape, x_t, x_s, silu_temb, blk, cfg, rope, layout);
        x_t = t;
        x_s = s;
    }
    const Eigen::Index h = cfg.hidden_dim;
    NodeId mod = linear_op(tape, silu_temb, ids.final_mod_w, ids.final_mod_b);
    NodeId shift = tape.slice_cols(mod, 0, h);
    NodeId scale = tape.slice_cols(mod, h, h);
    NodeId out = tape.modulate(tape.layernorm_rows(x_t), scale, shift);
    return linear_op(tape, out, ids.final_w, ids.final_b);
}

// --- Plain-value wrappers (single sample, no gradient bookkeeping) ---------

template <typename S>
Mat<S> timestep_embedding(double sigma, ParamStore<S>& store, const VeditParamIds& ids,
                          const ModelConfig& cfg) {
    Tape<S> tape(&store);
    return tape.value(timestep_embedding_op(tape, sigma, ids, cfg));
}

struct AdaLnResult {
    MatF modulated;
    MatF gate_msa;
    MatF shift_mlp;
    MatF scale_mlp;
    MatF gate_mlp;
};

inline AdaLnResult ada_ln_zero(const MatF& x, const MatF& temb, ParamStore<float>& store,
                               const BranchParamIds& p) {
    Tape<float> tape(&store);
    NodeId xn = tape.constant(x);
    NodeId silu_temb = tape.silu(tape.constant(temb));
    AdaLnChunks c = ada_ln_zero_op(tape, xn, silu_temb, p);
    return {tape.value(c.modulated), tape.value(c.gate_msa), tape.value(c.shift_mlp),
            tape.value(c.scale_mlp), tape.value(c.gate_mlp)};
}

// Spec-surface joint attention on raw (already modulated) hidden states of
// one sample. Returns (seen_out, target_out).
inline std::pair<MatF, MatF> joint_attention(const MatF& target_h, const MatF& seen_h,
                                             const std::vector<int>& pos_t,
                                             const std::vector<int>& pos_s,
                                             ParamStore<float>& store, const BlockParamIds& p,
                                             const ModelConfig& cfg) {
    cfg.validate();
    const RopeTable<float> rope = RopeTable<float>::build(cfg.max_len, cfg.head_dim, cfg.rope_base);
    Tape<float> tape(&store);
    SequenceLayout layout{1, pos_t, pos_s};
    for (int pos : pos_t) {
        require(pos >= 0 && pos < cfg.max_len, ErrorCode::PositionOutOfRange, "position >= max_len");
    }
    for (int pos : pos_s) {
        require(pos >= 0 && pos < cfg.max_len, ErrorCode::PositionOutOfRange, "position >= max_len");
    }
    auto [out_t, out_s] = joint_attention_projected(tape, tape.constant(target_h),
                                                    tape.constant(seen_h), p, cfg, rope, layout);
    return {tape.value(out_s), tape.value(out_t)};
}

// One block applied to one sample's branch states. Returns (seen', target').
inline std::pair<MatF, MatF> vedit_block(const MatF& target, const MatF& seen, const MatF& temb,
                                         const std::vector<int>& pos_t, const std::vector<int>& pos_s,
                                         ParamStore<float>& store, const BlockParamIds& p,
                                         const ModelConfig& cfg) {
    const RopeTable<float> rope = RopeTable<float>::build(cfg.max_len, cfg.head_dim, cfg.rope_base);
    Tape<float> tape(&store);
    SequenceLayout layout{1, pos_t, pos_s};
    NodeId silu_temb = tape.silu(tape.constant(temb));
    auto [t, s] = vedit_block_op(tape, tape.constant(target), tape.constant(seen), silu_temb, p,
                                 cfg, rope, layout);
    return {tape.value(s), tape.value(t)};
}

// Velocity prediction for one sample's target clips.
template <typename S>
std::vector<Mat<S>> vedit_forward(const std::vector<Mat<S>>& noisy_targets,
                                  const std::vector<Mat<S>>& seen,
                                  const std::vector<int>& target_clip_idx,
                                  const std::vector<int>& seen_clip_idx, double sigma,
                                  ParamStore<S>& store, const VeditParamIds& ids,
                                  const ModelConfig& cfg) {
    require(!noisy_targets.empty() && !seen.empty(), ErrorCode::EmptyTargetSet,
            "need at least one seen and one target clip");
    const int k = cfg.tokens_per_clip;
    Mat<S> t_tokens(static_cast<Eigen::Index>(noisy_targets.size()) * k, cfg.token_dim);
    Mat<S> s_tokens(static_cast<Eigen::Index>(seen.size()) * k, cfg.token_dim);
    for (size_t i = 0; i < noisy_targets.size(); ++i) {
        t_tokens.middleRows(static_cast<Eigen::Index>(i) * k, k) = noisy_targets[i];
    }
    for (size_t i = 0; i < seen.size(); ++i) {
        s_tokens.middleRows(static_cast<Eigen::Index>(i) * k, k) = seen[i];
    }
    const RopeTable<S> rope = RopeTable<S>::build(cfg.max_len, cfg.head_dim, cfg.rope_base);
    SequenceLayout layout{1, token_positions(target_clip_idx, k), token_positions(seen_clip_idx, k)};
    Tape<S> tape(&store);
    NodeId vel = vedit_forward_op(tape, tape.constant(t_tokens), tape.constant(s_tokens), sigma,
                                  ids, cfg, rope, layout);
    std::vector<Mat<S>> out(noisy_targets.size());
    for (size_t i = 0; i < noisy_targets.size(); ++i) {
        out[i] = tape.value(vel).middleRows(static_cast<Eigen::Index>(i) * k, k);
    }
    return out;
}

}  // namespace vedit
