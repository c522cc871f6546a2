// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
//
// Attentive-pooler classifiers: a single learned query cross-attends over a
// token set and a linear layer maps the pooled vector to class logits. The
// deep variant prepends three self-attention blocks.
#pragma once

#include "vedit/common.hpp"
#include "vedit/model.hpp"
#include "vedit/model_ops.hpp"
#include "vedit/tape.hpp"

#include <string>
#include <vector>

namespace vedit {

inline constexpr int kDeepPoolerPrefixBlocks = 3;

struct PoolerConfig {
    int input_dim = 0;  // token channel count (D)
    int classes = 0;
    int heads = 1;
    bool deep = false;

    void validate() const {
        require(input_dim >= 1, ErrorCode::InvalidConfig, "pooler input_dim must be >= 1");
        require(classes >= 1, ErrorCode::InvalidConfig, "pooler needs at least one class");
        require(heads >= 1 && input_dim % heads == 0, ErrorCode::InvalidConfig,
                "pooler heads must divide input_dim");
    }
};

struct PoolerBlockIds {
    int norm1_g = -1, norm1_b = -1;
    int q_w = -1, q_b = -1, k_w = -1, k_b = -1, v_w = -1, v_b = -1, o_w = -1, o_b = -1;
    int norm2_g = -1, norm2_b = -1;
    int ff1_w = -1, ff1_b = -1, ff2_w = -1, ff2_b = -1;
};

struct PoolerParamIds {
    int query = -1;
    int q_w = -1, q_b = -1, k_w = -1, k_b = -1, v_w = -1, v_b = -1, o_w = -1, o_b = -1;
    int head_w = -1, head_b = -1;
    std::vector<PoolerBlockIds> prefix;  // empty (shallow) or exactly three (deep)
};

template <typename S>
PoolerParamIds register_pooler_params(ParamStore<S>& store, const PoolerConfig& cfg, Rng& rng,
                                      ParamBind mode = ParamBind::Create) {
    cfg.validate();
    const int d = cfg.input_dim;
    PoolerParamIds ids;
    ids.query = detail::bind_tensor(store, mode, "pooler.query", 1, d);
    ids.q_w = detail::bind_tensor(store, mode, "pooler.xattn_q.weight", d, d);
    ids.q_b = detail::bind_tensor(store, mode, "pooler.xattn_q.bias", 1, d);
    ids.k_w = detail::bind_tensor(store, mode, "pooler.xattn_k.weight", d, d);
    ids.k_b = detail::bind_tensor(store, mode, "pooler.xattn_k.bias", 1, d);
    ids.v_w = detail::bind_tensor(store, mode, "pooler.xattn_v.weight", d, d);
    ids.v_b = detail::bind_tensor(store, mode, "pooler.xattn_v.bias", 1, d);
    ids.o_w = detail::bind_tensor(store, mode, "pooler.xattn_out.weight", d, d);
    ids.o_b = detail::bind_tensor(store, mode, "pooler.xattn_out.bias", 1, d);
    ids.head_w = detail::bind_tensor(store, mode, "pooler.head.weight", d, cfg.classes);
    ids.head_b = detail::bind_tensor(store, mode, "pooler.head.bias", 1, cfg.classes);
    if (mode == ParamBind::Create) {
        detail::init_normal(store, ids.query, rng, 0.02);
        detail::init_xavier(store, ids.q_w, rng);
        detail::init_xavier(store, ids.k_w, rng);
        detail::init_xavier(store, ids.v_w, rng);
        detail::init_xavier(store, ids.o_w, rng);
        // Small but nonzero head: logits start near-uniform (loss ~ ln C) yet
        // gradients reach the denoiser from the first step. An exactly zero
        // head would block all model-side gradient until the head drifts.
        detail::init_normal(store, ids.head_w, rng, 0.02);
    }
    if (cfg.deep) {
        for (int i = 0; i < kDeepPoolerPrefixBlocks; ++i) {
            const std::string base = "pooler.block" + std::to_string(i);
            PoolerBlockIds blk;
            blk.norm1_g = detail::bind_tensor(store, mode, base + ".norm1.gamma", 1, d);
            blk.norm1_b = detail::bind_tensor(store, mode, base + ".norm1.beta", 1, d);
            blk.q_w = detail::bind_tensor(store, mode, base + ".attn_q.weight", d, d);
            blk.q_b = detail::bind_tensor(store, mode, base + ".attn_q.bias", 1, d);
            blk.k_w = detail::bind_tensor(store, mode, base + ".attn_k.weight", d, d);
            blk.k_b = detail::bind_tensor(store, mode, base + ".attn_k.bias", 1, d);
            blk.v_w = detail::bind_tensor(store, mode, base + ".attn_v.weight", d, d);
            blk.v_b = detail::bind_tensor(store, mode, base + ".attn_v.bias", 1, d);
            blk.o_w = detail::bind_tensor(store, mode, base + ".attn_out.weight", d, d);
            blk.o_b = detail::bind_tensor(store, mode, base + ".attn_out.bias", 1, d);
            blk.norm2_g = detail::bind_tensor(store, mode, base + ".norm2.gamma", 1, d);
            blk.norm2_b = detail::bind_tensor(store, mode, base + ".norm2.beta", 1, d);
            blk.ff1_w = detail::bind_tensor(store, mode, base + ".ffn1.weight", d, 4 * d);
            blk.ff1_b = detail::bind_tensor(store, mode, base + ".ffn1.bias", 1, 4 * d);
            blk.ff2_w = detail::bind_tensor(store, mode, base + ".ffn2.weight", 4 * d, d);
            blk.ff2_b = detail::bind_tensor(store, mode, base + ".ffn2.bias", 1, d);
            if (mode == ParamBind::Create) {
                store.view(blk.norm1_g).setOnes();
                store.view(blk.norm2_g).setOnes();
                detail::init_xavier(store, blk.q_w, rng);
                detail::init_xavier(store, blk.k_w, rng);
                detail::init_xavier(store, blk.v_w, rng);
                detail::init_xavier(store, blk.o_w, rng);
                detail::init_xavier(store, blk.ff1_w, rng);
                detail::init_xavier(store, blk.ff2_w, rng);
            }
            ids.prefix.push_back(blk);
        }
    }
    return ids;
}

namespace detail {

template <typename S>
NodeId learned_layernorm(Tape<S>& tape, NodeId x, int gamma, int beta) {
    return tape.add_bias(tape.row_scale(tape.layernorm_rows(x), tape.param(gamma)),
                         tape.param(beta));
}

}  // namespace detail

// Pools each seg_rows-token segment of x into one vector and maps it to class
// logits: (num_segments * seg_rows) x D -> num_segments x C.
template <typename S>
NodeId attentive_pool_op(Tape<S>& tape, NodeId x, Eigen::Index seg_rows, const PoolerParamIds& ids,
                         const PoolerConfig& cfg) {
    require(seg_rows >= 1, ErrorCode::ShapeMismatch, "segment must contain at least one token");
    require(tape.value(x).cols() == cfg.input_dim, ErrorCode::ShapeMismatch,
            "pooler input width mismatch");
    for (const PoolerBlockIds& blk : ids.prefix) {
        NodeId n1 = detail::learned_layernorm(tape, x, blk.norm1_g, blk.norm1_b);
        NodeId attn = segmented_self_attention_op(
            tape, linear_op(tape, n1, blk.q_w, blk.q_b), linear_op(tape, n1, blk.k_w, blk.k_b),
            linear_op(tape, n1, blk.v_w, blk.v_b), seg_rows, cfg.heads);
        x = tape.add(x, linear_op(tape, attn, blk.o_w, blk.o_b));
        NodeId n2 = detail::learned_layernorm(tape, x, blk.norm2_g, blk.norm2_b);
        NodeId ff = linear_op(tape, tape.gelu(linear_op(tape, n2, blk.ff1_w, blk.ff1_b)), blk.ff2_w,
                              blk.ff2_b);
        x = tape.add(x, ff);
    }
    NodeId q = linear_op(tape, tape.param(ids.query), ids.q_w, ids.q_b);
    NodeId k = linear_op(tape, x, ids.k_w, ids.k_b);
    NodeId v = linear_op(tape, x, ids.v_w, ids.v_b);
    NodeId pooled = pooled_attention_op(tape, q, k, v, seg_rows, cfg.heads);
    pooled = linear_op(tape, pooled, ids.o_w, ids.o_b);
    return linear_op(tape, pooled, ids.head_w, ids.head_b);
}

// Logits for a single token set (one clip, or anything shaped tokens x D).
template <typename S>
Mat<S> attentive_pool(const Mat<S>& x, ParamStore<S>& store, const PoolerParamIds& ids,
                      const PoolerConfig& cfg) {
    require(x.rows() >= 1, ErrorCode::ShapeMismatch, "attentive_pool needs at least one token");
    Tape<S> tape(&store);
    return tape.value(attentive_pool_op(tape, tape.constant(x), x.rows(), ids, cfg));
}

// Concatenates clips along the token axis and pools the union.
template <typename S>
Mat<S> pool_multi(const std::vector<Mat<S>>& clips, ParamStore<S>& store,
                  const PoolerParamIds& ids, const PoolerConfig& cfg) {
    require(!clips.empty(), ErrorCode::ShapeMismatch, "pool_multi needs at least one clip");
    Eigen::Index rows = 0;
    for (const Mat<S>& c : clips) {
        require(c.cols() == clips.front().cols(), ErrorCode::ShapeMismatch,
                "pool_multi clips differ in width");
        rows += c.rows();
    }
    Mat<S> stacked(rows, clips.front().cols());
    Eigen::Index at = 0;
    for (const Mat<S>& c : clips) {
        stacked.middleRows(at, c.rows()) = c;
        at += c.rows();
    }
    return attentive_pool(stacked, store, ids, cfg);
}

}  // namespace vedit
