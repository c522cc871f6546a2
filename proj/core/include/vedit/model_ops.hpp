// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
//
// Rotary embedding helpers and the fused attention tape ops. Attention is
// fused into single tape nodes with hand-written backward passes; the
// finite-difference harness in training.hpp is the safety net for these.
#pragma once

#include "vedit/common.hpp"
#include "vedit/tape.hpp"

#include <memory>
#include <utility>
#include <vector>

namespace vedit {

// Precomputed cos/sin per (position, pair index). Pair j rotates by
// pos * base^(-2j / head_dim).
template <typename S>
struct RopeTable {
    int head_dim = 0;
    Mat<S> cos_t;  // max_len x head_dim/2
    Mat<S> sin_t;

    static RopeTable build(int max_len, int head_dim, double base) {
        require(head_dim >= 2 && head_dim % 2 == 0, ErrorCode::OddHeadDim,
                "rotary pairs need an even head_dim");
        RopeTable t;
        t.head_dim = head_dim;
        const int half = head_dim / 2;
        t.cos_t.resize(max_len, half);
        t.sin_t.resize(max_len, half);
        for (int p = 0; p < max_len; ++p) {
            for (int j = 0; j < half; ++j) {
                const double theta = std::pow(base, -2.0 * j / head_dim);
                const double angle = p * theta;
                t.cos_t(p, j) = static_cast<S>(std::cos(angle));
                t.sin_t(p, j) = static_cast<S>(std::sin(angle));
            }
        }
        return t;
    }
};

// Rotates every consecutive channel pair within each head of every row by its
// position angle. inverse=true applies the transposed (negative) rotation.
template <typename S>
void rope_rotate_inplace(Mat<S>& x, const std::vector<int>& positions, const RopeTable<S>& table,
                         bool inverse = false) {
    const int head_dim = table.head_dim;
    require(x.cols() % head_dim == 0, ErrorCode::ShapeMismatch,
            "row width must be a multiple of head_dim");
    require(x.rows() == static_cast<Eigen::Index>(positions.size()), ErrorCode::ShapeMismatch,
            "one position per row required");
    const int half = head_dim / 2;
    const int heads = static_cast<int>(x.cols()) / head_dim;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const int pos = positions[static_cast<size_t>(r)];
        require(pos >= 0, ErrorCode::PositionOutOfRange, "negative token position");
        require(pos < table.cos_t.rows(), ErrorCode::PositionOutOfRange,
                "token position exceeds rope table length");
        for (int h = 0; h < heads; ++h) {
            S* row = x.row(r).data() + h * head_dim;
            for (int j = 0; j < half; ++j) {
                const S c = table.cos_t(pos, j);
                const S s = inverse ? -table.sin_t(pos, j) : table.sin_t(pos, j);
                const S a = row[2 * j];
                const S b = row[2 * j + 1];
                row[2 * j] = a * c - b * s;
                row[2 * j + 1] = a * s + b * c;
            }
        }
    }
}

// Standalone rotary rotation (the non-tape entry point used by tests and by
// anything outside the fused attention path).
template <typename S>
Mat<S> rope_rotate(const Mat<S>& x, const std::vector<int>& positions, double base, int head_dim) {
    int max_pos = 0;
    for (int p : positions) {
        require(p >= 0, ErrorCode::PositionOutOfRange, "negative token position");
        max_pos = std::max(max_pos, p);
    }
    const RopeTable<S> table = RopeTable<S>::build(max_pos + 1, head_dim, base);
    Mat<S> out = x;
    rope_rotate_inplace(out, positions, table);
    return out;
}

namespace detail {

template <typename S>
Mat<S> softmax_rows_plain(const Mat<S>& x) {
    Mat<S> y(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const S m = x.row(r).maxCoeff();
        y.row(r) = (x.row(r).array() - m).exp();
        y.row(r) /= y.row(r).sum();
    }
    return y;
}

template <typename S>
Mat<S> grad_or_zero(Tape<S>& tape, NodeId id) {
    const Mat<S>& g = tape.grad(id);
    if (g.size() == 0) {
        return Mat<S>::Zero(tape.value(id).rows(), tape.value(id).cols());
    }
    return g;
}

}  // namespace detail

// Joint multi-head attention over per-sample sequences [target_b ; seen_b]
// (target tokens first), with rotary rotation of queries and keys. Inputs are
// stacked sample-major: q_t is (B*Lt) x H, q_s is (B*Ls) x H, and so on.
// pos_t / pos_s give the clip position of each per-sample token row.
// Returns (target_out, seen_out) in the same stacked layout.
template <typename S>
std::pair<NodeId, NodeId> joint_attention_op(Tape<S>& tape, NodeId q_t, NodeId k_t, NodeId v_t,
                                             NodeId q_s, NodeId k_s, NodeId v_s,
                                             std::vector<int> pos_t, std::vector<int> pos_s,
                                             const RopeTable<S>* rope, int batch, int heads) {
    const Eigen::Index lt = static_cast<Eigen::Index>(pos_t.size());
    const Eigen::Index ls = static_cast<Eigen::Index>(pos_s.size());
    const Eigen::Index hidden = tape.value(q_t).cols();
    require(hidden % heads == 0, ErrorCode::ShapeMismatch, "hidden not divisible by heads");
    const Eigen::Index dh = hidden / heads;
    require(tape.value(q_t).rows() == batch * lt && tape.value(q_s).rows() == batch * ls,
            ErrorCode::ShapeMismatch, "stacked q rows disagree with batch layout");
    const Eigen::Index l = lt + ls;
    const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));

    std::vector<int> pos_joint(pos_t.begin(), pos_t.end());
    pos_joint.insert(pos_joint.end(), pos_s.begin(), pos_s.end());

    // Saved per sample: rotated Q/K and per-head attention probabilities.
    auto saved_qr = std::make_shared<std::vector<Mat<S>>>(static_cast<size_t>(batch));
    auto saved_kr = std::make_shared<std::vector<Mat<S>>>(static_cast<size_t>(batch));
    auto saved_p = std::make_shared<std::vector<Mat<S>>>(static_cast<size_t>(batch) * heads);

    Mat<S> out_t_v(batch * lt, hidden);
    Mat<S> out_s_v(batch * ls, hidden);
    for (int b = 0; b < batch; ++b) {
        Mat<S> q(l, hidden), k(l, hidden), v(l, hidden);
        q.topRows(lt) = tape.value(q_t).middleRows(b * lt, lt);
        q.bottomRows(ls) = tape.value(q_s).middleRows(b * ls, ls);
        k.topRows(lt) = tape.value(k_t).middleRows(b * lt, lt);
        k.bottomRows(ls) = tape.value(k_s).middleRows(b * ls, ls);
        v.topRows(lt) = tape.value(v_t).middleRows(b * lt, lt);
        v.bottomRows(ls) = tape.value(v_s).middleRows(b * ls, ls);
        if (rope != nullptr) {
            rope_rotate_inplace(q, pos_joint, *rope);
            rope_rotate_inplace(k, pos_joint, *rope);
        }
        Mat<S> o(l, hidden);
        for (int h = 0; h < heads; ++h) {
            auto qh = q.middleCols(h * dh, dh);
            auto kh = k.middleCols(h * dh, dh);
            Mat<S> scores = (qh * kh.transpose()) * inv_sqrt;
            Mat<S> p = detail::softmax_rows_plain(scores);
            o.middleCols(h * dh, dh).noalias() = p * v.middleCols(h * dh, dh);
            (*saved_p)[static_cast<size_t>(b) * heads + h] = std::move(p);
        }
        out_t_v.middleRows(b * lt, lt) = o.topRows(lt);
        out_s_v.middleRows(b * ls, ls) = o.bottomRows(ls);
        (*saved_qr)[static_cast<size_t>(b)] = std::move(q);
        (*saved_kr)[static_cast<size_t>(b)] = std::move(k);
    }

    const bool req = tape.requires_grad(q_t) || tape.requires_grad(k_t) || tape.requires_grad(v_t) ||
                     tape.requires_grad(q_s) || tape.requires_grad(k_s) || tape.requires_grad(v_s);
    auto fired = std::make_shared<bool>(false);

    // Both outputs share one backward; it runs at whichever output node the
    // reverse sweep reaches first, when both output grads are final.
    const NodeId out_t = tape.custom(std::move(out_t_v), req, nullptr);
    const NodeId out_s = tape.custom(std::move(out_s_v), req, nullptr);

    auto backward = [&tape, q_t, k_t, v_t, q_s, k_s, v_s, out_t, out_s, saved_qr, saved_kr, saved_p,
                     fired, pos_joint, rope, batch, heads, lt, ls, hidden, dh, inv_sqrt]() {
        if (*fired) {
            return;
        }
        *fired = true;
        const Mat<S> g_t = detail::grad_or_zero(tape, out_t);
        const Mat<S> g_s = detail::grad_or_zero(tape, out_s);
        const Eigen::Index l = lt + ls;
        for (int b = 0; b < batch; ++b) {
            Mat<S> go(l, hidden);
            go.topRows(lt) = g_t.middleRows(b * lt, lt);
            go.bottomRows(ls) = g_s.middleRows(b * ls, ls);
            const Mat<S>& qr = (*saved_qr)[static_cast<size_t>(b)];
            const Mat<S>& kr = (*saved_kr)[static_cast<size_t>(b)];
            Mat<S> dq(l, hidden), dk(l, hidden), dv(l, hidden);
            for (int h = 0; h < heads; ++h) {
                const Mat<S>& p = (*saved_p)[static_cast<size_t>(b) * heads + h];
                auto go_h = go.middleCols(h * dh, dh);
                // V rows for this sample/head re-assembled from input nodes.
                Mat<S> vh(l, dh);
                vh.topRows(lt) = tape.value(v_t).block(b * lt, h * dh, lt, dh);
                vh.bottomRows(ls) = tape.value(v_s).block(b * ls, h * dh, ls, dh);
                dv.middleCols(h * dh, dh).noalias() = p.transpose() * go_h;
                Mat<S> dp = go_h * vh.transpose();
                Mat<S> ds(l, l);
                for (Eigen::Index r = 0; r < l; ++r) {
                    const S dot = (dp.row(r).array() * p.row(r).array()).sum();
                    ds.row(r).array() = (dp.row(r).array() - dot) * p.row(r).array();
                }
                ds *= inv_sqrt;
                dq.middleCols(h * dh, dh).noalias() = ds * kr.middleCols(h * dh, dh);
                dk.middleCols(h * dh, dh).noalias() = ds.transpose() * qr.middleCols(h * dh, dh);
            }
            if (rope != nullptr) {
                rope_rotate_inplace(dq, pos_joint, *rope, /*inverse=*/true);
                rope_rotate_inplace(dk, pos_joint, *rope, /*inverse=*/true);
            }
            if (tape.requires_grad(q_t)) {
                tape.grad_ref(q_t).middleRows(b * lt, lt) += dq.topRows(lt);
            }
            if (tape.requires_grad(q_s)) {
                tape.grad_ref(q_s).middleRows(b * ls, ls) += dq.bottomRows(ls);
            }
            if (tape.requires_grad(k_t)) {
                tape.grad_ref(k_t).middleRows(b * lt, lt) += dk.topRows(lt);
            }
            if (tape.requires_grad(k_s)) {
                tape.grad_ref(k_s).middleRows(b * ls, ls) += dk.bottomRows(ls);
            }
            if (tape.requires_grad(v_t)) {
                tape.grad_ref(v_t).middleRows(b * lt, lt) += dv.topRows(lt);
            }
            if (tape.requires_grad(v_s)) {
                tape.grad_ref(v_s).middleRows(b * ls, ls) += dv.bottomRows(ls);
            }
        }
    };
    tape.set_backward_fn(out_t, backward);
    tape.set_backward_fn(out_s, backward);
    return {out_t, out_s};
}

// Cross attention: target tokens query seen keys/values only. Output rows
// align with the stacked target layout.
template <typename S>
NodeId cross_attention_op(Tape<S>& tape, NodeId q_t, NodeId k_s, NodeId v_s, std::vector<int> pos_t,
                          std::vector<int> pos_s, const RopeTable<S>* rope, int batch, int heads) {
    const Eigen::Index lt = static_cast<Eigen::Index>(pos_t.size());
    const Eigen::Index ls = static_cast<Eigen::Index>(pos_s.size());
    const Eigen::Index hidden = tape.value(q_t).cols();
    const Eigen::Index dh = hidden / heads;
    require(hidden % heads == 0, ErrorCode::ShapeMismatch, "hidden not divisible by heads");
    const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));

    auto saved_qr = std::make_shared<std::vector<Mat<S>>>(static_cast<size_t>(batch));
    auto saved_kr = std::make_shared<std::vector<Mat<S>>>(static_cast<size_t>(batch));
    auto saved_p = std::make_shared<std::vector<Mat<S>>>(static_cast<size_t>(batch) * heads);

    Mat<S> out_v(batch * lt, hidden);
    for (int b = 0; b < batch; ++b) {
        Mat<S> q = tape.value(q_t).middleRows(b * lt, lt);
        Mat<S> k = tape.value(k_s).middleRows(b * ls, ls);
        if (rope != nullptr) {
            rope_rotate_inplace(q, pos_t, *rope);
            rope_rotate_inplace(k, pos_s, *rope);
        }
        for (int h = 0; h < heads; ++h) {
            Mat<S> scores = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * inv_sqrt;
            Mat<S> p = detail::softmax_rows_plain(scores);
            out_v.block(b * lt, h * dh, lt, dh).noalias() =
                p * tape.value(v_s).block(b * ls, h * dh, ls, dh);
            (*saved_p)[static_cast<size_t>(b) * heads + h] = std::move(p);
        }
        (*saved_qr)[static_cast<size_t>(b)] = std::move(q);
        (*saved_kr)[static_cast<size_t>(b)] = std::move(k);
    }

    const bool req =
        tape.requires_grad(q_t) || tape.requires_grad(k_s) || tape.requires_grad(v_s);
    NodeId out = tape.custom(std::move(out_v), req, nullptr);
    auto backward = [&tape, q_t, k_s, v_s, out, saved_qr, saved_kr, saved_p, pos_t, pos_s, rope,
                     batch, heads, lt, ls, hidden, dh, inv_sqrt]() {
        const Mat<S>& g = tape.grad(out);
        for (int b = 0; b < batch; ++b) {
            const Mat<S>& qr = (*saved_qr)[static_cast<size_t>(b)];
            const Mat<S>& kr = (*saved_kr)[static_cast<size_t>(b)];
            Mat<S> dq = Mat<S>::Zero(lt, hidden);
            Mat<S> dk = Mat<S>::Zero(ls, hidden);
            for (int h = 0; h < heads; ++h) {
                const Mat<S>& p = (*saved_p)[static_cast<size_t>(b) * heads + h];
                auto g_h = g.block(b * lt, h * dh, lt, dh);
                if (tape.requires_grad(v_s)) {
                    tape.grad_ref(v_s).block(b * ls, h * dh, ls, dh).noalias() += p.transpose() * g_h;
                }
                Mat<S> dp = g_h * tape.value(v_s).block(b * ls, h * dh, ls, dh).transpose();
                Mat<S> ds(lt, ls);
                for (Eigen::Index r = 0; r < lt; ++r) {
                    const S dot = (dp.row(r).array() * p.row(r).array()).sum();
                    ds.row(r).array() = (dp.row(r).array() - dot) * p.row(r).array();
                }
                ds *= inv_sqrt;
                dq.middleCols(h * dh, dh).noalias() = ds * kr.middleCols(h * dh, dh);
                dk.middleCols(h * dh, dh).noalias() = ds.transpose() * qr.middleCols(h * dh, dh);
            }
            if (rope != nullptr) {
                rope_rotate_inplace(dq, pos_t, *rope, /*inverse=*/true);
                rope_rotate_inplace(dk, pos_s, *rope, /*inverse=*/true);
            }
            if (tape.requires_grad(q_t)) {
                tape.grad_ref(q_t).middleRows(b * lt, lt) += dq;
            }
            if (tape.requires_grad(k_s)) {
                tape.grad_ref(k_s).middleRows(b * ls, ls) += dk;
            }
        }
    };
    tape.set_backward_fn(out, backward);
    return out;
}

// Single learned query attends over each seg_rows-token segment.
// q: 1 x D, k/v: (num_segments * seg_rows) x D -> output num_segments x D.
template <typename S>
NodeId pooled_attention_op(Tape<S>& tape, NodeId q, NodeId k, NodeId v, Eigen::Index seg_rows,
                           int heads) {
    const Eigen::Index width = tape.value(q).cols();
    const Eigen::Index rows = tape.value(k).rows();
    require(tape.value(q).rows() == 1, ErrorCode::ShapeMismatch, "pooler query must be one row");
    require(rows % seg_rows == 0, ErrorCode::ShapeMismatch, "rows not divisible by segment size");
    require(width % heads == 0, ErrorCode::ShapeMismatch, "width not divisible by heads");
    const Eigen::Index segs = rows / seg_rows;
    const Eigen::Index dh = width / heads;
    const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));

    auto saved_p = std::make_shared<std::vector<Mat<S>>>(static_cast<size_t>(segs) * heads);
    Mat<S> out_v(segs, width);
    for (Eigen::Index i = 0; i < segs; ++i) {
        for (int h = 0; h < heads; ++h) {
            Mat<S> scores =
                (tape.value(q).middleCols(h * dh, dh) *
                 tape.value(k).block(i * seg_rows, h * dh, seg_rows, dh).transpose()) *
                inv_sqrt;
            Mat<S> p = detail::softmax_rows_plain(scores);
            out_v.block(i, h * dh, 1, dh).noalias() =
                p * tape.value(v).block(i * seg_rows, h * dh, seg_rows, dh);
            (*saved_p)[static_cast<size_t>(i) * heads + h] = std::move(p);
        }
    }

    const bool req = tape.requires_grad(q) || tape.requires_grad(k) || tape.requires_grad(v);
    NodeId out = tape.custom(std::move(out_v), req, nullptr);
    auto backward = [&tape, q, k, v, out, saved_p, segs, seg_rows, heads, dh, inv_sqrt]() {
        const Mat<S>& g = tape.grad(out);
        for (Eigen::Index i = 0; i < segs; ++i) {
            for (int h = 0; h < heads; ++h) {
                const Mat<S>& p = (*saved_p)[static_cast<size_t>(i) * heads + h];
                auto g_h = g.block(i, h * dh, 1, dh);
                if (tape.requires_grad(v)) {
                    tape.grad_ref(v).block(i * seg_rows, h * dh, seg_rows, dh).noalias() +=
                        p.transpose() * g_h;
                }
                Mat<S> dp = g_h * tape.value(v).block(i * seg_rows, h * dh, seg_rows, dh).transpose();
                const S dot = (dp.row(0).array() * p.row(0).array()).sum();
                Mat<S> ds = ((dp.row(0).array() - dot) * p.row(0).array()).matrix() * inv_sqrt;
                if (tape.requires_grad(q)) {
                    tape.grad_ref(q).middleCols(h * dh, dh).noalias() +=
                        ds * tape.value(k).block(i * seg_rows, h * dh, seg_rows, dh);
                }
                if (tape.requires_grad(k)) {
                    tape.grad_ref(k).block(i * seg_rows, h * dh, seg_rows, dh).noalias() +=
                        ds.transpose() * tape.value(q).middleCols(h * dh, dh);
                }
            }
        }
    };
    tape.set_backward_fn(out, backward);
    return out;
}

// Plain self-attention within each seg_rows-token segment (deep pooler
// prefix blocks; no positional rotation).
template <typename S>
NodeId segmented_self_attention_op(Tape<S>& tape, NodeId q, NodeId k, NodeId v,
                                   Eigen::Index seg_rows, int heads) {
    const Eigen::Index width = tape.value(q).cols();
    const Eigen::Index rows = tape.value(q).rows();
    require(rows % seg_rows == 0, ErrorCode::ShapeMismatch, "rows not divisible by segment size");
    require(width % heads == 0, ErrorCode::ShapeMismatch, "width not divisible by heads");
    const Eigen::Index segs = rows / seg_rows;
    const Eigen::Index dh = width / heads;
    const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));

    auto saved_p = std::make_shared<std::vector<Mat<S>>>(static_cast<size_t>(segs) * heads);
    Mat<S> out_v(rows, width);
    for (Eigen::Index i = 0; i < segs; ++i) {
        for (int h = 0; h < heads; ++h) {
            Mat<S> scores = (tape.value(q).block(i * seg_rows, h * dh, seg_rows, dh) *
                             tape.value(k).block(i * seg_rows, h * dh, seg_rows, dh).transpose()) *
                            inv_sqrt;
            Mat<S> p = detail::softmax_rows_plain(scores);
            out_v.block(i * seg_rows, h * dh, seg_rows, dh).noalias() =
                p * tape.value(v).block(i * seg_rows, h * dh, seg_rows, dh);
            (*saved_p)[static_cast<size_t>(i) * heads + h] = std::move(p);
        }
    }

    const bool req = tape.requires_grad(q) || tape.requires_grad(k) || tape.requires_grad(v);
    NodeId out = tape.custom(std::move(out_v), req, nullptr);
    auto backward = [&tape, q, k, v, out, saved_p, segs, seg_rows, heads, dh, inv_sqrt]() {
        const Mat<S>& g = tape.grad(out);
        for (Eigen::Index i = 0; i < segs; ++i) {
            for (int h = 0; h < heads; ++h) {
                const Mat<S>& p = (*saved_p)[static_cast<size_t>(i) * heads + h];
                auto g_h = g.block(i * seg_rows, h * dh, seg_rows, dh);
                if (tape.requires_grad(v)) {
                    tape.grad_ref(v).block(i * seg_rows, h * dh, seg_rows, dh).noalias() +=
                        p.transpose() * g_h;
                }
                Mat<S> dp =
                    g_h * tape.value(v).block(i * seg_rows, h * dh, seg_rows, dh).transpose();
                Mat<S> ds(seg_rows, seg_rows);
                for (Eigen::Index r = 0; r < seg_rows; ++r) {
                    const S dot = (dp.row(r).array() * p.row(r).array()).sum();
                    ds.row(r).array() = (dp.row(r).array() - dot) * p.row(r).array();
                }
                ds *= inv_sqrt;
                if (tape.requires_grad(q)) {
                    tape.grad_ref(q).block(i * seg_rows, h * dh, seg_rows, dh).noalias() +=
                        ds * tape.value(k).block(i * seg_rows, h * dh, seg_rows, dh);
                }
                if (tape.requires_grad(k)) {
                    tape.grad_ref(k).block(i * seg_rows, h * dh, seg_rows, dh).noalias() +=
                        ds.transpose() * tape.value(q).block(i * seg_rows, h * dh, seg_rows, dh);
                }
            }
        }
    };
    tape.set_backward_fn(out, backward);
    return out;
}

}  // namespace vedit
