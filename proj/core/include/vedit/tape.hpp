// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode tape over dense row-major matrices. Nodes are created in
// forward order; backward() walks them in reverse. Parameters live in a
// ParamStore and are bound to the tape once per graph, so every use of a
// weight inside the denoising loop accumulates into one gradient slot.
#pragma once

#include "vedit/common.hpp"

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace vedit {

template <typename S>
class ParamStore {
public:
    struct Entry {
        std::string name;
        int rows = 0;
        int cols = 0;
        size_t offset = 0;
    };

    int add(const std::string& name, int rows, int cols) {
        require(by_name_.find(name) == by_name_.end(), ErrorCode::InvalidConfig,
                "duplicate parameter name " + name);
        Entry e{name, rows, cols, data_.size()};
        data_.resize(data_.size() + static_cast<size_t>(rows) * cols, S(0));
        grad_.resize(data_.size(), S(0));
        entries_.push_back(e);
        const int idx = static_cast<int>(entries_.size()) - 1;
        by_name_[name] = idx;
        return idx;
    }

    int count() const { return static_cast<int>(entries_.size()); }
    const Entry& entry(int idx) const { return entries_[static_cast<size_t>(idx)]; }
    const std::vector<Entry>& entries() const { return entries_; }

    int find(const std::string& name) const {
        auto it = by_name_.find(name);
        return it == by_name_.end() ? -1 : it->second;
    }

    Eigen::Map<Mat<S>> view(int idx) {
        const Entry& e = entries_[static_cast<size_t>(idx)];
        return Eigen::Map<Mat<S>>(data_.data() + e.offset, e.rows, e.cols);
    }
    Eigen::Map<const Mat<S>> view(int idx) const {
        const Entry& e = entries_[static_cast<size_t>(idx)];
        return Eigen::Map<const Mat<S>>(data_.data() + e.offset, e.rows, e.cols);
    }
    Eigen::Map<Mat<S>> grad_view(int idx) {
        const Entry& e = entries_[static_cast<size_t>(idx)];
        return Eigen::Map<Mat<S>>(grad_.data() + e.offset, e.rows, e.cols);
    }

    std::vector<S>& data() { return data_; }
    const std::vector<S>& data() const { return data_; }
    std::vector<S>& grad() { return grad_; }
    const std::vector<S>& grad() const { return grad_; }

    void zero_grad() { std::fill(grad_.begin(), grad_.end(), S(0)); }

    template <typename T>
    ParamStore<T> cast() const {
        ParamStore<T> out;
        for (const Entry& e : entries_) {
            out.add(e.name, e.rows, e.cols);
        }
        for (size_t i = 0; i < data_.size(); ++i) {
            out.data()[i] = static_cast<T>(data_[i]);
        }
        return out;
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, int> by_name_;
    std::vector<S> data_;
    std::vector<S> grad_;
};

using NodeId = int32_t;

template <typename S>
class Tape {
public:
    explicit Tape(ParamStore<S>* store = nullptr) : store_(store) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    const Mat<S>& value(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }
    const Mat<S>& grad(NodeId id) const { return nodes_[static_cast<size_t>(id)].grad; }
    bool requires_grad(NodeId id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
    size_t node_count() const { return nodes_.size(); }

    NodeId constant(Mat<S> v) { return push(std::move(v), false); }
    NodeId leaf(Mat<S> v) { return push(std::move(v), true); }

    // Binds a ParamStore entry; repeated calls return the same node so that
    // all uses of a weight share one gradient accumulator.
    NodeId param(int entry_idx) {
        require(store_ != nullptr, ErrorCode::InvalidConfig, "tape has no parameter store");
        auto it = param_nodes_.find(entry_idx);
        if (it != param_nodes_.end()) {
            return it->second;
        }
        NodeId id = push(store_->view(entry_idx), true);
        param_nodes_[entry_idx] = id;
        return id;
    }

    // out = A * B
    NodeId matmul(NodeId a, NodeId b) {
        require(value(a).cols() == value(b).rows(), ErrorCode::ShapeMismatch, "matmul inner dims");
        NodeId out = push(value(a) * value(b), requires_grad(a) || requires_grad(b));
        set_backward(out, [this, a, b, out] {
            const Mat<S>& g = grad(out);
            if (requires_grad(a)) {
                grad_ref(a).noalias() += g * value(b).transpose();
            }
            if (requires_grad(b)) {
                grad_ref(b).noalias() += value(a).transpose() * g;
            }
        });
        return out;
    }

    // out = A * B^T
    NodeId matmul_nt(NodeId a, NodeId b) {
        require(value(a).cols() == value(b).cols(), ErrorCode::ShapeMismatch, "matmul_nt inner dims");
        NodeId out = push(value(a) * value(b).transpose(), requires_grad(a) || requires_grad(b));
        set_backward(out, [this, a, b, out] {
            const Mat<S>& g = grad(out);
            if (requires_grad(a)) {
                grad_ref(a).noalias() += g * value(b);
            }
            if (requires_grad(b)) {
                grad_ref(b).noalias() += g.transpose() * value(a);
            }
        });
        return out;
    }

    NodeId add(NodeId a, NodeId b) { return axpy(S(1), a, S(1), b); }
    NodeId sub(NodeId a, NodeId b) { return axpy(S(1), a, S(-1), b); }

    // out = ca * A + cb * B
    NodeId axpy(S ca, NodeId a, S cb, NodeId b) {
        require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(),
                ErrorCode::ShapeMismatch, "axpy operands differ in shape");
        NodeId out = push(ca * value(a) + cb * value(b), requires_grad(a) || requires_grad(b));
        set_backward(out, [this, a, b, ca, cb, out] {
            const Mat<S>& g = grad(out);
            if (requires_grad(a)) {
                grad_ref(a).noalias() += ca * g;
            }
            if (requires_grad(b)) {
                grad_ref(b).noalias() += cb * g;
            }
        });
        return out;
    }

    NodeId scale(NodeId a, S c) {
        NodeId out = push(c * value(a), requires_grad(a));
        set_backward(out, [this, a, c, out] {
            if (requires_grad(a)) {
                grad_ref(a).noalias() += c * grad(out);
            }
        });
        return out;
    }

    // out = A + broadcast row bias (bias is 1 x cols)
    NodeId add_bias(NodeId a, NodeId bias) {
        require(value(bias).rows() == 1 && value(bias).cols() == value(a).cols(),
                ErrorCode::ShapeMismatch, "bias must be 1 x cols");
        NodeId out = push(value(a).rowwise() + value(bias).row(0), requires_grad(a) || requires_grad(bias));
        set_backward(out, [this, a, bias, out] {
            const Mat<S>& g = grad(out);
            if (requires_grad(a)) {
                grad_ref(a).noalias() += g;
            }
            if (requires_grad(bias)) {
                grad_ref(bias).noalias() += g.colwise().sum();
            }
        });
        return out;
    }

    // out = A .* broadcast row g (per-channel gate)
    NodeId row_scale(NodeId a, NodeId gate) {
        require(value(gate).rows() == 1 && value(gate).cols() == value(a).cols(),
                ErrorCode::ShapeMismatch, "gate must be 1 x cols");
        Mat<S> v = value(a).array().rowwise() * value(gate).row(0).array();
        NodeId out = push(std::move(v), requires_grad(a) || requires_grad(gate));
        set_backward(out, [this, a, gate, out] {
            const Mat<S>& g = grad(out);
            if (requires_grad(a)) {
                grad_ref(a).array() += g.array().rowwise() * value(gate).row(0).array();
            }
            if (requires_grad(gate)) {
                grad_ref(gate).noalias() += (g.array() * value(a).array()).matrix().colwise().sum();
            }
        });
        return out;
    }

    // out = X .* (1 + scale) + shift, with scale/shift broadcast rows.
    NodeId modulate(NodeId x, NodeId sc, NodeId sh) {
        require(value(sc).rows() == 1 && value(sh).rows() == 1 &&
                    value(sc).cols() == value(x).cols() && value(sh).cols() == value(x).cols(),
                ErrorCode::ShapeMismatch, "modulate scale/shift must be 1 x cols");
        Mat<S> v = (value(x).array().rowwise() * (value(sc).row(0).array() + S(1))).rowwise() +
                   value(sh).row(0).array();
        NodeId out = push(std::move(v), requires_grad(x) || requires_grad(sc) || requires_grad(sh));
        set_backward(out, [this, x, sc, sh, out] {
            const Mat<S>& g = grad(out);
            if (requires_grad(x)) {
                grad_ref(x).array() += g.array().rowwise() * (value(sc).row(0).array() + S(1));
            }
            if (requires_grad(sc)) {
                grad_ref(sc).noalias() += (g.array() * value(x).array()).matrix().colwise().sum();
            }
            if (requires_grad(sh)) {
                grad_ref(sh).noalias() += g.colwise().sum();
            }
        });
        return out;
    }

    // Per-row layernorm without learned affine.
    NodeId layernorm_rows(NodeId x, S eps = S(1e-6)) {
        const Mat<S>& in = value(x);
        const Eigen::Index rows = in.rows();
        const Eigen::Index cols = in.cols();
        Mat<S> y(rows, cols);
        Mat<S> inv_std(rows, 1);
        for (Eigen::Index r = 0; r < rows; ++r) {
            const S mean = in.row(r).mean();
            const S var = (in.row(r).array() - mean).square().mean();
            const S is = S(1) / std::sqrt(var + eps);
            inv_std(r, 0) = is;
            y.row(r) = (in.row(r).array() - mean) * is;
        }
        NodeId out = push(std::move(y), requires_grad(x));
        set_backward(out, [this, x, out, inv_std = std::move(inv_std)] {
            if (!requires_grad(x)) {
                return;
            }
            const Mat<S>& g = grad(out);
            const Mat<S>& y = value(out);
            Mat<S>& gx = grad_ref(x);
            for (Eigen::Index r = 0; r < g.rows(); ++r) {
                const S mean_g = g.row(r).mean();
                const S mean_gy = (g.row(r).array() * y.row(r).array()).mean();
                gx.row(r).array() +=
                    inv_std(r, 0) * (g.row(r).array() - mean_g - y.row(r).array() * mean_gy);
            }
        });
        return out;
    }

    NodeId silu(NodeId x) {
        Mat<S> sig = (S(1) / (S(1) + (-value(x).array()).exp())).matrix();
        NodeId out = push((value(x).array() * sig.array()).matrix(), requires_grad(x));
        set_backward(out, [this, x, out, sig = std::move(sig)] {
            if (!requires_grad(x)) {
                return;
            }
            const auto xv = value(x).array();
            const auto sg = sig.array();
            grad_ref(x).array() += grad(out).array() * (sg * (S(1) + xv * (S(1) - sg)));
        });
        return out;
    }

    NodeId gelu(NodeId x) {
        Mat<S> phi = value(x).unaryExpr(
            [](S v) { return S(0.5) * (S(1) + S(std::erf(static_cast<double>(v) * M_SQRT1_2))); });
        NodeId out = push((value(x).array() * phi.array()).matrix(), requires_grad(x));
        set_backward(out, [this, x, out, phi = std::move(phi)] {
            if (!requires_grad(x)) {
                return;
            }
            const auto xv = value(x).array();
            const S inv_sqrt_2pi = S(0.3989422804014327);
            auto pdf = (-S(0.5) * xv.square()).exp() * inv_sqrt_2pi;
            grad_ref(x).array() += grad(out).array() * (phi.array() + xv * pdf);
        });
        return out;
    }

    NodeId softmax_rows(NodeId x) {
        const Mat<S>& in = value(x);
        Mat<S> y(in.rows(), in.cols());
        for (Eigen::Index r = 0; r < in.rows(); ++r) {
            const S m = in.row(r).maxCoeff();
            y.row(r) = (in.row(r).array() - m).exp();
            y.row(r) /= y.row(r).sum();
        }
        NodeId out = push(std::move(y), requires_grad(x));
        set_backward(out, [this, x, out] {
            if (!requires_grad(x)) {
                return;
            }
            const Mat<S>& g = grad(out);
            const Mat<S>& y = value(out);
            Mat<S>& gx = grad_ref(x);
            for (Eigen::Index r = 0; r < g.rows(); ++r) {
                const S dot = (g.row(r).array() * y.row(r).array()).sum();
                gx.row(r).array() += (g.row(r).array() - dot) * y.row(r).array();
            }
        });
        return out;
    }

    NodeId slice_rows(NodeId x, Eigen::Index start, Eigen::Index count) {
        require(start >= 0 && start + count <= value(x).rows(), ErrorCode::ShapeMismatch,
                "row slice out of range");
        NodeId out = push(value(x).middleRows(start, count), requires_grad(x));
        set_backward(out, [this, x, out, start, count] {
            if (requires_grad(x)) {
                grad_ref(x).middleRows(start, count).noalias() += grad(out);
            }
        });
        return out;
    }

    NodeId slice_cols(NodeId x, Eigen::Index start, Eigen::Index count) {
        require(start >= 0 && start + count <= value(x).cols(), ErrorCode::ShapeMismatch,
                "col slice out of range");
        NodeId out = push(value(x).middleCols(start, count), requires_grad(x));
        set_backward(out, [this, x, out, start, count] {
            if (requires_grad(x)) {
                grad_ref(x).middleCols(start, count).noalias() += grad(out);
            }
        });
        return out;
    }

    NodeId concat_rows(NodeId a, NodeId b) {
        require(value(a).cols() == value(b).cols(), ErrorCode::ShapeMismatch,
                "concat_rows column mismatch");
        Mat<S> v(value(a).rows() + value(b).rows(), value(a).cols());
        v.topRows(value(a).rows()) = value(a);
        v.bottomRows(value(b).rows()) = value(b);
        NodeId out = push(std::move(v), requires_grad(a) || requires_grad(b));
        set_backward(out, [this, a, b, out] {
            const Mat<S>& g = grad(out);
            if (requires_grad(a)) {
                grad_ref(a).noalias() += g.topRows(value(a).rows());
            }
            if (requires_grad(b)) {
                grad_ref(b).noalias() += g.bottomRows(value(b).rows());
            }
        });
        return out;
    }

    // Value copy with no gradient flow.
    NodeId detach(NodeId x) { return constant(value(x)); }

    // Mean cross-entropy over rows of logits against integer labels.
    NodeId ce_loss(NodeId logits, std::vector<int> labels) {
        const Mat<S>& l = value(logits);
        require(l.rows() == static_cast<Eigen::Index>(labels.size()), ErrorCode::ShapeMismatch,
                "one label per logits row required");
        const Eigen::Index rows = l.rows();
        S total = S(0);
        for (Eigen::Index r = 0; r < rows; ++r) {
            const int y = labels[static_cast<size_t>(r)];
            require(y >= 0 && y < l.cols(), ErrorCode::InvalidConfig, "label out of range");
            const S m = l.row(r).maxCoeff();
            const S lse = m + std::log((l.row(r).array() - m).exp().sum());
            total += lse - l(r, y);
        }
        Mat<S> v(1, 1);
        v(0, 0) = total / static_cast<S>(rows);
        NodeId out = push(std::move(v), requires_grad(logits));
        set_backward(out, [this, logits, out, labels = std::move(labels)] {
            if (!requires_grad(logits)) {
                return;
            }
            const Mat<S>& l = value(logits);
            const S g = grad(out)(0, 0) / static_cast<S>(l.rows());
            Mat<S>& gl = grad_ref(logits);
            for (Eigen::Index r = 0; r < l.rows(); ++r) {
                const S m = l.row(r).maxCoeff();
                Eigen::Array<S, 1, Eigen::Dynamic> p = (l.row(r).array() - m).exp();
                p /= p.sum();
                gl.row(r).array() += g * p;
                gl(r, labels[static_cast<size_t>(r)]) -= g;
            }
        });
        return out;
    }

    // Mean squared error against a constant target.
    NodeId mse_loss(NodeId pred, Mat<S> target) {
        const Mat<S>& p = value(pred);
        require(p.rows() == target.rows() && p.cols() == target.cols(), ErrorCode::ShapeMismatch,
                "mse operands differ in shape");
        Mat<S> v(1, 1);
        v(0, 0) = (p - target).array().square().mean();
        NodeId out = push(std::move(v), requires_grad(pred));
        set_backward(out, [this, pred, out, target = std::move(target)] {
            if (!requires_grad(pred)) {
                return;
            }
            const Mat<S>& p = value(pred);
            const S g = grad(out)(0, 0) * S(2) / static_cast<S>(p.size());
            grad_ref(pred).noalias() += g * (p - target);
        });
        return out;
    }

    // Registers a custom node; fn (optionally installed later through
    // set_backward_fn) runs during backward with output grads available.
    NodeId custom(Mat<S> v, bool req, std::function<void()> fn) {
        NodeId out = push(std::move(v), req);
        if (fn) {
            set_backward(out, std::move(fn));
        }
        return out;
    }

    void set_backward_fn(NodeId id, std::function<void()> fn) { set_backward(id, std::move(fn)); }

    Mat<S>& grad_ref(NodeId id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.size() == 0) {
            n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
        }
        return n.grad;
    }

    // Seeds d(loss) = 1, walks the graph in reverse and folds parameter
    // gradients back into the store.
    void backward(NodeId loss) {
        require(value(loss).rows() == 1 && value(loss).cols() == 1, ErrorCode::ShapeMismatch,
                "backward root must be scalar");
        require(!backward_done_, ErrorCode::InvalidConfig, "tape backward already ran");
        backward_done_ = true;
        grad_ref(loss)(0, 0) = S(1);
        for (size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (n.backward && n.requires_grad && n.grad.size() != 0) {
                n.backward();
            }
        }
        if (store_ != nullptr) {
            for (const auto& [entry_idx, node_id] : param_nodes_) {
                const Node& n = nodes_[static_cast<size_t>(node_id)];
                if (n.grad.size() != 0) {
                    store_->grad_view(entry_idx) += n.grad;
                }
            }
        }
    }

private:
    struct Node {
        Mat<S> value;
        Mat<S> grad;
        std::function<void()> backward;
        bool requires_grad = false;
    };

    NodeId push(Mat<S> v, bool req) {
        nodes_.push_back(Node{std::move(v), {}, nullptr, req});
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    void set_backward(NodeId id, std::function<void()> fn) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.requires_grad) {
            n.backward = std::move(fn);
        }
    }

    ParamStore<S>* store_ = nullptr;
    std::vector<Node> nodes_;
    std::unordered_map<int, NodeId> param_nodes_;
    bool backward_done_ = false;
};

}  // namespace vedit
