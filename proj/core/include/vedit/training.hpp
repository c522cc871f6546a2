// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
//
// Training: LR schedule, AdamW, the cross-entropy and masked-reconstruction
// objectives differentiated through the full denoising loop, and the
// finite-difference gradient checker.
#pragma once

#include "vedit/common.hpp"
#include "vedit/denoiser.hpp"
#include "vedit/heads.hpp"
#include "vedit/model.hpp"
#include "vedit/tape.hpp"
#include "vedit/tasks.hpp"
#include "vedit/types.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace vedit {

enum class LrSchedule { WarmupCosine, WarmupConstant };
enum class Objective { CrossEntropy, MaskedReconstruction };

struct TrainConfig {
    int epochs = 30;
    int batch_size = 16;
    double lr_warmup_start = 5e-6;
    double lr_peak = 5e-5;
    double lr_final = 5e-7;
    double warmup_epochs = 3.0;
    LrSchedule schedule = LrSchedule::WarmupCosine;
    Objective objective = Objective::CrossEntropy;
    double cfg_drop_prob = 0.1;
    int denoise_steps = 24;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;

    void validate() const {
        require(epochs >= 1 && batch_size >= 1, ErrorCode::InvalidConfig,
                "epochs and batch_size must be >= 1");
        require(lr_warmup_start > 0.0 && lr_warmup_start <= lr_peak, ErrorCode::InvalidConfig,
                "warmup must start in (0, peak]");
        require(lr_final <= lr_peak, ErrorCode::InvalidConfig, "final LR must not exceed peak");
        require(warmup_epochs >= 0.0, ErrorCode::InvalidConfig, "warmup_epochs must be >= 0");
        require(cfg_drop_prob >= 0.0 && cfg_drop_prob <= 1.0, ErrorCode::InvalidConfig,
                "cfg_drop_prob must lie in [0, 1]");
    }
};

// Linear warmup to the peak, then cosine decay to the final LR (or a constant
// plateau). Continuous at the warmup boundary.
inline double lr_at(int64_t step, int64_t total_steps, const TrainConfig& cfg) {
    require(step >= 0 && step <= total_steps, ErrorCode::InvalidConfig,
            "step outside [0, total_steps]");
    const double warmup_steps =
        static_cast<double>(total_steps) * cfg.warmup_epochs / static_cast<double>(cfg.epochs);
    if (warmup_steps > 0.0 && static_cast<double>(step) < warmup_steps) {
        const double t = static_cast<double>(step) / warmup_steps;
        return cfg.lr_warmup_start + (cfg.lr_peak - cfg.lr_warmup_start) * t;
    }
    if (cfg.schedule == LrSchedule::WarmupConstant) {
        return cfg.lr_peak;
    }
    const double span = static_cast<double>(total_steps) - warmup_steps;
    const double progress =
        span <= 0.0 ? 1.0 : (static_cast<double>(step) - warmup_steps) / span;
    return cfg.lr_final + 0.5 * (cfg.lr_peak - cfg.lr_final) * (1.0 + std::cos(M_PI * progress));
}

// Decoupled-weight-decay Adam over the flat parameter vector, with global
// gradient-norm clipping. Moments are kept in double.
template <typename S>
class AdamW {
public:
    AdamW(size_t n, const TrainConfig& cfg)
        : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

    void step(ParamStore<S>& store, double lr) {
        std::vector<S>& grad = store.grad();
        std::vector<S>& data = store.data();
        double sq = 0.0;
        for (S g : grad) {
            sq += static_cast<double>(g) * static_cast<double>(g);
        }
        const double norm = std::sqrt(sq);
        const double clip = cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip
                                ? cfg_.grad_clip / norm
                                : 1.0;
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (size_t i = 0; i < data.size(); ++i) {
            const double g = static_cast<double>(grad[i]) * clip;
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
            const double m_hat = m_[i] / bc1;
            const double v_hat = v_[i] / bc2;
            const double p = static_cast<double>(data[i]);
            data[i] = static_cast<S>(p - lr * (m_hat / (std::sqrt(v_hat) + cfg_.adam_eps) +
                                               cfg_.weight_decay * p));
        }
    }

    int64_t steps_taken() const { return t_; }

private:
    TrainConfig cfg_;
    int64_t t_ = 0;
    std::vector<double> m_;
    std::vector<double> v_;
};

// A structurally uniform batch prepared for one optimization step: noise and
// drop decisions are already drawn, so the loss is a pure function of the
// parameters (which is what the gradient checker needs).
template <typename S>
struct PreparedBatch {
    DenoiseBatch<S> inputs;
    Mat<S> noise;             // (batch * Nt * k) x D
    std::vector<int> labels;  // one per target slot, batch-major (CE objective)
    Mat<S> recon_target;      // (batch * Nt * k) x D (reconstruction objective)
};

// Stacks samples (all sharing one mask layout) into a PreparedBatch.
// Labels follow slot_labels(); noise and conditioning dropout come from rng.
template <typename S>
PreparedBatch<S> prepare_batch(const std::vector<const ProcedureSample*>& batch, Task task,
                               const ModelConfig& cfg, double cfg_drop_prob, Rng& rng) {
    require(!batch.empty(), ErrorCode::Empty, "empty training batch");
    const ProcedureSample& first = *batch.front();
    const int k = cfg.tokens_per_clip;
    PreparedBatch<S> out;
    out.inputs.batch = static_cast<int>(batch.size());
    out.inputs.target_clips = first.target_indices();
    out.inputs.seen_clips = first.seen_indices();
    const int nt = static_cast<int>(out.inputs.target_clips.size());
    const int ns = static_cast<int>(out.inputs.seen_clips.size());
    require(nt >= 1 && ns >= 1, ErrorCode::EmptyTargetSet, "batch needs seen and target clips");
    out.inputs.seen_tokens.resize(static_cast<Eigen::Index>(batch.size()) * ns * k, cfg.token_dim);
    out.recon_target.resize(static_cast<Eigen::Index>(batch.size()) * nt * k, cfg.token_dim);
    for (size_t b = 0; b < batch.size(); ++b) {
        const ProcedureSample& s = *batch[b];
        require(s.target_indices() == out.inputs.target_clips &&
                    s.seen_indices() == out.inputs.seen_clips,
                ErrorCode::ShapeMismatch, "batch samples must share one mask layout");
        for (int i = 0; i < ns; ++i) {
            out.inputs.seen_tokens.middleRows(
                (static_cast<Eigen::Index>(b) * ns + i) * k, k) =
                s.clips[static_cast<size_t>(out.inputs.seen_clips[static_cast<size_t>(i)])]
                    .data.template cast<S>();
        }
        for (int i = 0; i < nt; ++i) {
            out.recon_target.middleRows((static_cast<Eigen::Index>(b) * nt + i) * k, k) =
                s.clips[static_cast<size_t>(out.inputs.target_clips[static_cast<size_t>(i)])]
                    .data.template cast<S>();
        }
        for (int label : slot_labels(s, task)) {
            out.labels.push_back(label);
        }
    }
    out.noise.resize(static_cast<Eigen::Index>(batch.size()) * nt * k, cfg.token_dim);
    rng.fill_normal(out.noise);
    out.inputs.drop_cond.resize(batch.size());
    for (size_t b = 0; b < batch.size(); ++b) {
        out.inputs.drop_cond[b] = rng.uniform01() < cfg_drop_prob;
    }
    return out;
}

// Mean cross-entropy over target slots after a full guided denoise.
// Gradients (when requested) are accumulated into the store.
template <typename S>
S ce_loss_through_denoiser(ParamStore<S>& store, const VeditParamIds& ids,
                           const PoolerParamIds& pids, const ModelConfig& cfg,
                           const PoolerConfig& pcfg, const RopeTable<S>& rope,
                           const DenoiseConfig& dcfg, const PreparedBatch<S>& batch,
                           bool compute_grads, DetachMode detach = DetachMode::None) {
    Tape<S> tape(&store);
    NodeId state = denoise_batch_op(tape, batch.noise, batch.inputs, ids, cfg, rope, dcfg, detach);
    NodeId logits = attentive_pool_op(tape, state, cfg.tokens_per_clip, pids, pcfg);
    NodeId loss = tape.ce_loss(logits, batch.labels);
    const S value = tape.value(loss)(0, 0);
    require(std::isfinite(static_cast<double>(value)), ErrorCode::NonFiniteLoss,
            "cross-entropy loss is not finite");
    if (compute_grads) {
        tape.backward(loss);
    }
    return value;
}

// Mean squared error between denoised targets and their true embeddings.
template <typename S>
S recon_loss_through_denoiser(ParamStore<S>& store, const VeditParamIds& ids,
                              const ModelConfig& cfg, const RopeTable<S>& rope,
                              const DenoiseConfig& dcfg, const PreparedBatch<S>& batch,
                              bool compute_grads) {
    Tape<S> tape(&store);
    NodeId state = denoise_batch_op(tape, batch.noise, batch.inputs, ids, cfg, rope, dcfg);
    NodeId loss = tape.mse_loss(state, batch.recon_target);
    const S value = tape.value(loss)(0, 0);
    require(std::isfinite(static_cast<double>(value)), ErrorCode::NonFiniteLoss,
            "reconstruction loss is not finite");
    if (compute_grads) {
        tape.backward(loss);
    }
    return value;
}

// Owns parameters, optimizer state and rng streams for one training run.
class Trainer {
public:
    struct Init {
        ModelConfig model;
        PoolerConfig pooler;
        TrainConfig train;
        DenoiseConfig denoise;
        uint64_t seed = 0;
    };

    explicit Trainer(const Init& init)
        : model_cfg_(init.model),
          pooler_cfg_(init.pooler),
          train_cfg_(init.train),
          denoise_cfg_(init.denoise),
          rope_(RopeTable<float>::build(init.model.max_len, init.model.head_dim,
                                        init.model.rope_base)),
          init_rng_(init.seed),
          step_rng_(Rng(init.seed).fork(0x7261696e)) {
        train_cfg_.validate();
        denoise_cfg_.validate();
        ids_ = register_vedit_params(store_, model_cfg_, init_rng_);
        pooler_ids_ = register_pooler_params(store_, pooler_cfg_, init_rng_);
        adam_ = std::make_unique<AdamW<float>>(store_.data().size(), train_cfg_);
    }

    // One optimizer update on a uniform batch; returns the batch loss.
    float ce_train_step(const std::vector<const ProcedureSample*>& batch, Task task, double lr) {
        PreparedBatch<float> prep =
            prepare_batch<float>(batch, task, model_cfg_, train_cfg_.cfg_drop_prob, step_rng_);
        store_.zero_grad();
        const float loss = ce_loss_through_denoiser(store_, ids_, pooler_ids_, model_cfg_,
                                                    pooler_cfg_, rope_, denoise_cfg_, prep, true);
        adam_->step(store_, lr);
        return loss;
    }

    // Masked-reconstruction update: each sample re-masked to one uniformly
    // chosen target clip; loss is the MSE to the true embedding.
    float masked_recon_step(const std::vector<const ProcedureSample*>& batch, double lr) {
        require(!batch.empty(), ErrorCode::Empty, "empty training batch");
        const int n = batch.front()->length();
        const int target = static_cast<int>(step_rng_.uniform_int(static_cast<uint64_t>(n)));
        std::vector<ProcedureSample> views;
        views.reserve(batch.size());
        std::vector<const ProcedureSample*> ptrs;
        for (const ProcedureSample* s : batch) {
            require(s->length() == n, ErrorCode::ShapeMismatch,
                    "reconstruction batch must share sequence length");
            ProcedureSample v = *s;
            v.target_mask.assign(static_cast<size_t>(n), false);
            v.target_mask[static_cast<size_t>(target)] = true;
            views.push_back(std::move(v));
        }
        for (const ProcedureSample& v : views) {
            ptrs.push_back(&v);
        }
        PreparedBatch<float> prep =
            prepare_batch<float>(ptrs, Task::Forecast, model_cfg_, 0.0, step_rng_);
        store_.zero_grad();
        const float loss = recon_loss_through_denoiser(store_, ids_, model_cfg_, rope_,
                                                       denoise_cfg_, prep, true);
        adam_->step(store_, lr);
        return loss;
    }

    ParamStore<float>& store() { return store_; }
    const ParamStore<float>& store() const { return store_; }
    const VeditParamIds& ids() const { return ids_; }
    const PoolerParamIds& pooler_ids() const { return pooler_ids_; }
    const ModelConfig& model_config() const { return model_cfg_; }
    const PoolerConfig& pooler_config() const { return pooler_cfg_; }
    const TrainConfig& train_config() const { return train_cfg_; }
    const DenoiseConfig& denoise_config() const { return denoise_cfg_; }
    const RopeTable<float>& rope() const { return rope_; }
    Rng& step_rng() { return step_rng_; }

    // Replaces parameter values by name from another store (checkpoint resume).
    void load_values(const ParamStore<float>& src) {
        for (const auto& e : src.entries()) {
            const int idx = store_.find(e.name);
            if (idx < 0) {
                continue;
            }
            require(store_.entry(idx).rows == e.rows && store_.entry(idx).cols == e.cols,
                    ErrorCode::ShapeMismatch, "resume tensor shape mismatch for " + e.name);
            store_.view(idx) = src.view(src.find(e.name));
        }
    }

private:
    ModelConfig model_cfg_;
    PoolerConfig pooler_cfg_;
    TrainConfig train_cfg_;
    DenoiseConfig denoise_cfg_;
    ParamStore<float> store_;
    VeditParamIds ids_;
    PoolerParamIds pooler_ids_;
    RopeTable<float> rope_;
    Rng init_rng_;
    Rng step_rng_;
    std::unique_ptr<AdamW<float>> adam_;
};

// ---- Gradient checking -----------------------------------------------------

struct GradCheckReport {
    struct Item {
        std::string name;
        double max_rel_err = 0.0;
    };
    std::vector<Item> per_tensor;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

// Central finite differences against analytic gradients for every parameter
// tensor. loss_fn(with_grad) must zero + fill store gradients when asked and
// be deterministic across calls. The relative-error denominator is floored at
// denom_floor (1e-8 in float64; float32 needs a coarser floor because the
// perturbed losses themselves carry ~1e-7 relative rounding).
template <typename S>
GradCheckReport grad_check(ParamStore<S>& store, const std::function<S(bool)>& loss_fn,
                           double fd_step, double tolerance, double denom_floor = 1e-8) {
    store.zero_grad();
    loss_fn(true);
    const std::vector<S> analytic = store.grad();
    GradCheckReport report;
    report.tolerance = tolerance;
    for (int e = 0; e < store.count(); ++e) {
        const auto& entry = store.entry(e);
        GradCheckReport::Item item{entry.name, 0.0};
        for (int r = 0; r < entry.rows; ++r) {
            for (int c = 0; c < entry.cols; ++c) {
                const size_t flat = entry.offset + static_cast<size_t>(r) * entry.cols + c;
                const S saved = store.data()[flat];
                store.data()[flat] = saved + static_cast<S>(fd_step);
                const double up = static_cast<double>(loss_fn(false));
                store.data()[flat] = saved - static_cast<S>(fd_step);
                const double down = static_cast<double>(loss_fn(false));
                store.data()[flat] = saved;
                const double numeric = (up - down) / (2.0 * fd_step);
                const double a = static_cast<double>(analytic[flat]);
                const double denom = std::max({std::abs(a), std::abs(numeric), denom_floor});
                item.max_rel_err = std::max(item.max_rel_err, std::abs(a - numeric) / denom);
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, item.max_rel_err);
        report.per_tensor.push_back(std::move(item));
    }
    report.pass = report.max_rel_err <= tolerance;
    return report;
}

// The tiny-config CE-through-denoise gradient check from the test plan.
// Parameters are randomized (zero-init would hide upstream gradients behind
// the zero output head).
template <typename S>
GradCheckReport grad_check_tiny(double fd_step, double tolerance, double denom_floor,
                                uint64_t seed = 17) {
    ModelConfig cfg;
    cfg.layers = 1;
    cfg.hidden_dim = 8;
    cfg.attn_heads = 2;
    cfg.head_dim = 4;
    cfg.max_len = 4;
    cfg.token_dim = 4;
    cfg.tokens_per_clip = 1;
    cfg.timestep_freq_dim = 16;
    PoolerConfig pcfg{cfg.token_dim, 3, 1, false};
    Rng rng(seed);
    ParamStore<S> store;
    VeditParamIds ids = register_vedit_params(store, cfg, rng);
    PoolerParamIds pids = register_pooler_params(store, pcfg, rng);
    for (S& p : store.data()) {
        p += static_cast<S>(rng.normal() * 0.05);
    }
    const RopeTable<S> rope = RopeTable<S>::build(cfg.max_len, cfg.head_dim, cfg.rope_base);

    ProcedureSample sample;
    sample.task_label = 1;
    for (int i = 0; i < 3; ++i) {
        EmbeddingMatrix clip(cfg.tokens_per_clip, cfg.token_dim);
        MatF m(cfg.tokens_per_clip, cfg.token_dim);
        rng.fill_normal(m);
        clip.data = m;
        sample.clips.push_back(clip);
        sample.step_labels.push_back(i % 3);
        sample.target_mask.push_back(i == 2);
    }
    DenoiseConfig dcfg{2, 7.0f, true};
    Rng noise_rng(seed + 1);
    std::vector<const ProcedureSample*> batch{&sample};
    PreparedBatch<S> prep = prepare_batch<S>(batch, Task::Forecast, cfg, 0.0, noise_rng);

    auto loss_fn = [&](bool with_grad) -> S {
        if (with_grad) {
            store.zero_grad();
        }
        return ce_loss_through_denoiser(store, ids, pids, cfg, pcfg, rope, dcfg, prep, with_grad);
    };
    return grad_check<S>(store, loss_fn, fd_step, tolerance, denom_floor);
}

}  // namespace vedit
