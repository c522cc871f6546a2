// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end plumbing shared by the CLI, the tests and the acceptance suite:
// task evaluation over a dataset, the epoch training loop with CSV logging
// and per-epoch checkpoints, and the ablation sweep harness.
#pragma once

#include "vedit/data_io.hpp"
#include "vedit/metrics.hpp"
#include "vedit/tasks.hpp"
#include "vedit/training.hpp"

#include <map>
#include <string>
#include <vector>

namespace vedit {

struct EvalOptions {
    TaskOptions task;
    int batch = 64;
    uint64_t seed = 0;
    // Control experiment: condition each sample on the seen clips of the next
    // sample in the split instead of its own.
    bool shuffle_conditioning = false;
};

struct EvalReport {
    Task task = Task::Forecast;
    int num_samples = 0;
    std::map<std::string, double> metrics;
    // Primary scalar in [0, 1], higher is better (top-1, mAcc/100, or 1 - ED).
    double primary = 0.0;
};

EvalReport evaluate(const Dataset& ds, ParamStore<float>& store, const VeditParamIds& ids,
                    const PoolerParamIds& pids, const ModelConfig& mcfg, const PoolerConfig& pcfg,
                    const DenoiseConfig& dcfg, const EvalOptions& opts);

// Scores a prediction-record file's contents without running a model.
EvalReport score_records(Task task, const std::vector<PredictionRecord>& records);

struct FitOptions {
    TaskOptions task;
    double stop_at_val_metric = -1.0;  // early stop once primary >= this (if >= 0)
    int eval_every = 1;                // epochs between val evaluations (0 = never)
    int eval_batch = 64;
    std::string csv_path;              // step log: step,lr,loss,wallclock_ms
    std::string checkpoint_dir;        // per-epoch + final checkpoints when set
    uint64_t eval_seed = 9999;
    bool verbose = false;
};

struct EpochStat {
    int epoch = 0;
    double mean_loss = 0.0;
    double val_metric = -1.0;
    double wall_ms = 0.0;
};

struct FitResult {
    std::vector<EpochStat> epochs;
    double final_val_metric = -1.0;
    double final_train_loss = 0.0;
    int64_t steps = 0;
    double wall_ms = 0.0;
    bool stopped_early = false;
};

FitResult fit(Trainer& trainer, const Dataset& train, const Dataset& val, const FitOptions& opts);

// ---- Ablation sweeps -------------------------------------------------------

enum class SweepAxis { Attention, Steps, Layers };

SweepAxis parse_sweep_axis(const std::string& s);

struct AblationRow {
    std::string axis;
    std::string value;
    uint64_t seed = 0;
    double final_train_loss = 0.0;
    double val_accuracy = 0.0;  // primary metric in [0, 1]
    double wall_ms = 0.0;
};

struct AblationOptions {
    SweepAxis axis = SweepAxis::Attention;
    int num_seeds = 3;
    uint64_t base_seed = 1000;
    int epochs = 150;
    bool verbose = false;
};

// Trains/evaluates each swept configuration on the synthetic planning
// benchmark with paired seeds (every configuration sees identical data).
std::vector<AblationRow> run_ablation(const AblationOptions& opts);

}  // namespace vedit
