// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
//
// Operator entry point: synthetic data generation, training, evaluation and
// ablation sweeps. Exit codes: 0 success, 2 usage, 3 data error, 4 numerical
// failure.
#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vedit/data_io.hpp"
#include "vedit/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using nlohmann::json;
using namespace vedit;

// Flat-JSON config files: {"flag-name": value, ...}, overridable by flags.
class JsonConfig : public CLI::Config {
public:
    std::string to_config(const CLI::App*, bool, bool, std::string) const override {
        return "{}\n";
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        json data;
        try {
            input >> data;
        } catch (const json::exception& e) {
            throw CLI::FileError(std::string("config is not valid JSON: ") + e.what());
        }
        std::vector<CLI::ConfigItem> out;
        collect(data, {}, out);
        return out;
    }

private:
    // Nested objects scope options to subcommands:
    // {"gen-data": {"tasks": 3}} configures `gen-data --tasks 3`.
    static void collect(const json& node, std::vector<std::string> parents,
                        std::vector<CLI::ConfigItem>& out) {
        for (const auto& [key, value] : node.items()) {
            if (value.is_object()) {
                auto deeper = parents;
                deeper.push_back(key);
                collect(value, deeper, out);
                continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = key;
            if (value.is_string()) {
                item.inputs = {value.get<std::string>()};
            } else if (value.is_boolean()) {
                item.inputs = {value.get<bool>() ? "true" : "false"};
            } else {
                item.inputs = {value.dump()};
            }
            out.push_back(std::move(item));
        }
    }
};

int exit_code_for(const VeditError& e) {
    switch (e.code()) {
        case ErrorCode::NonFiniteLoss:
        case ErrorCode::NonFiniteValue:
            return 4;
        case ErrorCode::UnknownSweepAxis:
        case ErrorCode::InvalidConfig:
        case ErrorCode::InvalidSteps:
            return 2;
        default:
            return 3;
    }
}

struct GenDataArgs {
    std::string out;
    SyntheticConfig cfg;
    std::string transition = "cycle";
};

void run_gen_data(const GenDataArgs& args) {
    SyntheticConfig cfg = args.cfg;
    cfg.transition = parse_transition(args.transition);
    auto [train, val] = gen_synthetic(cfg);
    write_dataset(train, args.out + "_train");
    write_dataset(val, args.out + "_val");
    std::printf("%s_train.json\n%s_val.json\n", args.out.c_str(), args.out.c_str());
}

struct TrainArgs {
    std::string data;
    std::string out_dir;
    std::string task = "forecast";
    std::string objective = "cross-entropy";
    std::string schedule = "warmup-cosine";
    std::string log_path;
    std::string resume;
    int epochs = 30;
    int batch = 16;
    int layers = 2;
    int hidden = 64;
    int heads = 4;
    int freq_dim = 64;
    int steps = 24;
    double cfg_scale = 7.0;
    double cfg_drop = 0.1;
    double lr_start = 1e-4;
    double lr_peak = 3e-3;
    double lr_final = 3e-4;
    double warmup_epochs = 1.0;
    int horizon = 3;
    int z = 1;
    int pooler_heads = 1;
    bool deep_pooler = false;
    double stop_at_acc = -1.0;
    int eval_every = 1;
    uint64_t seed = 0;
    std::string attention = "joint";
    bool verbose = false;
};

AttentionVariant parse_attention(const std::string& s) {
    if (s == "joint") return AttentionVariant::Joint;
    if (s == "self") return AttentionVariant::Self;
    if (s == "cross") return AttentionVariant::Cross;
    raise(ErrorCode::InvalidConfig, "unknown attention variant " + s);
}

void run_train(const TrainArgs& args) {
    const Dataset train = read_dataset(args.data + "_train");
    const Dataset val = read_dataset(args.data + "_val");
    const Task task = parse_task(args.task);

    Trainer::Init init;
    init.model.layers = args.layers;
    init.model.hidden_dim = args.hidden;
    require(args.heads >= 1 && args.hidden % args.heads == 0, ErrorCode::InvalidConfig,
            "--heads must divide --hidden");
    init.model.attn_heads = args.heads;
    init.model.head_dim = args.hidden / args.heads;
    init.model.max_len = train.seq_len + 1;  // +1 for the task-summary slot
    init.model.token_dim = train.dim;
    init.model.tokens_per_clip = train.tokens_per_clip;
    init.model.timestep_freq_dim = args.freq_dim;
    init.model.attention = parse_attention(args.attention);
    const int classes = task == Task::TaskClassify ? train.num_tasks : train.num_steps;
    init.pooler = PoolerConfig{train.dim, classes, args.pooler_heads, args.deep_pooler};
    init.train.epochs = args.epochs;
    init.train.batch_size = args.batch;
    init.train.lr_warmup_start = args.lr_start;
    init.train.lr_peak = args.lr_peak;
    init.train.lr_final = args.lr_final;
    init.train.warmup_epochs = args.warmup_epochs;
    if (args.schedule == "warmup-cosine") {
        init.train.schedule = LrSchedule::WarmupCosine;
    } else if (args.schedule == "warmup-constant") {
        init.train.schedule = LrSchedule::WarmupConstant;
    } else {
        raise(ErrorCode::InvalidConfig, "unknown schedule " + args.schedule);
    }
    if (args.objective == "cross-entropy" || args.objective == "ce") {
        init.train.objective = Objective::CrossEntropy;
    } else if (args.objective == "masked-recon") {
        init.train.objective = Objective::MaskedReconstruction;
    } else {
        raise(ErrorCode::InvalidConfig, "unknown objective " + args.objective);
    }
    init.train.cfg_drop_prob = args.cfg_drop;
    init.train.denoise_steps = args.steps;
    init.denoise.steps = args.steps;
    init.denoise.cfg_scale = static_cast<float>(args.cfg_scale);
    init.denoise.track_gradients = true;
    init.seed = args.seed;

    Trainer trainer(init);
    if (!args.resume.empty()) {
        const LoadedCheckpoint ckpt = load_checkpoint(args.resume);
        trainer.load_values(ckpt.store);
    }

    FitOptions opts;
    opts.task.task = task;
    opts.task.horizon = args.horizon;
    opts.task.anticipate_z = args.z;
    opts.stop_at_val_metric = args.stop_at_acc;
    opts.eval_every = args.eval_every;
    opts.csv_path = args.log_path;
    opts.checkpoint_dir = args.out_dir;
    opts.verbose = args.verbose;
    const FitResult res = fit(trainer, train, val, opts);

    json summary;
    summary["epochs_run"] = res.epochs.size();
    summary["steps"] = res.steps;
    summary["final_train_loss"] = res.final_train_loss;
    summary["final_val_metric"] = res.final_val_metric;
    summary["wall_ms"] = res.wall_ms;
    summary["stopped_early"] = res.stopped_early;
    summary["checkpoint"] = (std::filesystem::path(args.out_dir) / "final.vedt").string();
    std::cout << summary.dump(1, '\t') << "\n";
}

struct EvalArgs {
    std::string ckpt;
    std::string data;
    std::string split = "val";
    std::string predictions;
    std::string task = "forecast";
    std::string out;
    int horizon = 3;
    int candidates = 5;
    int z = 1;
    int batch = 64;
    int steps = 24;
    double cfg_scale = 7.0;
    int pooler_heads = 1;
    bool shuffle_conditioning = false;
    uint64_t seed = 0;
};

std::vector<PredictionRecord> read_prediction_records(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::IoError, "cannot open " + path);
    json data;
    try {
        in >> data;
    } catch (const json::exception& e) {
        raise(ErrorCode::CorruptManifest, e.what());
    }
    std::vector<PredictionRecord> records;
    try {
        for (const json& rec : data.at("records")) {
            PredictionRecord r;
            r.ground_truth = rec.at("gt").get<std::vector<int>>();
            r.candidates = rec.at("candidates").get<std::vector<std::vector<int>>>();
            records.push_back(std::move(r));
        }
    } catch (const json::exception& e) {
        raise(ErrorCode::CorruptManifest, e.what());
    }
    return records;
}

void run_eval(const EvalArgs& args) {
    const Task task = parse_task(args.task);
    EvalReport report;
    if (!args.predictions.empty()) {
        report = score_records(task, read_prediction_records(args.predictions));
    } else {
        require(!args.ckpt.empty() && !args.data.empty(), ErrorCode::InvalidConfig,
                "eval needs --ckpt and --data (or --predictions)");
        const Dataset ds = read_dataset(args.data + "_" + args.split);
        LoadedCheckpoint ckpt = load_checkpoint(args.ckpt);
        for (const std::string& name : ckpt.ignored) {
            std::fprintf(stderr, "warning: ignoring unknown tensor %s\n", name.c_str());
        }
        // Head geometry comes from the stored tensors; --pooler-heads must
        // match the training-time value (it does not change tensor shapes).
        const int head_idx = ckpt.store.find("pooler.head.weight");
        require(head_idx >= 0, ErrorCode::MissingTensor, "checkpoint has no classifier head");
        PoolerConfig pcfg;
        pcfg.input_dim = ckpt.config.token_dim;
        pcfg.classes = ckpt.store.entry(head_idx).cols;
        pcfg.heads = args.pooler_heads;
        pcfg.deep = ckpt.store.find("pooler.block0.attn_q.weight") >= 0;
        Rng dummy(0);
        const PoolerParamIds pids =
            register_pooler_params(ckpt.store, pcfg, dummy, ParamBind::Resolve);

        DenoiseConfig dcfg;
        dcfg.steps = args.steps;
        dcfg.cfg_scale = static_cast<float>(args.cfg_scale);
        EvalOptions opts;
        opts.task.task = task;
        opts.task.horizon = args.horizon;
        opts.task.anticipate_z = args.z;
        opts.task.candidates = args.candidates;
        opts.batch = args.batch;
        opts.seed = args.seed;
        opts.shuffle_conditioning = args.shuffle_conditioning;
        report = evaluate(ds, ckpt.store, ckpt.ids, pids, ckpt.config, pcfg, dcfg, opts);
    }
    json out;
    out["task"] = task_name(report.task);
    out["num_samples"] = report.num_samples;
    out["metrics"] = report.metrics;
    out["primary"] = report.primary;
    const std::string text = out.dump(1, '\t') + "\n";
    if (args.out.empty()) {
        std::cout << text;
    } else {
        std::ofstream f(args.out, std::ios::trunc);
        require(f.good(), ErrorCode::IoError, "cannot write " + args.out);
        f << text;
    }
}

struct AblateArgs {
    std::string axis = "attention";
    std::string out;
    int seeds = 3;
    int epochs = 150;
    uint64_t base_seed = 1000;
    bool verbose = false;
};

void run_ablate(const AblateArgs& args) {
    AblationOptions opts;
    opts.axis = parse_sweep_axis(args.axis);
    opts.num_seeds = args.seeds;
    opts.epochs = args.epochs;
    opts.base_seed = args.base_seed;
    opts.verbose = args.verbose;
    const auto rows = run_ablation(opts);
    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!args.out.empty()) {
        file.open(args.out, std::ios::trunc);
        require(file.good(), ErrorCode::IoError, "cannot write " + args.out);
        out = &file;
    }
    *out << "axis,value,seed,final_train_loss,val_accuracy,wall_ms\n";
    for (const AblationRow& r : rows) {
        *out << r.axis << "," << r.value << "," << r.seed << "," << r.final_train_loss << ","
             << r.val_accuracy << "," << r.wall_ms << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Latent-space procedural video prediction engine"};
    app.require_subcommand(1);
    app.config_formatter(std::make_shared<JsonConfig>());
    app.set_config("--config", "", "JSON config file (flags override it)");

    GenDataArgs gen;
    CLI::App* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic procedural dataset");
    gen_cmd->add_option("--out", gen.out, "Output base path")->required();
    gen_cmd->add_option("--tasks", gen.cfg.num_tasks, "Number of tasks");
    gen_cmd->add_option("--vocab", gen.cfg.vocab, "Step vocabulary size");
    gen_cmd->add_option("--len", gen.cfg.seq_len, "Clips per sequence");
    gen_cmd->add_option("--k", gen.cfg.tokens_per_clip, "Tokens per clip");
    gen_cmd->add_option("--dim", gen.cfg.dim, "Embedding channels");
    gen_cmd->add_option("--noise", gen.cfg.noise_std, "Embedding noise std");
    gen_cmd->add_option("--train", gen.cfg.train_samples, "Training samples");
    gen_cmd->add_option("--val", gen.cfg.val_samples, "Validation samples");
    gen_cmd->add_option("--transition", gen.transition, "markov | cycle");
    gen_cmd->add_option("--seed", gen.cfg.seed, "Generation seed");

    TrainArgs train;
    CLI::App* train_cmd = app.add_subcommand("train", "Train on a generated dataset");
    train_cmd->add_option("--data", train.data, "Dataset base path (expects _train/_val)")
        ->required();
    train_cmd->add_option("--out", train.out_dir, "Checkpoint directory")->required();
    train_cmd->add_option("--task", train.task, "forecast | plan | task-classify | anticipate");
    train_cmd->add_option("--objective", train.objective, "cross-entropy | masked-recon");
    train_cmd->add_option("--epochs", train.epochs, "Training epochs");
    train_cmd->add_option("--batch", train.batch, "Batch size");
    train_cmd->add_option("--layers", train.layers, "Transformer blocks");
    train_cmd->add_option("--hidden", train.hidden, "Hidden width");
    train_cmd->add_option("--heads", train.heads, "Attention heads");
    train_cmd->add_option("--freq-dim", train.freq_dim, "Timestep feature width");
    train_cmd->add_option("--steps", train.steps, "Denoising steps T");
    train_cmd->add_option("--cfg-scale", train.cfg_scale, "Guidance scale");
    train_cmd->add_option("--cfg-drop", train.cfg_drop, "Conditioning dropout");
    train_cmd->add_option("--lr-start", train.lr_start, "Warmup start LR");
    train_cmd->add_option("--lr-peak", train.lr_peak, "Peak LR");
    train_cmd->add_option("--lr-final", train.lr_final, "Final LR");
    train_cmd->add_option("--warmup-epochs", train.warmup_epochs, "Warmup length in epochs");
    train_cmd->add_option("--schedule", train.schedule, "warmup-cosine | warmup-constant");
    train_cmd->add_option("--attention", train.attention, "joint | self | cross");
    train_cmd->add_option("--horizon", train.horizon, "Planning horizon");
    train_cmd->add_option("--Z", train.z, "Anticipation clips");
    train_cmd->add_option("--pooler-heads", train.pooler_heads, "Classifier attention heads");
    train_cmd->add_flag("--deep-pooler", train.deep_pooler, "Three self-attention prefix blocks");
    train_cmd->add_option("--stop-at-acc", train.stop_at_acc, "Early stop threshold");
    train_cmd->add_option("--eval-every", train.eval_every, "Epochs between val evals");
    train_cmd->add_option("--log", train.log_path, "CSV step log path");
    train_cmd->add_option("--resume", train.resume, "Checkpoint to resume from");
    train_cmd->add_option("--seed", train.seed, "Training seed");
    train_cmd->add_flag("--verbose", train.verbose, "Per-epoch stderr log");

    EvalArgs eval;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint or a predictions file");
    eval_cmd->add_option("--ckpt", eval.ckpt, "Checkpoint path");
    eval_cmd->add_option("--data", eval.data, "Dataset base path");
    eval_cmd->add_option("--split", eval.split, "train | val");
    eval_cmd->add_option("--predictions", eval.predictions, "Prediction records JSON");
    eval_cmd->add_option("--task", eval.task, "forecast | plan | task-classify | anticipate");
    eval_cmd->add_option("--horizon", eval.horizon, "Planning horizon");
    eval_cmd->add_option("--K", eval.candidates, "Anticipation candidates");
    eval_cmd->add_option("--Z", eval.z, "Anticipation clips");
    eval_cmd->add_option("--steps", eval.steps, "Denoising steps T");
    eval_cmd->add_option("--cfg-scale", eval.cfg_scale, "Guidance scale");
    eval_cmd->add_option("--batch", eval.batch, "Evaluation batch size");
    eval_cmd->add_option("--pooler-heads", eval.pooler_heads, "Classifier attention heads");
    eval_cmd->add_flag("--shuffle-conditioning", eval.shuffle_conditioning,
                       "Condition each sample on its neighbour (control experiment)");
    eval_cmd->add_option("--seed", eval.seed, "Noise seed");
    eval_cmd->add_option("--out", eval.out, "Report path (stdout otherwise)");

    AblateArgs ablate;
    CLI::App* ablate_cmd = app.add_subcommand("ablate", "Sweep one architecture axis");
    ablate_cmd->add_option("--axis", ablate.axis, "attention | steps | layers");
    ablate_cmd->add_option("--seeds", ablate.seeds, "Paired seeds");
    ablate_cmd->add_option("--epochs", ablate.epochs, "Epochs per run");
    ablate_cmd->add_option("--base-seed", ablate.base_seed, "First seed");
    ablate_cmd->add_option("--out", ablate.out, "CSV path (stdout otherwise)");
    ablate_cmd->add_flag("--verbose", ablate.verbose, "Progress on stderr");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);  // --help and friends
        }
        app.exit(e);
        return 2;
    }

    try {
        if (gen_cmd->parsed()) {
            run_gen_data(gen);
        } else if (train_cmd->parsed()) {
            run_train(train);
        } else if (eval_cmd->parsed()) {
            run_eval(eval);
        } else if (ablate_cmd->parsed()) {
            run_ablate(ablate);
        }
    } catch (const VeditError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
