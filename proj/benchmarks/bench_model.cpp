// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "vedit/denoiser.hpp"
#include "vedit/training.hpp"

namespace {

using namespace vedit;

ModelConfig bench_config(int layers, int hidden) {
    ModelConfig cfg;
    cfg.layers = layers;
    cfg.hidden_dim = hidden;
    cfg.attn_heads = hidden / 16;
    cfg.head_dim = 16;
    cfg.max_len = 16;
    cfg.token_dim = 16;
    cfg.tokens_per_clip = 1;
    cfg.timestep_freq_dim = 64;
    return cfg;
}

ProcedureSample bench_sample(const ModelConfig& cfg, int n) {
    Rng rng(5);
    ProcedureSample s;
    for (int i = 0; i < n; ++i) {
        EmbeddingMatrix clip(cfg.tokens_per_clip, cfg.token_dim);
        rng.fill_normal(clip.data);
        s.clips.push_back(clip);
        s.step_labels.push_back(i % 4);
        s.target_mask.push_back(i == n - 1);
    }
    return s;
}

void BM_forward(benchmark::State& state) {
    const ModelConfig cfg = bench_config(static_cast<int>(state.range(0)), 64);
    Rng rng(1);
    ParamStore<float> store;
    const VeditParamIds ids = register_vedit_params(store, cfg, rng);
    const ProcedureSample s = bench_sample(cfg, 9);
    std::vector<MatF> targets{s.clips.back().data};
    std::vector<MatF> seen;
    for (int i = 0; i < 8; ++i) {
        seen.push_back(s.clips[static_cast<size_t>(i)].data);
    }
    for (auto _ : state) {
        auto vel = vedit_forward<float>(targets, seen, {8}, {0, 1, 2, 3, 4, 5, 6, 7}, 0.5, store,
                                        ids, cfg);
        benchmark::DoNotOptimize(vel);
    }
}
BENCHMARK(BM_forward)->Arg(1)->Arg(2)->Arg(6);

void BM_denoise(benchmark::State& state) {
    const ModelConfig cfg = bench_config(2, 64);
    Rng rng(2);
    ParamStore<float> store;
    const VeditParamIds ids = register_vedit_params(store, cfg, rng);
    const ProcedureSample s = bench_sample(cfg, 9);
    const DenoiseConfig dcfg{static_cast<int>(state.range(0)), 7.0f, false};
    Rng noise(3);
    for (auto _ : state) {
        auto out = denoise(s, store, ids, cfg, dcfg, noise);
        benchmark::DoNotOptimize(out);
    }
}
BENCHMARK(BM_denoise)->Arg(1)->Arg(4)->Arg(24);

void BM_ce_train_step(benchmark::State& state) {
    Trainer::Init init;
    init.model = bench_config(2, 64);
    init.pooler = PoolerConfig{16, 12, 1, false};
    init.train.denoise_steps = 24;
    init.denoise.steps = 24;
    init.denoise.cfg_scale = 7.0f;
    init.seed = 4;
    Trainer trainer(init);
    std::vector<ProcedureSample> samples;
    for (int i = 0; i < 16; ++i) {
        samples.push_back(bench_sample(trainer.model_config(), 9));
    }
    std::vector<const ProcedureSample*> batch;
    for (auto& s : samples) {
        batch.push_back(&s);
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(trainer.ce_train_step(batch, Task::Forecast, 1e-3));
    }
}
BENCHMARK(BM_ce_train_step)->Unit(benchmark::kMillisecond);

}  // namespace
