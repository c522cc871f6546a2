// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "vedit/denoiser.hpp"

#include <vector>

using namespace vedit;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.layers = 1;
    cfg.hidden_dim = 8;
    cfg.attn_heads = 2;
    cfg.head_dim = 4;
    cfg.max_len = 8;
    cfg.token_dim = 4;
    cfg.tokens_per_clip = 1;
    cfg.timestep_freq_dim = 16;
    return cfg;
}

ProcedureSample random_sample(const ModelConfig& cfg, int n, uint64_t seed) {
    Rng rng(seed);
    ProcedureSample s;
    for (int i = 0; i < n; ++i) {
        EmbeddingMatrix clip(cfg.tokens_per_clip, cfg.token_dim);
        rng.fill_normal(clip.data);
        s.clips.push_back(clip);
        s.step_labels.push_back(i % 3);
        s.target_mask.push_back(i == n - 1);
    }
    return s;
}

// Runs the loop with a test-double velocity: the true straight-path field
// eps - z0 (constant in sigma and state).
MatF oracle_denoise(const MatF& z0, const MatF& noise, int steps) {
    Tape<float> tape;
    const MatF true_velocity = noise - z0;
    DenoiseConfig dcfg{steps, 1.0f, false};
    auto velocity_fn = [&](NodeId, bool, double) { return tape.constant(true_velocity); };
    NodeId out = denoise_loop<float>(tape, noise, dcfg, velocity_fn);
    return tape.value(out);
}

}  // namespace

TEST_CASE("denoise with oracle velocity recovers z0 for T in {1, 4, 24}") {
    Rng rng(1);
    for (int steps : {1, 4, 24}) {
        for (int trial = 0; trial < 20; ++trial) {
            MatF z0(4, 16), noise(4, 16);
            rng.fill_normal(z0);
            rng.fill_normal(noise);
            const MatF out = oracle_denoise(z0, noise, steps);
            CHECK((out - z0).cwiseAbs().maxCoeff() < 1e-5f);
        }
    }
}

TEST_CASE("oracle velocity keeps the distance to z0 non-increasing") {
    Rng rng(2);
    MatF z0(3, 8), noise(3, 8);
    rng.fill_normal(z0);
    rng.fill_normal(noise);
    const SigmaSchedule sched = make_schedule({24, 1.0f});
    MatF state = noise;
    float prev = (state - z0).norm();
    for (int i = 0; i < sched.steps; ++i) {
        state = euler_step<float>(state, MatF(noise - z0), sched.sigmas[static_cast<size_t>(i)],
                                  sched.sigmas[static_cast<size_t>(i) + 1]);
        const float cur = (state - z0).norm();
        CHECK(cur <= prev + 1e-6f);
        prev = cur;
    }
}

TEST_CASE("T=1 and T=24 agree under oracle velocity") {
    Rng rng(3);
    MatF z0(2, 6), noise(2, 6);
    rng.fill_normal(z0);
    rng.fill_normal(noise);
    const MatF a = oracle_denoise(z0, noise, 1);
    const MatF b = oracle_denoise(z0, noise, 24);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("guidance scale 1 is bit-identical to the conditional-only path") {
    const ModelConfig cfg = tiny_config();
    Rng rng(4);
    ParamStore<float> store;
    const VeditParamIds ids = register_vedit_params(store, cfg, rng);
    for (float& p : store.data()) {
        p += 0.1f * static_cast<float>(rng.normal());
    }
    const RopeTable<float> rope = RopeTable<float>::build(cfg.max_len, cfg.head_dim, cfg.rope_base);
    const ProcedureSample sample = random_sample(cfg, 4, 5);

    DenoiseConfig dcfg{6, 1.0f, false};
    Rng noise_rng_a(77);
    const auto via_denoise = denoise(sample, store, ids, cfg, dcfg, noise_rng_a);

    // Reference: assemble the conditional-only loop from the building blocks.
    Rng noise_rng_b(77);
    MatF noise(cfg.tokens_per_clip, cfg.token_dim);
    noise_rng_b.fill_normal(noise);
    const SigmaSchedule sched = make_schedule({6, 1.0f});
    std::vector<MatF> seen;
    for (int idx : sample.seen_indices()) {
        seen.push_back(sample.clips[static_cast<size_t>(idx)].data);
    }
    MatF state = noise;
    for (int i = 0; i < sched.steps; ++i) {
        const auto vel = vedit_forward<float>({state}, seen, sample.target_indices(),
                                              sample.seen_indices(),
                                              sched.sigmas[static_cast<size_t>(i)], store, ids, cfg);
        state = euler_step<float>(state, vel[0], sched.sigmas[static_cast<size_t>(i)],
                                  sched.sigmas[static_cast<size_t>(i) + 1]);
    }
    REQUIRE(via_denoise.size() == 1);
    CHECK((via_denoise[0].data - state).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("denoise is deterministic given seed and parameters") {
    const ModelConfig cfg = tiny_config();
    Rng rng(6);
    ParamStore<float> store;
    const VeditParamIds ids = register_vedit_params(store, cfg, rng);
    for (float& p : store.data()) {
        p += 0.1f * static_cast<float>(rng.normal());
    }
    const ProcedureSample sample = random_sample(cfg, 4, 7);
    DenoiseConfig dcfg{4, 7.0f, false};
    Rng r1(123), r2(123);
    const auto a = denoise(sample, store, ids, cfg, dcfg, r1);
    const auto b = denoise(sample, store, ids, cfg, dcfg, r2);
    REQUIRE(a.size() == b.size());
    CHECK((a[0].data - b[0].data).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("cfg scale 7 differs from the conditional path on a trained-away null") {
    const ModelConfig cfg = tiny_config();
    Rng rng(8);
    ParamStore<float> store;
    const VeditParamIds ids = register_vedit_params(store, cfg, rng);
    for (float& p : store.data()) {
        p += 0.1f * static_cast<float>(rng.normal());
    }
    const ProcedureSample sample = random_sample(cfg, 4, 9);
    Rng r1(5), r2(5);
    const auto guided = denoise(sample, store, ids, cfg, DenoiseConfig{4, 7.0f, false}, r1);
    const auto plain = denoise(sample, store, ids, cfg, DenoiseConfig{4, 1.0f, false}, r2);
    CHECK((guided[0].data - plain[0].data).cwiseAbs().maxCoeff() > 0.0f);
}

TEST_CASE("denoise_k: K=1 equals denoise; oracle velocity collapses all candidates") {
    const ModelConfig cfg = tiny_config();
    Rng rng(10);
    ParamStore<float> store;
    const VeditParamIds ids = register_vedit_params(store, cfg, rng);
    for (float& p : store.data()) {
        p += 0.1f * static_cast<float>(rng.normal());
    }
    const ProcedureSample sample = random_sample(cfg, 4, 11);
    DenoiseConfig dcfg{4, 7.0f, false};

    Rng r1(9), r2(9);
    const auto single = denoise_k(sample, store, ids, cfg, dcfg, 1, r1);
    const auto direct = denoise(sample, store, ids, cfg, dcfg, r2);
    REQUIRE(single.size() == 1);
    CHECK((single[0][0].data - direct[0].data).cwiseAbs().maxCoeff() == 0.0f);

    // Distinct noise: candidates generally differ.
    Rng r3(10);
    const auto five = denoise_k(sample, store, ids, cfg, dcfg, 5, r3);
    REQUIRE(five.size() == 5);
    CHECK((five[0][0].data - five[1][0].data).cwiseAbs().maxCoeff() > 0.0f);

    // Under the true-velocity double every candidate lands on z0.
    Rng rng2(12);
    MatF z0(2, 4);
    rng2.fill_normal(z0);
    for (int k = 0; k < 5; ++k) {
        MatF noise(2, 4);
        rng2.fill_normal(noise);
        const MatF out = oracle_denoise(z0, noise, 4);
        CHECK((out - z0).cwiseAbs().maxCoeff() < 1e-5f);
    }
}

TEST_CASE("denoise validates its sample") {
    const ModelConfig cfg = tiny_config();
    Rng rng(13);
    ParamStore<float> store;
    const VeditParamIds ids = register_vedit_params(store, cfg, rng);
    ProcedureSample bad = random_sample(cfg, 4, 14);
    bad.target_mask.assign(4, false);
    DenoiseConfig dcfg{4, 7.0f, false};
    Rng r(1);
    CHECK_THROWS_AS(denoise(bad, store, ids, cfg, dcfg, r), VeditError);
}

TEST_CASE("divergence guard rejects exploding velocities") {
    Tape<float> tape;
    MatF noise(1, 4);
    noise.setOnes();
    DenoiseConfig dcfg{3, 1.0f, false};
    auto exploding = [&](NodeId, bool, double) {
        MatF v(1, 4);
        v.setConstant(1e9f);
        return tape.constant(v);
    };
    CHECK_THROWS_AS(denoise_loop<float>(tape, noise, dcfg, exploding), VeditError);
}
