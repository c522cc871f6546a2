// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "vedit/common.hpp"
#include "vedit/metrics.hpp"

namespace {

using namespace vedit;

void BM_damerau_levenshtein(benchmark::State& state) {
    Rng rng(7);
    const int len = static_cast<int>(state.range(0));
    std::vector<int> a(static_cast<size_t>(len)), b(static_cast<size_t>(len));
    for (int i = 0; i < len; ++i) {
        a[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(32));
        b[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(32));
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(damerau_levenshtein(a, b));
    }
}
BENCHMARK(BM_damerau_levenshtein)->Arg(5)->Arg(20)->Arg(100);

void BM_planning_metrics(benchmark::State& state) {
    Rng rng(8);
    std::vector<std::vector<int>> preds, gts;
    for (int i = 0; i < 500; ++i) {
        std::vector<int> p(4), g(4);
        for (int j = 0; j < 4; ++j) {
            p[static_cast<size_t>(j)] = static_cast<int>(rng.uniform_int(16));
            g[static_cast<size_t>(j)] = static_cast<int>(rng.uniform_int(16));
        }
        preds.push_back(p);
        gts.push_back(g);
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(planning_metrics(preds, gts));
    }
}
BENCHMARK(BM_planning_metrics);

}  // namespace
