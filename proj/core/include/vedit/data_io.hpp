// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic procedural data, dataset persistence (JSON manifest + raw blob)
// and binary checkpoints. All layouts are little-endian and bit-exact.
#pragma once

#include "vedit/common.hpp"
#include "vedit/model.hpp"
#include "vedit/tape.hpp"
#include "vedit/types.hpp"

#include <string>
#include <utility>
#include <vector>

namespace vedit {

enum class Transition { Markov, DeterministicCycle };

inline Transition parse_transition(const std::string& s) {
    if (s == "markov") return Transition::Markov;
    if (s == "cycle" || s == "deterministic-cycle") return Transition::DeterministicCycle;
    raise(ErrorCode::InvalidConfig, "unknown transition " + s);
}

struct SyntheticConfig {
    int num_tasks = 4;       // G
    int vocab = 12;          // V step classes
    int seq_len = 9;         // N clips per sample
    Transition transition = Transition::DeterministicCycle;
    int tokens_per_clip = 1; // k
    int dim = 16;            // D
    float noise_std = 0.05f;
    int train_samples = 2000;
    int val_samples = 500;
    uint64_t seed = 0;

    void validate() const {
        require(vocab >= 2, ErrorCode::InvalidConfig, "vocab must be >= 2");
        require(num_tasks >= 1, ErrorCode::InvalidConfig, "need at least one task");
        require(seq_len >= 2, ErrorCode::InvalidConfig, "sequences need at least two clips");
        require(tokens_per_clip >= 1, ErrorCode::InvalidConfig, "tokens_per_clip must be >= 1");
        require(dim >= 2 && dim % 2 == 0, ErrorCode::InvalidConfig, "dim must be even and >= 2");
        require(noise_std >= 0.0f, ErrorCode::InvalidConfig, "noise_std must be >= 0");
        require(train_samples >= 1 && val_samples >= 1, ErrorCode::InvalidConfig,
                "both splits need samples");
    }
};

struct Dataset {
    int tokens_per_clip = 0;
    int dim = 0;
    int seq_len = 0;
    int num_steps = 0;
    int num_tasks = 0;
    std::vector<float> channel_mean;  // train-split standardization stats
    std::vector<float> channel_std;
    std::vector<ProcedureSample> samples;
};

// Deterministic synthetic procedural sequences: per-task transition structure
// over the step vocabulary, one unit-row prototype per step, Gaussian clip
// noise, then per-channel standardization by train-split statistics (shared
// with the validation split).
std::pair<Dataset, Dataset> gen_synthetic(const SyntheticConfig& cfg);

// Writes base_path.json (manifest) and base_path.bin (float32 LE blob,
// sample-major, clip-major, token-major, channel-major).
void write_dataset(const Dataset& ds, const std::string& base_path);
Dataset read_dataset(const std::string& base_path);

// Binary checkpoint: "VEDT" magic, version, ModelConfig, named tensor table,
// float32 LE payload, trailing CRC32 of the payload bytes.
void save_checkpoint(const ParamStore<float>& store, const ModelConfig& cfg,
                     const std::string& path);

struct LoadedCheckpoint {
    ModelConfig config;
    ParamStore<float> store;           // every known tensor, in file order
    VeditParamIds ids;                 // resolved against the store
    std::vector<std::string> ignored;  // unknown tensor names (warned, skipped)
};

LoadedCheckpoint load_checkpoint(const std::string& path);

uint32_t crc32(const uint8_t* data, size_t len);

}  // namespace vedit
