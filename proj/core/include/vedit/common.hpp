// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace vedit {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatF = Mat<float>;
using MatD = Mat<double>;

enum class ErrorCode {
    DimensionMismatch,
    NonFiniteValue,
    EmptyTargetSet,
    SequenceTooLong,
    InvalidSteps,
    ShapeMismatch,
    SigmaOutOfRange,
    NonDecreasingSigma,
    OddHeadDim,
    PositionOutOfRange,
    LengthMismatch,
    Empty,
    InvariantViolation,
    InvalidConfig,
    CorruptManifest,
    OffsetOutOfRange,
    BadMagic,
    CrcMismatch,
    MissingTensor,
    NonFiniteLoss,
    TaskHeadMismatch,
    UnknownSweepAxis,
    IoError,
};

const char* error_code_name(ErrorCode code);

class VeditError : public std::runtime_error {
public:
    VeditError(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& what) {
    throw VeditError(code, what);
}

inline void require(bool ok, ErrorCode code, const std::string& what) {
    if (!ok) {
        raise(code, what);
    }
}

// Deterministic, platform-independent random stream (xoshiro256++ seeded via
// splitmix64). std facilities are avoided on purpose: normal_distribution is
// implementation-defined and would break the bit-reproducibility contract.
class Rng {
public:
    explicit Rng(uint64_t seed) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t x = seed;
        for (auto& word : state_) {
            word = splitmix64(x);
        }
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). Rejection keeps the draw exactly uniform.
    uint64_t uniform_int(uint64_t n) {
        if (n <= 1) {
            return 0;
        }
        const uint64_t threshold = (0 - n) % n;
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) {
                return r % n;
            }
        }
    }

    // Standard normal via Box-Muller (cosine branch only, so every draw
    // consumes exactly two uniforms).
    double normal() {
        const double u1 = 1.0 - uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Independent substream; fork(i) never collides with the parent sequence
    // for distinct tags in practice (splitmix diffusion of seed ^ tag).
    Rng fork(uint64_t tag) const {
        uint64_t x = state_[0] ^ (0x9e3779b97f4a7c15ULL * (tag + 1));
        Rng child(0);
        for (auto& word : child.state_) {
            word = splitmix64(x);
        }
        return child;
    }

    template <typename S>
    void fill_normal(Mat<S>& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                m(r, c) = static_cast<S>(normal());
            }
        }
    }

private:
    static uint64_t splitmix64(uint64_t& x) {
        uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    uint64_t state_[4];
};

// 64-bit seed wrapper shared by data generation, training and denoising.
struct RngSeed {
    uint64_t seed = 0;
};

template <typename S>
bool all_finite(const Mat<S>& m) {
    return m.allFinite();
}

}  // namespace vedit
