// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
#include "vedit/data_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace vedit {

namespace {

using nlohmann::json;

void put_f32_le(std::vector<uint8_t>& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    out.push_back(static_cast<uint8_t>(bits & 0xff));
    out.push_back(static_cast<uint8_t>((bits >> 8) & 0xff));
    out.push_back(static_cast<uint8_t>((bits >> 16) & 0xff));
    out.push_back(static_cast<uint8_t>((bits >> 24) & 0xff));
}

float get_f32_le(const uint8_t* p) {
    const uint32_t bits = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                          (static_cast<uint32_t>(p[2]) << 16) |
                          (static_cast<uint32_t>(p[3]) << 24);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::IoError, "cannot open " + path);
    in.seekg(0, std::ios::end);
    const std::streamoff len = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<uint8_t> bytes(static_cast<size_t>(len));
    if (len > 0) {
        in.read(reinterpret_cast<char*>(bytes.data()), len);
    }
    require(in.good(), ErrorCode::IoError, "short read on " + path);
    return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::IoError, "cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    require(out.good(), ErrorCode::IoError, "short write on " + path);
}

}  // namespace

std::pair<Dataset, Dataset> gen_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    if (cfg.transition == Transition::DeterministicCycle) {
        // Distinct cycles exist only while num_tasks <= (vocab - 1)!.
        uint64_t distinct = 1;
        for (int v = 2; v < cfg.vocab && distinct <= static_cast<uint64_t>(cfg.num_tasks); ++v) {
            distinct *= static_cast<uint64_t>(v);
        }
        require(static_cast<uint64_t>(cfg.num_tasks) <= distinct, ErrorCode::InvalidConfig,
                "more tasks than distinct cycles over the vocabulary");
    }
    Rng rng(cfg.seed);

    // Step prototypes with unit-norm rows, shared across tasks and splits.
    std::vector<MatF> prototypes;
    prototypes.reserve(static_cast<size_t>(cfg.vocab));
    for (int s = 0; s < cfg.vocab; ++s) {
        MatF p(cfg.tokens_per_clip, cfg.dim);
        rng.fill_normal(p);
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
            const float norm = p.row(r).norm();
            p.row(r) /= std::max(norm, 1e-6f);
        }
        prototypes.push_back(std::move(p));
    }

    // Per-task transition structure: a random cycle, or a peaked row-stochastic
    // matrix rolled by inverse-CDF sampling. Cycles are drawn distinct across
    // tasks so the task label stays identifiable from the step sequence.
    std::vector<std::vector<int>> cycle_next(static_cast<size_t>(cfg.num_tasks));
    std::vector<MatF> markov_rows(static_cast<size_t>(cfg.num_tasks));
    for (int g = 0; g < cfg.num_tasks; ++g) {
        if (cfg.transition == Transition::DeterministicCycle) {
            std::vector<int> next(static_cast<size_t>(cfg.vocab));
            for (;;) {
                std::vector<int> order(static_cast<size_t>(cfg.vocab));
                std::iota(order.begin(), order.end(), 0);
                for (size_t i = order.size(); i > 1; --i) {
                    std::swap(order[i - 1], order[rng.uniform_int(i)]);
                }
                for (int i = 0; i < cfg.vocab; ++i) {
                    next[static_cast<size_t>(order[static_cast<size_t>(i)])] =
                        order[static_cast<size_t>((i + 1) % cfg.vocab)];
                }
                bool duplicate = false;
                for (int prev = 0; prev < g; ++prev) {
                    duplicate = duplicate || cycle_next[static_cast<size_t>(prev)] == next;
                }
                if (!duplicate) {
                    break;
                }
            }
            cycle_next[static_cast<size_t>(g)] = std::move(next);
        } else {
            MatF rows(cfg.vocab, cfg.vocab);
            for (int r = 0; r < cfg.vocab; ++r) {
                float total = 0.0f;
                for (int c = 0; c < cfg.vocab; ++c) {
                    const float u = static_cast<float>(rng.uniform01());
                    const float w = u * u * u * u;  // peaked rows: a few likely successors
                    rows(r, c) = w;
                    total += w;
                }
                rows.row(r) /= total;
            }
            markov_rows[static_cast<size_t>(g)] = std::move(rows);
        }
    }

    auto roll_chain = [&](int g) {
        std::vector<int> chain(static_cast<size_t>(cfg.seq_len));
        chain[0] = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(cfg.vocab)));
        for (int i = 1; i < cfg.seq_len; ++i) {
            const int prev = chain[static_cast<size_t>(i - 1)];
            if (cfg.transition == Transition::DeterministicCycle) {
                chain[static_cast<size_t>(i)] =
                    cycle_next[static_cast<size_t>(g)][static_cast<size_t>(prev)];
            } else {
                const double u = rng.uniform01();
                double acc = 0.0;
                int pick = cfg.vocab - 1;
                for (int c = 0; c < cfg.vocab; ++c) {
                    acc += markov_rows[static_cast<size_t>(g)](prev, c);
                    if (u < acc) {
                        pick = c;
                        break;
                    }
                }
                chain[static_cast<size_t>(i)] = pick;
            }
        }
        return chain;
    };

    auto make_split = [&](int count) {
        Dataset ds;
        ds.tokens_per_clip = cfg.tokens_per_clip;
        ds.dim = cfg.dim;
        ds.seq_len = cfg.seq_len;
        ds.num_steps = cfg.vocab;
        ds.num_tasks = cfg.num_tasks;
        ds.samples.reserve(static_cast<size_t>(count));
        for (int i = 0; i < count; ++i) {
            ProcedureSample sample;
            sample.task_label = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(cfg.num_tasks)));
            sample.step_labels = roll_chain(sample.task_label);
            for (int c = 0; c < cfg.seq_len; ++c) {
                EmbeddingMatrix clip(cfg.tokens_per_clip, cfg.dim);
                clip.data = prototypes[static_cast<size_t>(sample.step_labels[static_cast<size_t>(c)])];
                for (Eigen::Index r = 0; r < clip.data.rows(); ++r) {
                    for (Eigen::Index cc = 0; cc < clip.data.cols(); ++cc) {
                        clip.data(r, cc) += cfg.noise_std * static_cast<float>(rng.normal());
                    }
                }
                sample.clips.push_back(std::move(clip));
            }
            sample.target_mask.assign(static_cast<size_t>(cfg.seq_len), false);
            sample.target_mask.back() = true;
            ds.samples.push_back(std::move(sample));
        }
        return ds;
    };

    Dataset train = make_split(cfg.train_samples);
    Dataset val = make_split(cfg.val_samples);

    // Per-channel standardization by train statistics, applied to both splits.
    std::vector<double> mean(static_cast<size_t>(cfg.dim), 0.0);
    std::vector<double> sq(static_cast<size_t>(cfg.dim), 0.0);
    size_t rows = 0;
    for (const ProcedureSample& s : train.samples) {
        for (const EmbeddingMatrix& c : s.clips) {
            for (Eigen::Index r = 0; r < c.data.rows(); ++r) {
                for (int ch = 0; ch < cfg.dim; ++ch) {
                    mean[static_cast<size_t>(ch)] += c.data(r, ch);
                    sq[static_cast<size_t>(ch)] += static_cast<double>(c.data(r, ch)) * c.data(r, ch);
                }
            }
            rows += static_cast<size_t>(c.data.rows());
        }
    }
    train.channel_mean.resize(static_cast<size_t>(cfg.dim));
    train.channel_std.resize(static_cast<size_t>(cfg.dim));
    for (int ch = 0; ch < cfg.dim; ++ch) {
        const double mu = mean[static_cast<size_t>(ch)] / static_cast<double>(rows);
        const double var = sq[static_cast<size_t>(ch)] / static_cast<double>(rows) - mu * mu;
        train.channel_mean[static_cast<size_t>(ch)] = static_cast<float>(mu);
        train.channel_std[static_cast<size_t>(ch)] =
            static_cast<float>(std::sqrt(std::max(var, 1e-12)));
    }
    val.channel_mean = train.channel_mean;
    val.channel_std = train.channel_std;
    auto standardize = [&](Dataset& ds) {
        for (ProcedureSample& s : ds.samples) {
            for (EmbeddingMatrix& c : s.clips) {
                for (Eigen::Index r = 0; r < c.data.rows(); ++r) {
                    for (int ch = 0; ch < cfg.dim; ++ch) {
                        c.data(r, ch) = (c.data(r, ch) - train.channel_mean[static_cast<size_t>(ch)]) /
                                        std::max(train.channel_std[static_cast<size_t>(ch)], 1e-6f);
                    }
                }
            }
        }
    };
    standardize(train);
    standardize(val);
    return {std::move(train), std::move(val)};
}

void write_dataset(const Dataset& ds, const std::string& base_path) {
    require(!ds.samples.empty(), ErrorCode::InvalidConfig, "refusing to write empty dataset");
    const size_t sample_floats = static_cast<size_t>(ds.seq_len) * ds.tokens_per_clip * ds.dim;
    std::vector<uint8_t> blob;
    blob.reserve(ds.samples.size() * sample_floats * 4);
    json manifest;
    manifest["version"] = 1;
    manifest["k"] = ds.tokens_per_clip;
    manifest["dim"] = ds.dim;
    manifest["seq_len"] = ds.seq_len;
    manifest["num_steps"] = ds.num_steps;
    manifest["num_tasks"] = ds.num_tasks;
    manifest["blob"] = std::filesystem::path(base_path + ".bin").filename().string();
    manifest["channel_mean"] = ds.channel_mean;
    manifest["channel_std"] = ds.channel_std;
    json samples = json::array();
    for (const ProcedureSample& s : ds.samples) {
        require(s.length() == ds.seq_len, ErrorCode::ShapeMismatch,
                "sample length differs from dataset seq_len");
        json rec;
        rec["offset"] = blob.size();
        rec["bytes"] = sample_floats * 4;
        rec["step_labels"] = s.step_labels;
        rec["task_label"] = s.task_label;
        std::vector<int> mask;
        for (bool b : s.target_mask) {
            mask.push_back(b ? 1 : 0);
        }
        rec["target_mask"] = mask;
        samples.push_back(std::move(rec));
        for (const EmbeddingMatrix& c : s.clips) {
            require(c.tokens_per_clip == ds.tokens_per_clip && c.dim == ds.dim,
                    ErrorCode::ShapeMismatch, "clip shape differs from dataset shape");
            for (Eigen::Index r = 0; r < c.data.rows(); ++r) {
                for (Eigen::Index ch = 0; ch < c.data.cols(); ++ch) {
                    put_f32_le(blob, c.data(r, ch));
                }
            }
        }
    }
    manifest["samples"] = std::move(samples);
    std::ofstream mf(base_path + ".json", std::ios::trunc);
    require(mf.good(), ErrorCode::IoError, "cannot write " + base_path + ".json");
    mf << manifest.dump(1, '\t') << "\n";
    require(mf.good(), ErrorCode::IoError, "short write on manifest");
    write_file_bytes(base_path + ".bin", blob);
}

Dataset read_dataset(const std::string& base_path) {
    std::ifstream mf(base_path + ".json");
    require(mf.good(), ErrorCode::IoError, "cannot open " + base_path + ".json");
    json manifest;
    try {
        mf >> manifest;
    } catch (const json::exception& e) {
        raise(ErrorCode::CorruptManifest, e.what());
    }
    Dataset ds;
    try {
        require(manifest.at("version").get<int>() == 1, ErrorCode::CorruptManifest,
                "unsupported manifest version");
        ds.tokens_per_clip = manifest.at("k").get<int>();
        ds.dim = manifest.at("dim").get<int>();
        ds.seq_len = manifest.at("seq_len").get<int>();
        ds.num_steps = manifest.at("num_steps").get<int>();
        ds.num_tasks = manifest.at("num_tasks").get<int>();
        ds.channel_mean = manifest.at("channel_mean").get<std::vector<float>>();
        ds.channel_std = manifest.at("channel_std").get<std::vector<float>>();
    } catch (const json::exception& e) {
        raise(ErrorCode::CorruptManifest, e.what());
    }
    require(ds.tokens_per_clip >= 1 && ds.dim >= 2 && ds.seq_len >= 1, ErrorCode::CorruptManifest,
            "manifest shape fields out of range");
    const std::string blob_name = manifest.at("blob").get<std::string>();
    const std::string blob_path =
        (std::filesystem::path(base_path).parent_path() / blob_name).string();
    const std::vector<uint8_t> blob = read_file_bytes(blob_path);
    const size_t sample_floats = static_cast<size_t>(ds.seq_len) * ds.tokens_per_clip * ds.dim;
    try {
        for (const json& rec : manifest.at("samples")) {
            const size_t offset = rec.at("offset").get<size_t>();
            const size_t bytes = rec.at("bytes").get<size_t>();
            require(bytes == sample_floats * 4, ErrorCode::ShapeMismatch,
                    "sample byte length disagrees with manifest shape");
            require(offset + bytes <= blob.size(), ErrorCode::OffsetOutOfRange,
                    "sample record runs past the end of the blob");
            ProcedureSample s;
            s.step_labels = rec.at("step_labels").get<std::vector<int>>();
            s.task_label = rec.at("task_label").get<int>();
            for (int b : rec.at("target_mask").get<std::vector<int>>()) {
                s.target_mask.push_back(b != 0);
            }
            require(s.step_labels.size() == static_cast<size_t>(ds.seq_len) &&
                        s.target_mask.size() == static_cast<size_t>(ds.seq_len),
                    ErrorCode::CorruptManifest, "label/mask length differs from seq_len");
            const uint8_t* p = blob.data() + offset;
            for (int c = 0; c < ds.seq_len; ++c) {
                EmbeddingMatrix clip(ds.tokens_per_clip, ds.dim);
                for (int r = 0; r < ds.tokens_per_clip; ++r) {
                    for (int ch = 0; ch < ds.dim; ++ch) {
                        clip.data(r, ch) = get_f32_le(p);
                        p += 4;
                    }
                }
                s.clips.push_back(std::move(clip));
            }
            ds.samples.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        raise(ErrorCode::CorruptManifest, e.what());
    }
    return ds;
}

}  // namespace vedit
