// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
#include "vedit/data_io.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace vedit {

namespace {

constexpr std::array<char, 4> kMagic{'V', 'E', 'D', 'T'};
constexpr uint32_t kVersion = 1;

uint32_t variant_code(AttentionVariant v) {
    switch (v) {
        case AttentionVariant::Joint: return 0;
        case AttentionVariant::Self: return 1;
        case AttentionVariant::Cross: return 2;
    }
    return 0;
}

AttentionVariant variant_from_code(uint32_t c) {
    switch (c) {
        case 0: return AttentionVariant::Joint;
        case 1: return AttentionVariant::Self;
        case 2: return AttentionVariant::Cross;
        default: raise(ErrorCode::CorruptManifest, "unknown attention variant in checkpoint");
    }
}

class Writer {
public:
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) {
            bytes_.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
        }
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            bytes_.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
        }
    }
    void f32(float v) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }
    void raw(const uint8_t* p, size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
    std::vector<uint8_t>& bytes() { return bytes_; }

private:
    std::vector<uint8_t> bytes_;
};

class Reader {
public:
    Reader(const std::vector<uint8_t>& bytes) : bytes_(bytes) {}

    uint32_t u32() {
        check(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<uint32_t>(bytes_[pos_ + static_cast<size_t>(i)]) << (8 * i);
        }
        pos_ += 4;
        return v;
    }
    uint64_t u64() {
        check(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<uint64_t>(bytes_[pos_ + static_cast<size_t>(i)]) << (8 * i);
        }
        pos_ += 8;
        return v;
    }
    float f32() {
        const uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str() {
        const uint32_t n = u32();
        check(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    const uint8_t* raw(size_t n) {
        check(n);
        const uint8_t* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    size_t pos() const { return pos_; }

private:
    void check(size_t n) {
        require(pos_ + n <= bytes_.size(), ErrorCode::CorruptManifest,
                "checkpoint truncated");
    }
    const std::vector<uint8_t>& bytes_;
    size_t pos_ = 0;
};

}  // namespace

uint32_t crc32(const uint8_t* data, size_t len) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int bit = 0; bit < 8; ++bit) {
                c = (c & 1u) ? (0xEDB88320u ^ (c >> 1)) : (c >> 1);
            }
            t[i] = c;
        }
        return t;
    }();
    uint32_t crc = 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) {
        crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
    }
    return crc ^ 0xFFFFFFFFu;
}

void save_checkpoint(const ParamStore<float>& store, const ModelConfig& cfg,
                     const std::string& path) {
    Writer w;
    w.raw(reinterpret_cast<const uint8_t*>(kMagic.data()), kMagic.size());
    w.u32(kVersion);
    w.u32(static_cast<uint32_t>(cfg.layers));
    w.u32(static_cast<uint32_t>(cfg.hidden_dim));
    w.u32(static_cast<uint32_t>(cfg.attn_heads));
    w.u32(static_cast<uint32_t>(cfg.head_dim));
    w.u32(static_cast<uint32_t>(cfg.max_len));
    w.u32(static_cast<uint32_t>(cfg.token_dim));
    w.u32(static_cast<uint32_t>(cfg.tokens_per_clip));
    w.u32(static_cast<uint32_t>(cfg.timestep_freq_dim));
    w.f32(cfg.rope_base);
    w.u32(variant_code(cfg.attention));
    w.u32(static_cast<uint32_t>(store.count()));
    uint64_t offset = 0;
    for (const auto& e : store.entries()) {
        w.str(e.name);
        w.u32(static_cast<uint32_t>(e.rows));
        w.u32(static_cast<uint32_t>(e.cols));
        w.u64(offset);
        offset += static_cast<uint64_t>(e.rows) * static_cast<uint64_t>(e.cols);
    }
    w.u64(offset);
    std::vector<uint8_t> payload;
    payload.reserve(store.data().size() * 4);
    for (float v : store.data()) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        for (int i = 0; i < 4; ++i) {
            payload.push_back(static_cast<uint8_t>((bits >> (8 * i)) & 0xff));
        }
    }
    w.raw(payload.data(), payload.size());
    w.u32(crc32(payload.data(), payload.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::IoError, "cannot write " + path);
    out.write(reinterpret_cast<const char*>(w.bytes().data()),
              static_cast<std::streamsize>(w.bytes().size()));
    require(out.good(), ErrorCode::IoError, "short write on " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::IoError, "cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    require(bytes.size() >= 8, ErrorCode::BadMagic, "file too short for a checkpoint");
    require(std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) == 0, ErrorCode::BadMagic,
            "not a checkpoint file");
    Reader r(bytes);
    r.raw(kMagic.size());
    const uint32_t version = r.u32();
    require(version == kVersion, ErrorCode::CorruptManifest, "unsupported checkpoint version");
    LoadedCheckpoint out;
    out.config.layers = static_cast<int>(r.u32());
    out.config.hidden_dim = static_cast<int>(r.u32());
    out.config.attn_heads = static_cast<int>(r.u32());
    out.config.head_dim = static_cast<int>(r.u32());
    out.config.max_len = static_cast<int>(r.u32());
    out.config.token_dim = static_cast<int>(r.u32());
    out.config.tokens_per_clip = static_cast<int>(r.u32());
    out.config.timestep_freq_dim = static_cast<int>(r.u32());
    out.config.rope_base = r.f32();
    out.config.attention = variant_from_code(r.u32());
    out.config.validate();

    struct TensorRec {
        std::string name;
        int rows;
        int cols;
        uint64_t offset;
    };
    const uint32_t count = r.u32();
    std::vector<TensorRec> recs;
    recs.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        TensorRec t;
        t.name = r.str();
        t.rows = static_cast<int>(r.u32());
        t.cols = static_cast<int>(r.u32());
        t.offset = r.u64();
        recs.push_back(std::move(t));
    }
    const uint64_t payload_elems = r.u64();
    const uint8_t* payload = r.raw(static_cast<size_t>(payload_elems) * 4);
    const uint32_t stored_crc = r.u32();
    require(crc32(payload, static_cast<size_t>(payload_elems) * 4) == stored_crc,
            ErrorCode::CrcMismatch, "checkpoint payload CRC mismatch");

    // Known names: the model tensors for this config plus any pooler head.
    std::vector<std::string> expected = expected_tensor_names(out.config);
    auto is_known = [&](const std::string& name) {
        if (name.rfind("pooler.", 0) == 0) {
            return true;
        }
        for (const std::string& e : expected) {
            if (e == name) {
                return true;
            }
        }
        return false;
    };
    for (const TensorRec& t : recs) {
        if (!is_known(t.name)) {
            out.ignored.push_back(t.name);
            continue;
        }
        const uint64_t elems = static_cast<uint64_t>(t.rows) * static_cast<uint64_t>(t.cols);
        require(t.offset + elems <= payload_elems, ErrorCode::OffsetOutOfRange,
                "tensor " + t.name + " runs past the payload");
        const int idx = out.store.add(t.name, t.rows, t.cols);
        auto view = out.store.view(idx);
        const uint8_t* p = payload + t.offset * 4;
        for (int row = 0; row < t.rows; ++row) {
            for (int col = 0; col < t.cols; ++col) {
                uint32_t bits = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                                (static_cast<uint32_t>(p[2]) << 16) |
                                (static_cast<uint32_t>(p[3]) << 24);
                float v;
                std::memcpy(&v, &bits, 4);
                view(row, col) = v;
                p += 4;
            }
        }
    }
    // Resolve validates completeness and shapes against the config.
    Rng dummy(0);
    out.ids = register_vedit_params(out.store, out.config, dummy, ParamBind::Resolve);
    return out;
}

}  // namespace vedit
