// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
//
// Model-level checks. The heavy pieces are compared against independent
// scalar-loop reimplementations in double precision.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "vedit/model.hpp"
#include "vedit/model_ops.hpp"

#include <cmath>
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

MatF random_mat(Eigen::Index r, Eigen::Index c, uint64_t seed) {
    Rng rng(seed);
    MatF m(r, c);
    rng.fill_normal(m);
    return m;
}

// ---- scalar-loop oracle ----------------------------------------------------

using Vec = std::vector<double>;
using Rows = std::vector<Vec>;

Rows to_rows(const MatF& m) {
    Rows out(static_cast<size_t>(m.rows()), Vec(static_cast<size_t>(m.cols()), 0.0));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            out[static_cast<size_t>(r)][static_cast<size_t>(c)] = m(r, c);
        }
    }
    return out;
}

Rows mat_of(const ParamStore<float>& store, int idx) {
    return to_rows(MatF(store.view(idx)));
}

Rows mul(const Rows& a, const Rows& b) {
    Rows out(a.size(), Vec(b[0].size(), 0.0));
    for (size_t i = 0; i < a.size(); ++i) {
        for (size_t k = 0; k < b.size(); ++k) {
            for (size_t j = 0; j < b[0].size(); ++j) {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    return out;
}

Rows add_bias(Rows a, const Rows& bias) {
    for (Vec& row : a) {
        for (size_t j = 0; j < row.size(); ++j) {
            row[j] += bias[0][j];
        }
    }
    return a;
}

Rows linear(const Rows& x, const ParamStore<float>& store, int w, int b) {
    return add_bias(mul(x, mat_of(store, w)), mat_of(store, b));
}

Vec silu_vec(const Vec& v) {
    Vec out(v.size());
    for (size_t i = 0; i < v.size(); ++i) {
        out[i] = v[i] / (1.0 + std::exp(-v[i]));
    }
    return out;
}

Rows layernorm(const Rows& x, double eps = 1e-6) {
    Rows out = x;
    for (Vec& row : out) {
        double mean = 0.0;
        for (double v : row) {
            mean += v;
        }
        mean /= static_cast<double>(row.size());
        double var = 0.0;
        for (double v : row) {
            var += (v - mean) * (v - mean);
        }
        var /= static_cast<double>(row.size());
        const double inv = 1.0 / std::sqrt(var + eps);
        for (double& v : row) {
            v = (v - mean) * inv;
        }
    }
    return out;
}

void rope_rows(Rows& x, const std::vector<int>& pos, int head_dim, double base) {
    const size_t heads = x[0].size() / static_cast<size_t>(head_dim);
    for (size_t r = 0; r < x.size(); ++r) {
        for (size_t h = 0; h < heads; ++h) {
            for (int j = 0; j < head_dim / 2; ++j) {
                const double angle =
                    pos[r] * std::pow(base, -2.0 * j / static_cast<double>(head_dim));
                const size_t i0 = h * static_cast<size_t>(head_dim) + 2 * static_cast<size_t>(j);
                const double a = x[r][i0], b = x[r][i0 + 1];
                x[r][i0] = a * std::cos(angle) - b * std::sin(angle);
                x[r][i0 + 1] = a * std::sin(angle) + b * std::cos(angle);
            }
        }
    }
}

Rows attention_oracle(Rows q, Rows k, const Rows& v, const std::vector<int>& pos, int heads,
                      int head_dim, double base) {
    rope_rows(q, pos, head_dim, base);
    rope_rows(k, pos, head_dim, base);
    const size_t n = q.size();
    Rows out(n, Vec(q[0].size(), 0.0));
    for (int h = 0; h < heads; ++h) {
        const size_t off = static_cast<size_t>(h) * static_cast<size_t>(head_dim);
        for (size_t i = 0; i < n; ++i) {
            Vec scores(n, 0.0);
            double max_s = -1e300;
            for (size_t j = 0; j < n; ++j) {
                double dot = 0.0;
                for (int d = 0; d < head_dim; ++d) {
                    dot += q[i][off + static_cast<size_t>(d)] * k[j][off + static_cast<size_t>(d)];
                }
                scores[j] = dot / std::sqrt(static_cast<double>(head_dim));
                max_s = std::max(max_s, scores[j]);
            }
            double total = 0.0;
            for (double& s : scores) {
                s = std::exp(s - max_s);
                total += s;
            }
            for (size_t j = 0; j < n; ++j) {
                const double w = scores[j] / total;
                for (int d = 0; d < head_dim; ++d) {
                    out[i][off + static_cast<size_t>(d)] += w * v[j][off + static_cast<size_t>(d)];
                }
            }
        }
    }
    return out;
}

struct OracleChunks {
    Vec shift_msa, scale_msa, gate_msa, shift_mlp, scale_mlp, gate_mlp;
};

OracleChunks chunks_oracle(const Vec& silu_temb, const ParamStore<float>& store,
                           const BranchParamIds& p, int hidden) {
    const Rows m = linear({silu_temb}, store, p.mod_w, p.mod_b);
    OracleChunks c;
    auto grab = [&](int part) {
        return Vec(m[0].begin() + part * hidden, m[0].begin() + (part + 1) * hidden);
    };
    c.shift_msa = grab(0);
    c.scale_msa = grab(1);
    c.gate_msa = grab(2);
    c.shift_mlp = grab(3);
    c.scale_mlp = grab(4);
    c.gate_mlp = grab(5);
    return c;
}

Rows modulate_oracle(const Rows& x, const Vec& scale, const Vec& shift) {
    Rows out = x;
    for (Vec& row : out) {
        for (size_t j = 0; j < row.size(); ++j) {
            row[j] = row[j] * (1.0 + scale[j]) + shift[j];
        }
    }
    return out;
}

Rows ffn_oracle(const Rows& x, const ParamStore<float>& store, const BranchParamIds& p) {
    Rows h = linear(x, store, p.ff1_w, p.ff1_b);
    for (Vec& row : h) {
        for (double& v : row) {
            v = v * 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
        }
    }
    return linear(h, store, p.ff2_w, p.ff2_b);
}

Vec temb_oracle(double sigma, const ParamStore<float>& store, const VeditParamIds& ids,
                const ModelConfig& cfg) {
    const int half = cfg.timestep_freq_dim / 2;
    Vec feats(static_cast<size_t>(cfg.timestep_freq_dim), 0.0);
    for (int j = 0; j < half; ++j) {
        const double freq = std::exp(-std::log(10000.0) * j / half);
        feats[static_cast<size_t>(j)] = std::cos(sigma * 1000.0 * freq);
        feats[static_cast<size_t>(half + j)] = std::sin(sigma * 1000.0 * freq);
    }
    const Rows h = linear({feats}, store, ids.temb1_w, ids.temb1_b);
    return linear({silu_vec(h[0])}, store, ids.temb2_w, ids.temb2_b)[0];
}

std::pair<Rows, Rows> block_oracle(Rows x_t, Rows x_s, const Vec& silu_temb,
                                   const std::vector<int>& pos_t, const std::vector<int>& pos_s,
                                   const ParamStore<float>& store, const BlockParamIds& p,
                                   const ModelConfig& cfg) {
    const OracleChunks ct = chunks_oracle(silu_temb, store, p.target, cfg.hidden_dim);
    const OracleChunks cs = chunks_oracle(silu_temb, store, p.seen, cfg.hidden_dim);
    const Rows mod_t = modulate_oracle(layernorm(x_t), ct.scale_msa, ct.shift_msa);
    const Rows mod_s = modulate_oracle(layernorm(x_s), cs.scale_msa, cs.shift_msa);

    Rows q = linear(mod_t, store, p.target.q_w, p.target.q_b);
    Rows k = linear(mod_t, store, p.target.k_w, p.target.k_b);
    Rows v = linear(mod_t, store, p.target.v_w, p.target.v_b);
    const Rows q_s = linear(mod_s, store, p.seen.q_w, p.seen.q_b);
    const Rows k_s = linear(mod_s, store, p.seen.k_w, p.seen.k_b);
    const Rows v_s = linear(mod_s, store, p.seen.v_w, p.seen.v_b);
    std::vector<int> pos = pos_t;
    for (size_t i = 0; i < q_s.size(); ++i) {
        q.push_back(q_s[i]);
        k.push_back(k_s[i]);
        v.push_back(v_s[i]);
        pos.push_back(pos_s[i]);
    }
    const Rows joint = attention_oracle(q, k, v, pos, cfg.attn_heads, cfg.head_dim, cfg.rope_base);
    Rows attn_t(joint.begin(), joint.begin() + static_cast<long>(x_t.size()));
    Rows attn_s(joint.begin() + static_cast<long>(x_t.size()), joint.end());
    attn_t = linear(attn_t, store, p.target.o_w, p.target.o_b);
    attn_s = linear(attn_s, store, p.seen.o_w, p.seen.o_b);

    auto gated_add = [](Rows& x, const Rows& delta, const Vec& gate) {
        for (size_t r = 0; r < x.size(); ++r) {
            for (size_t j = 0; j < x[r].size(); ++j) {
                x[r][j] += gate[j] * delta[r][j];
            }
        }
    };
    gated_add(x_t, attn_t, ct.gate_msa);
    gated_add(x_s, attn_s, cs.gate_msa);
    const Rows h_t = modulate_oracle(layernorm(x_t), ct.scale_mlp, ct.shift_mlp);
    const Rows h_s = modulate_oracle(layernorm(x_s), cs.scale_mlp, cs.shift_mlp);
    gated_add(x_t, ffn_oracle(h_t, store, p.target), ct.gate_mlp);
    gated_add(x_s, ffn_oracle(h_s, store, p.seen), cs.gate_mlp);
    return {x_t, x_s};
}

double max_abs_diff(const MatF& m, const Rows& rows) {
    double worst = 0.0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            worst = std::max(worst,
                             std::abs(m(r, c) - rows[static_cast<size_t>(r)][static_cast<size_t>(c)]));
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("timestep features at sigma=0: cosine half ones, sine half zeros") {
    const MatF f = timestep_features<float>(0.0, 16);
    for (int j = 0; j < 8; ++j) {
        CHECK(f(0, j) == 1.0f);
        CHECK(f(0, 8 + j) == 0.0f);
    }
    CHECK_THROWS_AS(timestep_features<float>(-0.1, 16), VeditError);
    CHECK_THROWS_AS(timestep_features<float>(1.2, 16), VeditError);
}

TEST_CASE("timestep embedding is deterministic and separates endpoints") {
    const ModelConfig cfg = tiny_config();
    Rng rng(1);
    ParamStore<float> store;
    const VeditParamIds ids = register_vedit_params(store, cfg, rng);
    const MatF a = timestep_embedding(0.0, store, ids, cfg);
    const MatF b = timestep_embedding(0.0, store, ids, cfg);
    const MatF c = timestep_embedding(1.0, store, ids, cfg);
    CHECK((a - b).norm() == 0.0f);
    CHECK((a - c).cwiseAbs().maxCoeff() > 0.0f);
    const Vec oracle = temb_oracle(0.37, store, ids, cfg);
    CHECK(max_abs_diff(timestep_embedding(0.37, store, ids, cfg), {oracle}) < 1e-5);
}

TEST_CASE("ada_ln_zero at zero init reduces to plain layernorm") {
    const ModelConfig cfg = tiny_config();
    Rng rng(2);
    ParamStore<float> store;
    const VeditParamIds ids = register_vedit_params(store, cfg, rng);
    const MatF x = random_mat(5, cfg.hidden_dim, 10);
    const MatF temb = random_mat(1, cfg.hidden_dim, 11);
    const AdaLnResult r = ada_ln_zero(x, temb, store, ids.blocks[0].target);
    CHECK(r.gate_msa.cwiseAbs().maxCoeff() == 0.0f);
    CHECK(r.gate_mlp.cwiseAbs().maxCoeff() == 0.0f);
    CHECK(r.scale_mlp.cwiseAbs().maxCoeff() == 0.0f);
    CHECK(r.shift_mlp.cwiseAbs().maxCoeff() == 0.0f);
    CHECK(max_abs_diff(r.modulated, layernorm(to_rows(x))) < 1e-6);
}

TEST_CASE("ada_ln_zero on channel-constant rows broadcasts the shift") {
    const ModelConfig cfg = tiny_config();
    Rng rng(3);
    ParamStore<float> store;
    const VeditParamIds ids = register_vedit_params(store, cfg, rng);
    detail::init_normal(store, ids.blocks[0].target.mod_w, rng, 0.3);
    detail::init_normal(store, ids.blocks[0].target.mod_b, rng, 0.3);
    MatF x(3, cfg.hidden_dim);
    for (int r = 0; r < 3; ++r) {
        x.row(r).setConstant(static_cast<float>(r) - 1.0f);
    }
    const MatF temb = random_mat(1, cfg.hidden_dim, 12);
    const AdaLnResult r = ada_ln_zero(x, temb, store, ids.blocks[0].target);
    // layernorm of a channel-constant row is ~0 (up to eps), so modulated is
    // approximately the shift chunk broadcast to every row.
    const OracleChunks c =
        chunks_oracle(silu_vec(to_rows(temb)[0]), store, ids.blocks[0].target, cfg.hidden_dim);
    for (int row = 0; row < 3; ++row) {
        for (int j = 0; j < cfg.hidden_dim; ++j) {
            CHECK(std::abs(r.modulated(row, j) - c.shift_msa[static_cast<size_t>(j)]) < 2e-3);
        }
    }
}

TEST_CASE("ada_ln_zero matches the scalar oracle on random parameters") {
    const ModelConfig cfg = tiny_config();
    Rng rng(4);
    ParamStore<float> store;
    const VeditParamIds ids = register_vedit_params(store, cfg, rng);
    detail::init_normal(store, ids.blocks[0].seen.mod_w, rng, 0.4);
    detail::init_normal(store, ids.blocks[0].seen.mod_b, rng, 0.4);
    const MatF x = random_mat(6, cfg.hidden_dim, 13);
    const MatF temb = random_mat(1, cfg.hidden_dim, 14);
    const AdaLnResult got = ada_ln_zero(x, temb, store, ids.blocks[0].seen);
    const OracleChunks c =
        chunks_oracle(silu_vec(to_rows(temb)[0]), store, ids.blocks[0].seen, cfg.hidden_dim);
    const Rows expect = modulate_oracle(layernorm(to_rows(x)), c.scale_msa, c.shift_msa);
    CHECK(max_abs_diff(got.modulated, expect) < 1e-6);
    CHECK(max_abs_diff(got.gate_msa, {c.gate_msa}) < 1e-6);
    CHECK(max_abs_diff(got.gate_mlp, {c.gate_mlp}) < 1e-6);
}

TEST_CASE("rope: position zero is the identity") {
    const MatF x = random_mat(4, 8, 20);
    const MatF out = rope_rotate<float>(x, {0, 0, 0, 0}, 10000.0, 4);
    CHECK((out - x).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("rope preserves per-pair norms") {
    const MatF x = random_mat(5, 8, 21);
    const MatF out = rope_rotate<float>(x, {3, 1, 7, 2, 9}, 10000.0, 4);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        for (int p = 0; p < 4; ++p) {
            const float n_in = std::hypot(x(r, 2 * p), x(r, 2 * p + 1));
            const float n_out = std::hypot(out(r, 2 * p), out(r, 2 * p + 1));
            CHECK(std::abs(n_in - n_out) < 1e-6f);
        }
    }
}

TEST_CASE("rope inner products depend only on relative positions") {
    Rng rng(22);
    const int head_dim = 16;
    for (int trial = 0; trial < 200; ++trial) {
        MatF q(1, head_dim), k(1, head_dim);
        rng.fill_normal(q);
        rng.fill_normal(k);
        const int p1 = static_cast<int>(rng.uniform_int(32));
        const int p2 = static_cast<int>(rng.uniform_int(32));
        for (int c = 1; c <= 8; ++c) {
            const MatF q1 = rope_rotate<float>(q, {p1}, 10000.0, head_dim);
            const MatF k1 = rope_rotate<float>(k, {p2}, 10000.0, head_dim);
            const MatF q2 = rope_rotate<float>(q, {p1 + c}, 10000.0, head_dim);
            const MatF k2 = rope_rotate<float>(k, {p2 + c}, 10000.0, head_dim);
            double d1 = 0.0, d2 = 0.0;
            for (int j = 0; j < head_dim; ++j) {
                d1 += static_cast<double>(q1(0, j)) * k1(0, j);
                d2 += static_cast<double>(q2(0, j)) * k2(0, j);
            }
            CHECK(std::abs(d1 - d2) < 1e-5);
        }
    }
    CHECK_THROWS_AS(rope_rotate<float>(random_mat(1, 6, 1), {0}, 10000.0, 3), VeditError);
    CHECK_THROWS_AS(rope_rotate<float>(random_mat(1, 8, 1), {-1}, 10000.0, 4), VeditError);
}

TEST_CASE("joint attention matches a hand-rolled two-token computation") {
    // Nt = Ns = 1, k = 1, one head: attention is a 2x2 softmax.
    ModelConfig cfg = tiny_config();
    cfg.attn_heads = 1;
    cfg.head_dim = 8;
    Rng rng(30);
    ParamStore<float> store;
    const VeditParamIds ids = register_vedit_params(store, cfg, rng);
    const BlockParamIds& blk = ids.blocks[0];
    const MatF target_h = random_mat(1, cfg.hidden_dim, 31);
    const MatF seen_h = random_mat(1, cfg.hidden_dim, 32);
    const auto [seen_out, target_out] =
        joint_attention(target_h, seen_h, {2}, {0}, store, blk, cfg);

    Rows q = linear(to_rows(target_h), store, blk.target.q_w, blk.target.q_b);
    Rows k = linear(to_rows(target_h), store, blk.target.k_w, blk.target.k_b);
    Rows v = linear(to_rows(target_h), store, blk.target.v_w, blk.target.v_b);
    q.push_back(linear(to_rows(seen_h), store, blk.seen.q_w, blk.seen.q_b)[0]);
    k.push_back(linear(to_rows(seen_h), store, blk.seen.k_w, blk.seen.k_b)[0]);
    v.push_back(linear(to_rows(seen_h), store, blk.seen.v_w, blk.seen.v_b)[0]);
    const Rows joint =
        attention_oracle(q, k, v, {2, 0}, cfg.attn_heads, cfg.head_dim, cfg.rope_base);
    const Rows expect_t = linear({joint[0]}, store, blk.target.o_w, blk.target.o_b);
    const Rows expect_s = linear({joint[1]}, store, blk.seen.o_w, blk.seen.o_b);
    CHECK(max_abs_diff(target_out, expect_t) < 1e-5);
    CHECK(max_abs_diff(seen_out, expect_s) < 1e-5);
}

TEST_CASE("joint attention is equivariant to permuting seen clips with their positions") {
    const ModelConfig cfg = tiny_config();
    Rng rng(33);
    ParamStore<float> store;
    const VeditParamIds ids = register_vedit_params(store, cfg, rng);
    const MatF target_h = random_mat(2, cfg.hidden_dim, 34);
    const MatF seen_h = random_mat(4, cfg.hidden_dim, 35);
    const std::vector<int> pos_t{4, 5};
    const std::vector<int> pos_s{0, 1, 2, 3};
    const auto [s1, t1] = joint_attention(target_h, seen_h, pos_t, pos_s, store, ids.blocks[0], cfg);

    const std::vector<int> perm{2, 0, 3, 1};
    MatF seen_p(4, cfg.hidden_dim);
    std::vector<int> pos_p(4);
    for (int i = 0; i < 4; ++i) {
        seen_p.row(i) = seen_h.row(perm[static_cast<size_t>(i)]);
        pos_p[static_cast<size_t>(i)] = pos_s[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    }
    const auto [s2, t2] = joint_attention(target_h, seen_p, pos_t, pos_p, store, ids.blocks[0], cfg);
    CHECK((t1 - t2).cwiseAbs().maxCoeff() < 1e-5f);
    for (int i = 0; i < 4; ++i) {
        CHECK((s1.row(perm[static_cast<size_t>(i)]) - s2.row(i)).cwiseAbs().maxCoeff() < 1e-5f);
    }
}

TEST_CASE("joint attention with zero value projections returns the output bias") {
    const ModelConfig cfg = tiny_config();
    Rng rng(36);
    ParamStore<float> store;
    const VeditParamIds ids = register_vedit_params(store, cfg, rng);
    const BlockParamIds& blk = ids.blocks[0];
    store.view(blk.target.v_w).setZero();
    store.view(blk.target.v_b).setZero();
    store.view(blk.seen.v_w).setZero();
    store.view(blk.seen.v_b).setZero();
    detail::init_normal(store, blk.target.o_b, rng, 0.5);
    detail::init_normal(store, blk.seen.o_b, rng, 0.5);
    const auto [seen_out, target_out] =
        joint_attention(random_mat(2, cfg.hidden_dim, 37), random_mat(3, cfg.hidden_dim, 38),
                        {3, 4}, {0, 1, 2}, store, blk, cfg);
    const MatF tb = store.view(blk.target.o_b);
    const MatF sb = store.view(blk.seen.o_b);
    for (int r = 0; r < 2; ++r) {
        CHECK((target_out.row(r) - tb.row(0)).cwiseAbs().maxCoeff() < 1e-6f);
    }
    for (int r = 0; r < 3; ++r) {
        CHECK((seen_out.row(r) - sb.row(0)).cwiseAbs().maxCoeff() < 1e-6f);
    }
}

TEST_CASE("freshly initialized block is an exact identity on both branches") {
    const ModelConfig cfg = tiny_config();
    Rng rng(40);
    ParamStore<float> store;
    const VeditParamIds ids = register_vedit_params(store, cfg, rng);
    const MatF target = random_mat(2, cfg.hidden_dim, 41);
    const MatF seen = random_mat(3, cfg.hidden_dim, 42);
    const MatF temb = random_mat(1, cfg.hidden_dim, 43);
    const auto [seen_out, target_out] =
        vedit_block(target, seen, temb, {3, 4}, {0, 1, 2}, store, ids.blocks[0], cfg);
    CHECK((target_out - target).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((seen_out - seen).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("block is nonlinear: scaling inputs does not scale outputs") {
    const ModelConfig cfg = tiny_config();
    Rng rng(44);
    ParamStore<float> store;
    const VeditParamIds ids = register_vedit_params(store, cfg, rng);
    for (float& p : store.data()) {
        p += 0.05f * static_cast<float>(rng.normal());
    }
    const MatF target = random_mat(1, cfg.hidden_dim, 45);
    const MatF seen = random_mat(2, cfg.hidden_dim, 46);
    const MatF temb = random_mat(1, cfg.hidden_dim, 47);
    const auto [s1, t1] = vedit_block(target, seen, temb, {2}, {0, 1}, store, ids.blocks[0], cfg);
    const auto [s2, t2] = vedit_block(MatF(2.0f * target), MatF(2.0f * seen), temb, {2}, {0, 1},
                                      store, ids.blocks[0], cfg);
    CHECK((t2 - 2.0f * t1).cwiseAbs().maxCoeff() > 1e-3f);
}

TEST_CASE("block matches the scalar-loop oracle on random parameters") {
    const ModelConfig cfg = tiny_config();
    Rng rng(48);
    ParamStore<float> store;
    const VeditParamIds ids = register_vedit_params(store, cfg, rng);
    for (float& p : store.data()) {
        p += 0.15f * static_cast<float>(rng.normal());
    }
    const MatF target = random_mat(2, cfg.hidden_dim, 49);
    const MatF seen = random_mat(2, cfg.hidden_dim, 50);
    const MatF temb = random_mat(1, cfg.hidden_dim, 51);
    const std::vector<int> pos_t{2, 3}, pos_s{0, 1};
    const auto [seen_out, target_out] =
        vedit_block(target, seen, temb, pos_t, pos_s, store, ids.blocks[0], cfg);
    const auto [expect_t, expect_s] =
        block_oracle(to_rows(target), to_rows(seen), silu_vec(to_rows(temb)[0]), pos_t, pos_s,
                     store, ids.blocks[0], cfg);
    CHECK(max_abs_diff(target_out, expect_t) < 1e-5);
    CHECK(max_abs_diff(seen_out, expect_s) < 1e-5);
}

TEST_CASE("fresh stack returns exactly zero velocity") {
    ModelConfig cfg = tiny_config();
    cfg.layers = 3;
    Rng rng(52);
    ParamStore<float> store;
    const VeditParamIds ids = register_vedit_params(store, cfg, rng);
    std::vector<MatF> targets{random_mat(1, cfg.token_dim, 53)};
    std::vector<MatF> seen{random_mat(1, cfg.token_dim, 54), random_mat(1, cfg.token_dim, 55)};
    const auto vel = vedit_forward<float>(targets, seen, {2}, {0, 1}, 0.5, store, ids, cfg);
    REQUIRE(vel.size() == 1);
    CHECK(vel[0].cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("appending identity-initialized blocks leaves the output unchanged") {
    ModelConfig cfg1 = tiny_config();
    ModelConfig cfg2 = cfg1;
    cfg2.layers = 2;
    Rng rng1(56);
    ParamStore<float> store1;
    const VeditParamIds ids1 = register_vedit_params(store1, cfg1, rng1);
    for (float& p : store1.data()) {
        p += 0.1f * static_cast<float>(rng1.normal());
    }
    Rng rng2(57);
    ParamStore<float> store2;
    const VeditParamIds ids2 = register_vedit_params(store2, cfg2, rng2);
    // Copy every shared tensor; block1 keeps its zero modulation (identity).
    for (const auto& e : store1.entries()) {
        store2.view(store2.find(e.name)) = store1.view(store1.find(e.name));
    }
    std::vector<MatF> targets{random_mat(1, cfg1.token_dim, 58)};
    std::vector<MatF> seen{random_mat(1, cfg1.token_dim, 59)};
    const auto v1 = vedit_forward<float>(targets, seen, {1}, {0}, 0.3, store1, ids1, cfg1);
    const auto v2 = vedit_forward<float>(targets, seen, {1}, {0}, 0.3, store2, ids2, cfg2);
    CHECK((v1[0] - v2[0]).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("full forward matches an end-to-end scalar oracle") {
    const ModelConfig cfg = tiny_config();
    Rng rng(60);
    ParamStore<float> store;
    const VeditParamIds ids = register_vedit_params(store, cfg, rng);
    for (float& p : store.data()) {
        p += 0.12f * static_cast<float>(rng.normal());
    }
    const MatF target_clip = random_mat(1, cfg.token_dim, 61);
    const MatF seen_a = random_mat(1, cfg.token_dim, 62);
    const MatF seen_b = random_mat(1, cfg.token_dim, 63);
    const double sigma = 0.42;
    const auto vel = vedit_forward<float>({target_clip}, {seen_a, seen_b}, {2}, {0, 1}, sigma,
                                          store, ids, cfg);

    const Vec temb = temb_oracle(sigma, store, ids, cfg);
    const Vec st = silu_vec(temb);
    Rows x_t = linear(to_rows(target_clip), store, ids.in_t_w, ids.in_t_b);
    Rows seen_rows = to_rows(seen_a);
    seen_rows.push_back(to_rows(seen_b)[0]);
    Rows x_s = linear(seen_rows, store, ids.in_s_w, ids.in_s_b);
    const auto [t_out, s_out] = block_oracle(x_t, x_s, st, {2}, {0, 1}, store, ids.blocks[0], cfg);
    const Rows mod = linear({st}, store, ids.final_mod_w, ids.final_mod_b);
    const Vec shift(mod[0].begin(), mod[0].begin() + cfg.hidden_dim);
    const Vec scale(mod[0].begin() + cfg.hidden_dim, mod[0].end());
    const Rows expect =
        linear(modulate_oracle(layernorm(t_out), scale, shift), store, ids.final_w, ids.final_b);
    CHECK(max_abs_diff(vel[0], expect) < 1e-5);
}

TEST_CASE("zeroing the seen branch output paths keeps target outputs finite") {
    const ModelConfig cfg = tiny_config();
    Rng rng(64);
    ParamStore<float> store;
    const VeditParamIds ids = register_vedit_params(store, cfg, rng);
    for (float& p : store.data()) {
        p += 0.1f * static_cast<float>(rng.normal());
    }
    for (const BlockParamIds& blk : ids.blocks) {
        store.view(blk.seen.o_w).setZero();
        store.view(blk.seen.o_b).setZero();
        store.view(blk.seen.ff1_w).setZero();
        store.view(blk.seen.ff2_w).setZero();
    }
    const auto vel = vedit_forward<float>({random_mat(1, cfg.token_dim, 65)},
                                          {random_mat(1, cfg.token_dim, 66)}, {1}, {0}, 0.6,
                                          store, ids, cfg);
    CHECK(all_finite(vel[0]));
}

TEST_CASE("positions at or beyond max_len are rejected") {
    const ModelConfig cfg = tiny_config();
    Rng rng(67);
    ParamStore<float> store;
    const VeditParamIds ids = register_vedit_params(store, cfg, rng);
    CHECK_THROWS_AS(vedit_forward<float>({random_mat(1, cfg.token_dim, 68)},
                                         {random_mat(1, cfg.token_dim, 69)}, {cfg.max_len}, {0},
                                         0.5, store, ids, cfg),
                    VeditError);
}
