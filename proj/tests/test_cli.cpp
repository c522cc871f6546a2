// Copyright (c) 2026 the vedit authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end CLI checks driven through subprocesses. argv[1] is the path to
// the vedit binary.
#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdlib>
#include <sys/wait.h>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace {

namespace fs = std::filesystem;

std::string g_binary;
fs::path g_dir;

int run(const std::string& args) {
    const std::string cmd = g_binary + " " + args + " >> " + (g_dir / "stdout.txt").string() +
                            " 2>> " + (g_dir / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

bool same_bytes(const fs::path& a, const fs::path& b) {
    const std::string ca = slurp(a);
    return !ca.empty() && ca == slurp(b);
}

std::string d(const std::string& name) { return (g_dir / name).string(); }

// step,lr,loss columns of a training log (wallclock stripped).
std::vector<std::string> loss_column(const fs::path& p) {
    std::vector<std::string> out;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) {
        const auto last = line.rfind(',');
        if (last != std::string::npos) {
            out.push_back(line.substr(0, last));
        }
    }
    return out;
}

}  // namespace

TEST_CASE("gen-data requires --out and is deterministic") {
    CHECK(run("gen-data --tasks 2 --vocab 4 --len 5 --seed 7") == 2);

    const std::string flags = "--tasks 2 --vocab 4 --len 5 --dim 8 --noise 0.05 "
                              "--train 48 --val 16 --seed 7";
    CHECK(run("gen-data --out " + d("a") + " " + flags) == 0);
    CHECK(run("gen-data --out " + d("b") + " " + flags) == 0);
    CHECK(fs::exists(d("a_train.json")));
    CHECK(fs::exists(d("a_train.bin")));
    CHECK(fs::exists(d("a_val.json")));
    CHECK(same_bytes(d("a_train.bin"), d("b_train.bin")));
    CHECK(same_bytes(d("a_val.bin"), d("b_val.bin")));
}

TEST_CASE("train produces checkpoints, a CSV log and honors the seed") {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string train_flags =
        "train --data " + d("a") + " --out " + d("run1") + " --task forecast --epochs 1 "
        "--batch 16 --layers 1 --hidden 16 --heads 2 --freq-dim 16 --steps 2 "
        "--cfg-scale 1 --lr-peak 2e-3 --eval-every 0 --seed 11 --log " + d("run1.csv");
    CHECK(run(train_flags) == 0);
    // Smoke bound from the op contract; observed ~0.3 s on the dev machine.
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(secs < 60.0);
    CHECK(fs::exists(d("run1/ckpt_epoch000.vedt")));
    CHECK(fs::exists(d("run1/final.vedt")));
    const std::string log = slurp(d("run1.csv"));
    CHECK(log.rfind("step,lr,loss,wallclock_ms", 0) == 0);

    // Same flags, fresh output dir: byte-identical final checkpoint.
    const std::string again =
        "train --data " + d("a") + " --out " + d("run2") + " --task forecast --epochs 1 "
        "--batch 16 --layers 1 --hidden 16 --heads 2 --freq-dim 16 --steps 2 "
        "--cfg-scale 1 --lr-peak 2e-3 --eval-every 0 --seed 11 --log " + d("run2.csv");
    CHECK(run(again) == 0);
    CHECK(same_bytes(d("run1/final.vedt"), d("run2/final.vedt")));
}

TEST_CASE("resume from a checkpoint is reproducible") {
    for (const char* name : {"resume1", "resume2"}) {
        const std::string cmd =
            "train --data " + d("a") + " --out " + d(name) + " --resume " +
            d("run1/final.vedt") + " --task forecast --epochs 1 --batch 16 --layers 1 "
            "--hidden 16 --heads 2 --freq-dim 16 --steps 2 --cfg-scale 1 --lr-peak 2e-3 "
            "--eval-every 0 --seed 13 --log " + d(std::string(name) + ".csv");
        CHECK(run(cmd) == 0);
    }
    // The wallclock column differs between runs; losses must not.
    CHECK(loss_column(d("resume1.csv")) == loss_column(d("resume2.csv")));
    CHECK_FALSE(loss_column(d("resume1.csv")).empty());
    CHECK(same_bytes(d("resume1/final.vedt"), d("resume2/final.vedt")));
}

TEST_CASE("masked reconstruction objective switches the loss path") {
    const std::string cmd =
        "train --data " + d("a") + " --out " + d("recon") + " --objective masked-recon "
        "--epochs 1 --batch 16 --layers 1 --hidden 16 --heads 2 --freq-dim 16 --steps 2 "
        "--cfg-scale 1 --eval-every 0 --seed 17";
    CHECK(run(cmd) == 0);
    CHECK(fs::exists(d("recon/final.vedt")));
}

TEST_CASE("eval writes a JSON report for every task surface") {
    CHECK(run("eval --ckpt " + d("run1/final.vedt") + " --data " + d("a") +
              " --task forecast --steps 2 --cfg-scale 1 --out " + d("forecast.json")) == 0);
    const std::string forecast = slurp(d("forecast.json"));
    CHECK(forecast.find("\"top1\"") != std::string::npos);

    CHECK(run("eval --ckpt " + d("run1/final.vedt") + " --data " + d("a") +
              " --task plan --horizon 3 --steps 2 --cfg-scale 1 --out " + d("plan.json")) == 0);
    const std::string plan = slurp(d("plan.json"));
    CHECK(plan.find("\"sr\"") != std::string::npos);
    CHECK(plan.find("\"macc\"") != std::string::npos);
    CHECK(plan.find("\"miou\"") != std::string::npos);

    CHECK(run("eval --ckpt " + d("run1/final.vedt") + " --data " + d("a") +
              " --task anticipate --Z 2 --K 2 --steps 2 --cfg-scale 1 --out " +
              d("ant.json")) == 0);
    CHECK(slurp(d("ant.json")).find("\"ed_at_z\"") != std::string::npos);

    // Planning horizon must match the data (N = horizon + 2).
    CHECK(run("eval --ckpt " + d("run1/final.vedt") + " --data " + d("a") +
              " --task plan --horizon 4 --steps 2 --cfg-scale 1") == 2);
}

TEST_CASE("eval scores prediction record files without a model") {
    std::ofstream f(d("preds.json"));
    f << R"({"records": [
        {"gt": [1, 2, 3], "candidates": [[1, 2, 3]]},
        {"gt": [4, 5, 6], "candidates": [[4, 5, 6]]}
    ]})";
    f.close();
    CHECK(run("eval --predictions " + d("preds.json") + " --task plan --out " +
              d("pred_report.json")) == 0);
    const std::string report = slurp(d("pred_report.json"));
    CHECK(report.find("\"sr\": 100.0") != std::string::npos);
    CHECK(report.find("\"macc\": 100.0") != std::string::npos);
    CHECK(report.find("\"miou\": 100.0") != std::string::npos);
}

TEST_CASE("config file sets defaults and flags override it") {
    std::ofstream f(d("cfg.json"));
    f << R"({"gen-data": {"tasks": 3, "vocab": 5, "len": 4, "dim": 8, "train": 8, "val": 4,
             "seed": 21}})";
    f.close();
    CHECK(run("--config " + d("cfg.json") + " gen-data --out " + d("cfgd")) == 0);
    const std::string manifest = slurp(d("cfgd_train.json"));
    CHECK(manifest.find("\"num_tasks\": 3") != std::string::npos);
    CHECK(manifest.find("\"num_steps\": 5") != std::string::npos);
}

TEST_CASE("corrupted inputs exit with the data error code") {
    std::ofstream bad(d("bad.vedt"), std::ios::binary);
    bad << "not a checkpoint at all";
    bad.close();
    CHECK(run("eval --ckpt " + d("bad.vedt") + " --data " + d("a") + " --task forecast") == 3);
    CHECK(run("eval --ckpt " + d("missing.vedt") + " --data " + d("a") + " --task forecast") == 3);
}

TEST_CASE("ablate emits one CSV row per configuration and rejects unknown axes") {
    CHECK(run("ablate --axis attention --seeds 1 --epochs 1 --out " + d("ablate.csv")) == 0);
    const std::string csv = slurp(d("ablate.csv"));
    CHECK(csv.rfind("axis,value,seed,final_train_loss,val_accuracy,wall_ms", 0) == 0);
    int lines = 0;
    for (char c : csv) {
        lines += c == '\n' ? 1 : 0;
    }
    CHECK(lines == 4);  // header + joint/self/cross
    CHECK(run("ablate --axis widths") == 2);
}

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: test_cli <path-to-vedit-binary>\n");
        return 1;
    }
    g_binary = argv[1];
    g_dir = fs::temp_directory_path() / ("vedit_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(g_dir);
    doctest::Context context;
    const int res = context.run();
    fs::remove_all(g_dir);
    return res;
}
