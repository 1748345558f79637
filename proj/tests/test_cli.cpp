#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <gtest/gtest.h>

#include "bireal/bireal.hpp"

using namespace bireal;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

Run run(const std::string& args) {
    const std::string cmd = std::string(BIREAL_CLI) + " " + args + " 2>/dev/null";
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    for (std::size_t n; (n = fread(buf, 1, sizeof buf, p)) > 0;) r.out.append(buf, n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("bireal_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    fs::path dir_;
};

const std::string kData = "--data synthetic:classes=3,size=8,n=40,spread=0.4,seed=5";
const std::string kQuick = "--epochs 2 --pretrain-epochs 2 --batch 16 --lr 0.05";

}  // namespace

TEST_F(Cli, HelpAndUsageErrors) {
    EXPECT_EQ(run("--help").code, 0);
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("train").code, 2);  // --data is required
    EXPECT_EQ(run("train " + kData + " --lr nope").code, 2);
    EXPECT_EQ(run("train " + kData + " --init sometimes").code, 2);
    EXPECT_EQ(run("train " + kData + " --batch 0").code, 2);
    EXPECT_EQ(run("train --data mnist://nowhere").code, 2);
    EXPECT_EQ(run("analyze --input-size 12by12").code, 2);
}

TEST_F(Cli, ErrorCategories) {
    EXPECT_EQ(run("eval --model " + path("missing.brm") + " " + kData).code, 3);
    EXPECT_EQ(run("train --data idx:" + path("no-img") + "," + path("no-lbl")).code, 3);
    EXPECT_EQ(run("analyze --spec no-such-preset").code, 6);
    EXPECT_EQ(run("analyze --spec bireal18 --input-size 0x0").code, 6);
    EXPECT_EQ(run("train " + kData + " --variant nonsense").code, 6);
    EXPECT_EQ(run("train " + kData + " --epochs 2 --init random --lr 1e30").code, 5);
}

TEST_F(Cli, TrainTwiceIsByteIdentical) {
    const auto a = path("a.brm"), b = path("b.brm");
    ASSERT_EQ(run("train " + kData + " " + kQuick + " --seed 7 --out " + a).code, 0);
    ASSERT_EQ(run("train " + kData + " " + kQuick + " --seed 7 --out " + b).code, 0);
    const auto bytes = slurp(a);
    ASSERT_FALSE(bytes.empty());
    EXPECT_EQ(bytes, slurp(b));
    EXPECT_TRUE(load_model(a).absorbed);
}

TEST_F(Cli, EvalReproducesTrainingResult) {
    const auto model = path("m.brm"), report = path("train.jsonl"), eval_report = path("eval.jsonl");
    ASSERT_EQ(run("train " + kData + " " + kQuick + " --val-fraction 0.25 --split-seed 3 --out " + model +
                  " --report " + report)
                  .code,
              0);
    ASSERT_EQ(run("eval --model " + model + " " + kData + " --val-fraction 0.25 --split-seed 3 --report " +
                  eval_report)
                  .code,
              0);
    double trained = -1, evaluated = -2;
    std::ifstream tr(report);
    for (std::string line; std::getline(tr, line);) {
        const auto j = nlohmann::json::parse(line);
        if (j["type"] == "final") trained = j["top1"];
    }
    std::ifstream ev(eval_report);
    std::string line;
    ASSERT_TRUE(std::getline(ev, line));
    evaluated = nlohmann::json::parse(line)["top1"];
    EXPECT_EQ(trained, evaluated);
}

TEST_F(Cli, TruncatedModelIsAChecksumError) {
    const auto model = path("m.brm");
    ASSERT_EQ(run("train " + kData + " " + kQuick + " --out " + model).code, 0);
    fs::resize_file(model, fs::file_size(model) - 9);
    EXPECT_EQ(run("eval --model " + model + " " + kData).code, 4);
}

TEST_F(Cli, ConfigFileIsOverriddenByFlags) {
    const auto cfg = path("cfg.json"), r1 = path("r1.jsonl"), r2 = path("r2.jsonl");
    std::ofstream(cfg) << R"({"epochs": 1, "pretrain_epochs": 1, "lr": 0.02, "batch": 16})";
    ASSERT_EQ(run("train " + kData + " --config " + cfg + " --report " + r1).code, 0);
    ASSERT_EQ(run("train " + kData + " --config " + cfg + " --lr 0.03 --report " + r2).code, 0);
    std::ifstream a(r1), b(r2);
    // the config echo lives in the final record
    nlohmann::json fa, fb;
    for (std::string l; std::getline(a, l);) fa = nlohmann::json::parse(l);
    for (std::string l; std::getline(b, l);) fb = nlohmann::json::parse(l);
    EXPECT_EQ(fa["config"]["epochs"], 1);
    EXPECT_DOUBLE_EQ(fa["config"]["lr"].get<double>(), 0.02);
    EXPECT_DOUBLE_EQ(fb["config"]["lr"].get<double>(), 0.03);
    EXPECT_EQ(fb["config"]["batch"], 16);

    std::ofstream(cfg) << R"({"epoch": 1})";
    EXPECT_EQ(run("train " + kData + " --config " + cfg).code, 2);
}

TEST_F(Cli, ZeroLearningRateKeepsInitialSigns) {
    // random init, no training: the stored bits are the signs of the initial draw
    const auto model = path("m.brm");
    ASSERT_EQ(run("train " + kData + " --init random --epochs 1 --lr 0 --bn-epochs 0 --seed 9 --out " + model).code,
              0);
    const auto net = load_model(model);
    auto fresh = build<float>(fit_spec_to_data(preset("tiny"), load_dataset(kData.substr(7))), 9);
    std::vector<BitTensor> saved, initial;
    detail::visit_units(net, [&](const ConvUnit<float>& u) {
        if (u.binary) saved.push_back(u.packed);
    });
    detail::visit_units(fresh, [&](const ConvUnit<float>& u) {
        if (u.binary) initial.push_back(sign_pack(u.weight));
    });
    ASSERT_EQ(saved.size(), initial.size());
    ASSERT_FALSE(saved.empty());
    for (std::size_t i = 0; i < saved.size(); ++i) EXPECT_EQ(saved[i], initial[i]) << i;
}

TEST_F(Cli, AnalyzeSelfBaselineAndJsonl) {
    const auto r = run("analyze --spec bireal18 --baseline self --format jsonl");
    ASSERT_EQ(r.code, 0);
    bool saw_total = false;
    std::istringstream in(r.out);
    for (std::string line; std::getline(in, line);) {
        const auto j = nlohmann::json::parse(line);
        if (j["type"] == "total") {
            saw_total = true;
            EXPECT_DOUBLE_EQ(j["memory_saving"].get<double>(), 1.0);
            EXPECT_DOUBLE_EQ(j["speedup"].get<double>(), 1.0);
        }
    }
    EXPECT_TRUE(saw_total);

    const auto t = run("analyze --spec bireal34 --format table");
    ASSERT_EQ(t.code, 0);
    EXPECT_NE(t.out.find("Mbit"), std::string::npos);
    EXPECT_NE(t.out.find("total"), std::string::npos);
}

TEST_F(Cli, CapabilityTable) {
    const auto r = run("capability --spec fig3 --format table");
    ASSERT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("289"), std::string::npos);
    EXPECT_NE(r.out.find("83521"), std::string::npos);
    const auto j = run("capability --spec fig3 --variant plain --format jsonl");
    ASSERT_EQ(j.code, 0);
    EXPECT_EQ(j.out.find("83521"), std::string::npos);
}
