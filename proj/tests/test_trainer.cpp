#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bireal/trainer.hpp"
#include "oracles.hpp"

using namespace bireal;

namespace {

Dataset blobs(std::size_t classes, std::size_t per_class, std::uint64_t seed = 1, double spread = 0.5) {
    BlobsConfig c;
    c.classes = classes;
    c.per_class = per_class;
    c.seed = seed;
    c.spread = spread;
    return synthetic_blobs(c);
}

NetworkSpec tiny_for(const Dataset& d) {
    auto s = preset("tiny");
    s.num_classes = d.num_classes;
    return s;
}

TrainConfig quick_config() {
    TrainConfig c;
    c.epochs = 2;
    c.pretrain_epochs = 2;
    c.batch_size = 16;
    c.lr = 0.05;
    c.seed = 11;
    return c;
}

bool sign_equal(const RealTensor& a, const RealTensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.numel(); ++i)
        if ((a[i] >= 0) != (b[i] >= 0)) return false;
    return true;
}

}  // namespace

TEST(Schedule, MilestonesDecayByTen) {
    const LrSchedule s{0.01, {10, 15}, 0.1};
    EXPECT_DOUBLE_EQ(s.at(0), 0.01);
    EXPECT_DOUBLE_EQ(s.at(9), 0.01);
    EXPECT_NEAR(s.at(10), 0.001, 1e-15);
    EXPECT_NEAR(s.at(15), 0.0001, 1e-15);
    EXPECT_NEAR(s.at(19), 0.0001, 1e-15);
}

TEST(Schedule, DefaultMilestonesScaleWithEpochs) {
    TrainConfig c;
    c.epochs = 20;
    EXPECT_EQ(c.effective_milestones(20), (std::vector<std::size_t>{10, 15}));
    EXPECT_EQ(c.effective_milestones(1), (std::vector<std::size_t>{}));
    EXPECT_EQ(c.effective_milestones(2), (std::vector<std::size_t>{1}));
}

TEST(Config, Validation) {
    TrainConfig c;
    c.epochs = 5;
    c.milestones = {3, 2};
    EXPECT_THROW(c.validate(), Error);
    c.milestones = {5};
    EXPECT_THROW(c.validate(), Error);
    c.milestones = {};
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), Error);
    c.batch_size = 4;
    c.lr = -1;
    EXPECT_THROW(c.validate(), Error);
    c.lr = std::nan("");
    EXPECT_THROW(c.validate(), Error);
}

TEST(Pretrain, ClipReachesSeparableTrainAccuracy) {
    const auto d = blobs(2, 40, 2, 0.3);
    auto cfg = quick_config();
    cfg.pretrain_epochs = 20;
    cfg.init_kind = InitKind::Clip;
    RunReport rep;
    const auto net = pretrain(tiny_for(d), d, cfg, nullptr, &rep);
    ASSERT_EQ(rep.epochs.size(), 20u);
    double best = 0;
    for (const auto& e : rep.epochs) best = std::max(best, e.train_acc);
    EXPECT_GE(best, 0.99);
    ForwardOptions o{Mode::PretrainClip};
    EXPECT_GE(evaluate(net, d, o).top1, 0.99);
}

TEST(Pretrain, RandomInitSkipsPretraining) {
    const auto d = blobs(2, 20);
    auto cfg = quick_config();
    cfg.init_kind = InitKind::Random;
    EXPECT_THROW(pretrain(tiny_for(d), d, cfg), Error);
    RunReport rep;
    const auto net = initialize(tiny_for(d), d, cfg, nullptr, &rep);
    EXPECT_TRUE(rep.epochs.empty());
    EXPECT_EQ(net.stem.weight, build<float>(tiny_for(d), cfg.seed).stem.weight);
}

TEST(Pretrain, ClipAndReluDifferOnlyInNonlinearity) {
    const auto d = blobs(2, 20);
    auto cfg = quick_config();
    cfg.pretrain_epochs = 0;
    cfg.init_kind = InitKind::Clip;
    const auto a = pretrain(tiny_for(d), d, cfg);
    cfg.init_kind = InitKind::Relu;
    const auto b = pretrain(tiny_for(d), d, cfg);
    // zero epochs: identical parameters, so only the mode differs
    const auto pa = parameters(a, true), pb = parameters(b, true);
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i].tensor, *pb[i].tensor);
    const auto x = d.slice(0, 4).images;
    EXPECT_NE(forward(a, x, ForwardOptions{Mode::PretrainClip}), forward(b, x, ForwardOptions{Mode::PretrainRelu}));
}

TEST(StepOne, ZeroLearningRateKeepsParameters) {
    const auto d = blobs(3, 20);
    auto cfg = quick_config();
    cfg.lr = 0;
    cfg.epochs = 3;
    auto net = build<float>(tiny_for(d), 5);
    const auto before = net;
    train_step_one(net, d, cfg);
    const auto pa = parameters(before);
    const auto pb = parameters(net);
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i].tensor, *pb[i].tensor) << pa[i].name;
}

TEST(StepOne, SingleConvUpdateMatchesHandComputation) {
    // One binary 1x2x2 filter over a 1x3x3 input, loss = sum(G * out).
    const Tensor<double> a({1, 1, 3, 3}, {0.5, -0.2, 0.1, -0.7, 0.3, 0.9, -0.4, 0.8, -0.6});
    Tensor<double> w({1, 1, 2, 2}, {0.3, -0.6, 1.2, -0.1});
    const Tensor<double> G({1, 1, 2, 2}, {1.0, -2.0, 0.5, 3.0});
    const ConvGeometry g{1, 1, 2, 2, 1, 0};
    const double lr = 0.1;

    // hand computation
    const double alpha = (0.3 + 0.6 + 1.2 + 0.1) / 4;
    double sa[9];
    for (int i = 0; i < 9; ++i) sa[i] = a[i] >= 0 ? 1 : -1;
    double grad_wbar[4] = {0, 0, 0, 0};
    for (int oy = 0; oy < 2; ++oy)
        for (int ox = 0; ox < 2; ++ox)
            for (int ky = 0; ky < 2; ++ky)
                for (int kx = 0; kx < 2; ++kx) grad_wbar[ky * 2 + kx] += G[oy * 2 + ox] * sa[(oy + ky) * 3 + ox + kx];
    double want[4];
    for (int i = 0; i < 4; ++i) {
        const double gate = (w[i] >= -1 && w[i] < 1) ? 1 : 0;
        want[i] = w[i] - lr * gate * grad_wbar[i];
    }

    // library path
    const auto wbar = magnitude_aware_binarize(w);
    EXPECT_DOUBLE_EQ(wbar[0], alpha);
    const auto grads = float_conv2d_backward(G, sign_forward(a), wbar, g);
    const auto gw = magnitude_aware_backward(w, grads.grad_w);
    Tensor<double> v(w.shape());
    sgd_step(w, gw, v, SgdHyper<double>{lr, 0.9, 0.0});
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(w[i], want[i], 1e-15);
    EXPECT_EQ(w[2], 1.2);  // |w| >= 1 is gated
}

TEST(Absorb, WeightsBecomeExactSignsAndStepTwoKeepsBits) {
    const auto d = blobs(3, 20);
    auto cfg = quick_config();
    auto net = build<float>(tiny_for(d), 6);
    train_step_one(net, d, cfg);
    const auto before = net;
    absorb_bn_and_freeze(net, d, cfg);
    EXPECT_TRUE(net.absorbed);
    const auto pa = parameters(before);
    const auto pb = parameters(net);
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i].role == ParamRole::BinaryWeight) {
            for (float v : pb[i].tensor->data()) ASSERT_TRUE(v == 1.0f || v == -1.0f);
            EXPECT_TRUE(sign_equal(*pa[i].tensor, *pb[i].tensor)) << pa[i].name;
        } else if (pa[i].role == ParamRole::RealWeight || pa[i].role == ParamRole::Bias) {
            EXPECT_EQ(*pa[i].tensor, *pb[i].tensor) << pa[i].name;  // frozen in step two
        }
    }
    detail::visit_units(net, [](const ConvUnit<float>& u) {
        if (u.binary) {
            EXPECT_EQ(u.packed, sign_pack(u.weight));
        }
    });
}

TEST(Evaluate, DeterministicAndChanceOnNoise) {
    std::mt19937_64 rng(7);
    const std::size_t k = 4, n = 400;
    Dataset d;
    d.num_classes = k;
    d.images = oracle::random_tensor<float>({n, 1, 8, 8}, rng);
    for (std::size_t i = 0; i < n; ++i) d.labels.push_back(static_cast<std::uint32_t>(i % k));
    auto spec = preset("tiny");
    spec.num_classes = k;
    const auto net = build<float>(spec, 7);
    ForwardOptions o{Mode::BinaryTrain};
    const auto r1 = evaluate(net, d, o), r2 = evaluate(net, d, o);
    EXPECT_EQ(r1, r2);
    const double sigma = std::sqrt(0.25 * 0.75 / static_cast<double>(n));
    EXPECT_NEAR(r1.top1, 0.25, 3 * sigma);
    EXPECT_FALSE(r1.top5);  // fewer than 5 classes
}

TEST(Evaluate, SeparableTrainSetIsMemorized) {
    const auto d = blobs(2, 30, 3, 0.2);
    auto cfg = quick_config();
    cfg.pretrain_epochs = 10;
    cfg.epochs = 6;
    const auto r = run_training(tiny_for(d), d, d, cfg);
    EXPECT_DOUBLE_EQ(r.report.final_eval.top1, 1.0);
}

TEST(RunTraining, IdenticalSeedGivesIdenticalReport) {
    const auto d = blobs(3, 20);
    const auto [tr, va] = split_holdout(d, 0.25);
    const auto cfg = quick_config();
    const auto a = run_training(tiny_for(d), tr, va, cfg);
    const auto b = run_training(tiny_for(d), tr, va, cfg);
    EXPECT_EQ(a.report, b.report);
    ASSERT_FALSE(a.report.epochs.empty());
    EXPECT_EQ(a.report.epochs.front().phase, "pretrain");
    EXPECT_EQ(a.report.epochs.back().phase, "bn");
    EXPECT_EQ(a.report.config.at("seed"), cfg.seed);
    for (const auto& e : a.report.epochs) {
        EXPECT_GE(e.train_acc, 0.0);
        EXPECT_LE(e.train_acc, 1.0);
        EXPECT_GE(e.val_acc, 0.0);
        EXPECT_LE(e.val_acc, 1.0);
    }
}

TEST(RunTraining, DivergenceAborts) {
    const auto d = blobs(2, 20);
    auto cfg = quick_config();
    cfg.pretrain_lr = 1e30;
    EXPECT_THROW(run_training(tiny_for(d), d, d, cfg), DivergenceError);
}

TEST(Ablation, GridOfOneIsTheRecipe) {
    const auto d = blobs(3, 20);
    const auto [tr, va] = split_holdout(d, 0.25);
    const auto cfg = quick_config();
    const auto cells = run_ablation(tiny_for(d), {BlockVariant::BiReal}, {cfg}, tr, va);
    ASSERT_EQ(cells.size(), 1u);
    ASSERT_TRUE(cells[0].report);
    auto direct = run_training(tiny_for(d), tr, va, cfg);
    EXPECT_EQ(cells[0].report->final_eval, direct.report.final_eval);
}

TEST(Ablation, PairedCellsAreDeterministicAndDistinct) {
    const auto d = blobs(3, 20);
    const auto [tr, va] = split_holdout(d, 0.25);
    auto a = quick_config(), b = quick_config();
    a.activation_backward = SurrogateKind::ClipSTE;
    b.activation_backward = SurrogateKind::PiecewisePoly;
    const auto run1 = run_ablation(tiny_for(d), {BlockVariant::BiReal}, {a, b}, tr, va);
    const auto run2 = run_ablation(tiny_for(d), {BlockVariant::BiReal}, {a, b}, tr, va);
    ASSERT_EQ(run1.size(), 2u);
    EXPECT_EQ(*run1[0].report, *run2[0].report);
    EXPECT_EQ(*run1[1].report, *run2[1].report);
    EXPECT_FALSE(*run1[0].report == *run1[1].report);
}

TEST(Ablation, FailingCellIsRecorded) {
    const auto d = blobs(2, 10);
    auto good = quick_config(), bad = quick_config();
    bad.milestones = {7};  // beyond epochs
    const auto cells = run_ablation(tiny_for(d), {BlockVariant::BiReal, BlockVariant::Plain}, {bad, good}, d, d);
    ASSERT_EQ(cells.size(), 4u);
    EXPECT_FALSE(cells[0].report);
    EXPECT_FALSE(cells[0].error.empty());
    EXPECT_TRUE(cells[1].report);
    EXPECT_TRUE(cells[3].report);
    EXPECT_TRUE(cells[0].to_json().contains("error"));
}

TEST(Ablation, GridShape) {
    const auto grid = ablation_grid(TrainConfig{});
    EXPECT_EQ(grid.size(), 8u);
}
