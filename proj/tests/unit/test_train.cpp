#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

#include "gliomaforge/gradcheck.hpp"
#include "gliomaforge/random.hpp"
#include "gliomaforge/synthetic.hpp"
#include "gliomaforge/train.hpp"
#include "support/expect.hpp"
#include "support/oracles.hpp"

using namespace gliomaforge;

namespace {

using TD = Tensor<double>;
using TF = Tensor<float>;

// Hard one-hot probabilities N x 4 x S from per-voxel labels.
TD hard_probs(const std::vector<std::uint8_t>& labels, Shape shape) { return one_hot<double>(labels, shape); }

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.stage_channels = {8, 16, 24, 32};
    cfg.stage_heads = {2, 2, 3, 4};
    cfg.stage_depths = {1, 1, 1, 1};
    cfg.decoder_channels = 8;
    cfg.channel_attn_reduction = 4;
    return cfg;
}

std::vector<Sample> synthetic_samples(int n, std::uint64_t base_seed = 100) {
    std::vector<Sample> out;
    for (int i = 0; i < n; ++i)
        out.push_back(make_sample(synthesize_case("c" + std::to_string(i), base_seed + static_cast<std::uint64_t>(i))));
    return out;
}

TrainConfig quick_config() {
    TrainConfig cfg;
    cfg.crop = 32;
    cfg.batch_size = 2;
    cfg.augment = false;
    cfg.epochs_pretrain = 10;
    cfg.patience = 1000;
    cfg.lr = 3e-3;
    return cfg;
}

Sample ramp_sample(Grid3 g, std::uint64_t seed) {
    Rng rng(seed);
    Sample s;
    s.case_id = "ramp";
    s.grid = g;
    s.channels = 2;
    for (std::int64_t i = 0; i < 2 * g.count(); ++i) s.images.push_back(static_cast<float>(rng.normal(0.0, 1.0)));
    for (std::int64_t i = 0; i < g.count(); ++i) s.labels.push_back(static_cast<std::uint8_t>(rng.below(4)));
    return s;
}

} // namespace

// ---------------------------------------------------------------------------
// Losses

TEST(DiceLoss, PerfectOverlapIsZero) {
    const std::vector<std::uint8_t> labels{0, 1, 2, 3, 1, 1, 0, 3};
    const TD p = hard_probs(labels, {1, 4, 2, 2, 2});
    EXPECT_LE(dice_loss(p, p).item(), 1e-4);
}

TEST(DiceLoss, DisjointForegroundIsOne) {
    const std::vector<std::uint8_t> truth{1, 2, 3, 0, 0, 0, 0, 0};
    const std::vector<std::uint8_t> pred{0, 0, 0, 1, 2, 3, 0, 0};
    const TD g = hard_probs(truth, {1, 4, 2, 2, 2});
    const TD p = hard_probs(pred, {1, 4, 2, 2, 2});
    EXPECT_GE(dice_loss(p, g).item(), 0.999);
}

TEST(DiceLoss, PartialOverlapArithmetic) {
    // Class 1: |P| = |G| = 8 with 4 shared voxels; classes 2 and 3 absent.
    std::vector<std::uint8_t> truth(64, 0), pred(64, 0);
    for (int i = 0; i < 8; ++i) truth[static_cast<std::size_t>(i)] = 1;
    for (int i = 4; i < 12; ++i) pred[static_cast<std::size_t>(i)] = 1;
    const TD g = hard_probs(truth, {1, 4, 4, 4, 4});
    const TD p = hard_probs(pred, {1, 4, 4, 4, 4});
    const double eps = kDiceSmoothing;
    const double class1 = 1.0 - (8.0 + eps) / (16.0 + eps);
    EXPECT_NEAR(class1, 0.5, 1e-6);
    EXPECT_NEAR(dice_loss(p, g).item(), class1 / 3.0, 1e-12);
}

TEST(DiceLoss, ShapeMismatch) {
    EXPECT_ERROR_KIND(dice_loss(TD::zeros({1, 4, 2, 2, 2}), TD::zeros({1, 4, 2, 2, 1})), ErrorKind::shape);
}

TEST(CrossEntropy, UniformLogits) {
    const std::vector<std::uint8_t> labels{0, 1, 2, 3, 3, 2, 1, 0};
    EXPECT_NEAR(cross_entropy(TD::zeros({1, 4, 2, 2, 2}), labels).item(), std::log(4.0), 1e-6);
}

TEST(CrossEntropy, SaturatedCorrectClass) {
    const std::vector<std::uint8_t> labels{2, 2};
    std::vector<double> v(8, 0.0);
    v[2 * 2 + 0] = 20.0;
    v[2 * 2 + 1] = 20.0;
    EXPECT_LT(cross_entropy(TD::from({1, 4, 2}, v), labels).item(), 1e-6);
}

TEST(CrossEntropy, HandCase) {
    const std::vector<std::uint8_t> labels{0};
    const double ce = cross_entropy(TD::from({1, 4, 1}, {1, 0, 0, 0}), labels).item();
    EXPECT_NEAR(ce, std::log(1.0 + 3.0 / std::exp(1.0)), 1e-12);
    EXPECT_NEAR(ce, 0.7437, 5e-5);
}

TEST(CrossEntropy, LargeLogitsStayFinite) {
    const std::vector<std::uint8_t> labels{1};
    const double ce = cross_entropy(TD::from({1, 4, 1}, {1000, -1000, 0, 500}), labels).item();
    EXPECT_NEAR(ce, 2000.0, 1e-9);
}

TEST(CrossEntropy, InvalidLabel) {
    const std::vector<std::uint8_t> labels{0, 4};
    EXPECT_ERROR_KIND(cross_entropy(TD::zeros({1, 4, 2}), labels), ErrorKind::label);
    EXPECT_ERROR_KIND(composite_loss(TD::zeros({1, 4, 2}), labels), ErrorKind::label);
}

TEST(CompositeLoss, NearZeroForConfidentCorrectLogits) {
    const std::vector<std::uint8_t> labels{0, 1, 2, 3, 3, 2, 1, 0};
    std::vector<double> v(32, -30.0);
    for (std::size_t i = 0; i < labels.size(); ++i) v[labels[i] * 8 + i] = 30.0;
    EXPECT_LT(composite_loss(TD::from({1, 4, 2, 2, 2}, v), labels).item(), 1e-4);
}

TEST(CompositeLoss, BoundsEachComponentAndIsNonNegative) {
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        Rng rng(seed);
        std::vector<std::uint8_t> labels(16);
        for (auto& l : labels) l = static_cast<std::uint8_t>(rng.below(4));
        const TD logits = random_tensor<double>({2, 4, 2, 2, 2}, seed, 3.0);
        LossParts parts;
        const double total = composite_loss(logits, labels, &parts).item();
        EXPECT_GE(parts.dice, 0.0);
        EXPECT_GE(parts.cross_entropy, 0.0);
        EXPECT_GE(total, parts.dice);
        EXPECT_GE(total, parts.cross_entropy);
        EXPECT_NEAR(total, parts.dice + parts.cross_entropy, 1e-12);
    }
}

TEST(CompositeLoss, GradientCheckOnTwoCube) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        Rng rng(seed);
        std::vector<std::uint8_t> labels(8);
        for (auto& l : labels) l = static_cast<std::uint8_t>(rng.below(4));
        const GradCheckResult r = check_gradients([&](const std::vector<TD>& in) { return composite_loss(in[0], labels); },
                                                  {random_tensor<double>({1, 4, 2, 2, 2}, seed)});
        EXPECT_LT(r.max_relative_error, 1e-4) << "seed " << seed;
        EXPECT_GT(r.entries_checked, 0u);
    }
}

// ---------------------------------------------------------------------------
// AdamW and schedule

TEST(AdamW, FirstStepClosedForm) {
    double theta = 0.0, m = 0.0, v = 0.0;
    AdamHyper h;
    h.weight_decay = 1e-5;
    adamw_scalar(theta, 1.0, m, v, 1, 1e-4, h);
    EXPECT_NEAR(theta, -1e-4 / (1.0 + 1e-8), 1e-18);
}

TEST(AdamW, ZeroGradientWithoutDecayLeavesParameters) {
    std::vector<NamedTensor<double>> params{{"w", TD::from({3}, {1.5, -2.0, 0.25})}};
    OptimizerState state;
    AdamHyper h;
    h.weight_decay = 0.0;
    for (int i = 0; i < 5; ++i) adamw_step(params, state, 1e-3, h);
    EXPECT_EQ(params[0].tensor.values(), (std::vector<double>{1.5, -2.0, 0.25}));
    EXPECT_EQ(state.step, 5);
}

TEST(AdamW, ZeroGradientIsPureDecay) {
    std::vector<NamedTensor<double>> params{{"w", TD::from({2}, {2.0, -4.0})}};
    OptimizerState state;
    AdamHyper h;
    h.weight_decay = 0.1;
    adamw_step(params, state, 0.01, h);
    EXPECT_DOUBLE_EQ(params[0].tensor.values()[0], 2.0 * (1.0 - 0.01 * 0.1));
    EXPECT_DOUBLE_EQ(params[0].tensor.values()[1], -4.0 * (1.0 - 0.01 * 0.1));
}

TEST(AdamW, MatchesScalarReference) {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        AdamHyper h{rng.uniform(0.5, 0.99), rng.uniform(0.9, 0.9999), 1e-8, rng.uniform(0.0, 0.1)};
        const double lr = rng.uniform(1e-5, 1e-2);
        const long step0 = static_cast<long>(rng.below(50));
        double theta = rng.normal(0.0, 1.0), m = rng.normal(0.0, 0.1), v = rng.uniform(0.0, 0.1);
        oracle::AdamReference ref{lr, h.beta1, h.beta2, h.eps, h.weight_decay, theta, m, v, step0};
        for (int k = 0; k < 3; ++k) {
            const double g = rng.normal(0.0, 2.0);
            adamw_scalar(theta, g, m, v, step0 + k + 1, lr, h);
            ref.update(g);
            EXPECT_NEAR(theta, ref.theta, 1e-12);
            EXPECT_NEAR(m, ref.m, 1e-12);
            EXPECT_NEAR(v, ref.v, 1e-12);
        }
    }
}

TEST(AdamW, TensorStepUsesAccumulatedGradients) {
    TD w = TD::from({2}, {0.5, -0.5});
    w.set_requires_grad(true);
    std::vector<NamedTensor<double>> params{{"w", w}};
    backward(sum(mul(w, w)));
    OptimizerState state;
    AdamHyper h;
    adamw_step(params, state, 1e-2, h);
    double t0 = 0.5, m = 0, v = 0;
    adamw_scalar(t0, 1.0, m, v, 1, 1e-2, h);
    EXPECT_DOUBLE_EQ(params[0].tensor.values()[0], t0);
    ASSERT_EQ(state.m.size(), 1u);
    EXPECT_EQ(state.m[0].size(), 2u);
}

TEST(CosineLr, EndpointsAndMidpoint) {
    EXPECT_EQ(cosine_lr(0, 75, 1e-4), 1e-4);
    EXPECT_EQ(cosine_lr(75, 75, 1e-4), 0.0);
    EXPECT_NEAR(cosine_lr(37.5, 75, 1e-4), 5e-5, 1e-18);
}

TEST(CosineLr, MonotoneNonIncreasing) {
    for (int total : {1, 2, 25, 75}) {
        double prev = cosine_lr(0, total, 1e-4);
        for (int t = 1; t <= total; ++t) {
            const double lr = cosine_lr(t, total, 1e-4);
            EXPECT_LE(lr, prev);
            EXPECT_GE(lr, 0.0);
            prev = lr;
        }
    }
}

// ---------------------------------------------------------------------------
// Augmentation and cropping

TEST(Augment, NeutralParametersAreIdentity) {
    const Sample s = ramp_sample({6, 5, 4}, 1);
    const Sample out = apply_augment(s, AugmentParams{});
    EXPECT_EQ(out.images, s.images);
    EXPECT_EQ(out.labels, s.labels);
}

TEST(Augment, DoubleFlipIsIdentity) {
    const Sample s = ramp_sample({6, 5, 4}, 2);
    for (int axis = 0; axis < 3; ++axis) {
        Sample t = s;
        flip_axis(t, axis);
        EXPECT_NE(t.images, s.images);
        flip_axis(t, axis);
        EXPECT_EQ(t.images, s.images);
        EXPECT_EQ(t.labels, s.labels);
    }
}

TEST(Augment, FlipMovesVoxelToMirror) {
    Sample s = ramp_sample({3, 4, 5}, 3);
    const float corner = s.images[0];
    flip_axis(s, 2);
    EXPECT_EQ(s.images[4], corner);
}

TEST(Augment, LabelClosureAndDimensions) {
    const Sample s = make_sample(synthesize_case("aug", 9));
    TrainConfig cfg;
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
        Rng rng(seed);
        const AugmentParams p = sample_augment(rng, cfg);
        EXPECT_LE(std::abs(p.angle_deg), 10.0);
        EXPECT_GE(p.scale, 0.9);
        EXPECT_LE(p.scale, 1.1);
        const Sample out = apply_augment(s, p);
        EXPECT_EQ(out.grid, s.grid);
        EXPECT_EQ(out.images.size(), s.images.size());
        ASSERT_EQ(out.labels.size(), s.labels.size());
        const std::set<std::uint8_t> values(out.labels.begin(), out.labels.end());
        for (auto v : values) EXPECT_LE(v, 3);
        const std::set<std::uint8_t> before(s.labels.begin(), s.labels.end());
        for (auto v : values) EXPECT_TRUE(before.count(v)) << int(v);
    }
}

TEST(Augment, SameSeedSameOutput) {
    const Sample s = make_sample(synthesize_case("aug", 10));
    TrainConfig cfg;
    Rng a(5), b(5);
    const Sample x = apply_augment(s, sample_augment(a, cfg));
    const Sample y = apply_augment(s, sample_augment(b, cfg));
    EXPECT_EQ(x.images, y.images);
    EXPECT_EQ(x.labels, y.labels);
}

TEST(Augment, ScaleAboutCentrePreservesCentreVoxel) {
    Sample s = ramp_sample({5, 5, 5}, 4);
    AugmentParams p;
    p.scale = 1.1;
    p.angle_deg = 7.0;
    const Sample out = apply_augment(s, p);
    const std::size_t centre = (2 * 5 + 2) * 5 + 2;
    EXPECT_NEAR(out.images[centre], s.images[centre], 1e-6);
    EXPECT_EQ(out.labels[centre], s.labels[centre]);
}

TEST(RandomCrop, FullSizeIsIdentity) {
    const Sample s = ramp_sample({8, 8, 8}, 5);
    Rng rng(1);
    const Sample c = random_crop(s, 8, rng);
    EXPECT_EQ(c.images, s.images);
    EXPECT_EQ(c.labels, s.labels);
}

TEST(RandomCrop, PadsSmallVolumes) {
    const Sample s = ramp_sample({4, 6, 8}, 6);
    Rng rng(1);
    const Sample c = random_crop(s, 8, rng);
    EXPECT_EQ(c.grid, (Grid3{8, 8, 8}));
    EXPECT_EQ(c.images[0], s.images[0]);
    EXPECT_EQ(c.images[static_cast<std::size_t>((7 * 8 + 7) * 8 + 7)], 0.0f);
}

TEST(RandomCrop, AllBackgroundIsUnconstrained) {
    Sample s = ramp_sample({16, 16, 16}, 7);
    std::fill(s.labels.begin(), s.labels.end(), 0);
    std::set<std::int64_t> firsts;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        const Sample c = random_crop(s, 8, rng);
        EXPECT_EQ(c.grid, (Grid3{8, 8, 8}));
        firsts.insert(static_cast<std::int64_t>(c.images[0] * 1e6f));
    }
    EXPECT_GT(firsts.size(), 20u);
}

TEST(RandomCrop, ForegroundBiasOverTwoHundredDraws) {
    // A 4^3 tumour in a 48^3 volume: an unbiased 16^3 crop contains it
    // rarely, the retry rule lifts that above the required 80 of 200.
    Sample s;
    s.grid = {48, 48, 48};
    s.channels = 1;
    s.images.assign(static_cast<std::size_t>(s.grid.count()), 1.0f);
    s.labels.assign(static_cast<std::size_t>(s.grid.count()), 0);
    for (int z = 30; z < 34; ++z)
        for (int y = 30; y < 34; ++y)
            for (int x = 30; x < 34; ++x) s.labels[static_cast<std::size_t>((z * 48 + y) * 48 + x)] = 2;
    int hits = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Rng rng(derive_seed(99, seed));
        const Sample c = random_crop(s, 16, rng);
        hits += std::any_of(c.labels.begin(), c.labels.end(), [](std::uint8_t l) { return l != 0; });
    }
    EXPECT_GE(hits, 80);
}

TEST(Batching, StackAndMismatch) {
    const Sample a = ramp_sample({2, 2, 2}, 1), b = ramp_sample({2, 2, 2}, 2);
    const TF x = stack_images<float>({a, b});
    EXPECT_EQ(x.shape(), (Shape{2, 2, 2, 2, 2}));
    EXPECT_EQ(x.values()[16], b.images[0]);
    EXPECT_EQ(stack_labels({a, b}).size(), 16u);
    EXPECT_ERROR_KIND(stack_images<float>({a, ramp_sample({2, 2, 3}, 3)}), ErrorKind::shape);
    Sample unlabeled = a;
    unlabeled.labels.clear();
    EXPECT_ERROR_KIND(stack_labels({unlabeled}), ErrorKind::label);
}

// ---------------------------------------------------------------------------
// Evaluation helpers

TEST(MeanForegroundDice, Values) {
    const std::vector<std::uint8_t> t{0, 1, 1, 2, 2, 3, 0, 0};
    EXPECT_DOUBLE_EQ(mean_foreground_dice(t, t), 1.0);
    const std::vector<std::uint8_t> p{0, 1, 0, 2, 2, 0, 0, 0};
    // class 1: 2/3, class 2: 1, class 3: 0
    EXPECT_NEAR(mean_foreground_dice(p, t), (2.0 / 3.0 + 1.0 + 0.0) / 3.0, 1e-12);
    const std::vector<std::uint8_t> bg(8, 0);
    EXPECT_DOUBLE_EQ(mean_foreground_dice(bg, bg), 1.0);
    EXPECT_ERROR_KIND(mean_foreground_dice(t, std::vector<std::uint8_t>(3, 0)), ErrorKind::shape);
}

TEST(PredictLabels, PadsIndivisibleGridAndReturnsOriginalSize) {
    const SegFormer3DPlus<float> model(small_config());
    Sample s = make_sample(synthesize_case("p", 3, SyntheticOptions{{20, 24, 28}}));
    const auto labels = predict_labels(model, s);
    EXPECT_EQ(labels.size(), static_cast<std::size_t>(20 * 24 * 28));
    for (auto l : labels) EXPECT_LE(l, 3);
    EXPECT_EQ(labels, predict_labels(model, s));
}

// ---------------------------------------------------------------------------
// Training loop

TEST(Fit, LossTrendsDownOnFourCases) {
    const auto data = synthetic_samples(4);
    SegFormer3DPlus<float> model(small_config());
    const FitResult r = fit(model, data, {}, quick_config(), FitMode::pretrain);
    ASSERT_EQ(r.log.size(), 10u);
    const double first = (r.log[0].train_loss + r.log[1].train_loss) / 2.0;
    const double last = (r.log[8].train_loss + r.log[9].train_loss) / 2.0;
    EXPECT_LT(last, first);
    EXPECT_EQ(r.log[0].lr, 3e-3);
    EXPECT_FALSE(r.best_checkpoint.empty());
    EXPECT_GE(r.best_epoch, 0);
}

TEST(Fit, SameSeedSameLog) {
    const auto data = synthetic_samples(2);
    TrainConfig cfg = quick_config();
    cfg.epochs_pretrain = 3;
    cfg.augment = true;
    SegFormer3DPlus<float> a(small_config()), b(small_config());
    const FitResult ra = fit(a, data, {}, cfg, FitMode::pretrain);
    const FitResult rb = fit(b, data, {}, cfg, FitMode::pretrain);
    EXPECT_EQ(fit_log_csv(ra.log), fit_log_csv(rb.log));
    EXPECT_EQ(ra.best_checkpoint, rb.best_checkpoint);
}

TEST(Fit, PatienceZeroStopsAfterFirstNonImprovingEpoch) {
    // A vanishing learning rate leaves predictions fixed, so epoch 1 cannot
    // beat epoch 0.
    const auto data = synthetic_samples(2);
    TrainConfig cfg = quick_config();
    cfg.lr = 1e-30;
    cfg.weight_decay = 0.0;
    cfg.patience = 0;
    SegFormer3DPlus<float> model(small_config());
    const FitResult r = fit(model, data, {}, cfg, FitMode::pretrain);
    EXPECT_TRUE(r.stopped_early);
    ASSERT_EQ(r.log.size(), 2u);
    EXPECT_EQ(r.best_epoch, 0);
    EXPECT_LE(r.log[1].val_dice, r.log[0].val_dice);
}

TEST(Fit, ModelEndsWithBestWeights) {
    const auto data = synthetic_samples(2);
    TrainConfig cfg = quick_config();
    cfg.epochs_pretrain = 3;
    SegFormer3DPlus<float> model(small_config());
    const FitResult r = fit(model, data, {}, cfg, FitMode::pretrain);
    EXPECT_EQ(model.save(), r.best_checkpoint);
}

TEST(Fit, FinetuneUsesItsOwnBudget) {
    const auto data = synthetic_samples(1);
    TrainConfig cfg = quick_config();
    cfg.epochs_finetune = 2;
    SegFormer3DPlus<float> model(small_config());
    EXPECT_EQ(fit(model, data, {}, cfg, FitMode::finetune).log.size(), 2u);
}

TEST(Fit, NanLossAborts) {
    auto data = synthetic_samples(1);
    std::fill(data[0].images.begin(), data[0].images.end(), std::numeric_limits<float>::quiet_NaN());
    SegFormer3DPlus<float> model(small_config());
    EXPECT_ERROR_KIND(fit(model, data, {}, quick_config(), FitMode::pretrain), ErrorKind::numerical);
}

TEST(Fit, RejectsBadInputs) {
    SegFormer3DPlus<float> model(small_config());
    EXPECT_ERROR_KIND(fit(model, {}, {}, quick_config(), FitMode::pretrain), ErrorKind::insufficient_data);
    auto data = synthetic_samples(1);
    TrainConfig cfg = quick_config();
    cfg.crop = 48;
    EXPECT_ERROR_KIND(fit(model, data, {}, cfg, FitMode::pretrain), ErrorKind::config);
    data[0].labels.clear();
    EXPECT_ERROR_KIND(fit(model, data, {}, quick_config(), FitMode::pretrain), ErrorKind::label);
    cfg = quick_config();
    cfg.lr = 0;
    EXPECT_ERROR_KIND(cfg.validate(), ErrorKind::config);
}

TEST(Fit, LogCsvFormat) {
    const std::string csv = fit_log_csv({{0, 1e-4, 0.5, 0.25}});
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,lr,train_loss,val_dice");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}

TEST(TrainConfig, RoundTripThroughKeyValues) {
    TrainConfig cfg;
    cfg.lr = 3e-4;
    cfg.crop = 96;
    cfg.augment = false;
    cfg.seed = 7;
    const TrainConfig back = TrainConfig::from_config(cfg.to_config());
    EXPECT_EQ(back.lr, 3e-4);
    EXPECT_EQ(back.crop, 96);
    EXPECT_FALSE(back.augment);
    EXPECT_EQ(back.seed, 7u);
    EXPECT_EQ(TrainConfig{}.epochs_pretrain, 75);
    EXPECT_EQ(TrainConfig{}.epochs_finetune, 25);
    EXPECT_EQ(TrainConfig{}.patience, 20);
}
