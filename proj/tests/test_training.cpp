#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace tfcmnn;

namespace {

StructureSpec tiny_spec(std::size_t width = 15, std::optional<double> keep = std::nullopt)
{
    StructureSpec s = parse_structure("C4 K3 S2 F16");
    s.width         = width;
    s.dropout       = keep;
    return s;
}

FrameDataset synthetic(std::size_t per_class, std::uint64_t seed, double sigma = 0.3)
{
    SyntheticSpec s;
    s.frames_per_class = per_class;
    s.seed             = seed;
    s.sigma            = sigma;
    return generate_synthetic(s);
}

TrainConfig small_config(std::size_t epochs)
{
    TrainConfig c;
    c.max_epochs = epochs;
    c.batch_size = 20;
    return c;
}

double max_row_norm(Model& m)
{
    double mx = 0.0;
    for ( const auto& r : constrained_rows(m) )
        mx = std::max(mx, r.norm());
    return mx;
}

} // namespace

// ---------------------------------------------------------------------------
// Learning-rate schedule

TEST(LRSchedule, HalvesOnRegressionOnly)
{
    LRSchedule s(0.1, 5);
    bool stop = false;
    std::tie(s, stop) = lr_schedule_update(s, 0.50);
    EXPECT_EQ(s.current_lr, 0.1);
    std::tie(s, stop) = lr_schedule_update(s, 0.60);
    EXPECT_EQ(s.current_lr, 0.1);
    std::tie(s, stop) = lr_schedule_update(s, 0.60);  // equal is not a regression
    EXPECT_EQ(s.current_lr, 0.1);
    std::tie(s, stop) = lr_schedule_update(s, 0.55);
    EXPECT_EQ(s.current_lr, 0.05);
    EXPECT_EQ(s.halvings_used, 1u);
    EXPECT_FALSE(stop);
}

TEST(LRSchedule, ComparesWithPreviousEpochNotBest)
{
    LRSchedule s(0.1, 5);
    bool stop = false;
    for ( double score : {0.9, 0.5, 0.6} )
        std::tie(s, stop) = lr_schedule_update(s, score);
    // 0.6 < 0.9 but > 0.5: only one regression so far.
    EXPECT_EQ(s.halvings_used, 1u);
}

TEST(LRSchedule, FiveRegressionsStop)
{
    LRSchedule s(0.1, 5);
    bool stop = false;
    std::tie(s, stop) = lr_schedule_update(s, 0.9);
    for ( int i = 1; i <= 5; ++i )
    {
        ASSERT_FALSE(stop);
        std::tie(s, stop) = lr_schedule_update(s, 0.9 - 0.1 * i);
        EXPECT_EQ(s.current_lr, 0.1 / std::pow(2.0, i));
    }
    EXPECT_TRUE(stop);
    EXPECT_EQ(s.current_lr, 0.1 / 32);
}

TEST(LRSchedule, RejectsScoresOutsideUnitInterval)
{
    EXPECT_THROW(lr_schedule_update(LRSchedule{}, 1.5), DomainError);
    EXPECT_THROW(lr_schedule_update(LRSchedule{}, std::nan("")), DomainError);
}

// ---------------------------------------------------------------------------
// SGD step

TEST(SgdStep, ZeroLearningRateLeavesWeights)
{
    Model m         = build_tfcmnn(tiny_spec(), 1);
    apply_max_norm(m, {0.8, true});
    const auto ds   = synthetic(5, 1);
    const auto before = flatten_parameters(m);
    SeededRng r(1);
    sgd_step(m, ds, {0, 1, 2, 3, 4}, 0.0, r, {0.8, true});
    EXPECT_EQ(flatten_parameters(m), before);
}

TEST(SgdStep, MatchesFiniteDifferenceOfBatchLoss)
{
    // Without max-norm, one step must equal w - lr * mean finite-difference gradient.
    StructureSpec spec = parse_structure("C2 K3 S2 F6");
    spec.width         = 8;
    const Model m0     = build_tfcmnn(spec, 3);
    SyntheticSpec ss;
    ss.width            = 8;
    ss.frames_per_class = 1;
    const auto ds       = generate_synthetic(ss);
    const std::vector<std::size_t> batch{0, 1, 2, 3};

    auto batch_loss = [&](const Tensor& theta) {
        Model probe = m0;
        assign_parameters(probe, theta);
        double s = 0.0;
        for ( auto i : batch )
            s += loss_of(forward(probe, ds.examples[i].patch, Mode::test), ds.examples[i].label);
        return s / static_cast<double>(batch.size());
    };
    const Tensor theta   = flatten_parameters(m0);
    const Tensor numeric = finite_diff_gradient(batch_loss, theta, 1e-6);

    Model m = m0;
    SeededRng r(1);
    const double lr = 0.05;
    sgd_step(m, ds, batch, lr, r, {0.8, false});
    const Tensor after = flatten_parameters(m);
    std::size_t bad    = 0;
    for ( std::size_t i = 0; i < theta.size(); ++i )
    {
        const double step = (theta[i] - after[i]) / lr;
        bad += relative_error(step, numeric[i]) > 1e-4;
    }
    EXPECT_LE(bad, theta.size() / 100);
}

TEST(SgdStep, ResultsIndependentOfThreads)
{
    Model a       = build_tfcmnn(tiny_spec(15, 0.5), 2);
    Model b       = a;
    const auto ds = synthetic(10, 2);
    std::vector<std::size_t> batch(ds.size());
    for ( std::size_t i = 0; i < batch.size(); ++i )
        batch[i] = i;
    SeededRng ra(5), rb(5);
    sgd_step(a, ds, batch, 0.1, ra, {0.8, true}, 0, 0);
    sgd_step(b, ds, batch, 0.1, rb, {0.8, true}, 0, 4);
    EXPECT_EQ(flatten_parameters(a), flatten_parameters(b));
}

TEST(SgdStep, EmptyBatchRejected)
{
    Model m = build_tfcmnn(tiny_spec(), 1);
    SeededRng r(1);
    EXPECT_THROW(sgd_step(m, synthetic(1, 1), {}, 0.1, r, {}), ConfigurationError);
}

// ---------------------------------------------------------------------------
// Evaluation

TEST(Evaluate, RecognitionScoreCounts)
{
    EXPECT_EQ(recognition_score({1, 2, 3, 4}, {1, 2, 3, 0}), 0.75);
    EXPECT_THROW(recognition_score({}, {}), DataError);
    EXPECT_THROW(recognition_score({1}, {1, 2}), DataError);
}

TEST(Evaluate, UntrainedModelNearChance)
{
    // 30 balanced classes, labels independent of the input.
    SeededRng r(9);
    FrameDataset ds;
    ds.width = 15;
    for ( int i = 0; i < 3000; ++i )
    {
        Tensor p({kNumCoefficients, 15});
        for ( auto& v : p.data() )
            v = r.normal();
        ds.examples.push_back({std::move(p), i % 30, 0});
    }
    const Model m = build_tfcmnn(tiny_spec(), 4);
    EXPECT_NEAR(evaluate(m, ds), 1.0 / 30.0, 0.02);
    EXPECT_THROW(evaluate(m, FrameDataset{}), DataError);
}

TEST(Evaluate, ThreadCountDoesNotMatter)
{
    const Model m = build_tfcmnn(tiny_spec(), 4);
    const auto ds = synthetic(50, 3);
    EXPECT_EQ(predict(m, ds, 0), predict(m, ds, 3));
    EXPECT_EQ(mean_loss(m, ds, 0), mean_loss(m, ds, 5));
}

// ---------------------------------------------------------------------------
// Training loop

TEST(Train, ZeroEpochsReportsInitialScores)
{
    Model m       = build_tfcmnn(tiny_spec(), 1);
    const auto ds = synthetic(10, 1);
    const auto rep = train(small_config(0), m, ds, ds, ds);
    ASSERT_EQ(rep.epochs.size(), 1u);
    EXPECT_EQ(rep.epochs_run, 0u);
    EXPECT_EQ(rep.epochs[0].epoch, 0u);
    EXPECT_GE(rep.final_dev(), 0.0);
}

TEST(Train, ZeroLearningRateFreezesScores)
{
    Model m       = build_tfcmnn(tiny_spec(), 1);
    const auto ds = synthetic(10, 1);
    auto cfg      = small_config(3);
    cfg.lr0       = 0.0;
    const auto rep = train(cfg, m, ds, ds, ds);
    for ( const auto& e : rep.epochs )
        EXPECT_EQ(e.dev_score, rep.epochs[0].dev_score);
}

TEST(Train, RowNormsStayInsideBall)
{
    Model m  = build_tfcmnn(tiny_spec(), 1);
    auto cfg = small_config(4);
    cfg.lr0  = 0.5;
    const auto ds = synthetic(25, 1);
    train(cfg, m, ds, ds, ds, [&](const EpochRecord&) { EXPECT_LE(max_row_norm(m), 0.8 + 1e-9); });
    EXPECT_LE(max_row_norm(m), 0.8 + 1e-9);
}

TEST(Train, ReachesHighDevScoreOnSyntheticTask)
{
    Model m  = build_tfcmnn(tiny_spec(), 7);
    auto cfg = small_config(10);
    const auto rep = train(cfg, m, synthetic(100, 1), synthetic(25, 2), synthetic(25, 3));
    EXPECT_GE(rep.final_dev(), 0.95);
    EXPECT_TRUE(rep.epochs_to(0.95).has_value());
}

TEST(Train, LossDecreasesWithSmallSteps)
{
    Model m  = build_tfcmnn(tiny_spec(), 8);
    auto cfg = small_config(3);
    cfg.lr0  = 0.01;
    const auto rep = train(cfg, m, synthetic(50, 1), synthetic(10, 2), synthetic(10, 3));
    EXPECT_LT(rep.epochs.back().train_loss, rep.epochs.front().train_loss);
}

TEST(Train, DeterministicAndThreadIndependent)
{
    const auto tr = synthetic(30, 1), dv = synthetic(10, 2), ev = synthetic(10, 3);
    auto run = [&](std::size_t threads) {
        Model m     = build_tfcmnn(tiny_spec(15, 0.5), 5);
        auto cfg    = small_config(3);
        cfg.threads = threads;
        const auto rep = train(cfg, m, tr, dv, ev);
        return std::make_pair(report_csv(rep), encode_checkpoint(m));
    };
    const auto a = run(0), b = run(0), c = run(4);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, c);
}

TEST(Train, ShuffleVisitsEveryExampleOncePerEpoch)
{
    for ( std::uint64_t epoch = 1; epoch <= 3; ++epoch )
    {
        std::vector<std::size_t> seen;
        for ( const auto& b : batch_iterator(123, 20, 42, epoch) )
            seen.insert(seen.end(), b.begin(), b.end());
        std::sort(seen.begin(), seen.end());
        for ( std::size_t i = 0; i < seen.size(); ++i )
            ASSERT_EQ(seen[i], i);
    }
}

TEST(Train, DivergenceAbortsWithLastGoodWeights)
{
    Model m  = build_tfcmnn(tiny_spec(), 1);
    auto cfg = small_config(5);
    cfg.lr0  = 1e300;
    cfg.max_norm.enabled = false;
    const auto ds  = synthetic(10, 1, 5.0);
    const auto rep = train(cfg, m, ds, ds, ds);
    EXPECT_TRUE(rep.aborted);
    EXPECT_FALSE(rep.abort_reason.empty());
    for ( double v : flatten_parameters(m).data() )
        EXPECT_TRUE(std::isfinite(v));
}

TEST(Train, ScheduleStopIsReported)
{
    Model m  = build_tfcmnn(tiny_spec(), 1);
    auto cfg = small_config(200);
    cfg.max_halvings = 1;
    cfg.lr0  = 2.0;  // noisy enough to regress quickly
    const auto rep = train(cfg, m, synthetic(10, 1, 2.0), synthetic(10, 2, 2.0), synthetic(5, 3, 2.0));
    EXPECT_TRUE(rep.stopped_by_schedule);
    EXPECT_EQ(rep.halvings, 1u);
    EXPECT_EQ(rep.final_lr, 1.0);
}

TEST(Train, ConfigurationErrors)
{
    Model m       = build_tfcmnn(tiny_spec(), 1);
    const auto ds = synthetic(5, 1);
    auto cfg      = small_config(1);
    cfg.batch_size = 0;
    EXPECT_THROW(train(cfg, m, ds, ds, ds), ConfigurationError);
    EXPECT_THROW(train(small_config(1), m, ds, FrameDataset{}, ds), DataError);
    EXPECT_THROW(train(small_config(1), m, FrameDataset{}, ds, ds), DataError);
    Model narrow = build_tfcmnn(tiny_spec(9), 1);
    EXPECT_THROW(train(small_config(1), narrow, ds, ds, ds), DataError);
}

TEST(Report, CsvHasZeroSecondsByDefault)
{
    TrainingReport rep;
    rep.epochs.push_back({0, 0.1, 3.4, 0.5, std::nan(""), 12.5});
    EXPECT_EQ(report_csv(rep), "epoch,lr,train_loss,dev_score,eval_score,seconds\n0,0.1,3.4,0.5,nan,0\n");
    EXPECT_EQ(report_csv(rep, true), "epoch,lr,train_loss,dev_score,eval_score,seconds\n0,0.1,3.4,0.5,nan,12.5\n");
}

TEST(Report, SummaryTimeIsZeroByDefault)
{
    TrainingReport rep;
    rep.epochs.push_back({0, 0.1, 3.4, 0.5, std::nan(""), 7200.0});
    const Model m = build_tfcmnn(tiny_spec(), 1);
    EXPECT_EQ(report_summary(rep, m)["training_time_hours"].get<double>(), 0.0);
    EXPECT_EQ(report_summary(rep, m, true)["training_time_hours"].get<double>(), 2.0);
    EXPECT_TRUE(report_summary(rep, m)["eval_score"].is_null());
    EXPECT_EQ(report_summary(rep, m)["parameters"].get<std::size_t>(), param_count(m).total);
}
