#include <doctest.h>

#include "emgvit/calibrate.hpp"
#include "toy_data.hpp"

using namespace emgvit;
using namespace emgvit::toy;

namespace {

TrainConfig calib_config() {
    TrainConfig c;
    c.max_epochs = 4;
    c.patience = 2;
    c.batch_size = 16;
    c.lr0 = 5e-3;
    c.lr_halving_epochs = {};
    c.seed = 3;
    return c;
}

struct Fixture {
    WindowSet::Source recs = toy_recordings(1, 0.4, 31, 30);
    Partitions parts = make_splits(recs, SplitPlan{}, toy_windows());
    ModelParams<double> pretrained;

    Fixture() {
        Rng init_rng(2);
        TrainConfig c = calib_config();
        c.max_epochs = 40;
        c.patience = 40;
        pretrained = train(ModelParams<double>::initialize(toy_model(0.0), init_rng), parts.train, parts.val, c).params;
    }
};

}  // namespace

TEST_CASE("calibration plan validation and overrides") {
    CalibrationPlan p;
    CHECK_NOTHROW(p.validate());
    p.reps_per_fold = 3;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = {};
    p.max_epochs = 5;
    p.patience = 9;
    TrainConfig base;
    base.early_stopping = false;
    const TrainConfig c = p.train_config(base);
    CHECK(c.max_epochs == 5);
    CHECK(c.patience == 5);
    CHECK(c.early_stopping);
    CHECK(c.lr_halving_epochs == base.lr_halving_epochs);
    CHECK(CalibrationPlan{}.train_config(base).max_epochs == 200);
}

TEST_CASE("projection-only calibration: fold counts, frozen backbone, fold independence") {
    const Fixture fx;
    const std::string backbone = frozen_hash(fx.pretrained);
    const std::string whole = checkpoint_hash(fx.pretrained);
    const RepSet calib_reps{1, 3, 4, 6};

    for (int k : {0, 1, 2}) {
        CalibrationPlan plan;
        plan.reps_per_fold = k;
        const auto out = calibrate(fx.pretrained, fx.parts.calib, fx.parts.test, calib_reps, plan, calib_config());
        CHECK(out.size() == (k == 0 ? 1u : k == 1 ? 4u : 6u));
        for (std::size_t f = 0; f < out.size(); ++f) {
            CHECK(out[f].fold_id == (k == 0 ? 0 : static_cast<int>(f) + 1));
            CHECK(static_cast<int>(out[f].reps.size()) == k);
            CHECK(frozen_hash(out[f].params) == backbone);
            if (k > 0) CHECK_FALSE(out[f].params.projection.value() == fx.pretrained.projection.value());
            CHECK(out[f].predictions.size() == fx.parts.test.size());
        }
        if (k == 2) {
            CHECK(out[0].reps == RepSet{1, 3});
            CHECK(out[5].reps == RepSet{4, 6});
        }
    }
    CHECK(checkpoint_hash(fx.pretrained) == whole);

    CalibrationPlan plan;
    plan.reps_per_fold = 1;
    const auto serial = calibrate(fx.pretrained, fx.parts.calib, fx.parts.test, calib_reps, plan, calib_config(), 1);
    const auto threaded = calibrate(fx.pretrained, fx.parts.calib, fx.parts.test, calib_reps, plan, calib_config(), 3);
    for (std::size_t f = 0; f < serial.size(); ++f)
        CHECK(checkpoint_hash(serial[f].params) == checkpoint_hash(threaded[f].params));
}

TEST_CASE("zero-rep mode ignores the fold content") {
    const Fixture fx;
    CalibrationPlan plan;
    plan.reps_per_fold = 0;
    const auto a = calibrate(fx.pretrained, fx.parts.calib, fx.parts.test, RepSet{1, 3, 4, 6}, plan, calib_config());
    const auto b = calibrate(fx.pretrained, WindowSet{}, fx.parts.test, RepSet{}, plan, calib_config());
    REQUIRE(a.size() == 1);
    REQUIRE(b.size() == 1);
    CHECK(a[0].predictions == b[0].predictions);
    CHECK(a[0].accuracy == evaluate_accuracy(fx.pretrained, fx.parts.test));
}

TEST_CASE("calibration recovers from a day-2 shift") {
    const Fixture fx;
    CalibrationPlan plan;
    plan.reps_per_fold = 0;
    const double zero =
        calibrate(fx.pretrained, fx.parts.calib, fx.parts.test, RepSet{1, 3, 4, 6}, plan, calib_config())[0].accuracy;
    plan.reps_per_fold = 2;
    plan.max_epochs = 60;
    plan.patience = 60;
    TrainConfig c = calib_config();
    c.lr0 = 2e-2;
    double two = 0.0;
    for (const auto& o : calibrate(fx.pretrained, fx.parts.calib, fx.parts.test, RepSet{1, 3, 4, 6}, plan, c))
        two += o.accuracy / 6.0;
    MESSAGE("0-rep " << zero << ", 2-rep " << two);
    CHECK(evaluate_accuracy(fx.pretrained, fx.parts.val) > 0.9);
    CHECK(two > zero + 0.2);
}

TEST_CASE("reinitialize redraws the projection and keeps the backbone") {
    const Fixture fx;
    CalibrationPlan plan;
    plan.reps_per_fold = 1;
    plan.max_epochs = 1;
    const auto tuned = calibrate(fx.pretrained, fx.parts.calib, fx.parts.test, RepSet{1, 3, 4, 6}, plan, calib_config());
    plan.reinitialize = true;
    const auto fresh = calibrate(fx.pretrained, fx.parts.calib, fx.parts.test, RepSet{1, 3, 4, 6}, plan, calib_config());
    for (std::size_t f = 0; f < tuned.size(); ++f) {
        CHECK(frozen_hash(fresh[f].params) == frozen_hash(fx.pretrained));
        CHECK(checkpoint_hash(fresh[f].params) != checkpoint_hash(tuned[f].params));
    }
}

TEST_CASE("calibration result rows") {
    const auto recs = toy_recordings(2, 0.4, 5, 10);
    TrainConfig c = calib_config();
    c.max_epochs = 2;
    c.strategy = PretrainStrategy::individuals;
    const auto models = pretrain<float>(recs, SplitPlan{}, toy_windows(), toy_model(), c);
    CalibrationPlan plan;
    plan.reps_per_fold = 2;
    plan.max_epochs = 1;
    const auto rows = run_calibration(recs, SplitPlan{}, toy_windows(), models, PretrainStrategy::individuals, plan, c);
    int all_rows = 0;
    for (const auto& r : rows) {
        CHECK(r.model == "ViT");
        CHECK(r.strategy == "PretrainedOnIndividuals");
        CHECK(r.window_samples == kToyT);
        all_rows += r.gesture == kAllGestures ? 1 : 0;
    }
    CHECK(all_rows == 2 * 6);
    CHECK(rows.size() == 2u * 6u * (1u + kGestures));
    CHECK_THROWS_AS(run_calibration(recs, SplitPlan{}, toy_windows(), models, PretrainStrategy::all, plan, c),
                    DataError);
}
