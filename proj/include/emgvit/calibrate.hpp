#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emgvit/evalstats.hpp"
#include "emgvit/train.hpp"

namespace emgvit {

/// Few-shot calibration settings. Zero overrides inherit the training
/// configuration.
struct CalibrationPlan {
    int reps_per_fold = 2;
    /// Redraw the projection before calibrating instead of fine-tuning the
    /// pretrained values.
    bool reinitialize = false;
    int max_epochs = 0;
    int patience = 0;

    void validate() const;
    /// `base` with the overrides applied and early stopping on.
    [[nodiscard]] TrainConfig train_config(const TrainConfig& base) const;
};

/// SHA-256 over the names and values of every tensor outside the
/// projection.
template <typename Scalar>
std::string frozen_hash(const ModelParams<Scalar>& params) {
    ByteWriter out;
    params.for_each([&](const std::string& name, const Tensor<Scalar>& t) {
        if (t.node() == params.projection.node() || t.node() == params.projection_bias.node()) return;
        out.put_string(name);
        out.put(static_cast<std::uint32_t>(t.rows()));
        out.put(static_cast<std::uint32_t>(t.cols()));
        out.put_array(t.value().data(), static_cast<std::size_t>(t.size()));
    });
    return to_hex(sha256(std::span<const std::uint8_t>(out.bytes())));
}

template <typename Scalar>
struct FoldOutcome {
    int fold_id = 0;  // 1-based; 0 for the uncalibrated evaluation
    RepSet reps;
    ModelParams<Scalar> params;
    TrainLog log;
    std::vector<int> predictions;  // over the test set
    double accuracy = 0.0;
};

namespace detail {
inline constexpr std::uint64_t kCalibrationStream = 0x43414c42ull;
}

/// Per fold: copy `pretrained`, retrain only the projection on the fold's
/// calibration windows (early stopping on calibration accuracy) and score
/// `test`. With 0 reps per fold the pretrained model is scored once.
template <typename Scalar>
std::vector<FoldOutcome<Scalar>> calibrate(const ModelParams<Scalar>& pretrained, const WindowSet& calib,
                                           const WindowSet& test, const RepSet& calib_reps,
                                           const CalibrationPlan& plan, const TrainConfig& base, int jobs = 1) {
    plan.validate();
    if (test.empty()) throw DataError("calibrate: empty test partition");
    detail::check_window_shape(pretrained.config, test, "calibrate");
    const auto folds = calibration_folds(calib_reps, plan.reps_per_fold);
    const TrainConfig cfg = plan.train_config(base);
    const auto labels = test.labels();

    if (folds.empty()) {
        FoldOutcome<Scalar> out;
        out.params = pretrained.clone();
        out.predictions = predict_set(pretrained, test, cfg.eval_batch_size);
        out.accuracy = accuracy(out.predictions, labels);
        return {std::move(out)};
    }

    std::vector<FoldOutcome<Scalar>> out(folds.size());
    parallel_for(folds.size(), jobs, [&](std::size_t f) {
        const RepSet& reps = folds[f];
        const WindowSet fold_set = calib.filter([&](const RecordingInfo& i) { return reps.contains(i.repetition); });
        if (fold_set.empty()) throw DataError("calibrate: fold " + std::to_string(f + 1) + " has no windows");
        const Rng fold_rng = Rng(base.seed, detail::kCalibrationStream).split(f + 1);
        ModelParams<Scalar> start = pretrained.clone();
        if (plan.reinitialize) {
            Rng init = fold_rng.split(0);
            auto& e = start.projection.mutable_value();
            for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = static_cast<Scalar>(init.truncated_normal(0.02));
            start.projection_bias.mutable_value().setZero();
        }
        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = fold_rng.split(1).next_u64();
        auto trained = train(start, fold_set, fold_set, fold_cfg, ParamSubset::projection_only);
        FoldOutcome<Scalar>& o = out[f];
        o.fold_id = static_cast<int>(f) + 1;
        o.reps = reps;
        o.predictions = predict_set(trained.params, test, cfg.eval_batch_size);
        o.accuracy = accuracy(o.predictions, labels);
        o.params = std::move(trained.params);
        o.log = std::move(trained.log);
    });
    return out;
}

/// Calibrates every subject's Day-2 data from the matching pretrained model
/// (the pooled one for PretrainStrategy::all) and returns model "ViT" result
/// rows, one ALL row plus one per gesture for every fold.
template <typename Scalar>
std::vector<ResultRow> run_calibration(const WindowSet::Source& recordings, const SplitPlan& split,
                                       const dsp::WindowSpec& windows,
                                       const std::vector<PretrainedModel<Scalar>>& models, PretrainStrategy strategy,
                                       const CalibrationPlan& plan, const TrainConfig& base, int jobs = 1) {
    const auto subjects = subject_ids(*recordings);
    std::vector<std::vector<ResultRow>> per_subject(subjects.size());
    auto model_for = [&](int subject) -> const PretrainedModel<Scalar>& {
        const int want = strategy == PretrainStrategy::all ? 0 : subject;
        for (const auto& m : models)
            if (m.subject == want) return m;
        throw DataError("no pretrained model for subject " + std::to_string(subject) + " under " +
                        strategy_name(strategy));
    };
    for (int s : subjects) (void)model_for(s);
    parallel_for(subjects.size(), jobs, [&](std::size_t i) {
        const int subject = subjects[i];
        const Partitions parts = make_splits(recordings, split, windows, {subject});
        const auto outcomes = calibrate(model_for(subject).params, parts.calib, parts.test, split.calib_reps, plan, base);
        const auto labels = parts.test.labels();
        for (const auto& o : outcomes) {
            const ResultRow row{subject, "ViT", strategy_name(strategy), plan.reps_per_fold, o.fold_id,
                                windows.window_samples, kAllGestures, 0.0, 0};
            append_result_rows(per_subject[i], row, o.predictions, labels);
        }
    });
    std::vector<ResultRow> rows;
    for (auto& v : per_subject) rows.insert(rows.end(), v.begin(), v.end());
    return rows;
}

}  // namespace emgvit
