#pragma once

#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <json.hpp>

#include "emgvit/alda.hpp"
#include "emgvit/calibrate.hpp"
#include "emgvit/checkpoint.hpp"
#include "emgvit/dsp.hpp"
#include "emgvit/evalstats.hpp"
#include "emgvit/train.hpp"

namespace emgvit {

inline constexpr int kConfigSchemaVersion = 1;

struct SyntheticSource {
    int subjects = 5;
    std::uint64_t seed = 2024;
    SyntheticShiftConfig shift{};
};

/// A manifest path selects real data; an empty one selects the generator.
struct DatasetSource {
    std::string manifest;
    SyntheticSource synthetic{};

    [[nodiscard]] bool is_synthetic() const { return manifest.empty(); }
};

enum class Precision { f32, f64 };

/// One file drives every subcommand. `output_dir`, `jobs` and the eval batch
/// size do not affect results and are left out of the hash.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    DatasetSource dataset{};
    bool filter = true;
    dsp::FilterChainSpec filters{};
    dsp::WindowSpec windows{};
    ModelConfig model{};
    TrainConfig train{};
    /// Pre-training strategies and calibration modes (reps per fold) of the
    /// experiment; subcommands may run any subset under the same hash.
    std::vector<PretrainStrategy> strategies{PretrainStrategy::all, PretrainStrategy::individuals};
    std::vector<int> calibration_modes{0, 1, 2};
    /// Epochs of the same-day baseline (no validation set); 0 uses
    /// train.max_epochs.
    int intraday_epochs = 0;
    CalibrationPlan calibration{};
    AldaConfig alda{};
    Precision precision = Precision::f32;
    std::string output_dir = "emgvit_out";
    int jobs = 1;

    /// Throws ConfigError listing every violated field.
    void validate() const;
    /// Canonical SHA-256 of the result-relevant fields.
    [[nodiscard]] std::string hash() const;
    /// TrainConfig with the global seed and `strategy` applied.
    [[nodiscard]] TrainConfig train_config(PretrainStrategy strategy = PretrainStrategy::all) const;
    /// CalibrationPlan for one mode.
    [[nodiscard]] CalibrationPlan calibration_plan(int reps_per_fold) const;
};

/// Values from the reference setup (full model, 200 epochs).
ExperimentConfig reference_config();
/// Reduced model and schedule sized for a single desktop core.
ExperimentConfig desk_config();

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Unknown keys and type or range problems are all reported together in one
/// ConfigError. Missing keys keep the values of `defaults`.
ExperimentConfig config_from_json(const nlohmann::json& j, const ExperimentConfig& defaults = reference_config());
ExperimentConfig load_config(const std::string& path, const ExperimentConfig& defaults = reference_config());

/// Applies "a.b.c=value" overrides (value parsed as JSON, else taken as a
/// string) to the JSON form of `cfg`.
ExperimentConfig apply_overrides(const ExperimentConfig& cfg, const std::vector<std::string>& overrides);

using ProgressSink = std::function<void(const std::string&)>;

/// Loads or generates the recordings and applies the filter chain.
WindowSet::Source prepare_recordings(const ExperimentConfig& cfg, const ProgressSink& log = {});

/// Same-day baseline: per subject, train from scratch on `day`'s train reps
/// for a fixed number of epochs and score its test reps. Rows carry model
/// "ViT" and strategy "IntradayDay1"/"IntradayDay2".
template <typename Scalar>
std::vector<ResultRow> run_intraday(const ExperimentConfig& cfg, const WindowSet::Source& recordings, Day day,
                                    const ProgressSink& log = {}) {
    const SplitPlan plan = SplitPlan::intraday(day);
    TrainConfig tc = cfg.train_config();
    tc.early_stopping = false;
    if (cfg.intraday_epochs > 0) tc.max_epochs = cfg.intraday_epochs;
    const std::string label = day == Day::day1 ? "IntradayDay1" : "IntradayDay2";
    const auto subjects = subject_ids(*recordings);
    std::vector<std::vector<ResultRow>> per_subject(subjects.size());
    parallel_for(subjects.size(), cfg.jobs, [&](std::size_t i) {
        const int subject = subjects[i];
        const Partitions parts = make_splits(recordings, plan, cfg.windows, {subject});
        Rng init_rng(tc.seed, 0x1417ull);
        const auto init = ModelParams<Scalar>::initialize(cfg.model, init_rng);
        const auto trained = train(init, parts.train, WindowSet{}, tc);
        const auto pred = predict_set(trained.params, parts.test, tc.eval_batch_size);
        append_result_rows(per_subject[i],
                           {subject, "ViT", label, 0, 0, cfg.windows.window_samples, kAllGestures, 0.0, 0}, pred,
                           parts.test.labels());
        if (log) log(label + " subject " + std::to_string(subject) + ": accuracy " + std::to_string(accuracy(pred, parts.test.labels())));
    });
    std::vector<ResultRow> rows;
    for (auto& v : per_subject) rows.insert(rows.end(), v.begin(), v.end());
    return rows;
}

/// Pre-trains under `strategy` with the experiment's split and schedule.
template <typename Scalar>
std::vector<PretrainedModel<Scalar>> run_pretraining(const ExperimentConfig& cfg, const WindowSet::Source& recordings,
                                                     PretrainStrategy strategy, const ProgressSink& log = {}) {
    const TrainConfig tc = cfg.train_config(strategy);
    std::function<void(int, const EpochRecord&)> cb;
    if (log)
        cb = [&](int subject, const EpochRecord& r) {
            char line[160];
            std::snprintf(line, sizeof(line), "%s %s epoch %d: loss %.4f train %.4f val %.4f",
                          strategy_name(strategy), subject == 0 ? "pooled" : ("subject " + std::to_string(subject)).c_str(),
                          r.epoch, r.loss, r.train_accuracy, r.val_accuracy);
            log(line);
        };
    return pretrain<Scalar>(recordings, SplitPlan{}, cfg.windows, cfg.model, tc, cfg.jobs, cb);
}

/// File stem of a pre-trained model: the strategy name, with "_sNN" for a
/// per-subject model.
inline std::string checkpoint_stem(PretrainStrategy strategy, int subject) {
    std::string stem = strategy_name(strategy);
    if (subject != 0) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "_s%02d", subject);
        stem += buf;
    }
    return stem;
}

struct InterdayOutcome {
    std::vector<ResultRow> rows;
    /// (checkpoint stem, checkpoint hash) of every pre-trained model.
    std::vector<std::pair<std::string, std::string>> checkpoints;
};

/// Every arm of the cross-day experiment: pre-training under each configured
/// strategy and calibration in each configured mode, the Day-2 same-day
/// baseline, and ALDA in each mode.
template <typename Scalar>
InterdayOutcome run_interday(const ExperimentConfig& cfg, const WindowSet::Source& recordings,
                             const ProgressSink& log = {}) {
    InterdayOutcome out;
    const SplitPlan split{};
    auto report = [&](const std::vector<ResultRow>& rows) {
        out.rows.insert(out.rows.end(), rows.begin(), rows.end());
        if (!log) return;
        for (const auto& a : aggregate(rows))
            if (a.key.gesture == kAllGestures) {
                char line[160];
                std::snprintf(line, sizeof(line), "%s: mean %.4f std %.4f over %d subjects", a.key.str().c_str(),
                              a.mean, a.std, a.subjects);
                log(line);
            }
    };
    for (const PretrainStrategy strategy : cfg.strategies) {
        const auto models = run_pretraining<Scalar>(cfg, recordings, strategy, log);
        for (const auto& m : models)
            out.checkpoints.emplace_back(checkpoint_stem(strategy, m.subject), checkpoint_hash(m.params));
        for (const int reps : cfg.calibration_modes)
            report(run_calibration(recordings, split, cfg.windows, models, strategy, cfg.calibration_plan(reps),
                                   cfg.train_config(strategy), cfg.jobs));
    }
    report(run_intraday<Scalar>(cfg, recordings, Day::day2, log));
    for (const int reps : cfg.calibration_modes)
        report(run_alda_experiment(recordings, split, cfg.windows, cfg.alda, reps, cfg.jobs));
    return out;
}

/// Calls `f(std::type_identity<Scalar>{})` with the configured precision.
template <typename F>
decltype(auto) with_precision(Precision p, F&& f) {
    if (p == Precision::f64) return f(std::type_identity<double>{});
    return f(std::type_identity<float>{});
}

}  // namespace emgvit
