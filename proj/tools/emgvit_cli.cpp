#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>

#include "emgvit/experiment.hpp"
#include "emgvit/window_cache.hpp"

using namespace emgvit;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Common {
    std::string config_path;
    std::string profile = "desk";
    std::vector<std::string> overrides;
    int jobs = 0;
    bool quiet = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("-c,--config", config_path, "experiment config (JSON)");
        cmd->add_option("--profile", profile, "defaults for fields the config leaves out")
            ->check(CLI::IsMember({"desk", "reference"}));
        cmd->add_option("-s,--set", overrides, "override a config field, e.g. train.max_epochs=20");
        cmd->add_option("-j,--jobs", jobs, "worker threads (overrides config jobs)")->check(CLI::PositiveNumber);
        cmd->add_flag("-q,--quiet", quiet, "no progress output");
    }

    [[nodiscard]] ExperimentConfig load() const {
        const ExperimentConfig defaults = profile == "reference" ? reference_config() : desk_config();
        ExperimentConfig cfg = config_path.empty() ? defaults : load_config(config_path, defaults);
        cfg = apply_overrides(cfg, overrides);
        if (jobs > 0) cfg.jobs = jobs;
        return cfg;
    }

    [[nodiscard]] ProgressSink sink() const {
        if (quiet) return {};
        return [](const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); };
    }
};

fs::path out_dir(const ExperimentConfig& cfg, const char* sub) {
    const fs::path p = fs::path(cfg.output_dir) / sub;
    fs::create_directories(p);
    return p;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

/// ALL rows go to `path`, per-gesture rows to `<stem>_gestures.csv`.
void write_results(const fs::path& path, const ExperimentConfig& cfg, const std::vector<ResultRow>& rows) {
    ExperimentReport all{cfg.hash(), cfg.seed, {}}, gestures{cfg.hash(), cfg.seed, {}};
    for (const auto& r : rows) (r.gesture == kAllGestures ? all : gestures).rows.push_back(r);
    auto main_out = open_out(path);
    write_report_csv(main_out, all);
    auto gesture_out = open_out(path.parent_path() / (path.stem().string() + "_gestures.csv"));
    write_report_csv(gesture_out, gestures);
    std::printf("wrote %s\n", path.string().c_str());
}

void print_summary(const std::vector<ResultRow>& rows) {
    for (const auto& a : aggregate(rows))
        if (a.key.gesture == kAllGestures)
            std::printf("  %-40s mean %.4f  std %.4f  subjects %d\n", a.key.str().c_str(), a.mean, a.std, a.subjects);
}

std::vector<PretrainStrategy> selected_strategies(const ExperimentConfig& cfg, const std::vector<std::string>& names) {
    if (names.empty()) return cfg.strategies;
    std::vector<PretrainStrategy> out;
    for (const auto& n : names) {
        const PretrainStrategy s = parse_strategy(n);
        if (std::find(cfg.strategies.begin(), cfg.strategies.end(), s) == cfg.strategies.end())
            throw ConfigError(std::string("strategy ") + strategy_name(s) + " is not listed in the config");
        out.push_back(s);
    }
    return out;
}

std::vector<int> selected_modes(const ExperimentConfig& cfg, const std::vector<int>& modes) {
    if (modes.empty()) return cfg.calibration_modes;
    for (int m : modes)
        if (std::find(cfg.calibration_modes.begin(), cfg.calibration_modes.end(), m) == cfg.calibration_modes.end())
            throw ConfigError("calibration mode " + std::to_string(m) + " is not listed in calibration.modes");
    return modes;
}

fs::path manifest_path(const ExperimentConfig& cfg, PretrainStrategy s) {
    return fs::path(cfg.output_dir) / "checkpoints" / (std::string(strategy_name(s)) + ".json");
}

/// Loads the models listed in a checkpoint manifest after checking that they
/// were trained under the same config hash and are intact.
template <typename Scalar>
std::vector<PretrainedModel<Scalar>> load_models(const ExperimentConfig& cfg, const fs::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw DataError("cannot open checkpoint manifest " + manifest.string() + " (run train first)");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(manifest.string() + ": " + e.what());
    }
    if (j.value("config_hash", "") != cfg.hash())
        throw ConfigError(manifest.string() + " was written under config hash " + j.value("config_hash", "?") +
                          ", current config hash is " + cfg.hash());
    std::vector<PretrainedModel<Scalar>> out;
    for (const auto& m : j.at("models")) {
        PretrainedModel<Scalar> model;
        model.subject = m.at("subject").get<int>();
        const fs::path file = manifest.parent_path() / m.at("file").get<std::string>();
        model.params = load_checkpoint<Scalar>(file.string());
        if (checkpoint_hash(model.params) != m.at("sha256").get<std::string>())
            throw DataError(file.string() + ": checkpoint hash does not match the manifest");
        if (!(model.params.config == cfg.model)) throw ConfigError(file.string() + ": model config differs from the config");
        out.push_back(std::move(model));
    }
    return out;
}

// ---------------------------------------------------------------------------

int cmd_config(const Common& common, const std::string& out) {
    const ExperimentConfig cfg = common.load();
    cfg.validate();
    const std::string text = to_json(cfg).dump(2) + "\n";
    if (out.empty()) {
        std::cout << text;
    } else {
        open_out(out) << text;
        std::printf("wrote %s (config hash %s)\n", out.c_str(), cfg.hash().c_str());
    }
    return kOk;
}

int cmd_preprocess(const Common& common) {
    const ExperimentConfig cfg = common.load();
    const auto recordings = prepare_recordings(cfg, common.sink());
    const fs::path dir = out_dir(cfg, "cache");
    std::map<std::pair<int, int>, WindowSet> groups;
    for (std::size_t r = 0; r < recordings->size(); ++r) {
        const Recording& rec = (*recordings)[r];
        auto [it, fresh] = groups.try_emplace({rec.info.subject, day_index(rec.info.day)}, recordings,
                                              cfg.windows.window_samples);
        const Eigen::Index n = cfg.windows.count(rec.samples());
        for (Eigen::Index w = 0; w < n; ++w)
            it->second.add(static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(cfg.windows.start(w)));
    }
    for (const auto& [key, set] : groups) {
        char name[64];
        std::snprintf(name, sizeof(name), "subject_%02d_day%d.emgw", key.first, key.second);
        write_window_cache((dir / name).string(), set, cfg.hash());
        std::printf("wrote %s (%zu windows)\n", (dir / name).string().c_str(), set.size());
    }
    return kOk;
}

template <typename Scalar>
int train_stage(const Common& common, const ExperimentConfig& cfg, const std::vector<PretrainStrategy>& strategies) {
    const auto recordings = prepare_recordings(cfg, common.sink());
    const fs::path ckpt_dir = out_dir(cfg, "checkpoints"), log_dir = out_dir(cfg, "logs");
    for (const PretrainStrategy strategy : strategies) {
        const auto models = run_pretraining<Scalar>(cfg, recordings, strategy, common.sink());
        json manifest = {{"config_hash", cfg.hash()},
                         {"seed", cfg.seed},
                         {"strategy", strategy_name(strategy)},
                         {"precision", cfg.precision == Precision::f64 ? "double" : "float"},
                         {"models", json::array()}};
        for (const auto& m : models) {
            const std::string stem = checkpoint_stem(strategy, m.subject);
            save_checkpoint((ckpt_dir / (stem + ".ckpt")).string(), m.params);
            const std::string hash = checkpoint_hash(m.params);
            manifest["models"].push_back({{"subject", m.subject},
                                          {"file", stem + ".ckpt"},
                                          {"sha256", hash},
                                          {"best_epoch", m.log.best_epoch},
                                          {"stopping_epoch", m.log.stopping_epoch},
                                          {"best_val_accuracy", m.log.best_val_accuracy}});
            auto log = open_out(log_dir / ("train_" + stem + ".csv"));
            log << provenance_line(cfg.hash(), cfg.seed) << "\n";
            m.log.write_csv(log);
            std::printf("%s: best epoch %d, val accuracy %.4f, sha256 %s\n", stem.c_str(), m.log.best_epoch,
                        m.log.best_val_accuracy, hash.c_str());
        }
        open_out(manifest_path(cfg, strategy)) << manifest.dump(2) << "\n";
        std::printf("wrote %s\n", manifest_path(cfg, strategy).string().c_str());
    }
    return kOk;
}

template <typename Scalar>
int calibrate_stage(const Common& common, const ExperimentConfig& cfg, const std::vector<PretrainStrategy>& strategies,
                    const std::vector<int>& modes, const std::string& checkpoint) {
    if (!checkpoint.empty() && strategies.size() != 1)
        throw ConfigError("--checkpoint needs exactly one --strategy");
    const auto recordings = prepare_recordings(cfg, common.sink());
    const fs::path dir = out_dir(cfg, "results");
    for (const PretrainStrategy strategy : strategies) {
        const auto models = load_models<Scalar>(cfg, checkpoint.empty() ? manifest_path(cfg, strategy) : fs::path(checkpoint));
        for (const int reps : modes) {
            const auto rows = run_calibration(recordings, SplitPlan{}, cfg.windows, models, strategy,
                                              cfg.calibration_plan(reps), cfg.train_config(strategy), cfg.jobs);
            write_results(dir / ("calibrate_" + std::string(strategy_name(strategy)) + "_" + std::to_string(reps) +
                                 "rep.csv"),
                          cfg, rows);
            print_summary(rows);
        }
    }
    return kOk;
}

template <typename Scalar>
int evaluate_stage(const Common& common, const ExperimentConfig& cfg, const std::string& mode, int day,
                   const std::vector<PretrainStrategy>& strategies, const std::string& checkpoint) {
    const auto recordings = prepare_recordings(cfg, common.sink());
    const fs::path dir = out_dir(cfg, "results");
    if (mode == "intraday") {
        const auto rows = run_intraday<Scalar>(cfg, recordings, day == 1 ? Day::day1 : Day::day2, common.sink());
        write_results(dir / ("evaluate_intraday_day" + std::to_string(day) + ".csv"), cfg, rows);
        print_summary(rows);
        return kOk;
    }
    if (!checkpoint.empty() && strategies.size() != 1)
        throw ConfigError("--checkpoint needs exactly one --strategy");
    for (const PretrainStrategy strategy : strategies) {
        const auto models = load_models<Scalar>(cfg, checkpoint.empty() ? manifest_path(cfg, strategy) : fs::path(checkpoint));
        const auto rows = run_calibration(recordings, SplitPlan{}, cfg.windows, models, strategy,
                                          cfg.calibration_plan(0), cfg.train_config(strategy), cfg.jobs);
        write_results(dir / ("evaluate_interday_" + std::string(strategy_name(strategy)) + ".csv"), cfg, rows);
        print_summary(rows);
    }
    return kOk;
}

int cmd_compare(const Common& common, const std::vector<int>& mode_args) {
    const ExperimentConfig cfg = common.load();
    const auto modes = selected_modes(cfg, mode_args);
    const auto recordings = prepare_recordings(cfg, common.sink());
    const fs::path dir = out_dir(cfg, "results");
    ExperimentReport combined{cfg.hash(), cfg.seed, {}};
    for (const int reps : modes) {
        const auto rows = run_alda_experiment(recordings, SplitPlan{}, cfg.windows, cfg.alda, reps, cfg.jobs);
        write_results(dir / ("alda_" + std::to_string(reps) + "rep.csv"), cfg, rows);
        combined.rows.insert(combined.rows.end(), rows.begin(), rows.end());
        const fs::path vit = dir / ("calibrate_PretrainedOnAll_" + std::to_string(reps) + "rep.csv");
        if (fs::exists(vit)) {
            const ExperimentReport r = read_report_csv(vit.string());
            if (r.config_hash != cfg.hash())
                throw DataError(vit.string() + " has config hash " + r.config_hash + ", expected " + cfg.hash());
            combined.rows.insert(combined.rows.end(), r.rows.begin(), r.rows.end());
        }
    }
    std::printf("%-8s", "mode");
    for (const char* model : {"ViT", "ALDA"}) std::printf("  %-22s", model);
    std::printf("\n");
    const auto agg = aggregate(combined.rows);
    for (const int reps : modes) {
        std::printf("%d-rep   ", reps);
        for (const std::string model : {"ViT", "ALDA"}) {
            auto it = std::find_if(agg.begin(), agg.end(), [&](const AggregateRow& a) {
                return a.key.model == model && a.key.strategy == "PretrainedOnAll" && a.key.reps_per_fold == reps &&
                       a.key.gesture == kAllGestures;
            });
            if (it == agg.end()) std::printf("  %-22s", "(not run)");
            else std::printf("  %6.2f%% ± %5.2f%%      ", 100.0 * it->mean, 100.0 * it->std);
        }
        std::printf("\n");
    }
    auto out = open_out(dir / "compare.csv");
    write_aggregate_csv(out, combined);
    std::printf("wrote %s\n", (dir / "compare.csv").string().c_str());
    return kOk;
}

int cmd_stats(const std::vector<std::string>& files, const std::string& a_text, const std::string& b_text,
              const std::string& method_name, const std::string& out_path) {
    ExperimentReport merged;
    std::set<std::string> hashes;
    for (const auto& f : files) {
        const ExperimentReport r = read_report_csv(f);
        hashes.insert(r.config_hash);
        merged.config_hash = r.config_hash;
        merged.seed = r.seed;
        merged.rows.insert(merged.rows.end(), r.rows.begin(), r.rows.end());
    }
    if (hashes.size() > 1) {
        std::string list;
        for (const auto& h : hashes) list += "\n  " + h;
        throw DataError("result files come from different configs:" + list);
    }
    const GroupKey a = GroupKey::parse(a_text), b = GroupKey::parse(b_text);
    std::vector<double> va, vb;
    std::vector<int> subjects;
    paired_by_subject(merged.rows, a, b, va, vb, subjects);
    const WilcoxonMethod method = method_name == "exact"    ? WilcoxonMethod::exact
                                  : method_name == "normal" ? WilcoxonMethod::normal
                                                            : WilcoxonMethod::automatic;
    const WilcoxonResult r = wilcoxon_signed_rank(va, vb, method);
    const double mean_a = std::accumulate(va.begin(), va.end(), 0.0) / static_cast<double>(va.size());
    const double mean_b = std::accumulate(vb.begin(), vb.end(), 0.0) / static_cast<double>(vb.size());
    std::printf("%s (mean %.4f) vs %s (mean %.4f)\n", a.str().c_str(), mean_a, b.str().c_str(), mean_b);
    std::printf("subjects %zu, nonzero differences %d, W+ %.1f, W- %.1f, p %.6g (%s) %s\n", subjects.size(), r.n,
                r.w_plus, r.w_minus, r.p_value, r.exact ? "exact" : "normal approximation", r.stars.c_str());
    if (!out_path.empty()) {
        const json j = {{"config_hash", merged.config_hash},
                        {"seed", merged.seed},
                        {"a", a.str()},
                        {"b", b.str()},
                        {"subjects", subjects},
                        {"a_values", va},
                        {"b_values", vb},
                        {"w_plus", r.w_plus},
                        {"w_minus", r.w_minus},
                        {"statistic", r.statistic},
                        {"p_value", r.p_value},
                        {"n", r.n},
                        {"exact", r.exact},
                        {"stars", r.stars}};
        open_out(out_path) << j.dump(2) << "\n";
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-day HD-sEMG gesture recognition with a vision transformer"};
    app.require_subcommand(1);

    Common common;
    std::string config_out;
    auto* config_cmd = app.add_subcommand("config", "print the resolved config as JSON");
    common.attach(config_cmd);
    config_cmd->add_option("-o,--output", config_out, "write to a file instead of stdout");

    auto* preprocess_cmd = app.add_subcommand("preprocess", "filter, window and write window cache files");
    common.attach(preprocess_cmd);

    std::vector<std::string> strategies;
    auto* train_cmd = app.add_subcommand("train", "pre-train and write checkpoints and training logs");
    common.attach(train_cmd);
    train_cmd->add_option("--strategy", strategies, "PretrainedOnAll and/or PretrainedOnIndividuals");

    std::vector<int> modes;
    std::string checkpoint;
    auto* calibrate_cmd = app.add_subcommand("calibrate", "few-shot calibration of pre-trained models");
    common.attach(calibrate_cmd);
    calibrate_cmd->add_option("--strategy", strategies, "strategies to calibrate");
    calibrate_cmd->add_option("--reps", modes, "calibration modes (reps per fold)");
    calibrate_cmd->add_option("--checkpoint", checkpoint, "checkpoint manifest (default: from train)");

    std::string eval_mode = "interday";
    int day = 2;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "same-day baseline or uncalibrated cross-day accuracy");
    common.attach(evaluate_cmd);
    evaluate_cmd->add_option("--mode", eval_mode, "intraday or interday")->check(CLI::IsMember({"intraday", "interday"}));
    evaluate_cmd->add_option("--day", day, "day for intraday mode")->check(CLI::Range(1, 2));
    evaluate_cmd->add_option("--strategy", strategies, "strategies for interday mode");
    evaluate_cmd->add_option("--checkpoint", checkpoint, "checkpoint manifest (default: from train)");

    auto* compare_cmd = app.add_subcommand("compare", "ALDA baseline next to ViT calibration results");
    common.attach(compare_cmd);
    compare_cmd->add_option("--reps", modes, "calibration modes (reps per fold)");

    std::vector<std::string> files;
    std::string group_a, group_b, method = "auto", stats_out;
    auto* stats_cmd = app.add_subcommand("stats", "Wilcoxon signed-rank test between two result groups");
    stats_cmd->add_option("files", files, "result CSV files")->required()->check(CLI::ExistingFile);
    stats_cmd->add_option("-a", group_a, "first group, model/strategy/reps[/window[/gesture]]")->required();
    stats_cmd->add_option("-b", group_b, "second group")->required();
    stats_cmd->add_option("--method", method, "auto, exact or normal")->check(CLI::IsMember({"auto", "exact", "normal"}));
    stats_cmd->add_option("-o,--output", stats_out, "also write the result as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*config_cmd) return cmd_config(common, config_out);
        if (*preprocess_cmd) return cmd_preprocess(common);
        if (*stats_cmd) return cmd_stats(files, group_a, group_b, method, stats_out);
        if (*compare_cmd) return cmd_compare(common, modes);
        const ExperimentConfig cfg = common.load();
        const auto chosen = selected_strategies(cfg, strategies);
        return with_precision(cfg.precision, [&](auto tag) {
            using S = typename decltype(tag)::type;
            if (*train_cmd) return train_stage<S>(common, cfg, chosen);
            if (*calibrate_cmd) return calibrate_stage<S>(common, cfg, chosen, selected_modes(cfg, modes), checkpoint);
            return evaluate_stage<S>(common, cfg, eval_mode, day, chosen, checkpoint);
        });
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfig;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kData;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return kNumeric;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFailure;
    }
}
