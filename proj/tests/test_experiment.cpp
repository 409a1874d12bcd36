#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "emgvit/experiment.hpp"
#include "emgvit/window_cache.hpp"
#include "toy_data.hpp"

using namespace emgvit;
using namespace emgvit::toy;
using json = nlohmann::json;

namespace {

std::string config_error(const json& j) {
    try {
        (void)config_from_json(j);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

bool contains(const std::string& text, const std::string& part) { return text.find(part) != std::string::npos; }

ExperimentConfig toy_config() {
    ExperimentConfig c;
    c.seed = 5;
    c.windows = toy_windows();
    c.model = toy_model(0.0);
    c.train.max_epochs = 3;
    c.train.patience = 2;
    c.train.batch_size = 16;
    c.train.lr0 = 5e-3;
    c.train.lr_halving_epochs = {};
    c.intraday_epochs = 3;
    c.calibration.max_epochs = 2;
    c.calibration.patience = 1;
    return c;
}

std::string report_csv(const ExperimentConfig& cfg, const std::vector<ResultRow>& rows) {
    std::ostringstream out;
    write_report_csv(out, {cfg.hash(), cfg.seed, rows});
    return out.str();
}

}  // namespace

TEST_CASE("config JSON round trip keeps the hash") {
    for (const ExperimentConfig& c : {reference_config(), desk_config()}) {
        const json j = to_json(c);
        CHECK(j.at("schema_version") == kConfigSchemaVersion);
        const ExperimentConfig back = config_from_json(j);
        CHECK(back.hash() == c.hash());
        CHECK(to_json(back) == j);
    }
    CHECK(reference_config().hash() != desk_config().hash());
    const ExperimentConfig partial = config_from_json(json{{"seed", 9}}, desk_config());
    CHECK(partial.seed == 9);
    CHECK(partial.model == desk_config().model);
}

TEST_CASE("reference config carries the reference model and schedule") {
    const ExperimentConfig c = reference_config();
    CHECK(c.model.latent_dim == 128);
    CHECK(c.model.layers == 8);
    CHECK(c.train.max_epochs == 200);
    CHECK(c.windows.window_samples == 100);
    CHECK(c.windows.stride_samples == 20);
    CHECK(c.windows.trim_samples == 512);
    CHECK_NOTHROW(c.validate());
    CHECK_NOTHROW(desk_config().validate());
}

TEST_CASE("hash ignores output location, worker count and eval batch size") {
    ExperimentConfig a = desk_config(), b = desk_config();
    b.output_dir = "elsewhere";
    b.jobs = 7;
    b.train.eval_batch_size = 5;
    CHECK(a.hash() == b.hash());
    b.seed = 1;
    CHECK(a.hash() != b.hash());
    b = a;
    b.calibration.max_epochs += 1;
    CHECK(a.hash() != b.hash());
    CHECK(a.hash().size() == 64);
}

TEST_CASE("config errors list every violated field") {
    json j = {{"seed", 1},
              {"bogus", 3},
              {"model", {{"window_samples", 50}, {"latent_dim", "wide"}}},
              {"train", {{"lr0", -1.0}, {"max_epochs", 2.5}}},
              {"jobs", 0},
              {"precision", "half"},
              {"strategies", {"all", "sometimes"}},
              {"calibration", {{"modes", {0, 3}}}}};
    const std::string msg = config_error(j);
    CHECK(contains(msg, "bogus: unknown field"));
    CHECK(contains(msg, "model.latent_dim: expected an integer"));
    CHECK(contains(msg, "train.max_epochs: expected an integer"));
    CHECK(contains(msg, "train.lr0: must be positive"));
    CHECK(contains(msg, "model.window_samples"));
    CHECK(contains(msg, "jobs: must be at least 1"));
    CHECK(contains(msg, "precision"));
    CHECK(contains(msg, "sometimes"));
    CHECK(contains(msg, "calibration.modes: entries must be 0, 1 or 2"));

    CHECK(contains(config_error(json{{"schema_version", 2}}), "schema_version"));
    CHECK(contains(config_error(json{{"dataset", {{"manifest", "/nonexistent/manifest.json"}}}}), "does not exist"));
    CHECK(contains(config_error(json{{"windows", {{"stride_samples", 200}}}}), "windows"));
    CHECK(contains(config_error(json{{"preprocessing", {{"lowpass", {{"cutoff_hz", 5000.0}}}}}}), "preprocessing"));
    CHECK(contains(config_error(json::array()), "expected an object"));
    CHECK(contains(config_error(json{{"calibration", {{"modes", {1, 1}}}}}), "duplicate"));
}

TEST_CASE("overrides address fields by dotted path") {
    const ExperimentConfig base = desk_config();
    const ExperimentConfig c = apply_overrides(
        base, {"train.max_epochs=7", "train.patience=5", "seed=11", "output_dir=runs/a", "strategies=[\"individuals\"]", "precision=double"});
    CHECK(c.train.max_epochs == 7);
    CHECK(c.seed == 11);
    CHECK(c.output_dir == "runs/a");
    CHECK(c.strategies == std::vector<PretrainStrategy>{PretrainStrategy::individuals});
    CHECK(c.precision == Precision::f64);
    CHECK(c.model == base.model);
    CHECK_THROWS_AS(apply_overrides(base, {"train.max_epoch=7"}), ConfigError);
    CHECK_THROWS_AS(apply_overrides(base, {"novalue"}), ConfigError);
    CHECK_THROWS_AS(apply_overrides(base, {"=3"}), ConfigError);
    CHECK_THROWS_AS(apply_overrides(base, {"train.patience=0"}), ConfigError);
}

TEST_CASE("load_config reads files and rejects malformed JSON") {
    const auto dir = std::filesystem::temp_directory_path() / "emgvit_test_experiment";
    std::filesystem::create_directories(dir);
    const auto good = (dir / "good.json").string(), bad = (dir / "bad.json").string();
    std::ofstream(good) << to_json(desk_config()).dump(2);
    std::ofstream(bad) << "{ \"seed\": ";
    CHECK(load_config(good).hash() == desk_config().hash());
    CHECK_THROWS_AS(load_config(bad), ConfigError);
    CHECK_THROWS_AS(load_config((dir / "missing.json").string()), ConfigError);
}

TEST_CASE("window cache round trip and corruption checks") {
    const auto recs = toy_recordings(2, 0.3, 8);
    const WindowSet set = make_splits(recs, SplitPlan{}, toy_windows()).test;
    REQUIRE(!set.empty());
    const auto bytes = serialize_window_cache(set, "abc123");
    const WindowCache cache = deserialize_window_cache(bytes);
    CHECK(cache.config_hash == "abc123");
    CHECK(cache.window_samples == kToyT);
    REQUIRE(cache.size() == set.size());
    CHECK(cache.label_names.size() == kGestures);
    CHECK(cache.label_names[0] == std::string(kGestureNames[0]));
    for (std::size_t i = 0; i < set.size(); ++i) {
        CHECK(cache.info[i] == set.info(i));
        CHECK(cache.starts[i] == set.ref(i).start);
        const WindowTensor w = set.window(i), c = cache.window(i);
        CHECK(c.label == w.label);
        CHECK(c.data == w.data);
    }
    auto flipped = bytes;
    flipped[40] ^= 1u;
    CHECK_THROWS_AS(deserialize_window_cache(flipped), DataError);
    auto cut = bytes;
    cut.resize(20);
    CHECK_THROWS_AS(deserialize_window_cache(cut), DataError);
}

TEST_CASE("prepare_recordings filters or passes through") {
    ExperimentConfig c = desk_config();
    c.dataset.synthetic.subjects = 1;
    c.filter = false;
    const auto raw = prepare_recordings(c);
    CHECK(raw->size() == 2u * kGestures * kRepetitions);
    const auto direct = generate_synthetic(1, c.dataset.synthetic.shift, c.dataset.synthetic.seed);
    CHECK((*raw)[7].signal == direct[7].signal);
    c.filter = true;
    c.jobs = 2;
    const auto filtered = prepare_recordings(c);
    CHECK((*filtered)[7].signal.rows() == direct[7].signal.rows());
    CHECK((*filtered)[7].signal != direct[7].signal);
}

TEST_CASE("interday runner covers every arm and is deterministic") {
    ExperimentConfig cfg = toy_config();
    const auto recs = toy_recordings(2, 0.4, 21, 20);
    const InterdayOutcome a = run_interday<float>(cfg, recs);
    // per subject: 1 + 4 + 6 folds per strategy and for ALDA, one intraday run;
    // each run emits one ALL row and 11 gesture rows
    CHECK(a.rows.size() == 2u * 12u * (11u + 11u + 1u + 11u));
    CHECK(a.checkpoints.size() == 3u);
    CHECK(a.checkpoints[0].first == "PretrainedOnAll");
    CHECK(a.checkpoints[1].first == "PretrainedOnIndividuals_s01");

    std::vector<std::string> groups;
    for (const auto& g : aggregate(a.rows))
        if (g.key.gesture == kAllGestures) groups.push_back(g.key.str());
    CHECK(groups.size() == 10u);

    cfg.jobs = 3;
    cfg.output_dir = "other";
    const InterdayOutcome b = run_interday<float>(cfg, recs);
    CHECK(report_csv(cfg, a.rows) == report_csv(cfg, b.rows));
    CHECK(a.checkpoints == b.checkpoints);
}

TEST_CASE("intraday baseline trains on reps 1,3,4,6 and tests on 2,5") {
    const ExperimentConfig cfg = toy_config();
    const auto recs = toy_recordings(1, 0.2, 4);
    const auto rows = run_intraday<float>(cfg, recs, Day::day1);
    REQUIRE(rows.size() == 12u);
    CHECK(rows[0].strategy == "IntradayDay1");
    CHECK(rows[0].gesture == kAllGestures);
    // two test reps × 11 gestures × 2 windows per 20-sample recording
    CHECK(rows[0].windows == 2 * kGestures * 2);
    CHECK(with_precision(Precision::f64, [](auto tag) { return sizeof(typename decltype(tag)::type); }) == 8u);
}
