#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "emgvit/binary_io.hpp"
#include "emgvit/dataset.hpp"

using namespace emgvit;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

/// Deterministic sample value identifying (file channel, time).
float probe(int channel, int t) { return static_cast<float>(channel) + 0.001f * static_cast<float>(t); }

void write_f32(const fs::path& file, int samples, int channels) {
    ByteWriter w;
    for (int t = 0; t < samples; ++t)
        for (int c = 0; c < channels; ++c) w.put(probe(c, t));
    write_file_bytes(file.string(), w.bytes());
}

nlohmann::json manifest_for(int subjects, int samples, const fs::path& dir, int channels = kChannels) {
    nlohmann::json m = {{"schema_version", 1}, {"sample_rate_hz", 2048}, {"sample_type", "f32"}};
    if (channels != kChannels) m["channels"] = channels;
    m["records"] = nlohmann::json::array();
    for (int s = 1; s <= subjects; ++s)
        for (int g = 0; g < kGestures; ++g)
            for (int d = 1; d <= 2; ++d)
                for (int r = 1; r <= kRepetitions; ++r) {
                    const std::string name =
                        "s" + std::to_string(s) + "_g" + std::to_string(g) + "_d" + std::to_string(d) + "_r" + std::to_string(r) + ".bin";
                    write_f32(dir / name, samples, channels);
                    m["records"].push_back({{"file", name}, {"subject", s}, {"gesture", g}, {"day", d}, {"repetition", r}});
                }
    return m;
}

void write_json(const fs::path& file, const nlohmann::json& j) { std::ofstream(file) << j.dump(2); }

}  // namespace

TEST_CASE("manifest ingest: counts, length and channel order") {
    TempDir dir("emgvit_manifest_ok");
    auto m = manifest_for(1, 2048, dir.path);
    write_json(dir.path / "manifest.json", m);
    const auto recs = load_dataset((dir.path / "manifest.json").string());
    CHECK(recs.size() == 132);
    CHECK(recs[0].samples() == 2048);
    CHECK(recs[0].channels() == 256);
    CHECK(recs[0].signal(5, 17) == probe(17, 5));

    m["channel_order"] = "grid_column_major";
    write_json(dir.path / "manifest.json", m);
    const auto cm = load_dataset((dir.path / "manifest.json").string());
    // file column j = (g·8 + c)·8 + r holds electrode (g, r, c)
    for (int g : {0, 3})
        for (int r : {0, 2, 7})
            for (int c : {1, 6}) CHECK(cm[0].signal(0, channel_index(g, r, c)) == probe((g * 8 + c) * 8 + r, 0));
}

TEST_CASE("manifest ingest: big-endian int16 channel-major payload") {
    TempDir dir("emgvit_manifest_i16");
    ByteWriter w;
    const int samples = 4;
    for (int c = 0; c < kChannels; ++c)
        for (int t = 0; t < samples; ++t) {
            const auto v = static_cast<std::uint16_t>(static_cast<std::int16_t>(c - 128 + 300 * t));
            w.put(static_cast<std::uint8_t>(v >> 8));
            w.put(static_cast<std::uint8_t>(v & 0xff));
        }
    write_file_bytes((dir.path / "a.bin").string(), w.bytes());
    nlohmann::json m = {{"schema_version", 1},   {"sample_type", "i16"}, {"endianness", "big"},
                        {"layout", "channel_major"}, {"scale", 0.5}};
    m["records"] = {{{"file", "a.bin"}, {"subject", 1}, {"gesture", 0}, {"day", 1}, {"repetition", 1}}};
    write_json(dir.path / "m.json", m);
    const auto recs = load_dataset((dir.path / "m.json").string());
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].samples() == samples);
    CHECK(recs[0].signal(2, 10) == doctest::Approx(0.5 * (10 - 128 + 600)));
}

TEST_CASE("manifest ingest: csv payload") {
    TempDir dir("emgvit_manifest_csv");
    {
        std::ofstream out(dir.path / "a.csv");
        out << "# header comment\n";
        for (int t = 0; t < 3; ++t)
            for (int c = 0; c < kChannels; ++c) out << probe(c, t) << (c + 1 < kChannels ? "," : "\n");
    }
    nlohmann::json m = {{"schema_version", 1}, {"format", "csv"}};
    m["records"] = {{{"file", "a.csv"}, {"subject", 2}, {"gesture", 10}, {"day", 2}, {"repetition", 6}}};
    write_json(dir.path / "m.json", m);
    const auto recs = load_dataset((dir.path / "m.json").string());
    CHECK(recs[0].samples() == 3);
    CHECK(recs[0].signal(2, 255) == doctest::Approx(probe(255, 2)));
    CHECK(recs[0].info == RecordingInfo{2, 10, Day::day2, 6});
}

TEST_CASE("manifest ingest errors") {
    TempDir dir("emgvit_manifest_bad");
    SUBCASE("255 channels is a layout error") {
        write_f32(dir.path / "a.bin", 16, 255);
        nlohmann::json m = {{"schema_version", 1}, {"channels", 255}};
        m["records"] = {{{"file", "a.bin"}, {"subject", 1}, {"gesture", 0}, {"day", 1}, {"repetition", 1}}};
        write_json(dir.path / "m.json", m);
        CHECK_THROWS_WITH_AS(load_dataset((dir.path / "m.json").string()), doctest::Contains("255 channels"),
                             DataError);
    }
    SUBCASE("missing file names the record") {
        nlohmann::json m = {{"schema_version", 1}};
        m["records"] = {{{"file", "nope.bin"}, {"subject", 4}, {"gesture", 3}, {"day", 2}, {"repetition", 5}}};
        write_json(dir.path / "m.json", m);
        CHECK_THROWS_WITH_AS(load_dataset((dir.path / "m.json").string()),
                             doctest::Contains("subject 4 gesture 3 day 2 rep 5"), DataError);
    }
    SUBCASE("non-finite samples") {
        ByteWriter w;
        for (int i = 0; i < kChannels * 4; ++i) w.put(i == 300 ? std::numeric_limits<float>::quiet_NaN() : 1.0f);
        write_file_bytes((dir.path / "a.bin").string(), w.bytes());
        nlohmann::json m = {{"schema_version", 1}};
        m["records"] = {{{"file", "a.bin"}, {"subject", 1}, {"gesture", 0}, {"day", 1}, {"repetition", 1}}};
        write_json(dir.path / "m.json", m);
        CHECK_THROWS_WITH_AS(load_dataset((dir.path / "m.json").string()), doctest::Contains("non-finite"), DataError);
    }
    SUBCASE("repetition outside 1..6") {
        write_f32(dir.path / "a.bin", 4, kChannels);
        nlohmann::json m = {{"schema_version", 1}};
        m["records"] = {{{"file", "a.bin"}, {"subject", 1}, {"gesture", 0}, {"day", 1}, {"repetition", 7}}};
        write_json(dir.path / "m.json", m);
        CHECK_THROWS_AS(load_dataset((dir.path / "m.json").string()), DataError);
    }
    SUBCASE("unknown schema") {
        write_json(dir.path / "m.json", {{"schema_version", 9}, {"records", nlohmann::json::array()}});
        CHECK_THROWS_AS(load_dataset((dir.path / "m.json").string()), ConfigError);
    }
}

TEST_CASE("synthetic dataset shape and determinism") {
    const SyntheticShiftConfig shift{};
    const auto a = generate_synthetic(2, shift, 42);
    CHECK(a.size() == 264);
    std::set<std::tuple<int, int, int, int>> keys;
    for (const auto& r : a) {
        CHECK(r.samples() == 2048);
        validate_recording(r, 612);
        keys.insert({r.info.subject, r.info.gesture, day_index(r.info.day), r.info.repetition});
    }
    CHECK(keys.size() == 264);

    const auto b = generate_synthetic(2, shift, 42);
    bool identical = true;
    for (std::size_t i = 0; i < a.size(); ++i) identical = identical && a[i].signal == b[i].signal;
    CHECK(identical);
    const auto c = generate_synthetic(1, shift, 43);
    CHECK(c[0].signal != a[0].signal);
    CHECK_THROWS_AS(generate_synthetic(0, shift, 1), ConfigError);
    CHECK_THROWS_AS(generate_synthetic(1, SyntheticShiftConfig{0.2, 4, 0.5, 0}, 1), ConfigError);
    CHECK_THROWS_AS(generate_synthetic(1, SyntheticShiftConfig{0.2, 1, -0.1, 0}, 1), ConfigError);
}

TEST_CASE("synthetic zero shift gives identical day templates") {
    const SyntheticShiftConfig zero{0.0, 0, 0.0, 7};
    for (int s : {1, 3})
        for (int g : {0, 5, 10})
            CHECK(synthetic_template(s, g, Day::day1, zero, 9) == synthetic_template(s, g, Day::day2, zero, 9));

    const SyntheticShiftConfig def{};
    const Eigen::VectorXd d1 = synthetic_template(1, 2, Day::day1, def, 9);
    const Eigen::VectorXd d2 = synthetic_template(1, 2, Day::day2, def, 9);
    CHECK((d1 - d2).norm() > 0.1 * d1.norm());
    CHECK(std::abs(synthetic_row_shift(1, Day::day2, def)) == 1.0);
    CHECK(synthetic_row_shift(1, Day::day1, def) == 0.0);

    // pure gain drift scales the template exactly
    const SyntheticShiftConfig gain_only{0.2, 0, 0.0, 0};
    CHECK((synthetic_template(2, 4, Day::day2, gain_only, 9) - 0.8 * synthetic_template(2, 4, Day::day1, gain_only, 9))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
}

TEST_CASE("synthetic placement differs by subject and moves the template") {
    std::set<std::pair<double, double>> seen;
    for (int s = 1; s <= 20; ++s) {
        const SyntheticPlacement p = synthetic_placement(s, 9);
        CHECK(std::abs(p.row) <= 1.5);
        CHECK(std::abs(p.col) <= 1.5);
        seen.insert({p.row, p.col});
        CHECK(synthetic_placement(s, 9).row == p.row);
    }
    CHECK(seen.size() == 20);
    // with no subject-specific bumps the offset is the only difference, so
    // the template centroid moves with it
    const SyntheticShiftConfig zero{0.0, 0, 0.0, 0};
    auto centroid_row = [](const Eigen::VectorXd& v) {
        double m = 0.0, w = 0.0;
        for (int r = 0; r < kGridRows; ++r)
            for (int c = 0; c < kGridCols; ++c) {
                m += r * v(channel_index(0, r, c));
                w += v(channel_index(0, r, c));
            }
        return m / w;
    };
    const double a = centroid_row(synthetic_template(1, 3, Day::day1, zero, 9));
    const double b = centroid_row(synthetic_template(2, 3, Day::day1, zero, 9));
    CHECK(a != b);
}

TEST_CASE("synthetic zero shift: day statistics agree") {
    const SyntheticShiftConfig zero{0.0, 0, 0.0, 0};
    const auto recs = generate_synthetic(1, zero, 5);
    Eigen::ArrayXd power[2] = {Eigen::ArrayXd::Zero(kChannels), Eigen::ArrayXd::Zero(kChannels)};
    for (const auto& r : recs)
        power[day_index(r.info.day) - 1] += r.signal.cast<double>().colwise().squaredNorm().transpose().array();
    const double rel = ((power[0] - power[1]).abs() / power[0]).maxCoeff();
    CHECK(rel < 0.1);
}

TEST_CASE("calibration folds") {
    const RepSet calib{1, 3, 4, 6};
    CHECK(calibration_folds(calib, 0).empty());
    const auto one = calibration_folds(calib, 1);
    CHECK(one == std::vector<RepSet>{{1}, {3}, {4}, {6}});
    const auto two = calibration_folds(calib, 2);
    CHECK(two.size() == 6);
    CHECK(two.front() == RepSet{1, 3});
    CHECK(std::set<RepSet>(two.begin(), two.end()).size() == 6);
    for (const auto& f : two) CHECK(f.size() == 2);
    CHECK_THROWS_AS(calibration_folds(calib, 5), ConfigError);
}

TEST_CASE("split plan validation") {
    CHECK_NOTHROW(SplitPlan{}.validate());
    CHECK_NOTHROW(SplitPlan::intraday(Day::day2).validate());
    SplitPlan overlap;
    overlap.test_reps = {2, 6};
    CHECK_THROWS_AS(overlap.validate(), ConfigError);
    SplitPlan same_day;
    same_day.test_day = Day::day1;
    CHECK_THROWS_AS(same_day.validate(), ConfigError);
    SplitPlan bad;
    bad.val_reps = {7};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("partitions are disjoint by provenance and sized by the window count") {
    auto recs = std::make_shared<const std::vector<Recording>>(generate_synthetic(2, SyntheticShiftConfig{}, 1));
    const dsp::WindowSpec spec{};
    const SplitPlan plan{};
    const Partitions p = make_splits(recs, plan, spec);
    CHECK(p.train.size() == 2u * 11 * 4 * 72);
    CHECK(p.val.size() == 2u * 11 * 2 * 72);
    CHECK(p.calib.size() == 2u * 11 * 4 * 72);
    CHECK(p.test.size() == 2u * 11 * 2 * 72);

    auto check_all = [](const WindowSet& w, Day day, const RepSet& reps) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            const auto& info = w.info(i);
            REQUIRE(info.day == day);
            REQUIRE(reps.contains(info.repetition));
        }
    };
    check_all(p.train, Day::day1, plan.train_reps);
    check_all(p.val, Day::day1, plan.val_reps);
    check_all(p.calib, Day::day2, plan.calib_reps);
    check_all(p.test, Day::day2, plan.test_reps);

    const auto one = make_splits(recs, plan, spec, {2});
    CHECK(one.train.size() == 11u * 4 * 72);
    for (std::size_t i = 0; i < one.test.size(); ++i) REQUIRE(one.test.info(i).subject == 2);

    Mat<double> x;
    std::vector<int> y;
    const std::vector<std::size_t> idx{0, 71, 72};
    p.train.gather<double>(idx, x, y);
    CHECK(x.rows() == 300);
    CHECK(x.cols() == 256);
    const WindowTensor w = p.train.window(71);
    CHECK(w.start_sample == 512 + 71 * 20);
    CHECK(x.middleRows(100, 100) == w.data.cast<double>());
    CHECK(y[1] == w.label);

    const auto only_rep1 = p.calib.filter([](const RecordingInfo& i) { return i.repetition == 1; });
    CHECK(only_rep1.size() == 2u * 11 * 72);
}

TEST_CASE("missing repetition is a split error identifying the gap") {
    auto all = generate_synthetic(1, SyntheticShiftConfig{}, 2);
    std::erase_if(all, [](const Recording& r) {
        return r.info.gesture == 4 && r.info.day == Day::day2 && r.info.repetition == 5;
    });
    auto recs = std::make_shared<const std::vector<Recording>>(std::move(all));
    CHECK_THROWS_WITH_AS(make_splits(recs, SplitPlan{}, dsp::WindowSpec{}),
                         doctest::Contains("subject 1 gesture 4 day 2 rep 5"), DataError);
    CHECK_THROWS_AS(make_splits(recs, SplitPlan{}, dsp::WindowSpec{}, {3}), DataError);
}

TEST_CASE("preprocess keeps shape and is independent of job count") {
    auto recs = generate_synthetic(1, SyntheticShiftConfig{}, 3);
    recs.resize(6);
    const auto chain = dsp::FilterChain::build({});
    const auto a = preprocess(recs, chain, 1);
    const auto b = preprocess(recs, chain, 3);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].samples() == recs[i].samples());
        CHECK(a[i].signal == b[i].signal);
        CHECK(a[i].info == recs[i].info);
    }
}
