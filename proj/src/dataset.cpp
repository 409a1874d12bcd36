#include "emgvit/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "emgvit/binary_io.hpp"
#include "emgvit/parallel.hpp"
#include "emgvit/rng.hpp"

namespace emgvit {

namespace {

using json = nlohmann::json;

std::string rep_list(const RepSet& s) {
    std::string out = "{";
    for (int r : s) out += (out.size() > 1 ? "," : "") + std::to_string(r);
    return out + "}";
}

// ---------------------------------------------------------------- manifest

enum class SampleType { i16, i32, f32, f64 };

struct PayloadLayout {
    std::string format = "binary";
    SampleType type = SampleType::f32;
    bool big_endian = false;
    bool channel_major = false;
    int channels = kChannels;
    double scale = 1.0;
    std::vector<int> channel_order;  // file column j holds grid-major channel channel_order[j]
};

int sample_width(SampleType t) {
    switch (t) {
        case SampleType::i16: return 2;
        case SampleType::i32:
        case SampleType::f32: return 4;
        case SampleType::f64: return 8;
    }
    return 0;
}

std::vector<int> named_channel_order(const std::string& name) {
    std::vector<int> order(kChannels);
    if (name == "grid_major") {
        std::iota(order.begin(), order.end(), 0);
    } else if (name == "grid_column_major") {
        for (int g = 0; g < kGrids; ++g)
            for (int c = 0; c < kGridCols; ++c)
                for (int r = 0; r < kGridRows; ++r) order[(g * kGridCols + c) * kGridRows + r] = channel_index(g, r, c);
    } else {
        throw ConfigError("manifest: unknown channel_order '" + name + "'");
    }
    return order;
}

PayloadLayout parse_layout(const json& m) {
    PayloadLayout l;
    l.format = m.value("format", "binary");
    if (l.format != "binary" && l.format != "csv") throw ConfigError("manifest: format must be binary or csv");
    const std::string type = m.value("sample_type", "f32");
    const std::map<std::string, SampleType> types{
        {"i16", SampleType::i16}, {"i32", SampleType::i32}, {"f32", SampleType::f32}, {"f64", SampleType::f64}};
    if (!types.contains(type)) throw ConfigError("manifest: unknown sample_type '" + type + "'");
    l.type = types.at(type);
    const std::string endian = m.value("endianness", "little");
    if (endian != "little" && endian != "big") throw ConfigError("manifest: endianness must be little or big");
    l.big_endian = endian == "big";
    const std::string layout = m.value("layout", "time_major");
    if (layout != "time_major" && layout != "channel_major")
        throw ConfigError("manifest: layout must be time_major or channel_major");
    l.channel_major = layout == "channel_major";
    l.channels = m.value("channels", kChannels);
    l.scale = m.value("scale", 1.0);
    const json order = m.value("channel_order", json("grid_major"));
    if (order.is_string()) {
        l.channel_order = named_channel_order(order.get<std::string>());
    } else {
        l.channel_order = order.get<std::vector<int>>();
        std::vector<int> sorted = l.channel_order;
        std::sort(sorted.begin(), sorted.end());
        std::vector<int> identity(kChannels);
        std::iota(identity.begin(), identity.end(), 0);
        if (sorted != identity) throw ConfigError("manifest: channel_order must be a permutation of 0..255");
    }
    return l;
}

template <typename T>
T load_sample(const std::uint8_t* p, bool swap) {
    std::array<std::uint8_t, sizeof(T)> raw;
    std::memcpy(raw.data(), p, sizeof(T));
    if (swap) std::reverse(raw.begin(), raw.end());
    return std::bit_cast<T>(raw);
}

double decode(const std::uint8_t* p, SampleType t, bool swap) {
    switch (t) {
        case SampleType::i16: return load_sample<std::int16_t>(p, swap);
        case SampleType::i32: return load_sample<std::int32_t>(p, swap);
        case SampleType::f32: return load_sample<float>(p, swap);
        case SampleType::f64: return load_sample<double>(p, swap);
    }
    return 0.0;
}

/// Raw payload as samples × file-channels, time-major.
dsp::ChannelMatrix read_binary(const std::string& path, const PayloadLayout& l, const std::string& what) {
    const auto bytes = read_file_bytes(path);
    const std::size_t width = static_cast<std::size_t>(sample_width(l.type));
    const std::size_t frame = width * static_cast<std::size_t>(l.channels);
    if (bytes.empty() || bytes.size() % frame != 0)
        throw DataError(what + ": payload size " + std::to_string(bytes.size()) + " is not a multiple of " +
                        std::to_string(l.channels) + " channels × " + std::to_string(width) + " bytes");
    const auto samples = static_cast<Eigen::Index>(bytes.size() / frame);
    dsp::ChannelMatrix out(samples, l.channels);
    const bool swap = l.big_endian;
    for (Eigen::Index t = 0; t < samples; ++t)
        for (Eigen::Index c = 0; c < l.channels; ++c) {
            const std::size_t index = l.channel_major ? static_cast<std::size_t>(c * samples + t)
                                                      : static_cast<std::size_t>(t * l.channels + c);
            out(t, c) = decode(bytes.data() + index * width, l.type, swap);
        }
    return out;
}

dsp::ChannelMatrix read_csv(const std::string& path, const std::string& what) {
    std::ifstream in(path);
    if (!in) throw DataError(what + ": cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw DataError(what + ": unparsable value '" + cell + "' in " + path);
            }
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw DataError(what + ": ragged CSV row " + std::to_string(rows.size() + 1) + " in " + path);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError(what + ": empty CSV " + path);
    dsp::ChannelMatrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t t = 0; t < rows.size(); ++t)
        for (std::size_t c = 0; c < rows[t].size(); ++c) out(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) = rows[t][c];
    return out;
}

// ---------------------------------------------------------------- synthetic

constexpr int kBumpsPerGrid = 2;
constexpr double kSubjectBlend = 0.35;
constexpr double kPlacementJitter = 1.5;
constexpr double kRestLevel = 0.1;
constexpr double kBaseNoise = 0.2;
constexpr double kRepGainJitter = 0.1;
constexpr int kCarrierWarmup = 512;

struct Bump {
    double row, col, width, amp;
};

using GridBumps = std::array<std::vector<Bump>, kGrids>;

GridBumps draw_bumps(Rng rng) {
    GridBumps out;
    for (auto& grid : out)
        for (int b = 0; b < kBumpsPerGrid; ++b) {
            Bump bump;
            bump.row = 1.0 + 5.0 * rng.uniform();
            bump.col = 1.0 + 5.0 * rng.uniform();
            bump.width = 1.2 + 0.8 * rng.uniform();
            bump.amp = 0.5 + 0.5 * rng.uniform();
            grid.push_back(bump);
        }
    return out;
}

Eigen::VectorXd render(const GridBumps& bumps, double row_shift, double col_shift) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(kChannels);
    for (int g = 0; g < kGrids; ++g)
        for (const Bump& b : bumps[g])
            for (int r = 0; r < kGridRows; ++r)
                for (int c = 0; c < kGridCols; ++c) {
                    const double dr = r - (b.row + row_shift);
                    const double dc = c - (b.col + col_shift);
                    v(channel_index(g, r, c)) += b.amp * std::exp(-(dr * dr + dc * dc) / (2.0 * b.width * b.width));
                }
    return v;
}

double smoothstep(double x) {
    x = std::clamp(x, 0.0, 1.0);
    return x * x * (3.0 - 2.0 * x);
}

/// Unit-RMS band-limited noise of length n.
Eigen::VectorXd carrier(Rng& rng, Eigen::Index n, const dsp::Cascade& band) {
    dsp::ChannelMatrix x(n + kCarrierWarmup, 1);
    for (Eigen::Index t = 0; t < x.rows(); ++t) x(t, 0) = rng.normal();
    dsp::apply_cascade(band, x);
    Eigen::VectorXd out = x.col(0).tail(n);
    out.array() -= out.mean();
    return out / std::sqrt(out.squaredNorm() / static_cast<double>(n));
}

std::uint64_t recording_stream(int subject, int gesture, Day day, int rep) {
    return 1'000'000ull + ((static_cast<std::uint64_t>(subject) * kGestures + gesture) * 2 + (day_index(day) - 1)) * 8 +
           rep;
}

}  // namespace

void SyntheticShiftConfig::validate() const {
    if (spatial_shift_electrodes < 0 || spatial_shift_electrodes > 3)
        throw ConfigError("spatial_shift_electrodes must be in [0, 3]");
    if (noise_sigma_ratio < 0.0) throw ConfigError("noise_sigma_ratio must be nonnegative");
    if (!(template_gain_drift >= 0.0 && template_gain_drift < 1.0))
        throw ConfigError("template_gain_drift must be in [0, 1)");
}

void validate_recording(const Recording& rec, Eigen::Index min_samples) {
    const std::string what = describe(rec.info);
    if (rec.channels() != kChannels)
        throw DataError(what + ": layout has " + std::to_string(rec.channels()) + " channels, expected 256");
    if (rec.info.gesture < 0 || rec.info.gesture >= kGestures) throw DataError(what + ": gesture outside 0..10");
    if (rec.info.repetition < 1 || rec.info.repetition > kRepetitions)
        throw DataError(what + ": repetition outside 1..6");
    if (rec.info.day != Day::day1 && rec.info.day != Day::day2) throw DataError(what + ": day must be 1 or 2");
    if (rec.sample_rate_hz <= 0.0) throw DataError(what + ": sample rate must be positive");
    if (rec.samples() < min_samples)
        throw DataError(what + ": " + std::to_string(rec.samples()) + " samples, need at least " +
                        std::to_string(min_samples));
    if (!rec.signal.allFinite()) throw DataError(what + ": non-finite samples");
}

std::vector<Recording> load_dataset(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw DataError("cannot open manifest " + manifest_path);
    json m;
    try {
        m = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("manifest " + manifest_path + ": " + e.what());
    }
    if (m.value("schema_version", 0) != 1) throw ConfigError("manifest: schema_version must be 1");
    const PayloadLayout layout = parse_layout(m);
    const double fs = m.value("sample_rate_hz", kDefaultSampleRate);
    const auto root = std::filesystem::path(manifest_path).parent_path();
    if (!m.contains("records") || !m["records"].is_array()) throw ConfigError("manifest: missing records array");

    std::vector<Recording> out;
    for (const json& r : m["records"]) {
        Recording rec;
        try {
            rec.info.subject = r.at("subject").get<int>();
            rec.info.gesture = r.at("gesture").get<int>();
            const int day = r.at("day").get<int>();
            if (day != 1 && day != 2) throw ConfigError("manifest: day must be 1 or 2");
            rec.info.day = static_cast<Day>(day);
            rec.info.repetition = r.at("repetition").get<int>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("manifest record: ") + e.what());
        }
        rec.sample_rate_hz = fs;
        const std::string what = describe(rec.info);
        const auto file = root / r.at("file").get<std::string>();
        if (!std::filesystem::exists(file)) throw DataError(what + ": missing file " + file.string());
        const dsp::ChannelMatrix raw =
            layout.format == "csv" ? read_csv(file.string(), what) : read_binary(file.string(), layout, what);
        if (raw.cols() != kChannels)
            throw DataError(what + ": layout has " + std::to_string(raw.cols()) + " channels, expected 256");
        rec.signal.resize(raw.rows(), kChannels);
        for (int j = 0; j < kChannels; ++j)
            rec.signal.col(layout.channel_order[static_cast<std::size_t>(j)]) = (raw.col(j) * layout.scale).cast<float>();
        validate_recording(rec);
        out.push_back(std::move(rec));
    }
    return out;
}

double synthetic_row_shift(int subject, Day day, const SyntheticShiftConfig& shift) {
    if (day == Day::day1) return 0.0;
    Rng rng = Rng(shift.seed, 0x5817f7ull).split(static_cast<std::uint64_t>(subject));
    const double direction = rng.uniform() < 0.5 ? -1.0 : 1.0;
    return direction * shift.spatial_shift_electrodes;
}

SyntheticPlacement synthetic_placement(int subject, std::uint64_t seed) {
    Rng rng = Rng(seed, 0x91ace5ull).split(static_cast<std::uint64_t>(subject));
    const double row = kPlacementJitter * (2.0 * rng.uniform() - 1.0);
    const double col = kPlacementJitter * (2.0 * rng.uniform() - 1.0);
    return {row, col};
}

Eigen::VectorXd synthetic_template(int subject, int gesture, Day day, const SyntheticShiftConfig& shift,
                                   std::uint64_t seed) {
    const Rng root(seed);
    const SyntheticPlacement placement = synthetic_placement(subject, seed);
    const double row_shift = placement.row + synthetic_row_shift(subject, day, shift);
    const double col_shift = placement.col;
    const GridBumps base = draw_bumps(root.split(static_cast<std::uint64_t>(gesture)));
    const GridBumps own = draw_bumps(root.split(1000ull + static_cast<std::uint64_t>(subject) * kGestures + gesture));
    const double gain = day == Day::day2 ? 1.0 - shift.template_gain_drift : 1.0;
    return gain * ((1.0 - kSubjectBlend) * render(base, row_shift, col_shift) + kSubjectBlend * render(own, row_shift, col_shift));
}

std::vector<Recording> generate_synthetic(int subjects, const SyntheticShiftConfig& shift, std::uint64_t seed,
                                          double sample_rate_hz) {
    if (subjects < 1) throw ConfigError("synthetic dataset needs at least one subject");
    shift.validate();
    const Eigen::Index n = static_cast<Eigen::Index>(std::lround(sample_rate_hz));
    const dsp::Cascade band =
        dsp::design_butterworth({dsp::FilterKind::bandpass, 4, 20.0, 450.0, sample_rate_hz});
    const Rng root(seed);

    Eigen::VectorXd envelope(n);
    for (Eigen::Index t = 0; t < n; ++t)
        envelope(t) = kRestLevel + (1.0 - kRestLevel) * smoothstep(static_cast<double>(t) / static_cast<double>(n - 1));

    std::vector<Recording> out;
    out.reserve(static_cast<std::size_t>(subjects) * kGestures * kRepetitions * 2);
    for (int s = 1; s <= subjects; ++s) {
        for (int g = 0; g < kGestures; ++g) {
            for (Day day : {Day::day1, Day::day2}) {
                const Eigen::VectorXd templ = synthetic_template(s, g, day, shift, seed);
                const double extra_noise = day == Day::day2 ? shift.noise_sigma_ratio * kBaseNoise : 0.0;
                for (int rep = 1; rep <= kRepetitions; ++rep) {
                    Rng rng = root.split(recording_stream(s, g, day, rep));
                    const double rep_gain = (1.0 + kRepGainJitter * (2.0 * rng.uniform() - 1.0));
                    const Eigen::VectorXd drive = carrier(rng, n, band).cwiseProduct(envelope) * rep_gain;
                    Recording rec;
                    rec.info = {s, g, day, rep};
                    rec.sample_rate_hz = sample_rate_hz;
                    rec.signal.resize(n, kChannels);
                    for (Eigen::Index t = 0; t < n; ++t) {
                        for (int c = 0; c < kChannels; ++c) {
                            double v = drive(t) * templ(c) + kBaseNoise * rng.normal();
                            if (extra_noise > 0.0) v += extra_noise * rng.normal();
                            rec.signal(t, c) = static_cast<float>(v);
                        }
                    }
                    out.push_back(std::move(rec));
                }
            }
        }
    }
    return out;
}

std::vector<Recording> preprocess(const std::vector<Recording>& recordings, const dsp::FilterChain& chain, int jobs) {
    std::vector<Recording> out(recordings.size());
    parallel_for(recordings.size(), jobs, [&](std::size_t i) {
        validate_recording(recordings[i]);
        out[i] = dsp::filter_record(recordings[i], chain);
    });
    return out;
}

std::vector<int> subject_ids(const std::vector<Recording>& recordings) {
    std::set<int> ids;
    for (const auto& r : recordings) ids.insert(r.info.subject);
    return {ids.begin(), ids.end()};
}

SplitPlan SplitPlan::intraday(Day day) {
    SplitPlan p;
    p.train_day = day;
    p.test_day = day;
    p.val_reps.clear();
    p.calib_reps.clear();
    return p;
}

void SplitPlan::validate() const {
    struct Named {
        const char* name;
        const RepSet* reps;
        Day day;
    };
    const std::array<Named, 4> sets{Named{"train", &train_reps, train_day}, Named{"val", &val_reps, train_day},
                                    Named{"calib", &calib_reps, test_day}, Named{"test", &test_reps, test_day}};
    for (const auto& s : sets)
        for (int r : *s.reps)
            if (r < 1 || r > kRepetitions)
                throw ConfigError(std::string("split plan: ") + s.name + " repetition " + std::to_string(r) +
                                  " outside 1..6");
    if (train_reps.empty()) throw ConfigError("split plan: train repetitions are empty");
    if (test_reps.empty()) throw ConfigError("split plan: test repetitions are empty");
    for (std::size_t i = 0; i < sets.size(); ++i)
        for (std::size_t j = i + 1; j < sets.size(); ++j) {
            if (sets[i].day != sets[j].day) continue;
            for (int r : *sets[i].reps)
                if (sets[j].reps->contains(r))
                    throw ConfigError(std::string("split plan: ") + sets[i].name + " " + rep_list(*sets[i].reps) +
                                      " and " + sets[j].name + " " + rep_list(*sets[j].reps) + " overlap on day " +
                                      std::to_string(day_index(sets[i].day)));
        }
}

std::vector<RepSet> calibration_folds(const RepSet& calib_reps, int reps_per_fold) {
    if (reps_per_fold < 0 || reps_per_fold > static_cast<int>(calib_reps.size()))
        throw ConfigError("reps_per_fold must be between 0 and the number of calibration repetitions");
    if (reps_per_fold == 0) return {};
    const std::vector<int> reps(calib_reps.begin(), calib_reps.end());
    const std::size_t n = reps.size();
    std::vector<bool> pick(n, false);
    std::fill(pick.begin(), pick.begin() + reps_per_fold, true);
    std::vector<RepSet> folds;
    do {
        RepSet fold;
        for (std::size_t i = 0; i < n; ++i)
            if (pick[i]) fold.insert(reps[i]);
        folds.push_back(fold);
    } while (std::prev_permutation(pick.begin(), pick.end()));
    return folds;
}

std::vector<int> WindowSet::labels() const {
    std::vector<int> out(refs_.size());
    for (std::size_t i = 0; i < refs_.size(); ++i) out[i] = label(i);
    return out;
}

WindowSet WindowSet::filter(const std::function<bool(const RecordingInfo&)>& keep) const {
    WindowSet out(source_, window_samples_);
    for (const auto& r : refs_)
        if (keep((*source_)[r.recording].info)) out.refs_.push_back(r);
    return out;
}

WindowTensor WindowSet::window(std::size_t i) const {
    WindowTensor w;
    const WindowRef& r = refs_[i];
    w.data = recording(i).signal.middleRows(r.start, window_samples_);
    w.label = label(i);
    w.provenance = info(i);
    w.start_sample = r.start;
    return w;
}

Partitions make_splits(const WindowSet::Source& recordings, const SplitPlan& plan, const dsp::WindowSpec& windows,
                       const std::vector<int>& subjects) {
    plan.validate();
    windows.validate();
    if (!recordings) throw DataError("make_splits: no recordings");
    const std::set<int> wanted(subjects.begin(), subjects.end());
    auto selected = [&](int s) { return wanted.empty() || wanted.contains(s); };

    std::map<std::tuple<int, int, int, int>, std::uint32_t> index;
    for (std::uint32_t i = 0; i < recordings->size(); ++i) {
        const auto& info = (*recordings)[i].info;
        if (!selected(info.subject)) continue;
        const auto key = std::make_tuple(info.subject, info.gesture, day_index(info.day), info.repetition);
        if (!index.emplace(key, i).second) throw DataError("duplicate recording: " + describe(info));
    }
    std::set<int> present;
    for (const auto& [key, i] : index) present.insert(std::get<0>(key));
    if (present.empty()) throw DataError("make_splits: no recordings for the selected subjects");
    for (int s : wanted)
        if (!present.contains(s)) throw DataError("make_splits: subject " + std::to_string(s) + " has no recordings");

    Partitions out{WindowSet(recordings, windows.window_samples), WindowSet(recordings, windows.window_samples),
                   WindowSet(recordings, windows.window_samples), WindowSet(recordings, windows.window_samples)};
    auto fill = [&](WindowSet& part, const RepSet& reps, Day day) {
        for (int s : present)
            for (int g = 0; g < kGestures; ++g)
                for (int rep : reps) {
                    const auto it = index.find({s, g, day_index(day), rep});
                    if (it == index.end())
                        throw DataError("split: missing repetition for " + describe({s, g, day, rep}));
                    const Recording& rec = (*recordings)[it->second];
                    const Eigen::Index count = windows.count(rec.samples());
                    for (Eigen::Index w = 0; w < count; ++w)
                        part.add(it->second, static_cast<std::uint32_t>(windows.start(w)));
                }
    };
    fill(out.train, plan.train_reps, plan.train_day);
    fill(out.val, plan.val_reps, plan.train_day);
    fill(out.calib, plan.calib_reps, plan.test_day);
    fill(out.test, plan.test_reps, plan.test_day);
    return out;
}

}  // namespace emgvit
