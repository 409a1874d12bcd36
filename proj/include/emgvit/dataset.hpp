#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "emgvit/dsp.hpp"
#include "emgvit/errors.hpp"
#include "emgvit/recording.hpp"
#include "emgvit/tensor.hpp"

namespace emgvit {

using RepSet = std::set<int>;

/// Day-2 perturbation of the synthetic generator. Gain is multiplied by
/// (1 - template_gain_drift), every activation bump moves by
/// spatial_shift_electrodes rows (direction drawn per subject from `seed`),
/// and white noise of std noise_sigma_ratio × the base noise level is added.
/// All-zero fields make both days identically distributed.
struct SyntheticShiftConfig {
    double template_gain_drift = 0.2;
    int spatial_shift_electrodes = 1;
    double noise_sigma_ratio = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Checks channel count, repetition and gesture range, finiteness, and that
/// the record holds at least `min_samples` samples.
void validate_recording(const Recording& rec, Eigen::Index min_samples = 0);

/// Reads a JSON manifest and every signal file it lists. Channels are
/// reordered to grid-major.
std::vector<Recording> load_dataset(const std::string& manifest_path);

/// 2 days × 11 gestures × 6 one-second repetitions per subject, subjects
/// numbered 1..subjects. Deterministic in (subjects, shift, seed).
std::vector<Recording> generate_synthetic(int subjects, const SyntheticShiftConfig& shift, std::uint64_t seed,
                                          double sample_rate_hz = kDefaultSampleRate);

/// Electrode placement offset of one subject (rows, columns), shared by both
/// days; each component lies in [-1.5, 1.5].
struct SyntheticPlacement {
    double row = 0.0;
    double col = 0.0;
};
SyntheticPlacement synthetic_placement(int subject, std::uint64_t seed);

/// Day-2 row displacement of the activation bumps for one subject.
double synthetic_row_shift(int subject, Day day, const SyntheticShiftConfig& shift);

/// Per-channel activation amplitude (256, grid-major) of one synthetic
/// (subject, gesture, day), including the day's gain.
Eigen::VectorXd synthetic_template(int subject, int gesture, Day day, const SyntheticShiftConfig& shift,
                                   std::uint64_t seed);

/// Filters every recording with the chain (parallel over recordings).
std::vector<Recording> preprocess(const std::vector<Recording>& recordings, const dsp::FilterChain& chain,
                                  int jobs = 1);

std::vector<int> subject_ids(const std::vector<Recording>& recordings);

struct SplitPlan {
    RepSet train_reps{1, 3, 4, 6};
    RepSet val_reps{2, 5};
    RepSet calib_reps{1, 3, 4, 6};
    RepSet test_reps{2, 5};
    Day train_day = Day::day1;
    Day test_day = Day::day2;

    /// Same-day plan: train on {1,3,4,6}, test on {2,5}, no validation or
    /// calibration reps.
    static SplitPlan intraday(Day day);

    /// Throws ConfigError when sets on one day overlap or a rep is outside 1..6.
    void validate() const;
};

/// Every k-subset of the calibration reps in lexicographic order
/// (k = 0 yields no folds).
std::vector<RepSet> calibration_folds(const RepSet& calib_reps, int reps_per_fold);

struct WindowRef {
    std::uint32_t recording = 0;
    std::uint32_t start = 0;
};

/// Index view of windows over an immutable recording list; windows are
/// copied out only when a batch is gathered.
class WindowSet {
public:
    using Source = std::shared_ptr<const std::vector<Recording>>;

    WindowSet() = default;
    WindowSet(Source source, int window_samples) : source_(std::move(source)), window_samples_(window_samples) {}

    void add(std::uint32_t recording, std::uint32_t start) { refs_.push_back({recording, start}); }

    [[nodiscard]] std::size_t size() const { return refs_.size(); }
    [[nodiscard]] bool empty() const { return refs_.empty(); }
    [[nodiscard]] int window_samples() const { return window_samples_; }
    [[nodiscard]] const WindowRef& ref(std::size_t i) const { return refs_[i]; }
    [[nodiscard]] const Recording& recording(std::size_t i) const { return (*source_)[refs_[i].recording]; }
    [[nodiscard]] const RecordingInfo& info(std::size_t i) const { return recording(i).info; }
    [[nodiscard]] int label(std::size_t i) const { return info(i).gesture; }
    [[nodiscard]] std::vector<int> labels() const;
    [[nodiscard]] const Source& source() const { return source_; }

    /// Windows whose recording satisfies `keep`.
    [[nodiscard]] WindowSet filter(const std::function<bool(const RecordingInfo&)>& keep) const;

    /// Stacks the selected windows into (|idx|·T) × 256 rows.
    template <typename Scalar>
    void gather(std::span<const std::size_t> idx, Mat<Scalar>& x, std::vector<int>& y) const {
        const Eigen::Index t = window_samples_;
        x.resize(static_cast<Eigen::Index>(idx.size()) * t, kChannels);
        y.resize(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const WindowRef& r = refs_[idx[k]];
            x.middleRows(static_cast<Eigen::Index>(k) * t, t) =
                (*source_)[r.recording].signal.middleRows(r.start, t).template cast<Scalar>();
            y[k] = label(idx[k]);
        }
    }

    [[nodiscard]] WindowTensor window(std::size_t i) const;

private:
    Source source_;
    int window_samples_ = 0;
    std::vector<WindowRef> refs_;
};

struct Partitions {
    WindowSet train, val, calib, test;
};

/// Windows every recording of the selected subjects (all when `subjects` is
/// empty) into the four partitions of the plan. Throws DataError naming the
/// first (subject, gesture, day, rep) the plan needs but the data lacks.
Partitions make_splits(const WindowSet::Source& recordings, const SplitPlan& plan, const dsp::WindowSpec& windows,
                       const std::vector<int>& subjects = {});

}  // namespace emgvit
