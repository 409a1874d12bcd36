#pragma once

#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "emgvit/recording.hpp"

namespace emgvit::dsp {

enum class FilterKind { lowpass, highpass, bandpass, notch };

struct FilterSpec {
    FilterKind kind = FilterKind::lowpass;
    int order = 8;
    double low_hz = 0.0;   // corner for lowpass/highpass, lower corner for bandpass
    double high_hz = 0.0;  // upper corner for bandpass
    double sample_rate_hz = kDefaultSampleRate;

    void validate() const;
};

struct NotchSpec {
    double base_hz = 50.0;
    int harmonics = 8;
    double q = 25.0;
    double sample_rate_hz = kDefaultSampleRate;

    void validate() const;
};

/// Normalized second-order section, a0 = 1.
struct Biquad {
    double b0 = 1, b1 = 0, b2 = 0;
    double a1 = 0, a2 = 0;

    [[nodiscard]] std::complex<double> response(double freq_hz, double sample_rate_hz) const;
};

class Cascade {
public:
    Cascade() = default;
    explicit Cascade(std::vector<Biquad> sections) : sections_(std::move(sections)) {}

    [[nodiscard]] const std::vector<Biquad>& sections() const { return sections_; }
    [[nodiscard]] std::complex<double> response(double freq_hz, double sample_rate_hz) const;
    [[nodiscard]] double magnitude_db(double freq_hz, double sample_rate_hz) const;

    void append(const Cascade& other);

private:
    std::vector<Biquad> sections_;
};

/// Butterworth design via the bilinear transform with corner pre-warping.
/// `order` is the total filter order (poles), so an order-8 band-pass is
/// built from an order-4 low-pass prototype.
Cascade design_butterworth(const FilterSpec& spec);

/// One second-order notch at each of base_hz·k, k = 1..harmonics.
Cascade design_notch_bank(const NotchSpec& spec);

using ChannelMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Causal single-pass filtering of every column of a time-major signal,
/// starting from zero state.
void apply_cascade(const Cascade& cascade, ChannelMatrix& signal);

struct FilterChainSpec {
    FilterSpec bandpass{FilterKind::bandpass, 8, 10.0, 500.0, kDefaultSampleRate};
    NotchSpec notch{};
    FilterSpec lowpass{FilterKind::lowpass, 8, 200.0, 0.0, kDefaultSampleRate};

    void set_sample_rate(double hz);
};

/// Stages in application order: band-pass, notch bank, low-pass.
struct FilterChain {
    std::vector<Cascade> stages;

    static FilterChain build(const FilterChainSpec& spec);
    [[nodiscard]] std::complex<double> response(double freq_hz, double sample_rate_hz) const;
};

/// Filters every channel independently; output length equals input length.
Recording filter_record(const Recording& rec, const FilterChain& chain);

/// Same as filter_record on a raw double signal (time-major).
void filter_signal(ChannelMatrix& signal, const FilterChain& chain);

struct WindowSpec {
    int window_samples = 100;
    int stride_samples = 20;
    int trim_samples = 512;

    void validate() const;
    /// Number of windows for a record of `samples` samples; throws when the
    /// record is shorter than trim + window.
    [[nodiscard]] Eigen::Index count(Eigen::Index samples) const;
    [[nodiscard]] Eigen::Index start(Eigen::Index index) const {
        return trim_samples + index * stride_samples;
    }
};

/// Window length in samples for a duration in ms, rounded to nearest.
int samples_for_ms(double ms, double sample_rate_hz);

std::vector<WindowTensor> segment_windows(const Recording& rec, const WindowSpec& spec);

}  // namespace emgvit::dsp
