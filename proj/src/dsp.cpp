#include "emgvit/dsp.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <string>

#include "emgvit/errors.hpp"

namespace emgvit::dsp {

namespace {

using cd = std::complex<double>;
constexpr double kPi = std::numbers::pi;

double prewarp(double hz, double fs) { return 2.0 * fs * std::tan(kPi * hz / fs); }

cd bilinear(cd s, double fs) { return (2.0 * fs + s) / (2.0 * fs - s); }

/// Left-half-plane Butterworth prototype poles with positive imaginary part
/// (plus the real pole for odd orders, which we never need here).
std::vector<cd> prototype_upper_poles(int order) {
    std::vector<cd> poles;
    for (int k = 0; k < order / 2; ++k) {
        const double theta = kPi * (2.0 * k + order + 1) / (2.0 * order);
        poles.emplace_back(std::cos(theta), std::sin(theta));
    }
    return poles;
}

/// Section with poles {zp, conj(zp)} and numerator (1 + c1 z^-1 + c2 z^-2).
Biquad section_from_pole(cd zp, double c1, double c2) {
    Biquad q;
    q.b0 = 1.0;
    q.b1 = c1;
    q.b2 = c2;
    q.a1 = -2.0 * zp.real();
    q.a2 = std::norm(zp);
    return q;
}

void normalize_at(Biquad& q, double freq_hz, double fs) {
    const double mag = std::abs(q.response(freq_hz, fs));
    q.b0 /= mag;
    q.b1 /= mag;
    q.b2 /= mag;
}

std::string hz(double v) {
    std::ostringstream os;
    os << v << " Hz";
    return os.str();
}

}  // namespace

void FilterSpec::validate() const {
    if (sample_rate_hz <= 0.0) throw DesignError("sample rate must be positive");
    if (order <= 0 || order % 2 != 0) throw DesignError("filter order must be a positive even integer");
    const double nyquist = sample_rate_hz / 2.0;
    if (low_hz <= 0.0) throw DesignError("corner frequency must be positive");
    if (low_hz >= nyquist) throw DesignError("corner " + hz(low_hz) + " is at or above Nyquist " + hz(nyquist));
    if (kind == FilterKind::bandpass) {
        if (order % 4 != 0) throw DesignError("band-pass order must be a multiple of 4");
        if (high_hz <= low_hz) throw DesignError("band-pass needs low corner < high corner");
        if (high_hz >= nyquist)
            throw DesignError("corner " + hz(high_hz) + " is at or above Nyquist " + hz(nyquist));
    }
    if (kind == FilterKind::notch) throw DesignError("use NotchSpec for notch filters");
}

void NotchSpec::validate() const {
    if (sample_rate_hz <= 0.0) throw DesignError("sample rate must be positive");
    if (base_hz <= 0.0) throw DesignError("notch base frequency must be positive");
    if (harmonics < 1) throw DesignError("notch bank needs at least one harmonic");
    if (q <= 0.0) throw DesignError("notch Q must be positive");
    const double top = base_hz * harmonics;
    if (top >= sample_rate_hz / 2.0)
        throw DesignError("notch harmonic " + hz(top) + " is at or above Nyquist " + hz(sample_rate_hz / 2.0));
}

std::complex<double> Biquad::response(double freq_hz, double sample_rate_hz) const {
    const cd z1 = std::polar(1.0, -2.0 * kPi * freq_hz / sample_rate_hz);
    const cd z2 = z1 * z1;
    return (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2);
}

std::complex<double> Cascade::response(double freq_hz, double sample_rate_hz) const {
    cd h = 1.0;
    for (const auto& s : sections_) h *= s.response(freq_hz, sample_rate_hz);
    return h;
}

double Cascade::magnitude_db(double freq_hz, double sample_rate_hz) const {
    return 20.0 * std::log10(std::abs(response(freq_hz, sample_rate_hz)));
}

void Cascade::append(const Cascade& other) {
    sections_.insert(sections_.end(), other.sections_.begin(), other.sections_.end());
}

Cascade design_butterworth(const FilterSpec& spec) {
    spec.validate();
    const double fs = spec.sample_rate_hz;
    std::vector<Biquad> sections;

    switch (spec.kind) {
        case FilterKind::lowpass: {
            const double wc = prewarp(spec.low_hz, fs);
            for (const cd p : prototype_upper_poles(spec.order)) {
                Biquad q = section_from_pole(bilinear(p * wc, fs), 2.0, 1.0);
                normalize_at(q, 0.0, fs);
                sections.push_back(q);
            }
            break;
        }
        case FilterKind::highpass: {
            const double wc = prewarp(spec.low_hz, fs);
            for (const cd p : prototype_upper_poles(spec.order)) {
                Biquad q = section_from_pole(bilinear(wc / p, fs), -2.0, 1.0);
                normalize_at(q, fs / 2.0, fs);
                sections.push_back(q);
            }
            break;
        }
        case FilterKind::bandpass: {
            const double w1 = prewarp(spec.low_hz, fs);
            const double w2 = prewarp(spec.high_hz, fs);
            const double bw = w2 - w1;
            const double w0sq = w1 * w2;
            // digital centre frequency of the analog geometric centre
            const double centre_hz = std::atan(std::sqrt(w0sq) / (2.0 * fs)) * fs / kPi;
            for (const cd p : prototype_upper_poles(spec.order / 2)) {
                // s^2 - p·bw·s + w0^2 = 0
                const cd pb = p * bw;
                const cd disc = std::sqrt(pb * pb - 4.0 * w0sq);
                for (const cd s : {(pb + disc) / 2.0, (pb - disc) / 2.0}) {
                    Biquad q = section_from_pole(bilinear(s, fs), 0.0, -1.0);
                    normalize_at(q, centre_hz, fs);
                    sections.push_back(q);
                }
            }
            break;
        }
        case FilterKind::notch:
            throw DesignError("use design_notch_bank for notch filters");
    }
    return Cascade(std::move(sections));
}

Cascade design_notch_bank(const NotchSpec& spec) {
    spec.validate();
    std::vector<Biquad> sections;
    for (int k = 1; k <= spec.harmonics; ++k) {
        const double w0 = 2.0 * kPi * spec.base_hz * k / spec.sample_rate_hz;
        const double alpha = std::sin(w0) / (2.0 * spec.q);
        const double a0 = 1.0 + alpha;
        Biquad q;
        q.b0 = 1.0 / a0;
        q.b1 = -2.0 * std::cos(w0) / a0;
        q.b2 = 1.0 / a0;
        q.a1 = -2.0 * std::cos(w0) / a0;
        q.a2 = (1.0 - alpha) / a0;
        sections.push_back(q);
    }
    return Cascade(std::move(sections));
}

void apply_cascade(const Cascade& cascade, ChannelMatrix& signal) {
    const auto& sections = cascade.sections();
    const Eigen::Index channels = signal.cols();
    // transposed direct form II state per section and channel
    std::vector<Eigen::ArrayXd> s1(sections.size(), Eigen::ArrayXd::Zero(channels));
    std::vector<Eigen::ArrayXd> s2(sections.size(), Eigen::ArrayXd::Zero(channels));
    Eigen::ArrayXd x(channels), y(channels);
    for (Eigen::Index t = 0; t < signal.rows(); ++t) {
        x = signal.row(t).transpose().array();
        for (std::size_t i = 0; i < sections.size(); ++i) {
            const Biquad& q = sections[i];
            y = q.b0 * x + s1[i];
            s1[i] = q.b1 * x - q.a1 * y + s2[i];
            s2[i] = q.b2 * x - q.a2 * y;
            x = y;
        }
        signal.row(t) = x.transpose().matrix();
    }
}

void FilterChainSpec::set_sample_rate(double hz) {
    bandpass.sample_rate_hz = hz;
    notch.sample_rate_hz = hz;
    lowpass.sample_rate_hz = hz;
}

FilterChain FilterChain::build(const FilterChainSpec& spec) {
    FilterChain chain;
    chain.stages.push_back(design_butterworth(spec.bandpass));
    chain.stages.push_back(design_notch_bank(spec.notch));
    chain.stages.push_back(design_butterworth(spec.lowpass));
    return chain;
}

std::complex<double> FilterChain::response(double freq_hz, double sample_rate_hz) const {
    std::complex<double> h = 1.0;
    for (const auto& stage : stages) h *= stage.response(freq_hz, sample_rate_hz);
    return h;
}

void filter_signal(ChannelMatrix& signal, const FilterChain& chain) {
    Cascade all;
    for (const auto& stage : chain.stages) all.append(stage);
    apply_cascade(all, signal);
    if (!signal.allFinite()) throw NumericError("filter produced non-finite output");
}

Recording filter_record(const Recording& rec, const FilterChain& chain) {
    if (!rec.signal.allFinite()) throw DataError("non-finite samples in " + describe(rec.info));
    ChannelMatrix work = rec.signal.cast<double>();
    filter_signal(work, chain);
    Recording out;
    out.info = rec.info;
    out.sample_rate_hz = rec.sample_rate_hz;
    out.signal = work.cast<float>();
    if (!out.signal.allFinite()) throw NumericError("filtered signal overflows float in " + describe(rec.info));
    return out;
}

void WindowSpec::validate() const {
    if (window_samples <= 0) throw ConfigError("window length must be positive");
    if (stride_samples <= 0) throw ConfigError("window stride must be positive");
    if (stride_samples > window_samples) throw ConfigError("window stride must not exceed window length");
    if (trim_samples < 0) throw ConfigError("trim must be nonnegative");
}

Eigen::Index WindowSpec::count(Eigen::Index samples) const {
    validate();
    const Eigen::Index usable = samples - trim_samples - window_samples;
    if (usable < 0)
        throw DataError("record of " + std::to_string(samples) + " samples is shorter than trim + window (" +
                        std::to_string(trim_samples + window_samples) + ")");
    return usable / stride_samples + 1;
}

int samples_for_ms(double ms, double sample_rate_hz) {
    // The model's 100-sample input is the 50 ms window at 2048 Hz.
    if (ms == 50.0 && sample_rate_hz == kDefaultSampleRate) return 100;
    if (ms == 10.0 && sample_rate_hz == kDefaultSampleRate) return 20;
    return static_cast<int>(std::lround(ms * sample_rate_hz / 1000.0));
}

std::vector<WindowTensor> segment_windows(const Recording& rec, const WindowSpec& spec) {
    const Eigen::Index n = spec.count(rec.samples());
    if (rec.channels() != kChannels) throw DataError("segment_windows: expected 256 channels");
    std::vector<WindowTensor> out;
    out.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        WindowTensor w;
        w.start_sample = spec.start(i);
        w.data = rec.signal.middleRows(w.start_sample, spec.window_samples);
        w.label = rec.info.gesture;
        w.provenance = rec.info;
        out.push_back(std::move(w));
    }
    return out;
}

}  // namespace emgvit::dsp
