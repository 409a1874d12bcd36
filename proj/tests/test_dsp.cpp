#include <doctest.h>

#include <cmath>
#include <numbers>

#include "emgvit/dsp.hpp"
#include "emgvit/errors.hpp"
#include "emgvit/rng.hpp"

using namespace emgvit;
using namespace emgvit::dsp;

namespace {

constexpr double fs = 2048.0;

// Independent frequency-response oracle: evaluate each section's difference
// equation coefficients as polynomials in z = e^{jw} using explicit sums.
double oracle_db(const Cascade& c, double f) {
    const double w = 2.0 * std::numbers::pi * f / fs;
    double mag = 1.0;
    for (const auto& s : c.sections()) {
        double nr = 0, ni = 0, dr = 0, di = 0;
        const double b[3] = {s.b0, s.b1, s.b2};
        const double a[3] = {1.0, s.a1, s.a2};
        for (int k = 0; k < 3; ++k) {
            nr += b[k] * std::cos(k * w);
            ni -= b[k] * std::sin(k * w);
            dr += a[k] * std::cos(k * w);
            di -= a[k] * std::sin(k * w);
        }
        mag *= std::sqrt((nr * nr + ni * ni) / (dr * dr + di * di));
    }
    return 20.0 * std::log10(mag);
}

double rms(const ChannelMatrix& m, Eigen::Index from) {
    const auto tail = m.bottomRows(m.rows() - from);
    return std::sqrt(tail.array().square().mean());
}

ChannelMatrix sine(double f, double seconds, int channels = 1) {
    const auto n = static_cast<Eigen::Index>(seconds * fs);
    ChannelMatrix m(n, channels);
    for (Eigen::Index t = 0; t < n; ++t) m.row(t).setConstant(std::sin(2.0 * std::numbers::pi * f * t / fs));
    return m;
}

}  // namespace

TEST_CASE("butterworth low-pass corner and passband") {
    const Cascade lp = design_butterworth({FilterKind::lowpass, 8, 200.0, 0.0, fs});
    CHECK(lp.sections().size() == 4);
    CHECK(std::abs(std::abs(lp.response(0.0, fs)) - 1.0) < 1e-6);
    CHECK(std::abs(oracle_db(lp, 200.0) + 3.0103) < 0.2);
    CHECK(std::abs(lp.magnitude_db(200.0, fs) - oracle_db(lp, 200.0)) < 1e-9);
    CHECK(oracle_db(lp, 400.0) < -40.0);
}

TEST_CASE("butterworth band-pass corners and stopband") {
    const Cascade bp = design_butterworth({FilterKind::bandpass, 8, 10.0, 500.0, fs});
    CHECK(bp.sections().size() == 4);
    CHECK(std::abs(oracle_db(bp, 10.0) + 3.0103) < 0.2);
    CHECK(std::abs(oracle_db(bp, 500.0) + 3.0103) < 0.2);
    CHECK(oracle_db(bp, 5.0) < -20.0);
    CHECK(std::abs(oracle_db(bp, std::sqrt(10.0 * 500.0))) < 0.05);
}

TEST_CASE("butterworth high-pass corner") {
    const Cascade hp = design_butterworth({FilterKind::highpass, 4, 20.0, 0.0, fs});
    CHECK(std::abs(oracle_db(hp, 20.0) + 3.0103) < 0.2);
    CHECK(std::abs(std::abs(hp.response(fs / 2, fs)) - 1.0) < 1e-9);
}

TEST_CASE("design errors") {
    CHECK_THROWS_AS(design_butterworth({FilterKind::lowpass, 8, 1024.0, 0.0, fs}), DesignError);
    CHECK_THROWS_AS(design_butterworth({FilterKind::bandpass, 8, 10.0, 1100.0, fs}), DesignError);
    CHECK_THROWS_AS(design_butterworth({FilterKind::bandpass, 8, 500.0, 10.0, fs}), DesignError);
    CHECK_THROWS_AS(design_butterworth({FilterKind::lowpass, 7, 100.0, 0.0, fs}), DesignError);
    CHECK_THROWS_AS(design_notch_bank({50.0, 21, 35.0, fs}), DesignError);
}

TEST_CASE("notch bank attenuation and off-centre flatness") {
    const Cascade notch = design_notch_bank({50.0, 8, 25.0, fs});
    CHECK(notch.sections().size() == 8);
    for (int k = 1; k <= 8; ++k) {
        // the zero sits on the unit circle; probe just beside it as well
        CHECK(oracle_db(notch, 50.0 * k + 1e-3) <= -30.0);
    }
    CHECK(oracle_db(notch, 150.0 + 1e-6) <= -30.0);
    CHECK(std::abs(oracle_db(notch, 175.0)) <= 1.0);
    for (double f = 0.5; f < fs / 2; f += 0.5) {
        const double nearest = std::abs(f - 50.0 * std::clamp(std::round(f / 50.0), 1.0, 8.0));
        if (nearest >= 15.0) REQUIRE(std::abs(oracle_db(notch, f)) <= 1.0);
    }
}

TEST_CASE("filter chain on sines") {
    const FilterChain chain = FilterChain::build(FilterChainSpec{});
    CHECK(chain.stages.size() == 3);

    ChannelMatrix zero = ChannelMatrix::Zero(512, 3);
    filter_signal(zero, chain);
    CHECK(zero.cwiseAbs().maxCoeff() == 0.0);

    const Eigen::Index settle = static_cast<Eigen::Index>(0.2 * 2.0 * fs);
    ChannelMatrix hum = sine(50.0, 2.0);
    const double in_rms = rms(hum, settle);
    filter_signal(hum, chain);
    CHECK(rms(hum, settle) < 0.032 * in_rms);

    // 100 Hz is itself a notch harmonic; 125 Hz sits between notches
    ChannelMatrix tone = sine(125.0, 2.0);
    filter_signal(tone, chain);
    CHECK(std::abs(rms(tone, settle) / in_rms - 1.0) <= 0.12);

    ChannelMatrix harmonic = sine(100.0, 2.0);
    filter_signal(harmonic, chain);
    CHECK(rms(harmonic, settle) < 0.032 * in_rms);
}

TEST_CASE("filtering is linear") {
    Rng rng(5);
    const FilterChain chain = FilterChain::build(FilterChainSpec{});
    ChannelMatrix x(1024, 4), y(1024, 4);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        x.data()[i] = rng.normal();
        y.data()[i] = rng.normal();
    }
    const double a = 1.7, b = -0.6;
    ChannelMatrix combo = a * x + b * y;
    filter_signal(x, chain);
    filter_signal(y, chain);
    filter_signal(combo, chain);
    const ChannelMatrix expect = a * x + b * y;
    CHECK((combo - expect).cwiseAbs().maxCoeff() <= 1e-9 * expect.cwiseAbs().maxCoeff());
}

TEST_CASE("channels are filtered independently and causally") {
    const FilterChain chain = FilterChain::build(FilterChainSpec{});
    ChannelMatrix impulse = ChannelMatrix::Zero(300, 2);
    impulse(100, 1) = 1.0;
    filter_signal(impulse, chain);
    CHECK(impulse.col(0).cwiseAbs().maxCoeff() == 0.0);
    CHECK(impulse.col(1).head(100).cwiseAbs().maxCoeff() == 0.0);
    CHECK(impulse.col(1).tail(200).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("filter_record preserves shape and metadata") {
    Recording rec;
    rec.info = {3, 4, Day::day2, 5};
    rec.signal = SignalMatrix::Zero(700, kChannels);
    rec.signal(10, 7) = 1.0f;
    const Recording out = filter_record(rec, FilterChain::build(FilterChainSpec{}));
    CHECK(out.info == rec.info);
    CHECK(out.samples() == 700);
    CHECK(out.channels() == kChannels);
    rec.signal(0, 0) = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(filter_record(rec, FilterChain::build(FilterChainSpec{})), DataError);
}

TEST_CASE("window counts") {
    const WindowSpec spec{};
    CHECK(spec.count(2048) == 72);
    CHECK(spec.count(612) == 1);
    CHECK_THROWS_AS((void)spec.count(611), DataError);
    CHECK(samples_for_ms(50, fs) == 100);
    CHECK(samples_for_ms(10, fs) == 20);
    CHECK(samples_for_ms(30, fs) == 61);
    CHECK(samples_for_ms(40, fs) == 82);
    CHECK(samples_for_ms(100, fs) == 205);
    CHECK(samples_for_ms(200, fs) == 410);
    CHECK_THROWS_AS((WindowSpec{100, 101, 0}.validate()), ConfigError);
}

TEST_CASE("window count closed form over random specs") {
    Rng rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        const int window = 1 + static_cast<int>(rng.uniform_index(300));
        const int stride = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(window)));
        const int trim = static_cast<int>(rng.uniform_index(600));
        const Eigen::Index samples = trim + window + static_cast<Eigen::Index>(rng.uniform_index(3000));
        const WindowSpec spec{window, stride, trim};
        // brute force: slide until the window no longer fits
        Eigen::Index brute = 0;
        for (Eigen::Index s = trim; s + window <= samples; s += stride) ++brute;
        REQUIRE(spec.count(samples) == brute);
        REQUIRE(spec.count(samples) == (samples - trim - window) / stride + 1);
    }
}

TEST_CASE("segment_windows layout, labels and reshape round trip") {
    Rng rng(2);
    Recording rec;
    rec.info = {1, 6, Day::day1, 3};
    rec.signal.resize(2048, kChannels);
    for (Eigen::Index i = 0; i < rec.signal.size(); ++i) rec.signal.data()[i] = static_cast<float>(rng.normal());
    const auto windows = segment_windows(rec, WindowSpec{});
    REQUIRE(windows.size() == 72);
    const auto& w = windows[5];
    CHECK(w.label == 6);
    CHECK(w.provenance == rec.info);
    CHECK(w.start_sample == 512 + 5 * 20);
    CHECK(w.length() == 100);
    CHECK(w.at(3, 2, 5, 7) == rec.signal(w.start_sample + 3, channel_index(2, 5, 7)));
    const auto flat = w.flatten();
    CHECK(flat[(3 * 4 + 2) * 64 + 5 * 8 + 7] == w.at(3, 2, 5, 7));
    const WindowTensor back = WindowTensor::unflatten(flat, 100, w.label, w.provenance);
    CHECK(back.data == w.data);

    rec.signal.conservativeResize(611, kChannels);
    CHECK_THROWS_AS(segment_windows(rec, WindowSpec{}), DataError);
}
