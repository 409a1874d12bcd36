#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace emgvit {

/// Philox4x32-10 counter-based generator.
///
/// Output depends only on (key, stream, counter), so a stream can be split
/// into independent sub-streams and replayed on any platform without relying
/// on the standard library's implementation-defined distributions.
class Philox {
public:
    using Block = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Block generate(Block ctr, Key key) noexcept {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += kWeyl0;
                key[1] += kWeyl1;
            }
            const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
            const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
            const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const auto lo0 = static_cast<std::uint32_t>(p0);
            const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const auto lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
};

/// Seeded random stream built on Philox. Copyable; copies replay identically.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0) noexcept
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          stream_(stream) {}

    /// Independent stream sharing this generator's seed.
    [[nodiscard]] Rng split(std::uint64_t stream) const noexcept {
        Rng child;
        child.key_ = key_;
        // Mix so that split(i) of different parents do not collide trivially.
        child.stream_ = (stream_ * 0x9E3779B97F4A7C15ull) ^ (stream + 0x632BE59BD9B4E019ull);
        return child;
    }

    std::uint32_t next_u32() noexcept {
        if (used_ == 4) refill();
        return buffer_[used_++];
    }

    std::uint64_t next_u64() noexcept {
        const std::uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    /// Same values as out.size() successive next_u32() calls, generated in
    /// whole blocks.
    void fill_u32(std::span<std::uint32_t> out) noexcept {
        std::size_t i = 0;
        while (i < out.size() && used_ < 4) out[i++] = buffer_[used_++];
        for (; i + 4 <= out.size(); i += 4) {
            const Philox::Block b = Philox::generate(counter_block(), key_);
            ++counter_;
            out[i] = b[0];
            out[i + 1] = b[1];
            out[i + 2] = b[2];
            out[i + 3] = b[3];
        }
        while (i < out.size()) out[i++] = next_u32();
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t uniform_index(std::uint64_t n) noexcept {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal via Box-Muller.
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    /// Normal truncated to [-2 std, 2 std] by rejection.
    double truncated_normal(double stddev) noexcept {
        double z;
        do {
            z = normal();
        } while (std::abs(z) > 2.0);
        return z * stddev;
    }

    template <typename T>
    void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_index(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& items) noexcept {
        shuffle(std::span<T>(items));
    }

private:
    [[nodiscard]] Philox::Block counter_block() const noexcept {
        return {static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
                static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
    }

    void refill() noexcept {
        buffer_ = Philox::generate(counter_block(), key_);
        ++counter_;
        used_ = 0;
    }

    Philox::Key key_{};
    std::uint64_t stream_ = 0;
    std::uint64_t counter_ = 0;
    Philox::Block buffer_{};
    int used_ = 4;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace emgvit
