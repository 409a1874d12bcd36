#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace emgvit {

inline constexpr int kGrids = 4;
inline constexpr int kGridRows = 8;
inline constexpr int kGridCols = 8;
inline constexpr int kChannels = kGrids * kGridRows * kGridCols;
inline constexpr int kGestures = 11;
inline constexpr int kRepetitions = 6;
inline constexpr double kDefaultSampleRate = 2048.0;

/// Gesture labels in reporting order.
inline constexpr std::array<const char*, kGestures> kGestureNames = {
    "IFE", "LFE", "WF", "ETIF", "EIMF", "WSHC", "WFHO", "EMRLF", "EIMRLF", "HC", "HO"};

enum class Day : std::uint8_t { day1 = 1, day2 = 2 };

inline int day_index(Day d) { return static_cast<int>(d); }

/// Grid-major channel index: (grid, row, column) -> [0, 256).
constexpr int channel_index(int grid, int row, int col) {
    return (grid * kGridRows + row) * kGridCols + col;
}

struct RecordingInfo {
    int subject = 0;
    int gesture = 0;
    Day day = Day::day1;
    int repetition = 1;

    friend bool operator==(const RecordingInfo&, const RecordingInfo&) = default;
};

/// Samples are stored time-major: row t holds all 256 channels at sample t
/// in grid-major order. A window is then a contiguous block of rows.
using SignalMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Recording {
    RecordingInfo info;
    double sample_rate_hz = kDefaultSampleRate;
    SignalMatrix signal;

    [[nodiscard]] Eigen::Index samples() const { return signal.rows(); }
    [[nodiscard]] Eigen::Index channels() const { return signal.cols(); }
};

std::string describe(const RecordingInfo& info);

/// One model input: T rows × 256 grid-major channels, i.e. a T×4×8×8 tensor.
struct WindowTensor {
    SignalMatrix data;
    int label = 0;
    RecordingInfo provenance;
    Eigen::Index start_sample = 0;

    [[nodiscard]] Eigen::Index length() const { return data.rows(); }

    [[nodiscard]] float at(Eigen::Index t, int grid, int row, int col) const {
        return data(t, channel_index(grid, row, col));
    }

    /// Row-major (T, grid, row, col) flattening.
    [[nodiscard]] std::vector<float> flatten() const;
    static WindowTensor unflatten(const std::vector<float>& values, Eigen::Index length, int label,
                                  const RecordingInfo& provenance);
};

}  // namespace emgvit
