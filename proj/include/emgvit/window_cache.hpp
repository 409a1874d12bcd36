#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emgvit/dataset.hpp"

namespace emgvit {

/// Window cache layout (little-endian):
///   magic "EMGVWIN1" | u32 version (1) | u32 dtype (1 = float32)
///   u64 windows N | u32 window samples T | u32 channels C
///   u16 label count, then each label as u16 length | bytes
///   u16 length | config hash
///   per window: u16 subject | u8 day | u8 gesture | u8 repetition | u32 start
///   N·T·C float32 samples, window-major then time-major
///   32-byte SHA-256 of every preceding byte.
namespace window_cache_format {
inline constexpr char kMagic[8] = {'E', 'M', 'G', 'V', 'W', 'I', 'N', '1'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint32_t kFloat32 = 1;
}  // namespace window_cache_format

struct WindowCache {
    std::string config_hash;
    int window_samples = 0;
    std::vector<std::string> label_names;
    std::vector<RecordingInfo> info;
    std::vector<std::uint32_t> starts;
    SignalMatrix data;  // (N·T) × C

    [[nodiscard]] std::size_t size() const { return info.size(); }
    [[nodiscard]] WindowTensor window(std::size_t i) const;
};

std::vector<std::uint8_t> serialize_window_cache(const WindowSet& set, const std::string& config_hash);
WindowCache deserialize_window_cache(const std::vector<std::uint8_t>& bytes);
void write_window_cache(const std::string& path, const WindowSet& set, const std::string& config_hash);
WindowCache read_window_cache(const std::string& path);

}  // namespace emgvit
