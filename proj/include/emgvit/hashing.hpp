#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace emgvit {

using Digest = std::array<std::uint8_t, 32>;

/// SHA-256 (OpenSSL).
Digest sha256(std::span<const std::uint8_t> bytes);
Digest sha256(std::string_view text);
std::string to_hex(const Digest& digest);
std::string sha256_hex(std::string_view text);
std::string file_sha256_hex(const std::string& path);

}  // namespace emgvit
