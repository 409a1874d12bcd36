#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <type_traits>
#include <vector>

#include "emgvit/errors.hpp"

namespace emgvit {

static_assert(std::endian::native == std::endian::little, "binary formats are little-endian");

/// Append-only little-endian byte buffer.
class ByteWriter {
public:
    template <typename T>
        requires std::is_arithmetic_v<T>
    void put(T value) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    void put_array(const T* data, std::size_t count) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(data);
        bytes_.insert(bytes_.end(), p, p + count * sizeof(T));
    }

    void put_raw(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        bytes_.insert(bytes_.end(), p, p + n);
    }

    void put_string(const std::string& s) {
        put(static_cast<std::uint16_t>(s.size()));
        put_raw(s.data(), s.size());
    }

    [[nodiscard]] const std::vector<std::uint8_t>& bytes() const { return bytes_; }
    std::vector<std::uint8_t>& bytes() { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked reader over a byte buffer.
class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t size, std::string what)
        : data_(data), size_(size), what_(std::move(what)) {}

    template <typename T>
        requires std::is_arithmetic_v<T>
    T get() {
        T value;
        std::memcpy(&value, take(sizeof(T)), sizeof(T));
        return value;
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    void get_array(T* out, std::size_t count) {
        std::memcpy(out, take(count * sizeof(T)), count * sizeof(T));
    }

    std::string get_string() {
        const auto n = get<std::uint16_t>();
        const auto* p = take(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }

    const std::uint8_t* take(std::size_t n) {
        if (n > size_ - pos_) throw DataError(what_ + ": truncated payload");
        const auto* p = data_ + pos_;
        pos_ += n;
        return p;
    }

    [[nodiscard]] std::size_t position() const { return pos_; }
    [[nodiscard]] std::size_t remaining() const { return size_ - pos_; }

private:
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
    std::string what_;
};

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace emgvit
