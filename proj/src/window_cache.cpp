#include "emgvit/window_cache.hpp"

#include <algorithm>
#include <span>

#include "emgvit/binary_io.hpp"
#include "emgvit/hashing.hpp"

namespace emgvit {

WindowTensor WindowCache::window(std::size_t i) const {
    const Eigen::Index t = window_samples;
    return {data.middleRows(static_cast<Eigen::Index>(i) * t, t), info[i].gesture};
}

std::vector<std::uint8_t> serialize_window_cache(const WindowSet& set, const std::string& config_hash) {
    namespace f = window_cache_format;
    ByteWriter out;
    out.put_raw(f::kMagic, sizeof(f::kMagic));
    out.put(f::kVersion);
    out.put(f::kFloat32);
    out.put(static_cast<std::uint64_t>(set.size()));
    out.put(static_cast<std::uint32_t>(set.window_samples()));
    out.put(static_cast<std::uint32_t>(kChannels));
    out.put(static_cast<std::uint16_t>(kGestures));
    for (const char* name : kGestureNames) out.put_string(name);
    out.put_string(config_hash);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const RecordingInfo& r = set.info(i);
        out.put(static_cast<std::uint16_t>(r.subject));
        out.put(static_cast<std::uint8_t>(day_index(r.day)));
        out.put(static_cast<std::uint8_t>(r.gesture));
        out.put(static_cast<std::uint8_t>(r.repetition));
        out.put(set.ref(i).start);
    }
    const Eigen::Index t = set.window_samples();
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& signal = set.recording(i).signal;
        out.put_array(signal.data() + static_cast<Eigen::Index>(set.ref(i).start) * kChannels,
                      static_cast<std::size_t>(t * kChannels));
    }
    const Digest digest = sha256(std::span<const std::uint8_t>(out.bytes()));
    out.put_raw(digest.data(), digest.size());
    return std::move(out.bytes());
}

WindowCache deserialize_window_cache(const std::vector<std::uint8_t>& bytes) {
    namespace f = window_cache_format;
    constexpr std::size_t kDigest = 32;
    if (bytes.size() < sizeof(f::kMagic) + kDigest) throw DataError("window cache: file too short");
    const std::span<const std::uint8_t> body(bytes.data(), bytes.size() - kDigest);
    const Digest digest = sha256(body);
    if (!std::equal(digest.begin(), digest.end(), bytes.end() - kDigest))
        throw DataError("window cache: checksum mismatch");
    ByteReader in(body.data(), body.size(), "window cache");
    if (!std::equal(f::kMagic, f::kMagic + sizeof(f::kMagic), in.take(sizeof(f::kMagic))))
        throw DataError("window cache: bad magic");
    if (in.get<std::uint32_t>() != f::kVersion) throw DataError("window cache: unsupported version");
    if (in.get<std::uint32_t>() != f::kFloat32) throw DataError("window cache: unsupported dtype");
    const auto n = in.get<std::uint64_t>();
    const auto t = in.get<std::uint32_t>();
    const auto c = in.get<std::uint32_t>();
    if (c != kChannels) throw DataError("window cache: expected 256 channels");
    if (t == 0) throw DataError("window cache: zero window length");
    WindowCache cache;
    cache.window_samples = static_cast<int>(t);
    const auto labels = in.get<std::uint16_t>();
    for (std::uint16_t i = 0; i < labels; ++i) cache.label_names.push_back(in.get_string());
    cache.config_hash = in.get_string();
    constexpr std::size_t kRecordBytes = 2 + 1 + 1 + 1 + 4;
    if (n > in.remaining() / kRecordBytes) throw DataError("window cache: truncated payload");
    cache.info.resize(n);
    cache.starts.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        RecordingInfo& r = cache.info[i];
        r.subject = in.get<std::uint16_t>();
        const auto day = in.get<std::uint8_t>();
        if (day != 1 && day != 2) throw DataError("window cache: bad day");
        r.day = static_cast<Day>(day);
        r.gesture = in.get<std::uint8_t>();
        if (r.gesture >= labels) throw DataError("window cache: label out of range");
        r.repetition = in.get<std::uint8_t>();
        cache.starts[i] = in.get<std::uint32_t>();
    }
    const std::size_t samples = static_cast<std::size_t>(n) * t * c;
    if (in.remaining() != samples * sizeof(float)) throw DataError("window cache: payload size mismatch");
    cache.data.resize(static_cast<Eigen::Index>(n * t), kChannels);
    in.get_array(cache.data.data(), samples);
    return cache;
}

void write_window_cache(const std::string& path, const WindowSet& set, const std::string& config_hash) {
    write_file_bytes(path, serialize_window_cache(set, config_hash));
}

WindowCache read_window_cache(const std::string& path) { return deserialize_window_cache(read_file_bytes(path)); }

}  // namespace emgvit
