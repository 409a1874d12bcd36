#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "emgvit/binary_io.hpp"
#include "emgvit/hashing.hpp"
#include "emgvit/model.hpp"

namespace emgvit {

/// Checkpoint layout (little-endian):
///   magic "EMGVCKPT" | u32 version (1) | u32 scalar bytes (4 or 8)
///   config: i32 × 10 (window_samples, grids, grid_rows, grid_cols,
///           latent_dim, layers, heads, head_dim, mlp_dim, n_classes),
///           f64 × 2 (dropout_embed, dropout_encoder)
///   u32 block count, then per block:
///     u16 name length | name | u32 rows | u32 cols | rows·cols scalars
///   32-byte SHA-256 of every preceding byte.
namespace checkpoint_format {
inline constexpr char kMagic[8] = {'E', 'M', 'G', 'V', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;
}  // namespace checkpoint_format

void write_model_config(ByteWriter& out, const ModelConfig& c);
ModelConfig read_model_config(ByteReader& in);

template <typename Scalar>
std::vector<std::uint8_t> serialize_checkpoint(const ModelParams<Scalar>& params) {
    ByteWriter out;
    out.put_raw(checkpoint_format::kMagic, sizeof(checkpoint_format::kMagic));
    out.put(checkpoint_format::kVersion);
    out.put(static_cast<std::uint32_t>(sizeof(Scalar)));
    write_model_config(out, params.config);
    const auto named = params.named();
    out.put(static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, t] : named) {
        out.put_string(name);
        out.put(static_cast<std::uint32_t>(t.rows()));
        out.put(static_cast<std::uint32_t>(t.cols()));
        out.put_array(t.value().data(), static_cast<std::size_t>(t.size()));
    }
    const Digest digest = sha256(std::span<const std::uint8_t>(out.bytes()));
    out.put_raw(digest.data(), digest.size());
    return std::move(out.bytes());
}

template <typename Stored, typename Scalar>
void read_blocks(ByteReader& in, ModelParams<Scalar>& params) {
    const auto count = in.get<std::uint32_t>();
    const auto named = params.named();
    if (count != named.size()) throw DataError("checkpoint: parameter block count does not match its config");
    for (const auto& [name, t] : named) {
        const std::string stored = in.get_string();
        if (stored != name) throw DataError("checkpoint: expected block " + name + ", found " + stored);
        const auto rows = in.get<std::uint32_t>();
        const auto cols = in.get<std::uint32_t>();
        if (rows != t.rows() || cols != t.cols()) throw DataError("checkpoint: shape mismatch for " + name);
        Mat<Stored> block(rows, cols);
        in.get_array(block.data(), static_cast<std::size_t>(block.size()));
        Tensor<Scalar> target = t;
        target.mutable_value() = block.template cast<Scalar>();
    }
}

/// Verifies the checksum and config, converting the stored scalar type to
/// Scalar when they differ.
template <typename Scalar>
ModelParams<Scalar> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < sizeof(checkpoint_format::kMagic) + 32) throw DataError("checkpoint: file too short");
    const std::size_t body = bytes.size() - 32;
    const Digest digest = sha256(std::span<const std::uint8_t>(bytes.data(), body));
    if (!std::equal(digest.begin(), digest.end(), bytes.begin() + static_cast<std::ptrdiff_t>(body)))
        throw DataError("checkpoint: integrity checksum mismatch");
    ByteReader in(bytes.data(), body, "checkpoint");
    if (std::memcmp(in.take(8), checkpoint_format::kMagic, 8) != 0) throw DataError("checkpoint: bad magic");
    if (in.get<std::uint32_t>() != checkpoint_format::kVersion) throw DataError("checkpoint: unsupported version");
    const auto scalar_bytes = in.get<std::uint32_t>();
    const ModelConfig config = read_model_config(in);
    ModelParams<Scalar> params = ModelParams<Scalar>::zeros(config);
    if (scalar_bytes == 4)
        read_blocks<float>(in, params);
    else if (scalar_bytes == 8)
        read_blocks<double>(in, params);
    else
        throw DataError("checkpoint: unsupported scalar width");
    if (in.remaining() != 0) throw DataError("checkpoint: trailing bytes");
    return params;
}

template <typename Scalar>
void save_checkpoint(const std::string& path, const ModelParams<Scalar>& params) {
    write_file_bytes(path, serialize_checkpoint(params));
}

template <typename Scalar>
ModelParams<Scalar> load_checkpoint(const std::string& path) {
    return deserialize_checkpoint<Scalar>(read_file_bytes(path));
}

/// SHA-256 over the serialized checkpoint (hex).
template <typename Scalar>
std::string checkpoint_hash(const ModelParams<Scalar>& params) {
    const auto bytes = serialize_checkpoint(params);
    return to_hex(sha256(std::span<const std::uint8_t>(bytes)));
}

}  // namespace emgvit
