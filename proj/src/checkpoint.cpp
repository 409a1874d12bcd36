#include "emgvit/checkpoint.hpp"

#include <fstream>
#include <iterator>

namespace emgvit {

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + path);
}

void write_model_config(ByteWriter& out, const ModelConfig& c) {
    for (const int v : {c.window_samples, c.grids, c.grid_rows, c.grid_cols, c.latent_dim, c.layers, c.heads,
                        c.head_dim, c.mlp_dim, c.n_classes})
        out.put(static_cast<std::int32_t>(v));
    out.put(c.dropout_embed);
    out.put(c.dropout_encoder);
}

ModelConfig read_model_config(ByteReader& in) {
    ModelConfig c;
    for (int* field : {&c.window_samples, &c.grids, &c.grid_rows, &c.grid_cols, &c.latent_dim, &c.layers, &c.heads,
                       &c.head_dim, &c.mlp_dim, &c.n_classes})
        *field = in.get<std::int32_t>();
    c.dropout_embed = in.get<double>();
    c.dropout_encoder = in.get<double>();
    c.validate();
    return c;
}

}  // namespace emgvit
