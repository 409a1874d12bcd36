#include "emgvit/model.hpp"

namespace emgvit {

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v <= 0) throw ConfigError(std::string("model.") + name + " must be positive");
    };
    positive(window_samples, "window_samples");
    positive(grids, "grids");
    positive(grid_rows, "grid_rows");
    positive(grid_cols, "grid_cols");
    positive(latent_dim, "latent_dim");
    positive(layers, "layers");
    positive(heads, "heads");
    positive(head_dim, "head_dim");
    positive(mlp_dim, "mlp_dim");
    positive(n_classes, "n_classes");
    if (dropout_embed < 0.0 || dropout_embed >= 1.0) throw ConfigError("model.dropout_embed must be in [0, 1)");
    if (dropout_encoder < 0.0 || dropout_encoder >= 1.0) throw ConfigError("model.dropout_encoder must be in [0, 1)");
}

std::int64_t count_params(const ModelConfig& c, ParamSubset subset) {
    const std::int64_t d = c.latent_dim;
    const std::int64_t w = c.attention_width();
    const std::int64_t projection = std::int64_t{c.patch_size()} * d + d;
    if (subset == ParamSubset::projection_only) return projection;
    const std::int64_t layer = 2 * d                // ln1
                               + 3 * (d * w + w)    // query, key, value
                               + (w * d + d)        // output projection
                               + 2 * d              // ln2
                               + (d * c.mlp_dim + c.mlp_dim) + (std::int64_t{c.mlp_dim} * d + d);
    const std::int64_t head = 2 * d + d * c.n_classes + c.n_classes;
    return projection + d /* class token */ + std::int64_t{c.seq_len()} * d + c.layers * layer + head;
}

}  // namespace emgvit
