#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "emgvit/errors.hpp"
#include "emgvit/recording.hpp"
#include "emgvit/rng.hpp"
#include "emgvit/tensor.hpp"

namespace emgvit {

/// Transformer hyperparameters. Defaults are the reference configuration:
/// 100-sample windows over a 4×8×8 grid, D = 128, 8 layers of 4 heads × 16,
/// MLP width 32, dropout 0.1 after the embedding and 0.5 inside the encoder.
struct ModelConfig {
    int window_samples = 100;
    int grids = kGrids;
    int grid_rows = kGridRows;
    int grid_cols = kGridCols;
    int latent_dim = 128;
    int layers = 8;
    int heads = 4;
    int head_dim = 16;
    int mlp_dim = 32;
    double dropout_embed = 0.1;
    double dropout_encoder = 0.5;
    int n_classes = kGestures;

    [[nodiscard]] int patch_size() const { return grids * grid_rows * grid_cols; }
    [[nodiscard]] int seq_len() const { return window_samples + 1; }
    [[nodiscard]] int attention_width() const { return heads * head_dim; }
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class ParamSubset { all, projection_only };

/// Closed-form parameter count for a configuration.
std::int64_t count_params(const ModelConfig& config, ParamSubset subset);

template <typename Scalar>
struct EncoderLayerParams {
    Tensor<Scalar> ln1_gain, ln1_bias;
    Tensor<Scalar> query_w, query_b, key_w, key_b, value_w, value_b, out_w, out_b;
    Tensor<Scalar> ln2_gain, ln2_bias;
    Tensor<Scalar> mlp_in_w, mlp_in_b, mlp_out_w, mlp_out_b;

    template <typename F>
    void for_each(const std::string& prefix, F&& f) const {
        f(prefix + "ln1.gain", ln1_gain);
        f(prefix + "ln1.bias", ln1_bias);
        f(prefix + "attn.query.weight", query_w);
        f(prefix + "attn.query.bias", query_b);
        f(prefix + "attn.key.weight", key_w);
        f(prefix + "attn.key.bias", key_b);
        f(prefix + "attn.value.weight", value_w);
        f(prefix + "attn.value.bias", value_b);
        f(prefix + "attn.out.weight", out_w);
        f(prefix + "attn.out.bias", out_b);
        f(prefix + "ln2.gain", ln2_gain);
        f(prefix + "ln2.bias", ln2_bias);
        f(prefix + "mlp.in.weight", mlp_in_w);
        f(prefix + "mlp.in.bias", mlp_in_b);
        f(prefix + "mlp.out.weight", mlp_out_w);
        f(prefix + "mlp.out.bias", mlp_out_b);
    }
};

/// Every trainable tensor of the network. Weight matrices are stored
/// input-major (in × out) so a layer is x·W + b.
template <typename Scalar>
struct ModelParams {
    ModelConfig config;
    Tensor<Scalar> projection;       // patch_size × D
    Tensor<Scalar> projection_bias;  // 1 × D
    Tensor<Scalar> class_token;      // 1 × D
    Tensor<Scalar> position;         // (T+1) × D
    std::vector<EncoderLayerParams<Scalar>> layers;
    Tensor<Scalar> head_ln_gain, head_ln_bias;
    Tensor<Scalar> head_w;  // D × n_classes
    Tensor<Scalar> head_b;

    /// Visit (name, tensor) pairs in canonical order.
    template <typename F>
    void for_each(F&& f) const {
        f(std::string("embed.projection.weight"), projection);
        f(std::string("embed.projection.bias"), projection_bias);
        f(std::string("embed.class_token"), class_token);
        f(std::string("embed.position"), position);
        for (std::size_t i = 0; i < layers.size(); ++i) layers[i].for_each("encoder." + std::to_string(i) + ".", f);
        f(std::string("head.ln.gain"), head_ln_gain);
        f(std::string("head.ln.bias"), head_ln_bias);
        f(std::string("head.fc.weight"), head_w);
        f(std::string("head.fc.bias"), head_b);
    }

    [[nodiscard]] std::vector<std::pair<std::string, Tensor<Scalar>>> named() const {
        std::vector<std::pair<std::string, Tensor<Scalar>>> out;
        for_each([&](const std::string& name, const Tensor<Scalar>& t) { out.emplace_back(name, t); });
        return out;
    }

    /// Allocated, zero-filled parameters with the configured shapes.
    static ModelParams zeros(const ModelConfig& config) {
        config.validate();
        const Eigen::Index d = config.latent_dim;
        const Eigen::Index w = config.attention_width();
        auto z = [](Eigen::Index r, Eigen::Index c) { return Tensor<Scalar>::zeros(r, c, true); };
        auto ones = [](Eigen::Index c) { return Tensor<Scalar>(Mat<Scalar>::Ones(1, c), true); };
        ModelParams p;
        p.config = config;
        p.projection = z(config.patch_size(), d);
        p.projection_bias = z(1, d);
        p.class_token = z(1, d);
        p.position = z(config.seq_len(), d);
        for (int i = 0; i < config.layers; ++i) {
            EncoderLayerParams<Scalar> l;
            l.ln1_gain = ones(d);
            l.ln1_bias = z(1, d);
            l.query_w = z(d, w);
            l.query_b = z(1, w);
            l.key_w = z(d, w);
            l.key_b = z(1, w);
            l.value_w = z(d, w);
            l.value_b = z(1, w);
            l.out_w = z(w, d);
            l.out_b = z(1, d);
            l.ln2_gain = ones(d);
            l.ln2_bias = z(1, d);
            l.mlp_in_w = z(d, config.mlp_dim);
            l.mlp_in_b = z(1, config.mlp_dim);
            l.mlp_out_w = z(config.mlp_dim, d);
            l.mlp_out_b = z(1, d);
            p.layers.push_back(std::move(l));
        }
        p.head_ln_gain = ones(d);
        p.head_ln_bias = z(1, d);
        p.head_w = z(d, config.n_classes);
        p.head_b = z(1, config.n_classes);
        return p;
    }

    /// Weights truncated-normal (std 0.02, ±2 std), biases and class token
    /// zero, LayerNorm gains one, position embeddings standard normal.
    static ModelParams initialize(const ModelConfig& config, Rng& rng) {
        ModelParams p = zeros(config);
        auto trunc = [&rng](Tensor<Scalar>& t) {
            for (Eigen::Index i = 0; i < t.size(); ++i)
                t.mutable_value().data()[i] = static_cast<Scalar>(rng.truncated_normal(0.02));
        };
        trunc(p.projection);
        for (Eigen::Index i = 0; i < p.position.size(); ++i)
            p.position.mutable_value().data()[i] = static_cast<Scalar>(rng.normal());
        for (auto& l : p.layers) {
            trunc(l.query_w);
            trunc(l.key_w);
            trunc(l.value_w);
            trunc(l.out_w);
            trunc(l.mlp_in_w);
            trunc(l.mlp_out_w);
        }
        trunc(p.head_w);
        return p;
    }

    /// Deep copy with independent gradient slots.
    [[nodiscard]] ModelParams clone() const { return cast<Scalar>(); }

    template <typename To>
    [[nodiscard]] ModelParams<To> cast() const {
        ModelParams<To> out = ModelParams<To>::zeros(config);
        std::vector<Tensor<To>> dst;
        out.for_each([&](const std::string&, const Tensor<To>& t) { dst.push_back(t); });
        std::size_t i = 0;
        for_each([&](const std::string&, const Tensor<Scalar>& t) {
            dst[i].mutable_value() = t.value().template cast<To>();
            dst[i].set_requires_grad(t.requires_grad());
            ++i;
        });
        return out;
    }

    [[nodiscard]] std::vector<Tensor<Scalar>> tensors(ParamSubset subset = ParamSubset::all) const {
        if (subset == ParamSubset::projection_only) return {projection, projection_bias};
        std::vector<Tensor<Scalar>> out;
        for_each([&](const std::string&, const Tensor<Scalar>& t) { out.push_back(t); });
        return out;
    }

    void zero_grad() const {
        for_each([](const std::string&, Tensor<Scalar> t) { t.zero_grad(); });
    }
};

/// Exact count by enumerating the allocated tensors.
template <typename Scalar>
std::int64_t count_params(const ModelParams<Scalar>& params, ParamSubset subset) {
    std::int64_t n = 0;
    for (const auto& t : params.tensors(subset)) n += t.size();
    return n;
}

/// Marks the subset trainable and everything else frozen (no gradient).
/// Returns the trainable tensors; optimizer state should be built for
/// exactly these.
template <typename Scalar>
std::vector<Tensor<Scalar>> freeze_partition(const ModelParams<Scalar>& params, ParamSubset subset) {
    params.for_each([](const std::string&, Tensor<Scalar> t) {
        t.set_requires_grad(false);
        t.zero_grad();
    });
    auto trainable = params.tensors(subset);
    for (auto& t : trainable) t.set_requires_grad(true);
    return trainable;
}

template <typename Scalar>
struct ForwardContext {
    bool training = false;
    Rng* rng = nullptr;
    /// Optional sink for attention probabilities, appended per layer.
    AttentionCapture<Scalar>* attention = nullptr;

    Rng& random() const {
        if (!rng) throw ConfigError("training forward pass needs an rng");
        return *rng;
    }
};

namespace detail {
inline Rng& unused_rng() {
    static thread_local Rng rng(0);
    return rng;
}
}  // namespace detail

/// Patch embedding: each timestamp's 256 samples projected to D, class token
/// prepended, position embeddings added, then embedding dropout.
/// `windows` holds B stacked windows of T rows each.
template <typename Scalar>
Tensor<Scalar> embed(const ModelParams<Scalar>& p, const Tensor<Scalar>& windows, const ForwardContext<Scalar>& ctx) {
    const ModelConfig& c = p.config;
    if (windows.cols() != c.patch_size() || windows.rows() % c.window_samples != 0 || windows.rows() == 0)
        throw ConfigError("embed: input must be B stacked windows of " + std::to_string(c.window_samples) + "x" +
                          std::to_string(c.patch_size()));
    const Tensor<Scalar> patches = linear(windows, p.projection, p.projection_bias);
    const Tensor<Scalar> seq = prepend_token(patches, p.class_token, c.window_samples);
    const Tensor<Scalar> z = add_per_sequence(seq, p.position);
    Rng& rng = ctx.training ? ctx.random() : detail::unused_rng();
    return dropout(z, c.dropout_embed, ctx.training, rng);
}

/// Pre-norm multi-head self-attention with residual: z + MSA(LN(z)).
template <typename Scalar>
Tensor<Scalar> msa_block(const Tensor<Scalar>& z, const EncoderLayerParams<Scalar>& l, const ModelConfig& c,
                         const ForwardContext<Scalar>& ctx) {
    const Tensor<Scalar> x = layer_norm(z, l.ln1_gain, l.ln1_bias);
    const Tensor<Scalar> q = linear(x, l.query_w, l.query_b);
    const Tensor<Scalar> k = linear(x, l.key_w, l.key_b);
    const Tensor<Scalar> v = linear(x, l.value_w, l.value_b);
    Rng& rng = ctx.training ? ctx.random() : detail::unused_rng();
    const Tensor<Scalar> heads =
        multi_head_attention(q, k, v, c.seq_len(), c.heads, c.dropout_encoder, ctx.training, rng, ctx.attention);
    return add(linear(heads, l.out_w, l.out_b), z);
}

/// Pre-norm MLP with residual: z + W2·drop(GELU(W1·LN(z))).
template <typename Scalar>
Tensor<Scalar> mlp_block(const Tensor<Scalar>& z, const EncoderLayerParams<Scalar>& l, const ModelConfig& c,
                         const ForwardContext<Scalar>& ctx) {
    const Tensor<Scalar> x = layer_norm(z, l.ln2_gain, l.ln2_bias);
    const Tensor<Scalar> hidden = gelu(linear(x, l.mlp_in_w, l.mlp_in_b));
    Rng& rng = ctx.training ? ctx.random() : detail::unused_rng();
    const Tensor<Scalar> dropped = dropout(hidden, c.dropout_encoder, ctx.training, rng);
    return add(linear(dropped, l.mlp_out_w, l.mlp_out_b), z);
}

/// Class logits (B × n_classes) from FC(LN(class-token state)).
template <typename Scalar>
Tensor<Scalar> logits(const ModelParams<Scalar>& p, const Tensor<Scalar>& windows, const ForwardContext<Scalar>& ctx) {
    Tensor<Scalar> z = embed(p, windows, ctx);
    for (const auto& layer : p.layers) {
        z = msa_block(z, layer, p.config, ctx);
        z = mlp_block(z, layer, p.config, ctx);
    }
    const Tensor<Scalar> cls = select_rows(z, p.config.seq_len(), 0);
    return linear(layer_norm(cls, p.head_ln_gain, p.head_ln_bias), p.head_w, p.head_b);
}

/// Inference-mode class probabilities, one row per window.
template <typename Scalar>
Mat<Scalar> forward(const ModelParams<Scalar>& p, const Mat<Scalar>& windows) {
    NoGradGuard guard;
    const ForwardContext<Scalar> ctx{};
    return softmax(logits(p, Tensor<Scalar>(windows), ctx)).value();
}

/// Argmax class per window (inference mode).
template <typename Scalar>
std::vector<int> predict(const ModelParams<Scalar>& p, const Mat<Scalar>& windows) {
    NoGradGuard guard;
    const ForwardContext<Scalar> ctx{};
    const Mat<Scalar> scores = logits(p, Tensor<Scalar>(windows), ctx).value();
    std::vector<int> out(static_cast<std::size_t>(scores.rows()));
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        Eigen::Index best;
        scores.row(r).maxCoeff(&best);
        out[static_cast<std::size_t>(r)] = static_cast<int>(best);
    }
    return out;
}

}  // namespace emgvit
