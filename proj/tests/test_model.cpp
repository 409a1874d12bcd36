#include <doctest.h>

#include <cmath>
#include <numeric>

#include "emgvit/model.hpp"
#include "finite_diff.hpp"

using namespace emgvit;
using M = Mat<double>;
using T = Tensor<double>;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.window_samples = 6;
    c.grids = 1;
    c.grid_rows = 2;
    c.grid_cols = 2;
    c.latent_dim = 8;
    c.layers = 2;
    c.heads = 2;
    c.head_dim = 3;
    c.mlp_dim = 5;
    c.n_classes = 3;
    c.dropout_embed = 0.1;
    c.dropout_encoder = 0.5;
    return c;
}

M random_windows(const ModelConfig& c, int batch, Rng& rng) {
    M m(batch * c.window_samples, c.patch_size());
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

/// Randomize every tensor so that no gradient is structurally zero.
void perturb_all(const ModelParams<double>& p, Rng& rng, double scale) {
    p.for_each([&](const std::string&, Tensor<double> t) {
        for (Eigen::Index i = 0; i < t.size(); ++i) t.mutable_value().data()[i] += scale * rng.normal();
    });
}

}  // namespace

TEST_CASE("reference parameter budget") {
    const ModelConfig ref{};
    CHECK(ref.attention_width() == 64);
    CHECK(ref.patch_size() == 256);
    CHECK(count_params(ref, ParamSubset::all) == 383243);
    CHECK(count_params(ref, ParamSubset::projection_only) == 32896);

    Rng rng(1);
    const auto params = ModelParams<float>::initialize(ref, rng);
    CHECK(count_params(params, ParamSubset::all) == 383243);
    CHECK(count_params(params, ParamSubset::projection_only) == 32896);
    const double ratio = 32896.0 / 383243.0;
    CHECK(std::abs(ratio * 100 - 8.58) < 0.01);
    CHECK(std::abs(ratio * 100 - 8.8) < 0.5);
}

TEST_CASE("closed-form count agrees with enumeration on odd configs") {
    ModelConfig c = tiny_config();
    for (int layers : {1, 3}) {
        c.layers = layers;
        const auto p = ModelParams<double>::zeros(c);
        CHECK(count_params(p, ParamSubset::all) == count_params(c, ParamSubset::all));
        CHECK(count_params(p, ParamSubset::projection_only) == count_params(c, ParamSubset::projection_only));
    }
}

TEST_CASE("initialization statistics") {
    Rng rng(2);
    const auto p = ModelParams<double>::initialize(ModelConfig{}, rng);
    CHECK(p.projection.value().cwiseAbs().maxCoeff() <= 0.04);
    CHECK(p.class_token.value().cwiseAbs().maxCoeff() == 0.0);
    CHECK(p.projection_bias.value().cwiseAbs().maxCoeff() == 0.0);
    const double pos_var = p.position.value().array().square().mean();
    CHECK(pos_var == doctest::Approx(1.0).epsilon(0.05));
    CHECK(p.layers[0].ln1_gain.value().minCoeff() == 1.0);
}

TEST_CASE("embedding shape, zero propagation and locality") {
    Rng rng(3);
    const ModelConfig c{};
    auto p = ModelParams<double>::initialize(c, rng);
    const ForwardContext<double> inference{};
    NoGradGuard guard;

    const T zero(M::Zero(c.window_samples, c.patch_size()));
    const T z0 = embed(p, zero, inference);
    CHECK(z0.rows() == 101);
    CHECK(z0.cols() == 128);
    CHECK(z0.value() == p.position.value());

    M a = random_windows(c, 1, rng);
    M b = a;
    b.row(17).array() += 1.0;
    const M ea = embed(p, T(a), inference).value();
    const M eb = embed(p, T(b), inference).value();
    for (Eigen::Index r = 0; r < ea.rows(); ++r) {
        const bool same = ea.row(r) == eb.row(r);
        CHECK(same == (r != 18));
    }
    CHECK_THROWS_AS(embed(p, T(M::Zero(99, 256)), inference), ConfigError);
}

TEST_CASE("attention rows are distributions and constant keys give uniform weights") {
    Rng rng(4);
    const ModelConfig c{};
    auto p = ModelParams<double>::initialize(c, rng);
    const M x = random_windows(c, 2, rng);
    AttentionCapture<double> cap;
    ForwardContext<double> ctx;
    ctx.attention = &cap;
    {
        NoGradGuard g;
        (void)logits(p, T(x), ctx);
    }
    REQUIRE(cap.size() == static_cast<std::size_t>(2 * c.heads * c.layers));
    for (const auto& a : cap) {
        CHECK(a.rows() == 101);
        CHECK(a.minCoeff() >= 0.0);
        for (Eigen::Index r = 0; r < a.rows(); ++r) REQUIRE(std::abs(a.row(r).sum() - 1.0) <= 1e-9);
    }

    auto& l0 = p.layers[0];
    l0.key_w.mutable_value().setZero();
    l0.key_b.mutable_value().setConstant(0.3);
    cap.clear();
    const T z = embed(p, T(x), ctx);
    {
        NoGradGuard g;
        (void)msa_block(z, l0, c, ctx);
    }
    for (const auto& a : cap) CHECK((a.array() - 1.0 / 101.0).abs().maxCoeff() < 1e-15);
}

TEST_CASE("residual identity when output projections are zero") {
    Rng rng(5);
    const ModelConfig c{};
    auto p = ModelParams<double>::initialize(c, rng);
    NoGradGuard g;
    const ForwardContext<double> ctx{};
    const T z = embed(p, T(random_windows(c, 1, rng)), ctx);
    auto& l = p.layers[2];
    l.out_w.mutable_value().setZero();
    l.out_b.mutable_value().setZero();
    CHECK(msa_block(z, l, c, ctx).value() == z.value());
    l.mlp_out_w.mutable_value().setZero();
    l.mlp_out_b.mutable_value().setZero();
    CHECK(mlp_block(z, l, c, ctx).value() == z.value());
    CHECK(l.mlp_in_w.rows() == 128);
    CHECK(l.mlp_in_w.cols() == 32);
    CHECK(l.mlp_out_w.rows() == 32);
    CHECK(l.mlp_out_w.cols() == 128);
}

TEST_CASE("sequence length is preserved through every block") {
    Rng rng(6);
    const ModelConfig c{};
    const auto p = ModelParams<double>::initialize(c, rng);
    NoGradGuard g;
    const ForwardContext<double> ctx{};
    T z = embed(p, T(random_windows(c, 3, rng)), ctx);
    for (const auto& layer : p.layers) {
        z = msa_block(z, layer, c, ctx);
        CHECK(z.rows() == 3 * 101);
        CHECK(z.cols() == 128);
        z = mlp_block(z, layer, c, ctx);
        CHECK(z.rows() == 3 * 101);
        CHECK(z.cols() == 128);
    }
}

TEST_CASE("forward probabilities, determinism, batching and class equivariance") {
    Rng rng(7);
    const ModelConfig c{};
    auto p = ModelParams<double>::initialize(c, rng);
    // larger head weights so the probabilities are not all near 1/11
    for (Eigen::Index i = 0; i < p.head_w.size(); ++i) p.head_w.mutable_value().data()[i] = rng.normal();
    const M x = random_windows(c, 4, rng);

    const M probs = forward(p, x);
    CHECK(probs.rows() == 4);
    CHECK(probs.cols() == 11);
    for (Eigen::Index r = 0; r < 4; ++r) CHECK(std::abs(probs.row(r).sum() - 1.0) <= 1e-9);
    CHECK(forward(p, x) == probs);

    for (int b = 0; b < 4; ++b) {
        const M single = forward(p, M(x.middleRows(b * 100, 100)));
        CHECK((single.row(0) - probs.row(b)).cwiseAbs().maxCoeff() <= 1e-9);
    }

    std::vector<int> perm(11);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    auto q = p.clone();
    for (int k = 0; k < 11; ++k) {
        q.head_w.mutable_value().col(k) = p.head_w.value().col(perm[k]);
        q.head_b.mutable_value()(0, k) = p.head_b.value()(0, perm[k]);
    }
    const M permuted = forward(q, x);
    for (int k = 0; k < 11; ++k) CHECK((permuted.col(k) - probs.col(perm[k])).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("training forward uses dropout and replays with equal rng") {
    Rng rng(8);
    const ModelConfig c = tiny_config();
    const auto p = ModelParams<double>::initialize(c, rng);
    const M x = random_windows(c, 2, rng);
    Rng r1(5), r2(5), r3(6);
    const M a = logits(p, T(x), ForwardContext<double>{true, &r1, nullptr}).value();
    const M b = logits(p, T(x), ForwardContext<double>{true, &r2, nullptr}).value();
    const M d = logits(p, T(x), ForwardContext<double>{true, &r3, nullptr}).value();
    CHECK(a == b);
    CHECK(a != d);
    CHECK_THROWS_AS(logits(p, T(x), ForwardContext<double>{true, nullptr, nullptr}), ConfigError);
}

TEST_CASE("full-model gradients match central differences on every tensor") {
    Rng rng(9);
    const ModelConfig c = tiny_config();
    const auto p = ModelParams<double>::initialize(c, rng);
    perturb_all(p, rng, 0.3);
    const M x = random_windows(c, 3, rng);
    const std::vector<int> labels{0, 2, 1};
    auto loss_value = [&] {
        Rng drop(77);
        return cross_entropy(logits(p, T(x), ForwardContext<double>{true, &drop, nullptr}), labels);
    };
    p.zero_grad();
    backward(loss_value());
    auto loss = [&] {
        NoGradGuard g;
        return loss_value().item();
    };
    p.for_each([&](const std::string& name, Tensor<double> t) {
        INFO(name);
        CHECK(emgvit::testing::max_relative_error(t, loss) < 1e-4);
    });
}

TEST_CASE("freeze_partition exposes only the projection") {
    Rng rng(10);
    const auto p = ModelParams<double>::initialize(ModelConfig{}, rng);
    const auto trainable = freeze_partition(p, ParamSubset::projection_only);
    CHECK(trainable.size() == 2);
    std::int64_t n = 0;
    for (const auto& t : trainable) n += t.size();
    CHECK(n == 32896);
    int frozen = 0;
    p.for_each([&](const std::string&, const Tensor<double>& t) { frozen += t.requires_grad() ? 0 : 1; });
    CHECK(frozen == static_cast<int>(p.named().size()) - 2);
    const auto all = freeze_partition(p, ParamSubset::all);
    CHECK(all.size() == p.named().size());
}
