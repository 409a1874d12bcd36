#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/SpecialFunctions>

#include "emgvit/errors.hpp"
#include "emgvit/rng.hpp"

namespace emgvit {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Thread-local switch for tape recording. Inference paths disable it so that
/// no backward closures or saved activations are kept alive.
class GradMode {
public:
    static bool enabled() noexcept { return enabled_; }
    static void set_enabled(bool on) noexcept { enabled_ = on; }

private:
    static inline thread_local bool enabled_ = true;
};

class NoGradGuard {
public:
    NoGradGuard() noexcept : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

namespace detail {

template <typename Scalar>
struct Node {
    Mat<Scalar> value;
    Mat<Scalar> grad;
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const Mat<Scalar>&)> backward;

    void ensure_grad() {
        if (grad.rows() != value.rows() || grad.cols() != value.cols())
            grad = Mat<Scalar>::Zero(value.rows(), value.cols());
    }
};

}  // namespace detail

/// Dense 2-D tensor with an optional gradient slot.
///
/// Copies share the underlying node, so a parameter tensor handed to several
/// ops accumulates every contribution into one gradient. Use clone() for an
/// independent copy.
template <typename Scalar>
class Tensor {
public:
    using Node = detail::Node<Scalar>;
    using Matrix = Mat<Scalar>;

    Tensor() = default;

    explicit Tensor(Matrix value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Eigen::Index rows, Eigen::Index cols, bool requires_grad = false) {
        return Tensor(Matrix::Zero(rows, cols), requires_grad);
    }

    [[nodiscard]] bool defined() const noexcept { return node_ != nullptr; }
    [[nodiscard]] const Matrix& value() const { return node_->value; }
    [[nodiscard]] Matrix& mutable_value() { return node_->value; }
    [[nodiscard]] const Matrix& grad() const { return node_->grad; }
    [[nodiscard]] Matrix& mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    [[nodiscard]] bool has_grad() const { return node_->grad.size() == node_->value.size() && node_->grad.size() > 0; }
    [[nodiscard]] Eigen::Index rows() const { return node_->value.rows(); }
    [[nodiscard]] Eigen::Index cols() const { return node_->value.cols(); }
    [[nodiscard]] Eigen::Index size() const { return node_->value.size(); }
    [[nodiscard]] std::array<Eigen::Index, 2> shape() const { return {rows(), cols()}; }
    [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    void zero_grad() {
        if (node_->grad.size() > 0) node_->grad.setZero();
    }

    [[nodiscard]] Tensor clone() const {
        Tensor copy(node_->value, node_->requires_grad);
        return copy;
    }

    [[nodiscard]] Scalar item() const {
        if (size() != 1) throw ConfigError("item() on a tensor with more than one element");
        return node_->value(0, 0);
    }

    [[nodiscard]] const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

template <typename Scalar>
using NodePtr = std::shared_ptr<Node<Scalar>>;

template <typename Scalar>
inline void check_finite(const Mat<Scalar>& m, const char* op) {
    // any Inf or NaN turns the zero-weighted sum into NaN; much cheaper than allFinite()
    if (!((m.array() * Scalar(0)).sum() == Scalar(0))) throw NumericError(std::string("non-finite output from ") + op);
}

/// Wrap an op result; records the backward closure when any input needs grad.
template <typename Scalar, typename Backward>
Tensor<Scalar> make_result(Mat<Scalar>&& value, std::initializer_list<Tensor<Scalar>> inputs, const char* op,
                           Backward&& backward) {
    check_finite(value, op);
    Tensor<Scalar> out(std::move(value), false);
    if (!GradMode::enabled()) return out;
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (!needs) return out;
    auto& node = *out.node();
    node.requires_grad = true;
    node.is_leaf = false;
    for (const auto& in : inputs)
        if (in.requires_grad()) node.parents.push_back(in.node());
    node.backward = std::forward<Backward>(backward);
    return out;
}

/// Inverted-dropout mask: each entry is 0 with probability `rate` (resolved
/// to 2^-32) and keep_scale otherwise. One 32-bit draw per entry.
template <typename Scalar>
void fill_dropout_mask(Rng& rng, double rate, Scalar keep_scale, Scalar* data, Eigen::Index n) {
    thread_local std::vector<std::uint32_t> bits;
    bits.resize(static_cast<std::size_t>(n));
    rng.fill_u32(bits);
    const auto cut = static_cast<std::uint64_t>(std::llround(rate * 4294967296.0));
    for (Eigen::Index i = 0; i < n; ++i)
        data[i] = bits[static_cast<std::size_t>(i)] < cut ? Scalar(0) : keep_scale;
}

template <typename Scalar>
inline void check_shape(bool ok, const char* op, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    if (!ok)
        throw ConfigError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()));
}

}  // namespace detail

/// Reverse-mode accumulation from a scalar loss.
///
/// Intermediate gradients are rebuilt on every call; leaf gradients
/// accumulate, so calling twice without zeroing doubles them.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
    using detail::Node;
    if (loss.size() != 1) throw ConfigError("backward() expects a scalar loss");
    if (!loss.requires_grad()) return;

    std::vector<Node<Scalar>*> order;
    std::unordered_set<Node<Scalar>*> seen;
    std::vector<std::pair<Node<Scalar>*, std::size_t>> stack{{loss.node().get(), 0}};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<Scalar>* parent = node->parents[next++].get();
            if (seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* node : order)
        if (!node->is_leaf) node->grad = Mat<Scalar>::Zero(node->value.rows(), node->value.cols());
    loss.node()->ensure_grad();
    loss.node()->grad(0, 0) += Scalar(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<Scalar>* node = *it;
        if (node->backward) node->backward(node->grad);
    }
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    detail::check_shape(a.cols() == b.rows(), "matmul", a, b);
    Mat<Scalar> out = a.value() * b.value();
    auto na = a.node();
    auto nb = b.node();
    return detail::make_result<Scalar>(std::move(out), {a, b}, "matmul", [na, nb](const Mat<Scalar>& g) {
        if (na->requires_grad) {
            na->ensure_grad();
            na->grad.noalias() += g * nb->value.transpose();
        }
        if (nb->requires_grad) {
            nb->ensure_grad();
            nb->grad.noalias() += na->value.transpose() * g;
        }
    });
}

/// Stacked product: a holds `batch` blocks of m×k rows, b holds `batch`
/// blocks of k×n rows; block i of the result is a_i·b_i.
template <typename Scalar>
Tensor<Scalar> batched_matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b, Eigen::Index batch) {
    if (batch <= 0 || a.rows() % batch != 0 || b.rows() % batch != 0)
        throw ConfigError("batched_matmul: batch does not divide operand rows");
    const Eigen::Index m = a.rows() / batch;
    const Eigen::Index k = a.cols();
    const Eigen::Index n = b.cols();
    detail::check_shape(b.rows() / batch == k, "batched_matmul", a, b);
    Mat<Scalar> out(batch * m, n);
    for (Eigen::Index i = 0; i < batch; ++i)
        out.middleRows(i * m, m).noalias() = a.value().middleRows(i * m, m) * b.value().middleRows(i * k, k);
    auto na = a.node();
    auto nb = b.node();
    return detail::make_result<Scalar>(std::move(out), {a, b}, "batched_matmul",
                                       [na, nb, batch, m, k](const Mat<Scalar>& g) {
                                           if (na->requires_grad) na->ensure_grad();
                                           if (nb->requires_grad) nb->ensure_grad();
                                           for (Eigen::Index i = 0; i < batch; ++i) {
                                               auto gi = g.middleRows(i * m, m);
                                               if (na->requires_grad)
                                                   na->grad.middleRows(i * m, m).noalias() +=
                                                       gi * nb->value.middleRows(i * k, k).transpose();
                                               if (nb->requires_grad)
                                                   nb->grad.middleRows(i * k, k).noalias() +=
                                                       na->value.middleRows(i * m, m).transpose() * gi;
                                           }
                                       });
}

/// x·W + b with b broadcast over rows.
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias) {
    detail::check_shape(x.cols() == weight.rows(), "linear", x, weight);
    detail::check_shape(bias.rows() == 1 && bias.cols() == weight.cols(), "linear(bias)", weight, bias);
    Mat<Scalar> out(x.rows(), weight.cols());
    out.noalias() = x.value() * weight.value();
    out.rowwise() += bias.value().row(0);
    auto nx = x.node();
    auto nw = weight.node();
    auto nb = bias.node();
    return detail::make_result<Scalar>(std::move(out), {x, weight, bias}, "linear",
                                       [nx, nw, nb](const Mat<Scalar>& g) {
                                           if (nx->requires_grad) {
                                               nx->ensure_grad();
                                               nx->grad.noalias() += g * nw->value.transpose();
                                           }
                                           if (nw->requires_grad) {
                                               nw->ensure_grad();
                                               nw->grad.noalias() += nx->value.transpose() * g;
                                           }
                                           if (nb->requires_grad) {
                                               nb->ensure_grad();
                                               nb->grad.row(0) += g.colwise().sum();
                                           }
                                       });
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    detail::check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add", a, b);
    Mat<Scalar> out = a.value() + b.value();
    auto na = a.node();
    auto nb = b.node();
    return detail::make_result<Scalar>(std::move(out), {a, b}, "add", [na, nb](const Mat<Scalar>& g) {
        if (na->requires_grad) {
            na->ensure_grad();
            na->grad += g;
        }
        if (nb->requires_grad) {
            nb->ensure_grad();
            nb->grad += g;
        }
    });
}

/// a + row, with the 1×n row broadcast over every row of a.
template <typename Scalar>
Tensor<Scalar> add_row(const Tensor<Scalar>& a, const Tensor<Scalar>& row) {
    detail::check_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row", a, row);
    Mat<Scalar> out = a.value();
    out.rowwise() += row.value().row(0);
    auto na = a.node();
    auto nr = row.node();
    return detail::make_result<Scalar>(std::move(out), {a, row}, "add_row", [na, nr](const Mat<Scalar>& g) {
        if (na->requires_grad) {
            na->ensure_grad();
            na->grad += g;
        }
        if (nr->requires_grad) {
            nr->ensure_grad();
            nr->grad.row(0) += g.colwise().sum();
        }
    });
}

/// Elementwise product.
template <typename Scalar>
Tensor<Scalar> multiply(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    detail::check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "multiply", a, b);
    Mat<Scalar> out = a.value().cwiseProduct(b.value());
    auto na = a.node();
    auto nb = b.node();
    return detail::make_result<Scalar>(std::move(out), {a, b}, "multiply", [na, nb](const Mat<Scalar>& g) {
        if (na->requires_grad) {
            na->ensure_grad();
            na->grad += g.cwiseProduct(nb->value);
        }
        if (nb->requires_grad) {
            nb->ensure_grad();
            nb->grad += g.cwiseProduct(na->value);
        }
    });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
    Mat<Scalar> out = a.value() * factor;
    auto na = a.node();
    return detail::make_result<Scalar>(std::move(out), {a}, "scale", [na, factor](const Mat<Scalar>& g) {
        na->ensure_grad();
        na->grad += g * factor;
    });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
    Mat<Scalar> out(1, 1);
    out(0, 0) = a.value().sum();
    auto na = a.node();
    return detail::make_result<Scalar>(std::move(out), {a}, "sum", [na](const Mat<Scalar>& g) {
        na->ensure_grad();
        na->grad.array() += g(0, 0);
    });
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization
// ---------------------------------------------------------------------------

enum class Axis { rows = 0, cols = 1 };

namespace detail {

/// Row-wise softmax with max subtraction.
template <typename Scalar>
void softmax_rows_inplace(Mat<Scalar>& m) {
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mx = m.rowwise().maxCoeff();
    m.array().colwise() -= mx.array();
    m.array() = m.array().exp();
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv = m.rowwise().sum().cwiseInverse();
    m.array().colwise() *= inv.array();
}

}  // namespace detail

/// Softmax along `axis`: Axis::cols normalizes each row (last axis),
/// Axis::rows normalizes each column.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Axis axis = Axis::cols) {
    const bool by_row = axis == Axis::cols;
    Mat<Scalar> y = by_row ? Mat<Scalar>(x.value()) : Mat<Scalar>(x.value().transpose());
    detail::softmax_rows_inplace(y);
    if (!by_row) y.transposeInPlace();
    Mat<Scalar> saved = y;
    auto nx = x.node();
    return detail::make_result<Scalar>(std::move(y), {x}, "softmax",
                                       [nx, saved = std::move(saved), by_row](const Mat<Scalar>& g) {
                                           nx->ensure_grad();
                                           const auto gy = (g.array() * saved.array()).matrix();
                                           if (by_row) {
                                               const auto dots = gy.rowwise().sum();
                                               nx->grad.array() +=
                                                   saved.array() * (g.colwise() - dots).array();
                                           } else {
                                               const auto dots = gy.colwise().sum();
                                               nx->grad.array() +=
                                                   saved.array() * (g.rowwise() - dots).array();
                                           }
                                       });
}

/// Per-row normalization to zero mean / unit variance, then gain and bias.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain, const Tensor<Scalar>& bias,
                          Scalar eps = Scalar(1e-5)) {
    const Eigen::Index n = x.cols();
    detail::check_shape(gain.rows() == 1 && gain.cols() == n, "layer_norm(gain)", x, gain);
    detail::check_shape(bias.rows() == 1 && bias.cols() == n, "layer_norm(bias)", x, bias);
    if (n < 1) throw ConfigError("layer_norm: empty normalized axis");

    Mat<Scalar> xhat(x.rows(), n);
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const auto row = x.value().row(r);
        const Scalar mean = row.mean();
        const Scalar var = (row.array() - mean).square().mean();
        inv_std(r) = Scalar(1) / std::sqrt(var + eps);
        xhat.row(r) = (row.array() - mean) * inv_std(r);
    }
    Mat<Scalar> out = xhat.array().rowwise() * gain.value().row(0).array();
    out.rowwise() += bias.value().row(0);

    auto nx = x.node();
    auto ng = gain.node();
    auto nb = bias.node();
    return detail::make_result<Scalar>(
        std::move(out), {x, gain, bias}, "layer_norm",
        [nx, ng, nb, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Mat<Scalar>& g) {
            if (ng->requires_grad) {
                ng->ensure_grad();
                ng->grad.row(0) += (g.array() * xhat.array()).matrix().colwise().sum();
            }
            if (nb->requires_grad) {
                nb->ensure_grad();
                nb->grad.row(0) += g.colwise().sum();
            }
            if (nx->requires_grad) {
                nx->ensure_grad();
                const Mat<Scalar> gx = g.array().rowwise() * ng->value.row(0).array();
                const auto mean_g = gx.rowwise().mean();
                const auto mean_gx = (gx.array() * xhat.array()).rowwise().mean();
                for (Eigen::Index r = 0; r < gx.rows(); ++r)
                    nx->grad.row(r).array() +=
                        inv_std(r) * (gx.row(r).array() - mean_g(r) - xhat.row(r).array() * mean_gx(r));
            }
        });
}

/// Exact GELU: x·Φ(x), with Φ(x) = (1 + erf(x/√2)) / 2.
template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
    const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
    Mat<Scalar> cdf = (Scalar(0.5) * (Scalar(1) + (x.value().array() * inv_sqrt2).erf())).matrix();
    Mat<Scalar> out = x.value().cwiseProduct(cdf);
    auto nx = x.node();
    return detail::make_result<Scalar>(std::move(out), {x}, "gelu", [nx, cdf = std::move(cdf)](const Mat<Scalar>& g) {
        const Scalar inv_sqrt_2pi = Scalar(1) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
        nx->ensure_grad();
        const auto& v = nx->value.array();
        const auto pdf = (v.square() * Scalar(-0.5)).exp() * inv_sqrt_2pi;
        nx->grad.array() += g.array() * (cdf.array() + v * pdf);
    });
}

/// Inverted dropout. Identity when not training or when rate is zero.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double rate, bool training, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
    if (!training || rate == 0.0) return x;
    const Scalar keep_scale = Scalar(1.0 / (1.0 - rate));
    Mat<Scalar> mask(x.rows(), x.cols());
    detail::fill_dropout_mask(rng, rate, keep_scale, mask.data(), mask.size());
    Mat<Scalar> out = x.value().cwiseProduct(mask);
    auto nx = x.node();
    return detail::make_result<Scalar>(std::move(out), {x}, "dropout", [nx, mask = std::move(mask)](const Mat<Scalar>& g) {
        nx->ensure_grad();
        nx->grad += g.cwiseProduct(mask);
    });
}

/// Mean negative log-softmax of the true class over the rows of `logits`.
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels) {
    const Eigen::Index batch = logits.rows();
    if (static_cast<Eigen::Index>(labels.size()) != batch) throw ConfigError("cross_entropy: label count mismatch");
    if (batch == 0) throw ConfigError("cross_entropy: empty batch");
    Mat<Scalar> probs = logits.value();
    Scalar total = 0;
    for (Eigen::Index r = 0; r < batch; ++r) {
        const int label = labels[static_cast<std::size_t>(r)];
        if (label < 0 || label >= logits.cols()) throw ConfigError("cross_entropy: label out of range");
        auto row = probs.row(r);
        const Scalar mx = row.maxCoeff();
        const Scalar lse = mx + std::log((row.array() - mx).exp().sum());
        total += lse - row(label);
        row = (row.array() - lse).exp();
    }
    Mat<Scalar> out(1, 1);
    out(0, 0) = total / Scalar(batch);
    std::vector<int> saved_labels(labels.begin(), labels.end());
    auto nl = logits.node();
    return detail::make_result<Scalar>(
        std::move(out), {logits}, "cross_entropy",
        [nl, probs = std::move(probs), saved_labels = std::move(saved_labels)](const Mat<Scalar>& g) {
            nl->ensure_grad();
            const Scalar s = g(0, 0) / Scalar(probs.rows());
            Mat<Scalar> d = probs;
            for (Eigen::Index r = 0; r < d.rows(); ++r) d(r, saved_labels[static_cast<std::size_t>(r)]) -= Scalar(1);
            nl->grad += d * s;
        });
}

// ---------------------------------------------------------------------------
// Token-sequence helpers. A batch of sequences is stored as stacked row
// blocks of `seq_len` rows each.
// ---------------------------------------------------------------------------

/// Insert `token` (1×D) in front of every block of `patches_per_seq` rows.
template <typename Scalar>
Tensor<Scalar> prepend_token(const Tensor<Scalar>& patches, const Tensor<Scalar>& token, Eigen::Index patches_per_seq) {
    detail::check_shape(token.rows() == 1 && token.cols() == patches.cols(), "prepend_token", patches, token);
    if (patches_per_seq <= 0 || patches.rows() % patches_per_seq != 0)
        throw ConfigError("prepend_token: rows not a multiple of sequence length");
    const Eigen::Index batch = patches.rows() / patches_per_seq;
    const Eigen::Index seq = patches_per_seq + 1;
    Mat<Scalar> out(batch * seq, patches.cols());
    for (Eigen::Index b = 0; b < batch; ++b) {
        out.row(b * seq) = token.value().row(0);
        out.middleRows(b * seq + 1, patches_per_seq) = patches.value().middleRows(b * patches_per_seq, patches_per_seq);
    }
    auto np = patches.node();
    auto nt = token.node();
    return detail::make_result<Scalar>(std::move(out), {patches, token}, "prepend_token",
                                       [np, nt, batch, seq, patches_per_seq](const Mat<Scalar>& g) {
                                           if (np->requires_grad) np->ensure_grad();
                                           if (nt->requires_grad) nt->ensure_grad();
                                           for (Eigen::Index b = 0; b < batch; ++b) {
                                               if (nt->requires_grad) nt->grad.row(0) += g.row(b * seq);
                                               if (np->requires_grad)
                                                   np->grad.middleRows(b * patches_per_seq, patches_per_seq) +=
                                                       g.middleRows(b * seq + 1, patches_per_seq);
                                           }
                                       });
}

/// Add an S×D table to every S-row block of x.
template <typename Scalar>
Tensor<Scalar> add_per_sequence(const Tensor<Scalar>& x, const Tensor<Scalar>& table) {
    const Eigen::Index seq = table.rows();
    detail::check_shape(table.cols() == x.cols() && seq > 0 && x.rows() % seq == 0, "add_per_sequence", x, table);
    const Eigen::Index batch = x.rows() / seq;
    Mat<Scalar> out = x.value();
    for (Eigen::Index b = 0; b < batch; ++b) out.middleRows(b * seq, seq) += table.value();
    auto nx = x.node();
    auto nt = table.node();
    return detail::make_result<Scalar>(std::move(out), {x, table}, "add_per_sequence",
                                       [nx, nt, batch, seq](const Mat<Scalar>& g) {
                                           if (nx->requires_grad) {
                                               nx->ensure_grad();
                                               nx->grad += g;
                                           }
                                           if (nt->requires_grad) {
                                               nt->ensure_grad();
                                               for (Eigen::Index b = 0; b < batch; ++b)
                                                   nt->grad += g.middleRows(b * seq, seq);
                                           }
                                       });
}

/// Row `offset` of every `seq_len`-row block, stacked.
template <typename Scalar>
Tensor<Scalar> select_rows(const Tensor<Scalar>& x, Eigen::Index seq_len, Eigen::Index offset) {
    if (seq_len <= 0 || x.rows() % seq_len != 0 || offset < 0 || offset >= seq_len)
        throw ConfigError("select_rows: bad sequence geometry");
    const Eigen::Index batch = x.rows() / seq_len;
    Mat<Scalar> out(batch, x.cols());
    for (Eigen::Index b = 0; b < batch; ++b) out.row(b) = x.value().row(b * seq_len + offset);
    auto nx = x.node();
    return detail::make_result<Scalar>(std::move(out), {x}, "select_rows",
                                       [nx, batch, seq_len, offset](const Mat<Scalar>& g) {
                                           nx->ensure_grad();
                                           for (Eigen::Index b = 0; b < batch; ++b)
                                               nx->grad.row(b * seq_len + offset) += g.row(b);
                                       });
}

/// Optional sink for attention probabilities (one S×S matrix per sequence
/// and head, sequence-major), used by tests and diagnostics.
template <typename Scalar>
using AttentionCapture = std::vector<Mat<Scalar>>;

/// Scaled dot-product attention over `heads` heads, applied per sequence.
///
/// q, k, v are (batch·seq_len)×(heads·head_dim); head j occupies columns
/// [j·head_dim, (j+1)·head_dim). Attention weights of each head are
/// softmax(Q·Kᵀ/√head_dim); dropout (when training) acts on those weights.
template <typename Scalar>
Tensor<Scalar> multi_head_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                    Eigen::Index seq_len, Eigen::Index heads, double dropout_rate, bool training,
                                    Rng& rng, AttentionCapture<Scalar>* capture = nullptr) {
    const Eigen::Index width = q.cols();
    detail::check_shape(k.rows() == q.rows() && k.cols() == width, "multi_head_attention(k)", q, k);
    detail::check_shape(v.rows() == q.rows() && v.cols() == width, "multi_head_attention(v)", q, v);
    if (seq_len <= 0 || q.rows() % seq_len != 0 || heads <= 0 || width % heads != 0)
        throw ConfigError("multi_head_attention: bad geometry");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("attention dropout rate must be in [0, 1)");
    const Eigen::Index batch = q.rows() / seq_len;
    const Eigen::Index head_dim = width / heads;
    const Scalar inv_scale = Scalar(1) / std::sqrt(Scalar(head_dim));
    const bool use_dropout = training && dropout_rate > 0.0;
    const Scalar keep_scale = Scalar(1.0 / (1.0 - dropout_rate));

    const bool record = GradMode::enabled() && (q.requires_grad() || k.requires_grad() || v.requires_grad());
    std::vector<Mat<Scalar>> probs;
    std::vector<Mat<Scalar>> masks;
    if (record) probs.reserve(static_cast<std::size_t>(batch * heads));
    if (record && use_dropout) masks.reserve(static_cast<std::size_t>(batch * heads));

    Mat<Scalar> out(q.rows(), width);
    Mat<Scalar> attn(seq_len, seq_len);
    for (Eigen::Index b = 0; b < batch; ++b) {
        for (Eigen::Index h = 0; h < heads; ++h) {
            const auto qh = q.value().block(b * seq_len, h * head_dim, seq_len, head_dim);
            const auto kh = k.value().block(b * seq_len, h * head_dim, seq_len, head_dim);
            const auto vh = v.value().block(b * seq_len, h * head_dim, seq_len, head_dim);
            attn.noalias() = qh * kh.transpose();
            attn *= inv_scale;
            detail::softmax_rows_inplace(attn);
            if (capture) capture->push_back(attn);
            if (record) probs.push_back(attn);
            if (use_dropout) {
                Mat<Scalar> mask(seq_len, seq_len);
                detail::fill_dropout_mask(rng, dropout_rate, keep_scale, mask.data(), mask.size());
                attn = attn.cwiseProduct(mask);
                if (record) masks.push_back(std::move(mask));
            }
            out.block(b * seq_len, h * head_dim, seq_len, head_dim).noalias() = attn * vh;
        }
    }

    auto nq = q.node();
    auto nk = k.node();
    auto nv = v.node();
    return detail::make_result<Scalar>(
        std::move(out), {q, k, v}, "multi_head_attention",
        [nq, nk, nv, probs = std::move(probs), masks = std::move(masks), batch, heads, seq_len, head_dim,
         inv_scale](const Mat<Scalar>& g) {
            if (nq->requires_grad) nq->ensure_grad();
            if (nk->requires_grad) nk->ensure_grad();
            if (nv->requires_grad) nv->ensure_grad();
            Mat<Scalar> dropped(seq_len, seq_len);
            Mat<Scalar> d_attn(seq_len, seq_len);
            for (Eigen::Index b = 0; b < batch; ++b) {
                for (Eigen::Index h = 0; h < heads; ++h) {
                    const auto idx = static_cast<std::size_t>(b * heads + h);
                    const Mat<Scalar>& p = probs[idx];
                    const Eigen::Index r0 = b * seq_len;
                    const Eigen::Index c0 = h * head_dim;
                    const auto gh = g.block(r0, c0, seq_len, head_dim);
                    if (masks.empty())
                        dropped = p;
                    else
                        dropped = p.cwiseProduct(masks[idx]);
                    if (nv->requires_grad) nv->grad.block(r0, c0, seq_len, head_dim).noalias() += dropped.transpose() * gh;
                    d_attn.noalias() = gh * nv->value.block(r0, c0, seq_len, head_dim).transpose();
                    if (!masks.empty()) d_attn = d_attn.cwiseProduct(masks[idx]);
                    // softmax backward, then the 1/sqrt(d) scale
                    const auto dots = (d_attn.array() * p.array()).rowwise().sum();
                    d_attn = (p.array() * (d_attn.array().colwise() - dots)).matrix() * inv_scale;
                    if (nq->requires_grad)
                        nq->grad.block(r0, c0, seq_len, head_dim).noalias() +=
                            d_attn * nk->value.block(r0, c0, seq_len, head_dim);
                    if (nk->requires_grad)
                        nk->grad.block(r0, c0, seq_len, head_dim).noalias() +=
                            d_attn.transpose() * nq->value.block(r0, c0, seq_len, head_dim);
                }
            }
        });
}

}  // namespace emgvit
