#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "emgvit/checkpoint.hpp"
#include "emgvit/dataset.hpp"
#include "emgvit/model.hpp"
#include "emgvit/parallel.hpp"

namespace emgvit {

enum class PretrainStrategy { individuals, all };

const char* strategy_name(PretrainStrategy s);
PretrainStrategy parse_strategy(const std::string& name);

struct TrainConfig {
    int max_epochs = 200;
    int batch_size = 32;
    double lr0 = 1e-3;
    std::vector<int> lr_halving_epochs{40, 80};
    int patience = 40;
    std::uint64_t seed = 0;
    PretrainStrategy strategy = PretrainStrategy::all;
    /// Off: run max_epochs and return the final parameters (no validation
    /// set needed).
    bool early_stopping = true;
    /// Batch size of inference passes; does not affect results.
    int eval_batch_size = 32;

    void validate() const;
    /// lr0 · 2^-(number of halving epochs ≤ epoch); epochs are 1-based.
    [[nodiscard]] double lr_at(int epoch) const;
};

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;  // NaN when there is no validation set
    double lr = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    int stopping_epoch = 0;
    int best_epoch = 0;
    double best_val_accuracy = std::numeric_limits<double>::quiet_NaN();
    std::string best_checkpoint_id;

    /// Columns epoch,loss,train_acc,val_acc,lr with 6 significant decimals.
    void write_csv(std::ostream& out) const;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Adam with β1 = 0.9, β2 = 0.999, ε = 1e-8 and bias correction, over a
/// fixed list of tensors (state is allocated for these only).
template <typename Scalar>
class Adam {
public:
    explicit Adam(std::vector<Tensor<Scalar>> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& p : params_) {
            m_.push_back(Mat<Scalar>::Zero(p.rows(), p.cols()));
            v_.push_back(Mat<Scalar>::Zero(p.rows(), p.cols()));
        }
    }

    /// One update from the tensors' current gradients.
    void step(double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        const auto b1 = static_cast<Scalar>(beta1_);
        const auto b2 = static_cast<Scalar>(beta2_);
        const auto step_size = static_cast<Scalar>(lr / c1);
        const auto root_c2 = static_cast<Scalar>(std::sqrt(c2));
        const auto eps = static_cast<Scalar>(eps_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (!p.has_grad()) continue;
            const Mat<Scalar>& g = p.grad();
            m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
            v_[i].array() = b2 * v_[i].array() + (Scalar(1) - b2) * g.array().square();
            p.mutable_value().array() -= step_size * m_[i].array() / (v_[i].array().sqrt() / root_c2 + eps);
        }
    }

    [[nodiscard]] std::int64_t timestep() const { return t_; }
    [[nodiscard]] const std::vector<Tensor<Scalar>>& params() const { return params_; }

private:
    std::vector<Tensor<Scalar>> params_;
    std::vector<Mat<Scalar>> m_, v_;
    double beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
};

/// Inference-mode argmax for every window of a set.
template <typename Scalar>
std::vector<int> predict_set(const ModelParams<Scalar>& params, const WindowSet& set, int batch_size = 32) {
    std::vector<int> out(set.size());
    std::vector<std::size_t> idx;
    Mat<Scalar> x;
    std::vector<int> y;
    for (std::size_t begin = 0; begin < set.size(); begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(set.size(), begin + static_cast<std::size_t>(batch_size));
        idx.resize(end - begin);
        std::iota(idx.begin(), idx.end(), begin);
        set.gather(std::span<const std::size_t>(idx), x, y);
        const auto pred = predict(params, x);
        std::copy(pred.begin(), pred.end(), out.begin() + static_cast<std::ptrdiff_t>(begin));
    }
    return out;
}

double accuracy(std::span<const int> predictions, std::span<const int> labels);

template <typename Scalar>
double evaluate_accuracy(const ModelParams<Scalar>& params, const WindowSet& set, int batch_size = 32) {
    if (set.empty()) throw DataError("evaluate: empty window set");
    const auto pred = predict_set(params, set, batch_size);
    const auto labels = set.labels();
    return accuracy(pred, labels);
}

template <typename Scalar>
struct TrainResult {
    ModelParams<Scalar> params;
    TrainLog log;
};

namespace detail {
inline constexpr std::uint64_t kTrainStream = 0x7452414eull;

inline void check_window_shape(const ModelConfig& c, const WindowSet& set, const char* what) {
    if (!set.empty() && set.window_samples() != c.window_samples)
        throw ConfigError(std::string(what) + ": window length " + std::to_string(set.window_samples()) +
                          " does not match model T=" + std::to_string(c.window_samples));
}
}  // namespace detail

/// Mini-batch training of `subset` starting from `init` (which is not
/// modified). With early stopping, returns the parameters of the epoch with
/// the best validation accuracy; an epoch counts as an improvement only when
/// it is strictly better, and training stops after `patience` epochs without
/// one.
template <typename Scalar>
TrainResult<Scalar> train(const ModelParams<Scalar>& init, const WindowSet& train_set, const WindowSet& val_set,
                          const TrainConfig& cfg, ParamSubset subset = ParamSubset::all,
                          const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (train_set.empty()) throw DataError("train: empty training partition");
    if (cfg.early_stopping && val_set.empty()) throw DataError("train: empty validation partition");
    detail::check_window_shape(init.config, train_set, "train");
    detail::check_window_shape(init.config, val_set, "train");

    TrainResult<Scalar> result{init.clone(), {}};
    ModelParams<Scalar>& params = result.params;
    const auto trainable = freeze_partition(params, subset);
    Adam<Scalar> optimizer(trainable);
    ModelParams<Scalar> best = params.clone();
    double best_acc = -1.0;
    int since_best = 0;

    const Rng root(cfg.seed, detail::kTrainStream);
    const std::size_t n = train_set.size();
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    std::vector<std::size_t> order(n);
    Mat<Scalar> x;
    std::vector<int> y;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng rng = root.split(static_cast<std::uint64_t>(epoch));
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order);
        const double lr = cfg.lr_at(epoch);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t begin = 0; begin < n; begin += batch) {
            const std::size_t count = std::min(batch, n - begin);
            train_set.gather(std::span<const std::size_t>(order.data() + begin, count), x, y);
            for (Tensor<Scalar> t : trainable) t.zero_grad();
            const ForwardContext<Scalar> ctx{true, &rng, nullptr};
            const Tensor<Scalar> out = logits(params, Tensor<Scalar>(x), ctx);
            const Tensor<Scalar> loss = cross_entropy(out, std::span<const int>(y));
            const double value = static_cast<double>(loss.item());
            if (!std::isfinite(value))
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
            backward(loss);
            optimizer.step(lr);
            loss_sum += value * static_cast<double>(count);
            for (Eigen::Index r = 0; r < out.rows(); ++r) {
                Eigen::Index arg;
                out.value().row(r).maxCoeff(&arg);
                correct += arg == y[static_cast<std::size_t>(r)] ? 1 : 0;
            }
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss = loss_sum / static_cast<double>(n);
        rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
        rec.val_accuracy = val_set.empty() ? std::numeric_limits<double>::quiet_NaN()
                                           : evaluate_accuracy(params, val_set, cfg.eval_batch_size);
        rec.lr = lr;
        result.log.epochs.push_back(rec);
        result.log.stopping_epoch = epoch;
        if (on_epoch) on_epoch(rec);

        if (!cfg.early_stopping) continue;
        if (rec.val_accuracy > best_acc) {
            best_acc = rec.val_accuracy;
            best = params.clone();
            result.log.best_epoch = epoch;
            result.log.best_val_accuracy = best_acc;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    if (cfg.early_stopping) {
        params = std::move(best);
    } else {
        result.log.best_epoch = result.log.stopping_epoch;
        if (!result.log.epochs.empty()) result.log.best_val_accuracy = result.log.epochs.back().val_accuracy;
    }
    result.log.best_checkpoint_id = checkpoint_hash(params);
    return result;
}

template <typename Scalar>
struct PretrainedModel {
    int subject = 0;  // 0 for the pooled model
    ModelParams<Scalar> params;
    TrainLog log;
};

/// PretrainStrategy::all trains one model on the union of every subject's
/// train/val partitions; individuals trains one model per subject. Every run
/// uses the same initialization and training seeds, so with one subject both
/// strategies perform the same run.
template <typename Scalar>
std::vector<PretrainedModel<Scalar>> pretrain(const WindowSet::Source& recordings, const SplitPlan& plan,
                                              const dsp::WindowSpec& windows, const ModelConfig& model,
                                              const TrainConfig& cfg, int jobs = 1,
                                              const std::function<void(int, const EpochRecord&)>& on_epoch = {}) {
    std::vector<int> groups;
    if (cfg.strategy == PretrainStrategy::all)
        groups.push_back(0);
    else
        groups = subject_ids(*recordings);
    std::vector<PretrainedModel<Scalar>> out(groups.size());
    parallel_for(groups.size(), jobs, [&](std::size_t i) {
        const int subject = groups[i];
        const Partitions parts =
            make_splits(recordings, plan, windows, subject == 0 ? std::vector<int>{} : std::vector<int>{subject});
        Rng init_rng(cfg.seed, 0x1417ull);
        const auto init = ModelParams<Scalar>::initialize(model, init_rng);
        EpochCallback cb;
        if (on_epoch) cb = [&](const EpochRecord& r) { on_epoch(subject, r); };
        auto trained = train(init, parts.train, parts.val, cfg, ParamSubset::all, cb);
        out[i] = {subject, std::move(trained.params), std::move(trained.log)};
    });
    return out;
}

}  // namespace emgvit
