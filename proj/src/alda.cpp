#include "emgvit/alda.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "emgvit/parallel.hpp"

namespace emgvit {

void channel_features(const float* x, Eigen::Index n, Eigen::Index stride, double threshold, double out[4]) {
    double mav = 0.0, wl = 0.0;
    int zc = 0, ssc = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double xi = x[i * stride];
        mav += std::abs(xi);
        if (i + 1 < n) {
            const double next = x[(i + 1) * stride];
            const double step = std::abs(next - xi);
            wl += step;
            if (xi * next < 0.0 && step > threshold) ++zc;
            if (i > 0) {
                const double d1 = xi - x[(i - 1) * stride];
                const double d2 = xi - next;
                if (d1 * d2 > 0.0 && std::abs(d1) > threshold && std::abs(d2) > threshold) ++ssc;
            }
        }
    }
    out[kMav] = n > 0 ? mav / static_cast<double>(n) : 0.0;
    out[kZc] = zc;
    out[kSsc] = ssc;
    out[kWl] = wl;
}

namespace {

void window_features(const float* data, Eigen::Index rows, double threshold, double* out) {
    for (int c = 0; c < kChannels; ++c) channel_features(data + c, rows, kChannels, threshold, out + kFeaturesPerChannel * c);
}

void check_labels(const Eigen::MatrixXd& x, std::span<const int> labels, int classes, const char* what) {
    if (static_cast<Eigen::Index>(labels.size()) != x.rows())
        throw DataError(std::string(what) + ": feature/label count mismatch");
    for (int y : labels)
        if (y < 0 || y >= classes) throw DataError(std::string(what) + ": label out of range");
    if (!x.allFinite()) throw DataError(std::string(what) + ": non-finite feature");
}

/// Class means and Σ_c w_c·cov_c, where cov_c is the ML covariance of class c
/// and w_c = weight[c].
void class_statistics(const Eigen::MatrixXd& x, std::span<const int> labels, int classes,
                      const Eigen::VectorXd& weight, Eigen::MatrixXd& means, std::vector<std::int64_t>& counts,
                      Eigen::MatrixXd& pooled) {
    const Eigen::Index f = x.cols();
    means = Eigen::MatrixXd::Zero(classes, f);
    counts.assign(static_cast<std::size_t>(classes), 0);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        means.row(y) += x.row(i);
        ++counts[static_cast<std::size_t>(y)];
    }
    for (int c = 0; c < classes; ++c)
        if (counts[static_cast<std::size_t>(c)] > 0) means.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);

    // Rows scaled by sqrt(w_c / n_c) so one rank update sums every class.
    pooled = Eigen::MatrixXd::Zero(f, f);
    constexpr Eigen::Index kChunk = 1024;
    Eigen::MatrixXd block;
    for (Eigen::Index begin = 0; begin < x.rows(); begin += kChunk) {
        const Eigen::Index count = std::min(kChunk, x.rows() - begin);
        block.resize(count, f);
        for (Eigen::Index i = 0; i < count; ++i) {
            const int y = labels[static_cast<std::size_t>(begin + i)];
            const double w = weight(y);
            block.row(i) = (x.row(begin + i) - means.row(y)) * std::sqrt(w / static_cast<double>(counts[static_cast<std::size_t>(y)]));
        }
        pooled.selfadjointView<Eigen::Lower>().rankUpdate(block.transpose());
    }
    pooled.triangularView<Eigen::StrictlyUpper>() = pooled.transpose();
}

}  // namespace

Eigen::VectorXd extract_features(const WindowTensor& window, double threshold) {
    if (window.data.cols() != kChannels) throw DataError("features: window must have 256 channels");
    Eigen::VectorXd out(kFeatureCount);
    window_features(window.data.data(), window.data.rows(), threshold, out.data());
    return out;
}

Eigen::MatrixXd extract_features(const WindowSet& set, double threshold, int jobs) {
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    RowMat out(static_cast<Eigen::Index>(set.size()), kFeatureCount);
    const Eigen::Index t = set.window_samples();
    parallel_for(set.size(), jobs, [&](std::size_t i) {
        const WindowRef& r = set.ref(i);
        const Recording& rec = set.recording(i);
        window_features(rec.signal.data() + static_cast<Eigen::Index>(r.start) * kChannels, t, threshold,
                        out.data() + static_cast<Eigen::Index>(i) * kFeatureCount);
    });
    return out;
}

void LdaModel::solve() {
    const Eigen::Index f = covariance.rows();
    epsilon = 1e-6 * covariance.trace() / static_cast<double>(f);
    Eigen::MatrixXd reg = covariance;
    reg.diagonal().array() += epsilon;
    const Eigen::LLT<Eigen::MatrixXd> llt(reg);
    if (llt.info() != Eigen::Success || !(epsilon > 0.0))
        throw NumericError("lda: regularized covariance is not positive definite");
    weights = llt.solve(means.transpose());
    bias.resize(means.rows());
    for (Eigen::Index c = 0; c < means.rows(); ++c)
        bias(c) = -0.5 * means.row(c).dot(weights.col(c)) + std::log(priors(c));
}

Eigen::MatrixXd LdaModel::scores(const Eigen::MatrixXd& x) const {
    if (x.cols() != weights.rows()) throw DataError("lda: feature dimension mismatch");
    Eigen::MatrixXd s = x * weights;
    s.rowwise() += bias.transpose();
    return s;
}

std::vector<int> LdaModel::predict(const Eigen::MatrixXd& x) const {
    const Eigen::MatrixXd s = scores(x);
    std::vector<int> out(static_cast<std::size_t>(s.rows()));
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        Eigen::Index arg;
        s.row(i).maxCoeff(&arg);
        out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
    }
    return out;
}

LdaModel fit_lda(const Eigen::MatrixXd& x, std::span<const int> labels, int classes) {
    if (classes < 2) throw ConfigError("lda: need at least two classes");
    check_labels(x, labels, classes, "fit_lda");
    LdaModel m;
    Eigen::VectorXd weight;
    std::vector<std::int64_t> counts(static_cast<std::size_t>(classes), 0);
    for (int y : labels) ++counts[static_cast<std::size_t>(y)];
    for (int c = 0; c < classes; ++c)
        if (counts[static_cast<std::size_t>(c)] < 2)
            throw DataError("fit_lda: class " + std::to_string(c) + " has fewer than two samples");
    const auto n = static_cast<double>(x.rows());
    weight.resize(classes);
    for (int c = 0; c < classes; ++c) weight(c) = static_cast<double>(counts[static_cast<std::size_t>(c)]) / n;
    class_statistics(x, labels, classes, weight, m.means, m.counts, m.covariance);
    m.priors = weight;
    m.solve();
    return m;
}

LdaModel adapt(const LdaModel& model, const Eigen::MatrixXd& x, std::span<const int> labels, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("adapt: lambda must lie in [0, 1]");
    check_labels(x, labels, model.classes(), "adapt");
    if (x.cols() != model.features()) throw DataError("adapt: feature dimension mismatch");
    const auto total = static_cast<double>(std::accumulate(model.counts.begin(), model.counts.end(), std::int64_t{0}));
    Eigen::VectorXd weight(model.classes());
    for (int c = 0; c < model.classes(); ++c) weight(c) = static_cast<double>(model.counts[static_cast<std::size_t>(c)]) / total;

    Eigen::MatrixXd cal_means, cal_pooled;
    std::vector<std::int64_t> cal_counts;
    class_statistics(x, labels, model.classes(), weight, cal_means, cal_counts, cal_pooled);
    for (int c = 0; c < model.classes(); ++c)
        if (cal_counts[static_cast<std::size_t>(c)] == 0)
            throw DataError("adapt: no calibration samples for class " + std::to_string(c));

    LdaModel out = model;
    out.means = (1.0 - lambda) * model.means + lambda * cal_means;
    out.covariance = (1.0 - lambda) * model.covariance + lambda * cal_pooled;
    out.solve();
    return out;
}

void AldaConfig::validate() const {
    if (!(threshold >= 0.0) || !std::isfinite(threshold)) throw ConfigError("alda.threshold must be non-negative");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("alda.lambda must lie in [0, 1]");
}

std::vector<ResultRow> run_alda_experiment(const WindowSet::Source& recordings, const SplitPlan& plan,
                                           const dsp::WindowSpec& windows, const AldaConfig& cfg, int reps_per_fold,
                                           int jobs) {
    cfg.validate();
    if (reps_per_fold < 0 || reps_per_fold > 2) throw ConfigError("reps_per_fold must be 0, 1 or 2");
    const Partitions all = make_splits(recordings, plan, windows);
    const Eigen::MatrixXd train_x = extract_features(all.train, cfg.threshold, jobs);
    const LdaModel base = fit_lda(train_x, all.train.labels(), kGestures);
    const auto folds = calibration_folds(plan.calib_reps, reps_per_fold);
    const auto subjects = subject_ids(*recordings);

    std::vector<std::vector<ResultRow>> per_subject(subjects.size());
    parallel_for(subjects.size(), jobs, [&](std::size_t si) {
        const int subject = subjects[si];
        auto mine = [subject](const RecordingInfo& info) { return info.subject == subject; };
        const WindowSet test = all.test.filter(mine);
        const Eigen::MatrixXd test_x = extract_features(test, cfg.threshold);
        const auto test_y = test.labels();
        ResultRow row{subject, "ALDA", "PretrainedOnAll", reps_per_fold, 0, windows.window_samples, kAllGestures, 0.0, 0};
        if (folds.empty()) {
            append_result_rows(per_subject[si], row, base.predict(test_x), test_y);
            return;
        }
        const WindowSet calib = all.calib.filter(mine);
        const Eigen::MatrixXd calib_x = extract_features(calib, cfg.threshold);
        for (std::size_t f = 0; f < folds.size(); ++f) {
            std::vector<Eigen::Index> idx;
            std::vector<int> y;
            for (std::size_t i = 0; i < calib.size(); ++i)
                if (folds[f].contains(calib.info(i).repetition)) {
                    idx.push_back(static_cast<Eigen::Index>(i));
                    y.push_back(calib.label(i));
                }
            const Eigen::MatrixXd fold_x = calib_x(idx, Eigen::all);
            const LdaModel adapted = adapt(base, fold_x, y, cfg.lambda);
            row.fold_id = static_cast<int>(f) + 1;
            append_result_rows(per_subject[si], row, adapted.predict(test_x), test_y);
        }
    });
    std::vector<ResultRow> rows;
    for (auto& v : per_subject) rows.insert(rows.end(), v.begin(), v.end());
    return rows;
}

}  // namespace emgvit
