#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "emgvit/dataset.hpp"
#include "emgvit/evalstats.hpp"

namespace emgvit {

inline constexpr int kFeaturesPerChannel = 4;
inline constexpr int kFeatureCount = kFeaturesPerChannel * kChannels;

/// Channel c occupies entries 4c..4c+3 as MAV, ZC, SSC, WL.
enum FeatureSlot { kMav = 0, kZc = 1, kSsc = 2, kWl = 3 };

/// Hudgins features of one channel, x[0..n) with the given stride.
void channel_features(const float* x, Eigen::Index n, Eigen::Index stride, double threshold, double out[4]);

/// 1024 features of a T × 256 window.
Eigen::VectorXd extract_features(const WindowTensor& window, double threshold = 0.0);

/// One feature row per window of the set (parallel over windows).
Eigen::MatrixXd extract_features(const WindowSet& set, double threshold = 0.0, int jobs = 1);

/// Linear discriminant with a shared covariance. Covariances use the
/// maximum-likelihood (divide by n) convention; the shared covariance is the
/// class-count-weighted average of the per-class covariances.
struct LdaModel {
    Eigen::MatrixXd means;       // classes × features
    Eigen::MatrixXd covariance;  // shared, before regularization
    Eigen::VectorXd priors;
    std::vector<std::int64_t> counts;
    double epsilon = 0.0;  // ridge added to the diagonal
    Eigen::MatrixXd weights;  // features × classes: Σ⁻¹ μ_c
    Eigen::VectorXd bias;     // -½ μ_cᵀ Σ⁻¹ μ_c + ln π_c

    [[nodiscard]] int classes() const { return static_cast<int>(means.rows()); }
    [[nodiscard]] int features() const { return static_cast<int>(means.cols()); }

    /// Regularizes the covariance with ε = 1e-6·trace/features and solves
    /// for weights and bias. Throws NumericError when the regularized
    /// covariance is not positive definite.
    void solve();

    /// Discriminant scores, one row per sample.
    [[nodiscard]] Eigen::MatrixXd scores(const Eigen::MatrixXd& x) const;
    [[nodiscard]] std::vector<int> predict(const Eigen::MatrixXd& x) const;
};

/// Labels in [0, classes). Throws DataError when a class has fewer than two
/// samples or a feature is not finite.
LdaModel fit_lda(const Eigen::MatrixXd& x, std::span<const int> labels, int classes);

/// Blends each class mean and covariance with the calibration statistics,
/// (1-λ)·train + λ·calibration, and pools the covariances with the training
/// class counts. Priors are unchanged. Every class needs at least one
/// calibration sample.
LdaModel adapt(const LdaModel& model, const Eigen::MatrixXd& x, std::span<const int> labels, double lambda);

struct AldaConfig {
    double threshold = 0.0;
    double lambda = 0.5;

    void validate() const;
};

/// Fits on the pooled train reps of every subject, then per subject and
/// calibration fold adapts on the fold's reps and scores the test reps.
/// Rows carry model "ALDA", strategy "PretrainedOnAll", one ALL row per fold
/// plus one per gesture. 0 reps per fold evaluates the unadapted model once
/// (fold 0).
std::vector<ResultRow> run_alda_experiment(const WindowSet::Source& recordings, const SplitPlan& plan,
                                           const dsp::WindowSpec& windows, const AldaConfig& cfg, int reps_per_fold,
                                           int jobs = 1);

}  // namespace emgvit
