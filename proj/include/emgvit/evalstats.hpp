#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace emgvit {

// ---------------------------------------------------------------------------
// Accuracy
// ---------------------------------------------------------------------------

struct GroupAccuracy {
    int group = 0;  // -1 for the overall row
    std::int64_t correct = 0;
    std::int64_t total = 0;

    [[nodiscard]] double accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
};

enum class GroupBy { all, gesture, subject };

/// Window-level accuracy per distinct key, keys ascending.
std::vector<GroupAccuracy> grouped_accuracy(std::span<const int> predictions, std::span<const int> labels,
                                            std::span<const int> keys);

/// GroupBy::gesture keys on the label, GroupBy::subject on `subjects`
/// (which may be empty otherwise); GroupBy::all yields one row with group -1.
std::vector<GroupAccuracy> accuracy_by(std::span<const int> predictions, std::span<const int> labels,
                                       std::span<const int> subjects, GroupBy by);

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank test
// ---------------------------------------------------------------------------

enum class WilcoxonMethod { automatic, exact, normal };

inline constexpr int kWilcoxonExactMaxN = 25;

struct WilcoxonResult {
    double w_plus = 0.0;
    double w_minus = 0.0;
    double statistic = 0.0;  // min(W+, W-)
    double p_value = 1.0;    // two-sided
    int n = 0;               // nonzero differences
    bool exact = false;
    bool degenerate = false;  // every difference was zero
    std::string stars = "ns";
};

/// "****" p ≤ 1e-4, "***" ≤ 1e-3, "**" ≤ 1e-2, "*" ≤ 0.05, otherwise "ns".
const char* significance_stars(double p);

/// Average ranks of |values| (1-based, ties share the mean rank).
std::vector<double> average_ranks(std::span<const double> values);

/// Number of sign assignments giving each doubled positive-rank sum, for
/// doubled ranks `ranks2` (integers). Entry s counts assignments with
/// 2·W+ = s.
std::vector<double> signed_rank_distribution(std::span<const int> ranks2);

/// Two-sided paired test on a - b. Zero differences are dropped; ties get
/// average ranks. Exact enumeration up to kWilcoxonExactMaxN nonzero pairs
/// under `automatic`, otherwise a tie-corrected normal approximation with a
/// 0.5 continuity correction. Throws DataError on unequal lengths or fewer
/// than 5 nonzero differences (unless all are zero).
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                    WilcoxonMethod method = WilcoxonMethod::automatic);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline constexpr const char* kAllGestures = "ALL";

struct ResultRow {
    int subject = 0;
    std::string model;     // "ViT" or "ALDA"
    std::string strategy;  // pre-training strategy or "Intraday"
    int reps_per_fold = 0;
    int fold_id = 0;
    int window_samples = 0;
    std::string gesture = kAllGestures;
    double accuracy = 0.0;
    std::int64_t windows = 0;

    friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

/// Identifies one result group: rows agreeing on every field here.
struct GroupKey {
    std::string model;
    std::string strategy;
    int reps_per_fold = 0;
    int window_samples = 0;
    std::string gesture = kAllGestures;

    /// "model/strategy/reps[/window[/gesture]]"; window 0 matches any.
    static GroupKey parse(const std::string& text);
    [[nodiscard]] std::string str() const;
    [[nodiscard]] bool matches(const ResultRow& row) const;
    friend auto operator<=>(const GroupKey&, const GroupKey&) = default;
};

struct AggregateRow {
    GroupKey key;
    int subjects = 0;
    double mean = 0.0;  // of per-subject fold means
    double std = 0.0;   // sample standard deviation across subjects
};

struct ExperimentReport {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<ResultRow> rows;
};

/// Mean across folds for every (group, subject).
std::vector<ResultRow> fold_means(const std::vector<ResultRow>& rows);

/// Per group: mean and sample std across subjects of the fold means.
std::vector<AggregateRow> aggregate(const std::vector<ResultRow>& rows);

/// Per-subject fold-mean accuracies of two groups, paired by subject (only
/// subjects present in both). Throws DataError when no subject is shared.
void paired_by_subject(const std::vector<ResultRow>& rows, const GroupKey& a, const GroupKey& b,
                       std::vector<double>& out_a, std::vector<double>& out_b, std::vector<int>& subjects);

/// First line "# config_hash=<hex>,seed=<n>"; every CSV artifact starts so.
std::string provenance_line(const std::string& config_hash, std::uint64_t seed);
/// Parses a provenance line; throws DataError when it is malformed.
void parse_provenance_line(const std::string& line, std::string& config_hash, std::uint64_t& seed);

/// Columns subject,model,strategy,reps_per_fold,fold_id,window_samples,
/// gesture,accuracy,windows after the provenance line; accuracy with 4
/// decimals.
void write_report_csv(std::ostream& out, const ExperimentReport& report);
ExperimentReport read_report_csv(std::istream& in);
ExperimentReport read_report_csv(const std::string& path);

/// {"config_hash", "seed", "rows": [...], "aggregates": [...]}.
void write_report_json(std::ostream& out, const ExperimentReport& report);
ExperimentReport read_report_json(std::istream& in);

/// Columns model,strategy,reps_per_fold,window_samples,gesture,subjects,
/// mean,std after the provenance line.
void write_aggregate_csv(std::ostream& out, const ExperimentReport& report);

/// One ALL row and one row per gesture present in `labels` (named as in
/// kGestureNames), all copying the identifying fields of `base`.
void append_result_rows(std::vector<ResultRow>& rows, const ResultRow& base, std::span<const int> predictions,
                        std::span<const int> labels);

/// Value rounded to 4 decimals, as written to reports.
double round4(double x);

}  // namespace emgvit
