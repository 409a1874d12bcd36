#include "emgvit/evalstats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "emgvit/errors.hpp"
#include "emgvit/recording.hpp"

namespace emgvit {

std::vector<GroupAccuracy> grouped_accuracy(std::span<const int> predictions, std::span<const int> labels,
                                            std::span<const int> keys) {
    if (predictions.size() != labels.size() || keys.size() != labels.size())
        throw DataError("accuracy: predictions, labels and keys differ in length");
    std::map<int, GroupAccuracy> groups;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto& g = groups[keys[i]];
        g.group = keys[i];
        ++g.total;
        g.correct += predictions[i] == labels[i] ? 1 : 0;
    }
    std::vector<GroupAccuracy> out;
    for (const auto& [k, g] : groups) out.push_back(g);
    return out;
}

std::vector<GroupAccuracy> accuracy_by(std::span<const int> predictions, std::span<const int> labels,
                                       std::span<const int> subjects, GroupBy by) {
    switch (by) {
        case GroupBy::gesture:
            return grouped_accuracy(predictions, labels, labels);
        case GroupBy::subject:
            return grouped_accuracy(predictions, labels, subjects);
        case GroupBy::all:
            break;
    }
    const std::vector<int> keys(labels.size(), -1);
    return grouped_accuracy(predictions, labels, keys);
}

const char* significance_stars(double p) {
    if (p <= 1e-4) return "****";
    if (p <= 1e-3) return "***";
    if (p <= 1e-2) return "**";
    if (p <= 0.05) return "*";
    return "ns";
}

std::vector<double> average_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(values[a]) < std::abs(values[b]); });
    std::vector<double> ranks(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(values[order[j + 1]]) == std::abs(values[order[i]])) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

std::vector<double> signed_rank_distribution(std::span<const int> ranks2) {
    const int total = std::accumulate(ranks2.begin(), ranks2.end(), 0);
    std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
    count[0] = 1.0;
    int reach = 0;
    for (int r : ranks2) {
        for (int s = reach; s >= 0; --s)
            if (count[static_cast<std::size_t>(s)] != 0.0) count[static_cast<std::size_t>(s + r)] += count[static_cast<std::size_t>(s)];
        reach += r;
    }
    return count;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b, WilcoxonMethod method) {
    if (a.size() != b.size()) throw DataError("wilcoxon: samples differ in length");
    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i] - b[i];
        if (!std::isfinite(x)) throw DataError("wilcoxon: non-finite difference");
        if (x != 0.0) d.push_back(x);
    }
    WilcoxonResult r;
    r.n = static_cast<int>(d.size());
    if (d.empty() && !a.empty()) {
        r.degenerate = true;
        return r;
    }
    if (r.n < 5) throw DataError("wilcoxon: need at least 5 nonzero differences, got " + std::to_string(r.n));

    const auto ranks = average_ranks(d);
    for (std::size_t i = 0; i < d.size(); ++i) (d[i] > 0 ? r.w_plus : r.w_minus) += ranks[i];
    r.statistic = std::min(r.w_plus, r.w_minus);
    const double n = r.n;

    r.exact = method == WilcoxonMethod::exact || (method == WilcoxonMethod::automatic && r.n <= kWilcoxonExactMaxN);
    if (r.exact) {
        std::vector<int> ranks2(ranks.size());
        for (std::size_t i = 0; i < ranks.size(); ++i) ranks2[i] = static_cast<int>(std::lround(2.0 * ranks[i]));
        const auto count = signed_rank_distribution(ranks2);
        const auto cut = static_cast<std::size_t>(std::lround(2.0 * r.statistic));
        const double tail = std::accumulate(count.begin(), count.begin() + static_cast<std::ptrdiff_t>(cut) + 1, 0.0);
        r.p_value = std::min(1.0, 2.0 * tail / std::ldexp(1.0, r.n));
    } else {
        std::map<double, int> ties;
        for (double x : d) ++ties[std::abs(x)];
        double tie_term = 0.0;
        for (const auto& [v, t] : ties) tie_term += static_cast<double>(t) * t * t - t;
        const double mean = n * (n + 1) / 4.0;
        const double var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term / 48.0;
        if (var <= 0.0) {
            r.p_value = 1.0;
        } else {
            const double z = std::max(0.0, std::abs(r.statistic - mean) - 0.5) / std::sqrt(var);
            r.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
        }
    }
    r.stars = significance_stars(r.p_value);
    return r;
}

// ---------------------------------------------------------------------------

double round4(double x) { return std::round(x * 1e4) / 1e4; }

void append_result_rows(std::vector<ResultRow>& rows, const ResultRow& base, std::span<const int> predictions,
                        std::span<const int> labels) {
    for (const auto& g : accuracy_by(predictions, labels, {}, GroupBy::all)) {
        ResultRow r = base;
        r.gesture = kAllGestures;
        r.accuracy = g.accuracy();
        r.windows = g.total;
        rows.push_back(std::move(r));
    }
    for (const auto& g : accuracy_by(predictions, labels, {}, GroupBy::gesture)) {
        if (g.group < 0 || g.group >= kGestures) throw DataError("result rows: gesture label out of range");
        ResultRow r = base;
        r.gesture = kGestureNames[static_cast<std::size_t>(g.group)];
        r.accuracy = g.accuracy();
        r.windows = g.total;
        rows.push_back(std::move(r));
    }
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

int to_int(const std::string& s, const char* what) {
    std::size_t used = 0;
    int v = 0;
    try {
        v = std::stoi(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty()) throw DataError(std::string("report: bad ") + what + " '" + s + "'");
    return v;
}

double to_double(const std::string& s, const char* what) {
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty()) throw DataError(std::string("report: bad ") + what + " '" + s + "'");
    return v;
}

void check_field(const std::string& s) {
    if (s.find_first_of(",\n\r/") != std::string::npos)
        throw ConfigError("report: field '" + s + "' contains a separator");
}

GroupKey key_of(const ResultRow& r) { return {r.model, r.strategy, r.reps_per_fold, r.window_samples, r.gesture}; }

}  // namespace

GroupKey GroupKey::parse(const std::string& text) {
    const auto parts = split(text, '/');
    if (parts.size() < 3 || parts.size() > 5)
        throw ConfigError("group '" + text + "' is not model/strategy/reps[/window[/gesture]]");
    GroupKey k;
    k.model = parts[0];
    k.strategy = parts[1];
    try {
        k.reps_per_fold = to_int(parts[2], "reps_per_fold");
        if (parts.size() > 3) k.window_samples = to_int(parts[3], "window_samples");
    } catch (const DataError& e) {
        throw ConfigError(std::string("group '") + text + "': " + e.what());
    }
    if (parts.size() > 4) k.gesture = parts[4];
    return k;
}

std::string GroupKey::str() const {
    return model + "/" + strategy + "/" + std::to_string(reps_per_fold) + "/" + std::to_string(window_samples) + "/" +
           gesture;
}

bool GroupKey::matches(const ResultRow& row) const {
    return row.model == model && row.strategy == strategy && row.reps_per_fold == reps_per_fold &&
           (window_samples == 0 || row.window_samples == window_samples) && row.gesture == gesture;
}

std::vector<ResultRow> fold_means(const std::vector<ResultRow>& rows) {
    struct Acc {
        double sum = 0.0;
        int folds = 0;
        std::int64_t windows = 0;
    };
    std::map<std::pair<GroupKey, int>, Acc> acc;
    for (const auto& r : rows) {
        auto& a = acc[{key_of(r), r.subject}];
        a.sum += r.accuracy;
        ++a.folds;
        a.windows += r.windows;
    }
    std::vector<ResultRow> out;
    for (const auto& [k, a] : acc) {
        const auto& [key, subject] = k;
        out.push_back({subject, key.model, key.strategy, key.reps_per_fold, 0, key.window_samples, key.gesture,
                       a.sum / a.folds, a.windows});
    }
    return out;
}

std::vector<AggregateRow> aggregate(const std::vector<ResultRow>& rows) {
    std::map<GroupKey, std::vector<double>> per_group;
    for (const auto& r : fold_means(rows)) per_group[key_of(r)].push_back(r.accuracy);
    std::vector<AggregateRow> out;
    for (const auto& [key, v] : per_group) {
        AggregateRow a;
        a.key = key;
        a.subjects = static_cast<int>(v.size());
        a.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - a.mean) * (x - a.mean);
        a.std = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
        out.push_back(a);
    }
    return out;
}

void paired_by_subject(const std::vector<ResultRow>& rows, const GroupKey& a, const GroupKey& b,
                       std::vector<double>& out_a, std::vector<double>& out_b, std::vector<int>& subjects) {
    std::map<int, double> ma, mb;
    for (const auto& r : fold_means(rows)) {
        if (a.matches(r)) ma[r.subject] = r.accuracy;
        if (b.matches(r)) mb[r.subject] = r.accuracy;
    }
    out_a.clear();
    out_b.clear();
    subjects.clear();
    for (const auto& [s, x] : ma) {
        const auto it = mb.find(s);
        if (it == mb.end()) continue;
        subjects.push_back(s);
        out_a.push_back(x);
        out_b.push_back(it->second);
    }
    if (subjects.empty())
        throw DataError("no subject has results in both '" + a.str() + "' and '" + b.str() + "'");
}

std::string provenance_line(const std::string& config_hash, std::uint64_t seed) {
    return "# config_hash=" + config_hash + ",seed=" + std::to_string(seed);
}

void parse_provenance_line(const std::string& line, std::string& config_hash, std::uint64_t& seed) {
    constexpr std::string_view head = "# config_hash=";
    const auto comma = line.find(",seed=");
    if (line.rfind(head, 0) != 0 || comma == std::string::npos)
        throw DataError("missing provenance line (# config_hash=...,seed=...)");
    config_hash = line.substr(head.size(), comma - head.size());
    const std::string s = line.substr(comma + 6);
    try {
        std::size_t used = 0;
        seed = std::stoull(s, &used);
        if (used != s.size()) throw DataError("");
    } catch (const std::exception&) {
        throw DataError("bad seed in provenance line '" + line + "'");
    }
}

namespace {
constexpr const char* kReportHeader = "subject,model,strategy,reps_per_fold,fold_id,window_samples,gesture,accuracy,windows";
}

void write_report_csv(std::ostream& out, const ExperimentReport& report) {
    out << provenance_line(report.config_hash, report.seed) << '\n' << kReportHeader << '\n';
    char acc[32];
    for (const auto& r : report.rows) {
        check_field(r.model);
        check_field(r.strategy);
        check_field(r.gesture);
        std::snprintf(acc, sizeof(acc), "%.4f", r.accuracy);
        out << r.subject << ',' << r.model << ',' << r.strategy << ',' << r.reps_per_fold << ',' << r.fold_id << ','
            << r.window_samples << ',' << r.gesture << ',' << acc << ',' << r.windows << '\n';
    }
}

ExperimentReport read_report_csv(std::istream& in) {
    ExperimentReport report;
    std::string line;
    if (!std::getline(in, line)) throw DataError("report: empty file");
    parse_provenance_line(line, report.config_hash, report.seed);
    if (!std::getline(in, line) || line != kReportHeader) throw DataError("report: unexpected column header");
    int lineno = 2;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 9) throw DataError("report line " + std::to_string(lineno) + ": expected 9 fields");
        ResultRow r;
        r.subject = to_int(f[0], "subject");
        r.model = f[1];
        r.strategy = f[2];
        r.reps_per_fold = to_int(f[3], "reps_per_fold");
        r.fold_id = to_int(f[4], "fold_id");
        r.window_samples = to_int(f[5], "window_samples");
        r.gesture = f[6];
        r.accuracy = to_double(f[7], "accuracy");
        r.windows = to_int(f[8], "windows");
        if (r.accuracy < 0.0 || r.accuracy > 1.0)
            throw DataError("report line " + std::to_string(lineno) + ": accuracy outside [0, 1]");
        report.rows.push_back(std::move(r));
    }
    return report;
}

ExperimentReport read_report_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open report '" + path + "'");
    try {
        return read_report_csv(in);
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

void write_report_json(std::ostream& out, const ExperimentReport& report) {
    nlohmann::ordered_json j;
    j["config_hash"] = report.config_hash;
    j["seed"] = report.seed;
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : report.rows)
        j["rows"].push_back({{"subject", r.subject},
                             {"model", r.model},
                             {"strategy", r.strategy},
                             {"reps_per_fold", r.reps_per_fold},
                             {"fold_id", r.fold_id},
                             {"window_samples", r.window_samples},
                             {"gesture", r.gesture},
                             {"accuracy", round4(r.accuracy)},
                             {"windows", r.windows}});
    j["aggregates"] = nlohmann::ordered_json::array();
    for (const auto& a : aggregate(report.rows))
        j["aggregates"].push_back({{"model", a.key.model},
                                   {"strategy", a.key.strategy},
                                   {"reps_per_fold", a.key.reps_per_fold},
                                   {"window_samples", a.key.window_samples},
                                   {"gesture", a.key.gesture},
                                   {"subjects", a.subjects},
                                   {"mean", round4(a.mean)},
                                   {"std", round4(a.std)}});
    out << j.dump(2) << '\n';
}

ExperimentReport read_report_json(std::istream& in) {
    ExperimentReport report;
    try {
        const auto j = nlohmann::json::parse(in);
        report.config_hash = j.at("config_hash").get<std::string>();
        report.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& r : j.at("rows"))
            report.rows.push_back({r.at("subject").get<int>(), r.at("model").get<std::string>(),
                                   r.at("strategy").get<std::string>(), r.at("reps_per_fold").get<int>(),
                                   r.at("fold_id").get<int>(), r.at("window_samples").get<int>(),
                                   r.at("gesture").get<std::string>(), r.at("accuracy").get<double>(),
                                   r.at("windows").get<std::int64_t>()});
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("report json: ") + e.what());
    }
    return report;
}

void write_aggregate_csv(std::ostream& out, const ExperimentReport& report) {
    out << provenance_line(report.config_hash, report.seed) << '\n'
        << "model,strategy,reps_per_fold,window_samples,gesture,subjects,mean,std\n";
    char buf[64];
    for (const auto& a : aggregate(report.rows)) {
        std::snprintf(buf, sizeof(buf), "%.4f,%.4f", a.mean, a.std);
        out << a.key.model << ',' << a.key.strategy << ',' << a.key.reps_per_fold << ',' << a.key.window_samples
            << ',' << a.key.gesture << ',' << a.subjects << ',' << buf << '\n';
    }
}

}  // namespace emgvit
