#include "emgvit/train.hpp"

#include <algorithm>
#include <cstdio>

namespace emgvit {

const char* strategy_name(PretrainStrategy s) {
    return s == PretrainStrategy::all ? "PretrainedOnAll" : "PretrainedOnIndividuals";
}

PretrainStrategy parse_strategy(const std::string& name) {
    if (name == "PretrainedOnAll" || name == "all") return PretrainStrategy::all;
    if (name == "PretrainedOnIndividuals" || name == "individuals") return PretrainStrategy::individuals;
    throw ConfigError("unknown pre-training strategy '" + name + "'");
}

void TrainConfig::validate() const {
    if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (eval_batch_size < 1) throw ConfigError("eval_batch_size must be at least 1");
    if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("lr0 must be positive");
    if (patience < 1) throw ConfigError("patience must be at least 1");
    if (early_stopping && patience > max_epochs) throw ConfigError("patience must not exceed max_epochs");
    for (int e : lr_halving_epochs)
        if (e < 1) throw ConfigError("lr_halving_epochs must be positive");
}

double TrainConfig::lr_at(int epoch) const {
    const auto halvings = std::count_if(lr_halving_epochs.begin(), lr_halving_epochs.end(),
                                        [epoch](int e) { return e <= epoch; });
    return std::ldexp(lr0, -static_cast<int>(halvings));
}

void TrainLog::write_csv(std::ostream& out) const {
    out << "epoch,loss,train_acc,val_acc,lr\n";
    char line[160];
    for (const auto& e : epochs) {
        std::snprintf(line, sizeof(line), "%d,%.6f,%.6f,%.6f,%.6g\n", e.epoch, e.loss, e.train_accuracy,
                      e.val_accuracy, e.lr);
        out << line;
    }
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size()) throw DataError("accuracy: prediction/label count mismatch");
    if (labels.empty()) throw DataError("accuracy: no samples");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace emgvit
