#include "emgvit/calibrate.hpp"

namespace emgvit {

void CalibrationPlan::validate() const {
    if (reps_per_fold < 0 || reps_per_fold > 2) throw ConfigError("calibration.reps_per_fold must be 0, 1 or 2");
    if (max_epochs < 0) throw ConfigError("calibration.max_epochs must not be negative");
    if (patience < 0) throw ConfigError("calibration.patience must not be negative");
}

TrainConfig CalibrationPlan::train_config(const TrainConfig& base) const {
    TrainConfig c = base;
    if (max_epochs > 0) c.max_epochs = max_epochs;
    if (patience > 0) c.patience = patience;
    c.patience = std::min(c.patience, c.max_epochs);
    c.early_stopping = true;
    return c;
}

}  // namespace emgvit
