#include "emgvit/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace emgvit {

using json = nlohmann::json;

namespace {

const char* precision_name(Precision p) { return p == Precision::f64 ? "double" : "float"; }

/// Overlays `user` onto `base`, collecting unknown keys and type mismatches.
void merge(json& base, const json& user, const std::string& path, std::vector<std::string>& errors) {
    if (!user.is_object()) {
        errors.push_back((path.empty() ? std::string("config") : path) + ": expected an object");
        return;
    }
    for (const auto& [key, value] : user.items()) {
        const std::string where = path.empty() ? key : path + "." + key;
        if (!base.contains(key)) {
            errors.push_back(where + ": unknown field");
            continue;
        }
        json& slot = base[key];
        if (slot.is_object()) {
            merge(slot, value, where, errors);
        } else if (slot.is_number_integer() || slot.is_number_unsigned()) {
            if (!value.is_number_integer() && !value.is_number_unsigned())
                errors.push_back(where + ": expected an integer");
            else
                slot = value;
        } else if (slot.is_number_float()) {
            if (!value.is_number()) errors.push_back(where + ": expected a number");
            else slot = value.get<double>();
        } else if (slot.is_boolean()) {
            if (!value.is_boolean()) errors.push_back(where + ": expected true or false");
            else slot = value;
        } else if (slot.is_string()) {
            if (!value.is_string()) errors.push_back(where + ": expected a string");
            else slot = value;
        } else if (slot.is_array()) {
            const bool strings = !slot.empty() && slot.front().is_string();
            bool ok = value.is_array();
            if (ok)
                for (const auto& v : value)
                    ok = ok && (strings ? v.is_string() : (v.is_number_integer() || v.is_number_unsigned()));
            if (!ok) errors.push_back(where + (strings ? ": expected an array of strings" : ": expected an array of integers"));
            else slot = value;
        }
    }
}

std::string join(const std::vector<std::string>& errors) {
    std::string out = "invalid configuration:";
    for (const auto& e : errors) out += "\n  " + e;
    return out;
}

template <typename F>
void collect(std::vector<std::string>& errors, const char* section, F&& check) {
    try {
        check();
    } catch (const ConfigError& e) {
        errors.push_back(std::string(section) + ": " + e.what());
    }
}

}  // namespace

TrainConfig ExperimentConfig::train_config(PretrainStrategy strategy) const {
    TrainConfig t = train;
    t.seed = seed;
    t.strategy = strategy;
    return t;
}

CalibrationPlan ExperimentConfig::calibration_plan(int reps_per_fold) const {
    CalibrationPlan p = calibration;
    p.reps_per_fold = reps_per_fold;
    return p;
}

void ExperimentConfig::validate() const {
    std::vector<std::string> errors;
    if (dataset.is_synthetic()) {
        if (dataset.synthetic.subjects < 1) errors.push_back("dataset.synthetic.subjects: must be at least 1");
        collect(errors, "dataset.synthetic", [&] { dataset.synthetic.shift.validate(); });
    } else if (!std::filesystem::exists(dataset.manifest)) {
        errors.push_back("dataset.manifest: file '" + dataset.manifest + "' does not exist");
    }
    if (filter) collect(errors, "preprocessing", [&] { (void)dsp::FilterChain::build(filters); });
    collect(errors, "windows", [&] { windows.validate(); });
    collect(errors, "model", [&] { model.validate(); });
    if (model.window_samples != windows.window_samples)
        errors.push_back("model.window_samples: " + std::to_string(model.window_samples) +
                         " differs from windows.window_samples " + std::to_string(windows.window_samples));
    if (model.patch_size() != kChannels)
        errors.push_back("model: grids × grid_rows × grid_cols must equal " + std::to_string(kChannels));
    if (model.n_classes != kGestures) errors.push_back("model.n_classes: must be " + std::to_string(kGestures));
    if (train.max_epochs < 1) errors.push_back("train.max_epochs: must be at least 1");
    if (train.batch_size < 1) errors.push_back("train.batch_size: must be at least 1");
    if (train.eval_batch_size < 1) errors.push_back("train.eval_batch_size: must be at least 1");
    if (!(train.lr0 > 0.0)) errors.push_back("train.lr0: must be positive");
    if (train.patience < 1 || train.patience > train.max_epochs)
        errors.push_back("train.patience: must lie in 1..max_epochs");
    for (int e : train.lr_halving_epochs)
        if (e < 1) errors.push_back("train.lr_halving_epochs: entries must be positive");
    if (intraday_epochs < 0) errors.push_back("train.intraday_epochs: must not be negative");
    if (strategies.empty()) errors.push_back("strategies: must not be empty");
    for (std::size_t i = 0; i < strategies.size(); ++i)
        for (std::size_t k = 0; k < i; ++k)
            if (strategies[i] == strategies[k]) errors.push_back("strategies: duplicate entry");
    if (calibration_modes.empty()) errors.push_back("calibration.modes: must not be empty");
    for (std::size_t i = 0; i < calibration_modes.size(); ++i) {
        if (calibration_modes[i] < 0 || calibration_modes[i] > 2)
            errors.push_back("calibration.modes: entries must be 0, 1 or 2");
        for (std::size_t k = 0; k < i; ++k)
            if (calibration_modes[i] == calibration_modes[k]) errors.push_back("calibration.modes: duplicate entry");
    }
    if (calibration.max_epochs < 0) errors.push_back("calibration.max_epochs: must not be negative");
    if (calibration.patience < 0) errors.push_back("calibration.patience: must not be negative");
    if (calibration.patience > 0 && calibration.max_epochs > 0 && calibration.patience > calibration.max_epochs)
        errors.push_back("calibration.patience: must not exceed calibration.max_epochs");
    collect(errors, "alda", [&] { alda.validate(); });
    if (jobs < 1) errors.push_back("jobs: must be at least 1");
    if (output_dir.empty()) errors.push_back("output_dir: must not be empty");
    if (!errors.empty()) throw ConfigError(join(errors));
}

json to_json(const ExperimentConfig& c) {
    const auto& f = c.filters;
    const auto& s = c.dataset.synthetic;
    const auto& m = c.model;
    const auto& t = c.train;
    std::vector<std::string> strategies;
    for (auto st : c.strategies) strategies.emplace_back(strategy_name(st));
    return json{
        {"schema_version", kConfigSchemaVersion},
        {"seed", c.seed},
        {"dataset",
         {{"manifest", c.dataset.manifest},
          {"synthetic",
           {{"subjects", s.subjects},
            {"seed", s.seed},
            {"template_gain_drift", s.shift.template_gain_drift},
            {"spatial_shift_electrodes", s.shift.spatial_shift_electrodes},
            {"noise_sigma_ratio", s.shift.noise_sigma_ratio},
            {"shift_seed", s.shift.seed}}}}},
        {"preprocessing",
         {{"enabled", c.filter},
          {"sample_rate_hz", f.bandpass.sample_rate_hz},
          {"bandpass", {{"order", f.bandpass.order}, {"low_hz", f.bandpass.low_hz}, {"high_hz", f.bandpass.high_hz}}},
          {"notch", {{"base_hz", f.notch.base_hz}, {"harmonics", f.notch.harmonics}, {"q", f.notch.q}}},
          {"lowpass", {{"order", f.lowpass.order}, {"cutoff_hz", f.lowpass.low_hz}}}}},
        {"windows",
         {{"window_samples", c.windows.window_samples},
          {"stride_samples", c.windows.stride_samples},
          {"trim_samples", c.windows.trim_samples}}},
        {"model",
         {{"window_samples", m.window_samples},
          {"grids", m.grids},
          {"grid_rows", m.grid_rows},
          {"grid_cols", m.grid_cols},
          {"latent_dim", m.latent_dim},
          {"layers", m.layers},
          {"heads", m.heads},
          {"head_dim", m.head_dim},
          {"mlp_dim", m.mlp_dim},
          {"dropout_embed", m.dropout_embed},
          {"dropout_encoder", m.dropout_encoder},
          {"n_classes", m.n_classes}}},
        {"train",
         {{"max_epochs", t.max_epochs},
          {"batch_size", t.batch_size},
          {"lr0", t.lr0},
          {"lr_halving_epochs", t.lr_halving_epochs},
          {"patience", t.patience},
          {"eval_batch_size", t.eval_batch_size},
          {"intraday_epochs", c.intraday_epochs}}},
        {"strategies", strategies},
        {"calibration",
         {{"modes", c.calibration_modes},
          {"reinitialize", c.calibration.reinitialize},
          {"max_epochs", c.calibration.max_epochs},
          {"patience", c.calibration.patience}}},
        {"alda", {{"threshold", c.alda.threshold}, {"lambda", c.alda.lambda}}},
        {"precision", precision_name(c.precision)},
        {"output_dir", c.output_dir},
        {"jobs", c.jobs},
    };
}

ExperimentConfig config_from_json(const json& user, const ExperimentConfig& defaults) {
    json j = to_json(defaults);
    std::vector<std::string> errors;
    merge(j, user, "", errors);
    if (j.at("schema_version").get<int>() != kConfigSchemaVersion)
        errors.push_back("schema_version: unsupported version " + j.at("schema_version").dump());

    ExperimentConfig c;
    c.seed = j.at("seed").get<std::uint64_t>();
    const auto& d = j.at("dataset");
    c.dataset.manifest = d.at("manifest").get<std::string>();
    const auto& s = d.at("synthetic");
    c.dataset.synthetic.subjects = s.at("subjects").get<int>();
    c.dataset.synthetic.seed = s.at("seed").get<std::uint64_t>();
    c.dataset.synthetic.shift.template_gain_drift = s.at("template_gain_drift").get<double>();
    c.dataset.synthetic.shift.spatial_shift_electrodes = s.at("spatial_shift_electrodes").get<int>();
    c.dataset.synthetic.shift.noise_sigma_ratio = s.at("noise_sigma_ratio").get<double>();
    c.dataset.synthetic.shift.seed = s.at("shift_seed").get<std::uint64_t>();

    const auto& p = j.at("preprocessing");
    c.filter = p.at("enabled").get<bool>();
    c.filters.bandpass.order = p.at("bandpass").at("order").get<int>();
    c.filters.bandpass.low_hz = p.at("bandpass").at("low_hz").get<double>();
    c.filters.bandpass.high_hz = p.at("bandpass").at("high_hz").get<double>();
    c.filters.notch.base_hz = p.at("notch").at("base_hz").get<double>();
    c.filters.notch.harmonics = p.at("notch").at("harmonics").get<int>();
    c.filters.notch.q = p.at("notch").at("q").get<double>();
    c.filters.lowpass.order = p.at("lowpass").at("order").get<int>();
    c.filters.lowpass.low_hz = p.at("lowpass").at("cutoff_hz").get<double>();
    c.filters.set_sample_rate(p.at("sample_rate_hz").get<double>());

    const auto& w = j.at("windows");
    c.windows.window_samples = w.at("window_samples").get<int>();
    c.windows.stride_samples = w.at("stride_samples").get<int>();
    c.windows.trim_samples = w.at("trim_samples").get<int>();

    const auto& m = j.at("model");
    c.model.window_samples = m.at("window_samples").get<int>();
    c.model.grids = m.at("grids").get<int>();
    c.model.grid_rows = m.at("grid_rows").get<int>();
    c.model.grid_cols = m.at("grid_cols").get<int>();
    c.model.latent_dim = m.at("latent_dim").get<int>();
    c.model.layers = m.at("layers").get<int>();
    c.model.heads = m.at("heads").get<int>();
    c.model.head_dim = m.at("head_dim").get<int>();
    c.model.mlp_dim = m.at("mlp_dim").get<int>();
    c.model.dropout_embed = m.at("dropout_embed").get<double>();
    c.model.dropout_encoder = m.at("dropout_encoder").get<double>();
    c.model.n_classes = m.at("n_classes").get<int>();

    const auto& t = j.at("train");
    c.train.max_epochs = t.at("max_epochs").get<int>();
    c.train.batch_size = t.at("batch_size").get<int>();
    c.train.lr0 = t.at("lr0").get<double>();
    c.train.lr_halving_epochs = t.at("lr_halving_epochs").get<std::vector<int>>();
    c.train.patience = t.at("patience").get<int>();
    c.strategies.clear();
    for (const auto& name : j.at("strategies")) {
        try {
            c.strategies.push_back(parse_strategy(name.get<std::string>()));
        } catch (const ConfigError& e) {
            errors.push_back(std::string("strategies: ") + e.what());
        }
    }
    c.train.eval_batch_size = t.at("eval_batch_size").get<int>();
    c.intraday_epochs = t.at("intraday_epochs").get<int>();

    const auto& k = j.at("calibration");
    c.calibration_modes = k.at("modes").get<std::vector<int>>();
    c.calibration.reinitialize = k.at("reinitialize").get<bool>();
    c.calibration.max_epochs = k.at("max_epochs").get<int>();
    c.calibration.patience = k.at("patience").get<int>();

    c.alda.threshold = j.at("alda").at("threshold").get<double>();
    c.alda.lambda = j.at("alda").at("lambda").get<double>();

    const auto precision = j.at("precision").get<std::string>();
    if (precision == "float") c.precision = Precision::f32;
    else if (precision == "double") c.precision = Precision::f64;
    else errors.push_back("precision: must be \"float\" or \"double\"");
    c.output_dir = j.at("output_dir").get<std::string>();
    c.jobs = j.at("jobs").get<int>();

    try {
        c.validate();
    } catch (const ConfigError& e) {
        std::string text = e.what();
        std::istringstream in(text);
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) errors.push_back(line.substr(2));
    }
    if (!errors.empty()) throw ConfigError(join(errors));
    return c;
}

ExperimentConfig load_config(const std::string& path, const ExperimentConfig& defaults) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    return config_from_json(j, defaults);
}

ExperimentConfig apply_overrides(const ExperimentConfig& cfg, const std::vector<std::string>& overrides) {
    json overlay = json::object();
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not key=value");
        const std::string key = o.substr(0, eq), text = o.substr(eq + 1);
        json value;
        try {
            value = json::parse(text);
        } catch (const json::parse_error&) {
            value = text;
        }
        json* node = &overlay;
        std::size_t start = 0;
        for (std::size_t dot = key.find('.'); dot != std::string::npos; dot = key.find('.', start)) {
            node = &(*node)[key.substr(start, dot - start)];
            start = dot + 1;
        }
        (*node)[key.substr(start)] = value;
    }
    return config_from_json(overlay, cfg);
}

std::string ExperimentConfig::hash() const {
    json j = to_json(*this);
    j.erase("output_dir");
    j.erase("jobs");
    j["train"].erase("eval_batch_size");
    return sha256_hex(j.dump());
}

ExperimentConfig reference_config() { return ExperimentConfig{}; }

ExperimentConfig desk_config() {
    ExperimentConfig c;
    c.windows.stride_samples = 100;
    c.model.latent_dim = 32;
    c.model.layers = 2;
    c.model.heads = 2;
    c.model.head_dim = 16;
    c.model.mlp_dim = 32;
    c.train.max_epochs = 30;
    c.train.patience = 10;
    c.train.lr0 = 3e-3;
    c.train.lr_halving_epochs = {15, 23};
    c.intraday_epochs = 30;
    c.calibration.max_epochs = 20;
    c.calibration.patience = 10;
    return c;
}

WindowSet::Source prepare_recordings(const ExperimentConfig& cfg, const ProgressSink& log) {
    std::vector<Recording> raw;
    const double fs = cfg.filters.bandpass.sample_rate_hz;
    if (cfg.dataset.is_synthetic()) {
        if (log) log("generating " + std::to_string(cfg.dataset.synthetic.subjects) + " synthetic subjects");
        raw = generate_synthetic(cfg.dataset.synthetic.subjects, cfg.dataset.synthetic.shift, cfg.dataset.synthetic.seed,
                                 fs);
    } else {
        if (log) log("loading " + cfg.dataset.manifest);
        raw = load_dataset(cfg.dataset.manifest);
        for (const auto& r : raw)
            if (r.sample_rate_hz != fs)
                throw DataError(describe(r.info) + ": sample rate " + std::to_string(r.sample_rate_hz) +
                                " Hz differs from preprocessing.sample_rate_hz");
    }
    if (!cfg.filter) return std::make_shared<const std::vector<Recording>>(std::move(raw));
    if (log) log("filtering " + std::to_string(raw.size()) + " recordings");
    return std::make_shared<const std::vector<Recording>>(
        preprocess(raw, dsp::FilterChain::build(cfg.filters), cfg.jobs));
}

}  // namespace emgvit
