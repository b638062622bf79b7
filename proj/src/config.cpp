#include "kkl/config.hpp"

#include "kkl/csv.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace kkl {

SystemModel ExperimentConfig::make_system() const {
    SaturationSpec sat{system.saturation_r, system.saturation_d};
    return system_by_name(system.name, sat);
}

double ExperimentConfig::dt() const {
    return integrator.dt > 0 ? integrator.dt : default_time_step(system.name);
}

std::vector<double> ExperimentConfig::omega_values() const {
    if (omega_grid.spacing == "log")
        return log_spaced(omega_grid.min, omega_grid.max, omega_grid.count);
    return lin_spaced(omega_grid.min, omega_grid.max, omega_grid.count);
}

TrainConfig ExperimentConfig::train_config() const {
    TrainConfig tc;
    tc.hidden = network.hidden;
    tc.activation = activation_from_name(network.activation);
    tc.learning_rate = trainer.learning_rate;
    tc.lr_schedule = trainer.lr_schedule;
    tc.batch_size = trainer.batch_size;
    tc.max_epochs = trainer.epochs;
    tc.val_fraction = trainer.val_fraction;
    tc.patience = trainer.patience;
    tc.log_omega_input = network.log_omega_input;
    tc.pole_lr_scale = trainer.pole_lr_scale;
    tc.seed = trainer.seed;
    return tc;
}

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ConfigError("config error at " + field + ": " + why);
    };
    if (system.name != "rev-duffing" && system.name != "van-der-pol" &&
        system.name != "van-der-pol-unsat")
        fail("system.name", "unknown system '" + system.name + "'");
    if (system.saturation_r <= 0) fail("system.saturation_r", "must be > 0");
    if (system.saturation_d <= 0) fail("system.saturation_d", "must be > 0");
    if (sampler.n_per_omega < 1) fail("sampler.n_per_omega", "must be >= 1");
    if (sampler.method != "lhs" && sampler.method != "grid")
        fail("sampler.method", "must be lhs or grid");
    if (omega_grid.min <= 0) fail("omega_grid.min", "must be > 0");
    if (omega_grid.max < omega_grid.min) fail("omega_grid.max", "must be >= min");
    if (omega_grid.count < 1) fail("omega_grid.count", "must be >= 1");
    if (omega_grid.spacing != "log" && omega_grid.spacing != "linear")
        fail("omega_grid.spacing", "must be log or linear");
    if (integrator.dt < 0) fail("integrator.dt", "must be >= 0");
    if (network.hidden.empty()) fail("network.hidden", "must be non-empty");
    for (int hsz : network.hidden)
        if (hsz < 1) fail("network.hidden", "sizes must be >= 1");
    if (network.activation != "silu" && network.activation != "identity")
        fail("network.activation", "must be silu or identity");
    if (trainer.mode != "supervised" && trainer.mode != "autoencoder")
        fail("trainer.mode", "must be supervised or autoencoder");
    if (trainer.lambda_weight <= 0) fail("trainer.lambda_weight", "must be > 0");
    if (trainer.ae_omega_init <= 0) fail("trainer.ae_omega_init", "must be > 0");
    if (trainer.ae_samples < 2) fail("trainer.ae_samples", "must be >= 2");
    if (trainer.pole_lr_scale <= 0) fail("trainer.pole_lr_scale", "must be > 0");
    if (trainer.learning_rate <= 0) fail("trainer.learning_rate", "must be > 0");
    if (trainer.lr_schedule != "constant" && trainer.lr_schedule != "cosine")
        fail("trainer.lr_schedule", "must be constant or cosine");
    if (trainer.batch_size < 1) fail("trainer.batch_size", "must be >= 1");
    if (trainer.epochs < 1) fail("trainer.epochs", "must be >= 1");
    if (trainer.patience < 1) fail("trainer.patience", "must be >= 1");
    if (trainer.val_fraction < 0 || trainer.val_fraction >= 1)
        fail("trainer.val_fraction", "must be in [0, 1)");
    if (evaluation.n_test_points < 1)
        fail("evaluation.n_test_points", "must be >= 1");
    if (evaluation.duration <= 0) fail("evaluation.duration", "must be > 0");
    for (double s : evaluation.noise_sigmas)
        if (s < 0) fail("evaluation.noise_sigmas", "must be >= 0");
}

ExperimentConfig default_config(const std::string& system_name) {
    ExperimentConfig config;
    config.system.name = system_name;
    if (system_name == "van-der-pol" || system_name == "van-der-pol-unsat") {
        config.evaluation.x0 = {0.1, 0.1};
        config.evaluation.noise_sigmas = {0.0, 0.25};
    }
    config.validate();
    return config;
}

// ---------------------------------------------------------------------------
// TOML-subset parsing
// ---------------------------------------------------------------------------

namespace {

struct RawValue {
    std::string text;
    int line = 0;
};

using RawConfig = std::map<std::string, RawValue>;  // "section.key" -> value

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_string = !in_string;
        if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

RawConfig tokenize(const std::string& text) {
    RawConfig raw;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("line " + std::to_string(lineno) +
                                  ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw ConfigError("line " + std::to_string(lineno) +
                                  ": empty section name");
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) +
                              ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError("line " + std::to_string(lineno) +
                              ": empty key or value");
        std::string path = section.empty() ? key : section + "." + key;
        if (raw.count(path))
            throw ConfigError("line " + std::to_string(lineno) +
                              ": duplicate key " + path);
        raw[path] = {value, lineno};
    }
    return raw;
}

class RawReader {
public:
    explicit RawReader(RawConfig raw) : raw_(std::move(raw)) {}

    bool has(const std::string& path) {
        return raw_.find(path) != raw_.end();
    }

    double number(const std::string& path, double fallback) {
        auto it = raw_.find(path);
        if (it == raw_.end()) return fallback;
        used_.insert(used_.end(), path);
        return parse_number(it->second, path);
    }

    uint64_t unsigned_int(const std::string& path, uint64_t fallback) {
        auto it = raw_.find(path);
        if (it == raw_.end()) return fallback;
        used_.insert(used_.end(), path);
        try {
            return std::stoull(it->second.text);
        } catch (...) {
            throw ConfigError("config error at " + path +
                              ": expected unsigned integer, got '" +
                              it->second.text + "'");
        }
    }

    bool boolean(const std::string& path, bool fallback) {
        auto it = raw_.find(path);
        if (it == raw_.end()) return fallback;
        used_.insert(used_.end(), path);
        if (it->second.text == "true") return true;
        if (it->second.text == "false") return false;
        throw ConfigError("config error at " + path + ": expected true/false");
    }

    std::string string(const std::string& path, const std::string& fallback) {
        auto it = raw_.find(path);
        if (it == raw_.end()) return fallback;
        used_.insert(used_.end(), path);
        const std::string& t = it->second.text;
        if (t.size() >= 2 && t.front() == '"' && t.back() == '"')
            return t.substr(1, t.size() - 2);
        return t;
    }

    std::vector<double> number_array(const std::string& path,
                                     const std::vector<double>& fallback) {
        auto it = raw_.find(path);
        if (it == raw_.end()) return fallback;
        used_.insert(used_.end(), path);
        const std::string& t = it->second.text;
        if (t.size() < 2 || t.front() != '[' || t.back() != ']')
            throw ConfigError("config error at " + path + ": expected [array]");
        std::vector<double> out;
        std::string body = t.substr(1, t.size() - 2);
        std::istringstream ss(body);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            cell = trim(cell);
            if (cell.empty()) continue;
            out.push_back(parse_number({cell, it->second.line}, path));
        }
        return out;
    }

    void check_all_used() const {
        for (const auto& [path, value] : raw_) {
            if (std::find(used_.begin(), used_.end(), path) == used_.end())
                throw ConfigError("config error at " + path +
                                  ": unknown key (line " +
                                  std::to_string(value.line) + ")");
        }
    }

private:
    static double parse_number(const RawValue& v, const std::string& path) {
        try {
            size_t pos = 0;
            double out = std::stod(v.text, &pos);
            if (pos != v.text.size()) throw std::invalid_argument("trailing");
            return out;
        } catch (...) {
            throw ConfigError("config error at " + path +
                              ": expected number, got '" + v.text + "'");
        }
    }

    RawConfig raw_;
    std::vector<std::string> used_;
};

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
    RawReader reader(tokenize(text));
    std::string system_name = reader.string("system.name", "rev-duffing");
    ExperimentConfig config;
    try {
        config = default_config(system_name);
    } catch (const ConfigError&) {
        throw ConfigError("config error at system.name: unknown system '" +
                          system_name + "'");
    }

    config.system.saturation_r =
        reader.number("system.saturation_r", config.system.saturation_r);
    config.system.saturation_d =
        reader.number("system.saturation_d", config.system.saturation_d);

    config.sampler.n_per_omega = static_cast<int>(
        reader.number("sampler.n_per_omega", config.sampler.n_per_omega));
    config.sampler.seed = reader.unsigned_int("sampler.seed", config.sampler.seed);
    config.sampler.method = reader.string("sampler.method", config.sampler.method);

    config.omega_grid.min = reader.number("omega_grid.min", config.omega_grid.min);
    config.omega_grid.max = reader.number("omega_grid.max", config.omega_grid.max);
    config.omega_grid.count = static_cast<int>(
        reader.number("omega_grid.count", config.omega_grid.count));
    config.omega_grid.spacing =
        reader.string("omega_grid.spacing", config.omega_grid.spacing);

    config.integrator.dt = reader.number("integrator.dt", config.integrator.dt);

    {
        std::vector<double> hidden(config.network.hidden.begin(),
                                   config.network.hidden.end());
        hidden = reader.number_array("network.hidden", hidden);
        config.network.hidden.clear();
        for (double h : hidden)
            config.network.hidden.push_back(static_cast<int>(h));
    }
    config.network.activation =
        reader.string("network.activation", config.network.activation);
    config.network.log_omega_input =
        reader.boolean("network.log_omega_input", config.network.log_omega_input);

    config.trainer.mode = reader.string("trainer.mode", config.trainer.mode);
    config.trainer.lambda_weight =
        reader.number("trainer.lambda_weight", config.trainer.lambda_weight);
    config.trainer.optimize_d =
        reader.boolean("trainer.optimize_d", config.trainer.optimize_d);
    config.trainer.ae_omega_init =
        reader.number("trainer.ae_omega_init", config.trainer.ae_omega_init);
    config.trainer.ae_samples = static_cast<int>(
        reader.number("trainer.ae_samples", config.trainer.ae_samples));
    config.trainer.pole_lr_scale =
        reader.number("trainer.pole_lr_scale", config.trainer.pole_lr_scale);
    config.trainer.learning_rate =
        reader.number("trainer.learning_rate", config.trainer.learning_rate);
    config.trainer.lr_schedule =
        reader.string("trainer.lr_schedule", config.trainer.lr_schedule);
    config.trainer.batch_size = static_cast<int>(
        reader.number("trainer.batch_size", config.trainer.batch_size));
    config.trainer.epochs =
        static_cast<int>(reader.number("trainer.epochs", config.trainer.epochs));
    config.trainer.patience = static_cast<int>(
        reader.number("trainer.patience", config.trainer.patience));
    config.trainer.val_fraction =
        reader.number("trainer.val_fraction", config.trainer.val_fraction);
    config.trainer.seed = reader.unsigned_int("trainer.seed", config.trainer.seed);

    config.evaluation.noise_sigmas = reader.number_array(
        "evaluation.noise_sigmas", config.evaluation.noise_sigmas);
    config.evaluation.n_test_points = static_cast<int>(reader.number(
        "evaluation.n_test_points", config.evaluation.n_test_points));
    config.evaluation.duration =
        reader.number("evaluation.duration", config.evaluation.duration);
    config.evaluation.x0 = reader.number_array("evaluation.x0",
                                               config.evaluation.x0);

    reader.check_all_used();
    config.validate();
    return config;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const InputError& ex) {
        throw ConfigError(ex.what());
    }
    return parse_config_text(text);
}

std::string canonical_config_text(const ExperimentConfig& config) {
    std::ostringstream out;
    auto num = [](double v) { return format_double(v); };
    out << "[system]\n";
    out << "name = \"" << config.system.name << "\"\n";
    out << "saturation_r = " << num(config.system.saturation_r) << "\n";
    out << "saturation_d = " << num(config.system.saturation_d) << "\n";
    out << "\n[sampler]\n";
    out << "n_per_omega = " << config.sampler.n_per_omega << "\n";
    out << "seed = " << config.sampler.seed << "\n";
    out << "method = \"" << config.sampler.method << "\"\n";
    out << "\n[omega_grid]\n";
    out << "min = " << num(config.omega_grid.min) << "\n";
    out << "max = " << num(config.omega_grid.max) << "\n";
    out << "count = " << config.omega_grid.count << "\n";
    out << "spacing = \"" << config.omega_grid.spacing << "\"\n";
    out << "\n[integrator]\n";
    out << "dt = " << num(config.integrator.dt) << "\n";
    out << "\n[network]\n";
    out << "hidden = [";
    for (size_t i = 0; i < config.network.hidden.size(); ++i) {
        if (i) out << ", ";
        out << config.network.hidden[i];
    }
    out << "]\n";
    out << "activation = \"" << config.network.activation << "\"\n";
    out << "log_omega_input = "
        << (config.network.log_omega_input ? "true" : "false") << "\n";
    out << "\n[trainer]\n";
    out << "mode = \"" << config.trainer.mode << "\"\n";
    out << "lambda_weight = " << num(config.trainer.lambda_weight) << "\n";
    out << "optimize_d = " << (config.trainer.optimize_d ? "true" : "false")
        << "\n";
    out << "ae_omega_init = " << num(config.trainer.ae_omega_init) << "\n";
    out << "ae_samples = " << config.trainer.ae_samples << "\n";
    out << "pole_lr_scale = " << num(config.trainer.pole_lr_scale) << "\n";
    out << "learning_rate = " << num(config.trainer.learning_rate) << "\n";
    out << "lr_schedule = \"" << config.trainer.lr_schedule << "\"\n";
    out << "batch_size = " << config.trainer.batch_size << "\n";
    out << "epochs = " << config.trainer.epochs << "\n";
    out << "patience = " << config.trainer.patience << "\n";
    out << "val_fraction = " << num(config.trainer.val_fraction) << "\n";
    out << "seed = " << config.trainer.seed << "\n";
    out << "\n[evaluation]\n";
    out << "noise_sigmas = [";
    for (size_t i = 0; i < config.evaluation.noise_sigmas.size(); ++i) {
        if (i) out << ", ";
        out << num(config.evaluation.noise_sigmas[i]);
    }
    out << "]\n";
    out << "n_test_points = " << config.evaluation.n_test_points << "\n";
    out << "duration = " << num(config.evaluation.duration) << "\n";
    out << "x0 = [";
    for (size_t i = 0; i < config.evaluation.x0.size(); ++i) {
        if (i) out << ", ";
        out << num(config.evaluation.x0[i]);
    }
    out << "]\n";
    return out.str();
}

std::string config_digest(const ExperimentConfig& config) {
    return fnv1a_hex(canonical_config_text(config));
}

}  // namespace kkl
