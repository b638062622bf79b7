#pragma once

#include "kkl/common.hpp"
#include "kkl/dynamics.hpp"
#include "kkl/learning.hpp"

#include <string>
#include <vector>

namespace kkl {

/// Declarative experiment description. Defaults reproduce the benchmark
/// settings for the named system with no further flags.
struct ExperimentConfig {
    struct System {
        std::string name = "rev-duffing";
        double saturation_r = 3.0;
        double saturation_d = 7.0;
    } system;

    struct Sampler {
        int n_per_omega = 5000;
        uint64_t seed = 1;
        std::string method = "lhs";  // lhs | grid
    } sampler;

    struct OmegaGrid {
        double min = 0.03;
        double max = 1.0;
        int count = 100;
        std::string spacing = "log";  // log | linear
    } omega_grid;

    struct Integrator {
        double dt = 0.0;  // 0 -> system default
    } integrator;

    struct Network {
        std::vector<int> hidden = {50, 50, 50, 50, 50};
        std::string activation = "silu";
        bool log_omega_input = true;
    } network;

    struct Trainer {
        std::string mode = "supervised";  // supervised | autoencoder
        double lambda_weight = 0.1;
        bool optimize_d = false;
        double ae_omega_init = 0.2;
        int ae_samples = 70000;
        double pole_lr_scale = 0.1;
        double learning_rate = 1e-3;
        std::string lr_schedule = "constant";
        int batch_size = 1024;
        int epochs = 100;
        int patience = 10;
        double val_fraction = 0.1;
        uint64_t seed = 2;
    } trainer;

    struct Evaluation {
        std::vector<double> noise_sigmas = {0.0, 0.5};
        int n_test_points = 10000;
        double duration = 50.0;
        std::vector<double> x0 = {0.6, 0.6};
    } evaluation;

    SystemModel make_system() const;
    double dt() const;  // resolved time step
    std::vector<double> omega_values() const;
    TrainConfig train_config() const;
    void validate() const;  // throws ConfigError with the offending field
};

/// Paper defaults keyed by system name.
ExperimentConfig default_config(const std::string& system_name);

/// Minimal TOML subset: [section], key = value, numbers, booleans, quoted
/// strings, flat arrays, # comments. Unknown keys are errors.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

/// Canonical serialization (stable ordering/formatting) and its hash.
std::string canonical_config_text(const ExperimentConfig& config);
std::string config_digest(const ExperimentConfig& config);

}  // namespace kkl
