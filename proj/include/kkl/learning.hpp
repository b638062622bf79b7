#pragma once

#include "kkl/common.hpp"
#include "kkl/dynamics.hpp"
#include "kkl/linfilter.hpp"
#include "kkl/neural.hpp"
#include "kkl/sampling.hpp"

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace kkl {

struct TrainConfig {
    std::vector<int> hidden = {50, 50, 50, 50, 50};
    Activation activation = Activation::Silu;
    double learning_rate = 1e-3;
    std::string lr_schedule = "constant";  // constant | cosine (to lr/100)
    int batch_size = 1024;
    int max_epochs = 100;
    double val_fraction = 0.1;
    int patience = 10;
    bool log_omega_input = true;  // condition nets on log10(omega_c)
    double pole_lr_scale = 0.1;   // pole-coordinate lr relative to the nets
    uint64_t seed = 0;
};

struct EpochRecord {
    int epoch = 0;
    std::vector<double> losses;  // meaning given by log_labels
};

struct TrainMeta {
    TrainConfig config;
    std::string config_digest;
    std::vector<std::string> log_labels;
    std::vector<EpochRecord> log;
    std::vector<double> final_losses;
};

/// The omega_c-indexed pair of learned transformations plus normalization.
/// T maps (x, omega_c) to z; T* maps (z, omega_c) back to x.
struct LearnedObserver {
    int d_x = 0, d_y = 0, d_z = 0;
    MlpParams t_net;      // input [x_n; w_n] -> z_n
    MlpParams tstar_net;  // input [z_n; w_n] -> x_n
    Normalizer x_norm, z_norm, omega_norm;
    bool log_omega = true;
    TrainMeta meta;

    double omega_feature(double omega_c) const;
    FilterDesign design_at(double omega_c) const;  // Bessel family factory

    Vec t_apply(const Vec& x, double omega_c) const;
    Vec tstar_apply(const Vec& z, double omega_c) const;
    Mat t_apply_batch(const Mat& x_cols, double omega_c) const;
    Mat tstar_apply_batch(const Mat& z_cols, double omega_c) const;

    /// Jacobians in raw coordinates (chain rule through the normalizers).
    Mat t_jacobian_x(const Vec& x, double omega_c) const;
    Mat tstar_jacobian_z(const Vec& z, double omega_c) const;
};

struct NormalizerSet {
    Normalizer x, z, omega;
};

/// Componentwise mean/std over the given pairs (training split only).
/// The omega normalizer sees log10(omega_c) when log_omega is set.
NormalizerSet fit_normalizers(const Dataset& dataset, bool log_omega,
                              const std::vector<int>* subset = nullptr);

/// Minimizes the two supervised losses over the omega-indexed dataset in
/// normalized coordinates. Deterministic given (config, seed).
LearnedObserver train_supervised(const Dataset& dataset,
                                 const TrainConfig& config);

/// Continues training an existing observer (optionally restricted to the
/// pairs nearest one omega_c value).
void fine_tune(LearnedObserver& observer, const Dataset& dataset,
               const TrainConfig& config,
               std::optional<double> omega_c = std::nullopt);

// --- autoencoder ---

/// Unconstrained pole coordinates keeping D Hurwitz: real poles -exp(rho),
/// pairs -exp(rho) +- i mu. Block layout is frozen at construction.
struct PoleParametrization {
    std::vector<double> rho_real;
    std::vector<std::pair<double, double>> pairs;  // (rho, mu)

    static PoleParametrization from_poles(const std::vector<Complex>& poles);
    std::vector<Complex> to_poles() const;
    Mat assemble() const;
    long dim() const;
    Vec pack() const;
    void unpack(const Vec& v);
    /// Chain rule from dL/dD entries to packed coordinates.
    Vec grad_from_dD(const Mat& dL_dD) const;
};

struct AutoencoderModel {
    int d_x = 0, d_y = 0, d_z = 0;
    MlpParams encoder;  // x_n -> z (raw latent)
    MlpParams decoder;  // z -> x_n
    Mat D, F;
    double lambda_weight = 0.1;
    bool d_trainable = false;
    PoleParametrization pole_params;
    Normalizer x_norm;
    std::vector<Complex> initial_poles;
    TrainMeta meta;

    Vec encode(const Vec& x) const;
    Vec decode(const Vec& z) const;
    Mat encode_batch(const Mat& x_cols) const;
    Mat decode_batch(const Mat& z_cols) const;
    Mat encoder_jacobian_x(const Vec& x) const;  // raw coordinates
    Mat decoder_jacobian_z(const Vec& z) const;  // raw coordinates
};

/// Minimizes lambda * reconstruction + PDE-residual loss over x samples; no
/// z sampling involved. optimize_d updates D's pole coordinates with the
/// same Adam steps.
AutoencoderModel train_autoencoder(const std::vector<Vec>& x_samples,
                                   const SystemModel& system,
                                   double lambda_weight,
                                   const FilterDesign& d_init, bool optimize_d,
                                   const TrainConfig& config);

/// Defect of the observer PDE at x, raw coordinates:
/// dT/dx(x) f(x) - D T(x) - F h(x).
Vec pde_residual(const LearnedObserver& observer, const SystemModel& system,
                 const Vec& x, double omega_c);
Vec pde_residual(const AutoencoderModel& model, const SystemModel& system,
                 const Vec& x);

// --- checkpoints ---

nlohmann::json observer_to_json(const LearnedObserver& observer);
LearnedObserver observer_from_json(const nlohmann::json& j);
nlohmann::json autoencoder_to_json(const AutoencoderModel& model);
AutoencoderModel autoencoder_from_json(const nlohmann::json& j);

void save_checkpoint(const nlohmann::json& j, const std::string& path);
nlohmann::json load_checkpoint(const std::string& path);

void write_training_log_csv(const TrainMeta& meta, const std::string& path);

nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace kkl
