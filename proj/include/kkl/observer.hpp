#pragma once

#include "kkl/common.hpp"
#include "kkl/dynamics.hpp"
#include "kkl/learning.hpp"
#include "kkl/linfilter.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace kkl {

/// One runnable observer: the linear filter matrices plus decode/encode in
/// raw coordinates. Built from either pipeline.
struct ObserverRuntime {
    Mat D, F;
    double omega_c = 0.0;  // label only (NaN for a free-form D)
    double lambda_min = 0.0;
    std::function<Mat(const Mat&)> decode_batch;  // z cols -> xhat cols
    std::function<Vec(const Vec&)> encode;        // x -> z (for manifold init)
};

ObserverRuntime make_runtime(const LearnedObserver& observer, double omega_c);
ObserverRuntime make_runtime(const AutoencoderModel& model);

/// I.i.d. zero-mean Gaussian noise per component per sample.
std::vector<Vec> add_noise(const std::vector<Vec>& outputs, double sigma,
                           uint64_t seed);

struct EstimationRun {
    Trajectory truth;           // empty when measurements came from outside
    std::vector<Vec> measured;
    std::vector<Vec> z_traj;
    std::vector<Vec> estimates;
    double dt = 0.0;
    double noise_sigma = 0.0;
    uint64_t seed = 0;
    double rmse = std::numeric_limits<double>::quiet_NaN();
    double rmse_post_transient = std::numeric_limits<double>::quiet_NaN();
};

/// Integrates z' = D z + F y through the measured samples (RK4, y linearly
/// interpolated between samples) and decodes every step. Throws
/// FilterStateError if z goes non-finite.
EstimationRun estimate(const ObserverRuntime& runtime,
                       const std::vector<Vec>& measured, double dt,
                       const Vec& z0);

/// Full evaluation: simulate the truth from x0, corrupt the output with
/// noise, filter, decode, and score. init_on_manifold starts the filter at
/// z(0) = T(x(0)) instead of 0 (kills the plotting transient). The
/// post-transient RMSE drops t <= 3/lambda_min.
EstimationRun evaluate_on_system(const ObserverRuntime& runtime,
                                 const SystemModel& system, const Vec& x0,
                                 double duration, double dt, double sigma,
                                 uint64_t seed, bool init_on_manifold = false);

struct ContractionResult {
    bool converged = false;  // error started (or fell) below 1e-12
    double slope = std::numeric_limits<double>::quiet_NaN();
    double lambda_min = 0.0;
    double fit_start = 0.0, fit_end = 0.0;
    std::vector<double> times;
    std::vector<double> errors;  // ||z(t) - T(x(t))||
};

/// Noiseless run from x0; fits log ||z(t) - T(x(t))|| by least squares over
/// the clean tail of the transient. Contract: slope <= -0.9 lambda_min.
/// init_on_manifold starts at z(0) = T(x(0)), which reports immediate
/// convergence instead of a slope.
ContractionResult contraction_check(const ObserverRuntime& runtime,
                                    const SystemModel& system, const Vec& x0,
                                    double duration, double dt,
                                    bool init_on_manifold = false);

struct HeatmapCell {
    Vec x;
    double error = 0.0;
};

/// Per grid point error ||x - T*(z)|| with z from backward-forward sampling
/// at the runtime's filter.
std::vector<HeatmapCell> error_heatmap(const ObserverRuntime& runtime,
                                       const SystemModel& system,
                                       int grid_points, double dt,
                                       int threads = 0);

/// CSV exports; a nonempty digest is recorded as a trailing comment line.
void write_run_csv(const EstimationRun& run, const std::string& path,
                   const std::string& config_digest = "");
void write_heatmap_csv(const std::vector<HeatmapCell>& cells,
                       const std::string& path,
                       const std::string& config_digest = "");
void write_contraction_csv(const ContractionResult& result,
                           const std::string& path,
                           const std::string& config_digest = "");

}  // namespace kkl
