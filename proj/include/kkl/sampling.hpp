#pragma once

#include "kkl/common.hpp"
#include "kkl/dynamics.hpp"
#include "kkl/linfilter.hpp"

#include <string>
#include <vector>

#include "json.hpp"

namespace kkl {

struct TrainingPair {
    Vec x;           // state grid point (after the backward-forward roundtrip)
    Vec z;           // converged filter state at that point
    double omega_c;  // tuning frequency the pair was generated under
};

struct DatasetMeta {
    std::string system;
    std::string sampler;           // "lhs" | "grid"
    uint64_t seed = 0;
    int n_per_omega = 0;
    double dt = 0.0;
    std::vector<double> omega_grid;
    std::vector<double> t_c;       // per omega, actual (grid-aligned) horizon
    std::vector<double> z0;
    double max_roundtrip_error = 0.0;
    std::string config_digest;
};

struct Dataset {
    int d_x = 0;
    int d_z = 0;
    std::vector<TrainingPair> pairs;
    DatasetMeta meta;
};

/// Plain Latin hypercube: one point per stratum per dimension, uniform
/// jitter inside the stratum, independent permutations coupling dimensions.
/// Deterministic in (seed).
std::vector<Vec> lhs(int n, const Mat& box, uint64_t seed);

/// k^d points, k = round(n_target^(1/d)), cell-centered uniform grid.
std::vector<Vec> uniform_grid(int n_target, const Mat& box);

/// t_c = 10 / lambda_min(D).
double convergence_time(const FilterDesign& design);

/// Backward-forward sampling: integrate x backward for t_c, then the joint
/// (x, z) forward for t_c with z' = D z + F h(x), z(-t_c) = z0. Emits the
/// roundtripped x with its converged z. Throws BlowUpError naming the
/// offending point if the backward pass escapes (use the saturated system).
Dataset backward_forward(const SystemModel& system, const FilterDesign& design,
                         const std::vector<Vec>& x_points, double dt,
                         const Vec& z0, int threads = 0);

/// Full dataset over an omega grid: fresh sample set per omega (forked seed),
/// pairs concatenated in grid order with omega attached.
Dataset generate_dataset(const SystemModel& system,
                         const std::vector<double>& omega_grid, int n_per_omega,
                         double dt, uint64_t seed,
                         const std::string& sampler = "lhs",
                         int threads = 0);

/// CSV header omega_c,x1..xdx,z1..zdz plus a sidecar JSON meta document.
void write_dataset_csv(const Dataset& ds, const std::string& csv_path,
                       const std::string& meta_path);
Dataset read_dataset_csv(const std::string& csv_path,
                         const std::string& meta_path);

nlohmann::json meta_to_json(const DatasetMeta& meta);
DatasetMeta meta_from_json(const nlohmann::json& j);

}  // namespace kkl
