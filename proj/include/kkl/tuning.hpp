#pragma once

#include "kkl/common.hpp"
#include "kkl/learning.hpp"
#include "kkl/linfilter.hpp"
#include "kkl/sampling.hpp"

#include <string>
#include <vector>

namespace kkl {

struct TuningEntry {
    double omega_c = 0.0;
    double hinf_geps = 0.0;
    double h2_gz = 0.0;
    double j_l2 = 0.0;
    double alpha = 0.0;
    double alpha_over_n = 0.0;
    int n_points = 0;
    bool valid = true;
    std::string error;
};

struct TestGridMeta {
    std::string kind = "grid";  // backward-forward over a uniform x grid
    int n_requested = 0;
    int n_actual = 0;
    double dt = 0.0;
    uint64_t seed = 0;
};

struct TuningReport {
    std::vector<TuningEntry> entries;  // ordered by omega_c ascending
    double argmin_omega_c = std::numeric_limits<double>::quiet_NaN();
    TestGridMeta grid_meta;
};

/// Frobenius norms of the decoder input-Jacobian at each z_j, raw
/// coordinates. The z_points must have been generated at this omega_c.
std::vector<double> empirical_J(const LearnedObserver& observer,
                                const std::vector<Vec>& z_points,
                                double omega_c);

/// alpha = ||J||_2 (||G_eps||inf + ||G_z||H2); also records alpha / n.
TuningEntry criterion_alpha(const LearnedObserver& observer,
                            const FilterDesign& design,
                            const std::vector<Vec>& z_points);

/// One entry per omega_c: test z grid by backward-forward sampling over a
/// uniform x grid of ~n_test_points, then the criterion. Failed entries are
/// marked invalid and skipped by the argmin (ties break to the smallest
/// omega_c).
TuningReport sweep(const LearnedObserver& observer, const SystemModel& system,
                   const std::vector<double>& omega_grid, int n_test_points,
                   double dt, uint64_t seed, int threads = 0);

/// CSV: omega_c,hinf_Geps,h2_Gz,J_l2,alpha,alpha_over_n,n
void write_report_csv(const TuningReport& report, const std::string& path,
                      const std::string& config_digest = "");
TuningReport read_report_csv(const std::string& path);

}  // namespace kkl
