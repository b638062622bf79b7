#include "kkl/tuning.hpp"

#include "kkl/csv.hpp"

#include <algorithm>
#include <cmath>

namespace kkl {

std::vector<double> empirical_J(const LearnedObserver& observer,
                                const std::vector<Vec>& z_points,
                                double omega_c) {
    std::vector<double> out(z_points.size());
    for (size_t j = 0; j < z_points.size(); ++j)
        out[j] = observer.tstar_jacobian_z(z_points[j], omega_c).norm();
    return out;
}

TuningEntry criterion_alpha(const LearnedObserver& observer,
                            const FilterDesign& design,
                            const std::vector<Vec>& z_points) {
    TuningEntry entry;
    entry.omega_c = design.omega_c;
    entry.n_points = static_cast<int>(z_points.size());
    std::vector<double> J = empirical_J(observer, z_points, design.omega_c);
    double sumsq = 0.0;
    for (double v : J) sumsq += v * v;
    entry.j_l2 = std::sqrt(sumsq);
    entry.hinf_geps = hinf_norm_Geps(design);
    entry.h2_gz = h2_norm_Gz(design);
    entry.alpha = entry.j_l2 * (entry.hinf_geps + entry.h2_gz);
    entry.alpha_over_n = entry.alpha / static_cast<double>(z_points.size());
    return entry;
}

TuningReport sweep(const LearnedObserver& observer, const SystemModel& system,
                   const std::vector<double>& omega_grid, int n_test_points,
                   double dt, uint64_t seed, int threads) {
    if (omega_grid.empty()) throw InputError("sweep: empty omega grid");
    std::vector<double> grid = omega_grid;
    std::sort(grid.begin(), grid.end());

    TuningReport report;
    report.grid_meta.n_requested = n_test_points;
    report.grid_meta.dt = dt;
    report.grid_meta.seed = seed;

    std::vector<Vec> x_points = uniform_grid(n_test_points, system.domain);
    report.grid_meta.n_actual = static_cast<int>(x_points.size());

    for (double omega : grid) {
        TuningEntry entry;
        entry.omega_c = omega;
        try {
            FilterDesign design = build_design(omega, system.d_x, system.d_y);
            Vec z0 = Vec::Zero(design.d_z);
            Dataset test =
                backward_forward(system, design, x_points, dt, z0, threads);
            std::vector<Vec> z_points;
            z_points.reserve(test.pairs.size());
            for (auto& p : test.pairs) z_points.push_back(std::move(p.z));
            entry = criterion_alpha(observer, design, z_points);
        } catch (const std::exception& ex) {
            entry.valid = false;
            entry.error = ex.what();
            log_warn("sweep: entry at omega_c=" + format_double(omega) +
                     " failed: " + entry.error);
        }
        report.entries.push_back(std::move(entry));
    }

    double best = std::numeric_limits<double>::infinity();
    for (const auto& entry : report.entries) {
        if (!entry.valid) continue;
        if (entry.alpha < best) {  // strict: ties keep the smaller omega_c
            best = entry.alpha;
            report.argmin_omega_c = entry.omega_c;
        }
    }
    if (!std::isfinite(best))
        throw SweepError("sweep: all entries failed");
    return report;
}

void write_report_csv(const TuningReport& report, const std::string& path,
                      const std::string& config_digest) {
    std::vector<std::string> header{"omega_c", "hinf_Geps", "h2_Gz",
                                    "J_l2",    "alpha",     "alpha_over_n",
                                    "n"};
    std::vector<std::vector<double>> rows;
    for (const auto& e : report.entries) {
        if (!e.valid) continue;
        rows.push_back({e.omega_c, e.hinf_geps, e.h2_gz, e.j_l2, e.alpha,
                        e.alpha_over_n, static_cast<double>(e.n_points)});
    }
    write_csv(path, header, rows,
              config_digest.empty() ? "" : "config_digest=" + config_digest);
}

TuningReport read_report_csv(const std::string& path) {
    CsvTable table = read_csv(path);
    TuningReport report;
    for (const auto& row : table.rows) {
        TuningEntry e;
        e.omega_c = row[0];
        e.hinf_geps = row[1];
        e.h2_gz = row[2];
        e.j_l2 = row[3];
        e.alpha = row[4];
        e.alpha_over_n = row[5];
        e.n_points = static_cast<int>(row[6]);
        report.entries.push_back(e);
    }
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : report.entries)
        if (e.alpha < best) {
            best = e.alpha;
            report.argmin_omega_c = e.omega_c;
        }
    return report;
}

}  // namespace kkl
