#include "kkl/observer.hpp"

#include "kkl/csv.hpp"
#include "kkl/sampling.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace kkl {

ObserverRuntime make_runtime(const LearnedObserver& observer, double omega_c) {
    FilterDesign design = observer.design_at(omega_c);
    ObserverRuntime rt;
    rt.D = design.D;
    rt.F = design.F;
    rt.omega_c = omega_c;
    rt.lambda_min = design.lambda_min;
    rt.decode_batch = [observer, omega_c](const Mat& z) {
        return observer.tstar_apply_batch(z, omega_c);
    };
    rt.encode = [observer, omega_c](const Vec& x) {
        return observer.t_apply(x, omega_c);
    };
    return rt;
}

ObserverRuntime make_runtime(const AutoencoderModel& model) {
    ObserverRuntime rt;
    rt.D = model.D;
    rt.F = model.F;
    rt.omega_c = std::numeric_limits<double>::quiet_NaN();
    Eigen::EigenSolver<Mat> solver(model.D, false);
    double lambda = std::numeric_limits<double>::infinity();
    for (long i = 0; i < model.D.rows(); ++i)
        lambda = std::min(lambda, std::abs(solver.eigenvalues()(i).real()));
    rt.lambda_min = lambda;
    rt.decode_batch = [model](const Mat& z) { return model.decode_batch(z); };
    rt.encode = [model](const Vec& x) { return model.encode(x); };
    return rt;
}

std::vector<Vec> add_noise(const std::vector<Vec>& outputs, double sigma,
                           uint64_t seed) {
    if (sigma < 0) throw InputError("add_noise: sigma >= 0");
    if (sigma == 0.0) return outputs;
    Rng rng(seed);
    std::vector<Vec> noisy = outputs;
    for (auto& y : noisy)
        for (long i = 0; i < y.size(); ++i) y[i] += sigma * rng.gaussian();
    return noisy;
}

EstimationRun estimate(const ObserverRuntime& runtime,
                       const std::vector<Vec>& measured, double dt,
                       const Vec& z0) {
    if (measured.empty()) throw InputError("estimate: no measurements");
    if (dt <= 0) throw InputError("estimate: dt > 0");
    const long d_z = runtime.D.rows();
    if (z0.size() != d_z) throw InputError("estimate: z0 size mismatch");

    EstimationRun run;
    run.dt = dt;
    run.measured = measured;
    run.z_traj.reserve(measured.size());

    Vec z = z0;
    run.z_traj.push_back(z);
    for (size_t k = 0; k + 1 < measured.size(); ++k) {
        const Vec& y0 = measured[k];
        const Vec& y1 = measured[k + 1];
        // y is linearly interpolated across the step; the stage clock lives
        // in an extra coordinate so RK4 sees an autonomous field.
        double t_local = 0.0;
        auto filter_f = [&](const Vec& zz, Vec& dz) {
            double a = t_local / dt;
            dz.noalias() = runtime.D * zz;
            dz.noalias() += runtime.F * ((1.0 - a) * y0 + a * y1);
        };
        // Manual RK4 with the interpolation clock advanced per stage.
        Vec k1(d_z), k2(d_z), k3(d_z), k4(d_z), tmp(d_z);
        t_local = 0.0;
        filter_f(z, k1);
        t_local = 0.5 * dt;
        tmp = z + (0.5 * dt) * k1;
        filter_f(tmp, k2);
        tmp = z + (0.5 * dt) * k2;
        filter_f(tmp, k3);
        t_local = dt;
        tmp = z + dt * k3;
        filter_f(tmp, k4);
        z += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!z.allFinite())
            throw FilterStateError("estimate: filter state non-finite at step " +
                                       std::to_string(k + 1),
                                   static_cast<long>(k + 1));
        run.z_traj.push_back(z);
    }

    Mat z_cols(d_z, static_cast<long>(run.z_traj.size()));
    for (size_t k = 0; k < run.z_traj.size(); ++k)
        z_cols.col(static_cast<long>(k)) = run.z_traj[k];
    Mat xhat = runtime.decode_batch(z_cols);
    run.estimates.reserve(run.z_traj.size());
    for (long k = 0; k < xhat.cols(); ++k) run.estimates.push_back(xhat.col(k));
    return run;
}

EstimationRun evaluate_on_system(const ObserverRuntime& runtime,
                                 const SystemModel& system, const Vec& x0,
                                 double duration, double dt, double sigma,
                                 uint64_t seed, bool init_on_manifold) {
    SimulateOptions opts;
    opts.record_outputs = true;
    Trajectory truth =
        simulate(system, x0, duration, dt, Direction::Forward, opts);
    std::vector<Vec> measured = add_noise(truth.outputs, sigma, seed);
    Vec z0 = init_on_manifold ? runtime.encode(x0)
                              : Vec::Zero(runtime.D.rows());
    EstimationRun run = estimate(runtime, measured, dt, z0);
    run.truth = std::move(truth);
    run.noise_sigma = sigma;
    run.seed = seed;

    double acc = 0.0, acc_post = 0.0;
    long n_post = 0;
    double t_cut = runtime.lambda_min > 0 ? 3.0 / runtime.lambda_min : 0.0;
    for (size_t k = 0; k < run.estimates.size(); ++k) {
        double e2 = (run.estimates[k] - run.truth.states[k]).squaredNorm();
        acc += e2;
        if (run.truth.times[k] > t_cut) {
            acc_post += e2;
            ++n_post;
        }
    }
    run.rmse = std::sqrt(acc / static_cast<double>(run.estimates.size()));
    if (n_post > 0)
        run.rmse_post_transient = std::sqrt(acc_post / static_cast<double>(n_post));
    return run;
}

ContractionResult contraction_check(const ObserverRuntime& runtime,
                                    const SystemModel& system, const Vec& x0,
                                    double duration, double dt,
                                    bool init_on_manifold) {
    SimulateOptions opts;
    opts.record_outputs = true;
    Trajectory truth =
        simulate(system, x0, duration, dt, Direction::Forward, opts);
    Vec z0 = init_on_manifold ? runtime.encode(x0)
                              : Vec(Vec::Zero(runtime.D.rows()));
    EstimationRun run = estimate(runtime, truth.outputs, dt, z0);

    ContractionResult result;
    result.lambda_min = runtime.lambda_min;
    result.times = truth.times;
    result.errors.resize(truth.times.size());
    for (size_t k = 0; k < truth.times.size(); ++k)
        result.errors[k] =
            (run.z_traj[k] - runtime.encode(truth.states[k])).norm();

    if (result.errors.front() < 1e-12) {
        result.converged = true;
        return result;
    }

    // Usable window: before both the 1e-12 floor and the encoder's own
    // approximation floor (estimated from the tail), capped at t_c.
    double t_c = runtime.lambda_min > 0 ? 10.0 / runtime.lambda_min : duration;
    double floor_est = result.errors.back();
    size_t tail_start = result.errors.size() - result.errors.size() / 5;
    for (size_t k = tail_start; k < result.errors.size(); ++k)
        floor_est = std::min(floor_est, result.errors[k]);
    // 30x keeps the flattening bias on the fitted slope under ~3%; the
    // e(0)/3 guard keeps a window when the approximation floor is high.
    double cutoff =
        std::max(1e-12, std::min(30.0 * floor_est, result.errors.front() / 3.0));

    size_t end = 0;
    while (end < result.errors.size() && result.times[end] <= t_c &&
           result.errors[end] > cutoff)
        ++end;
    if (result.errors[std::min(end, result.errors.size() - 1)] < 1e-12) {
        result.converged = true;
        return result;
    }
    // Fit over the second half of the usable window, where the slowest
    // mode dominates.
    size_t begin = end / 2;
    if (end - begin < 10) {
        result.converged = true;
        return result;
    }
    double st = 0, se = 0, stt = 0, ste = 0;
    double n = static_cast<double>(end - begin);
    for (size_t k = begin; k < end; ++k) {
        double t = result.times[k];
        double le = std::log(result.errors[k]);
        st += t;
        se += le;
        stt += t * t;
        ste += t * le;
    }
    result.slope = (n * ste - st * se) / (n * stt - st * st);
    result.fit_start = result.times[begin];
    result.fit_end = result.times[end - 1];
    return result;
}

std::vector<HeatmapCell> error_heatmap(const ObserverRuntime& runtime,
                                       const SystemModel& system,
                                       int grid_points, double dt,
                                       int threads) {
    std::vector<Vec> x_points = uniform_grid(grid_points, system.domain);
    // A design shell around the runtime's filter drives the sampling.
    FilterDesign design;
    design.omega_c = runtime.omega_c;
    design.d_z = static_cast<int>(runtime.D.rows());
    design.D = runtime.D;
    design.F = runtime.F;
    design.lambda_min = runtime.lambda_min;
    Dataset ds = backward_forward(system, design, x_points, dt,
                                  Vec::Zero(design.d_z), threads);
    Mat z_cols(design.d_z, static_cast<long>(ds.pairs.size()));
    for (size_t i = 0; i < ds.pairs.size(); ++i)
        z_cols.col(static_cast<long>(i)) = ds.pairs[i].z;
    Mat xhat = runtime.decode_batch(z_cols);
    std::vector<HeatmapCell> cells(ds.pairs.size());
    for (size_t i = 0; i < ds.pairs.size(); ++i) {
        cells[i].x = ds.pairs[i].x;
        cells[i].error = (xhat.col(static_cast<long>(i)) - ds.pairs[i].x).norm();
    }
    return cells;
}

void write_run_csv(const EstimationRun& run, const std::string& path,
                   const std::string& config_digest) {
    const bool has_truth = !run.truth.states.empty();
    const long d_x = run.estimates.empty() ? 0 : run.estimates.front().size();
    const long d_y = run.measured.empty() ? 0 : run.measured.front().size();
    const long d_z = run.z_traj.empty() ? 0 : run.z_traj.front().size();
    std::vector<std::string> header{"t"};
    for (long i = 0; i < (has_truth ? d_x : 0); ++i)
        header.push_back("x" + std::to_string(i + 1));
    for (long i = 0; i < d_y; ++i)
        header.push_back(d_y == 1 ? "y_meas" : "y_meas" + std::to_string(i + 1));
    for (long i = 0; i < d_z; ++i) header.push_back("z" + std::to_string(i + 1));
    for (long i = 0; i < d_x; ++i)
        header.push_back("xhat" + std::to_string(i + 1));
    std::vector<std::vector<double>> rows;
    rows.reserve(run.estimates.size());
    for (size_t k = 0; k < run.estimates.size(); ++k) {
        std::vector<double> row;
        row.push_back(has_truth ? run.truth.times[k]
                                : static_cast<double>(k) * run.dt);
        if (has_truth)
            for (long i = 0; i < d_x; ++i) row.push_back(run.truth.states[k][i]);
        for (long i = 0; i < d_y; ++i) row.push_back(run.measured[k][i]);
        for (long i = 0; i < d_z; ++i) row.push_back(run.z_traj[k][i]);
        for (long i = 0; i < d_x; ++i) row.push_back(run.estimates[k][i]);
        rows.push_back(std::move(row));
    }
    write_csv(path, header, rows,
              config_digest.empty() ? "" : "config_digest=" + config_digest);
}

void write_heatmap_csv(const std::vector<HeatmapCell>& cells,
                       const std::string& path,
                       const std::string& config_digest) {
    if (cells.empty()) throw InputError("write_heatmap_csv: empty");
    long d = cells.front().x.size();
    std::vector<std::string> header;
    for (long i = 0; i < d; ++i) header.push_back("x" + std::to_string(i + 1));
    header.push_back("error");
    std::vector<std::vector<double>> rows;
    rows.reserve(cells.size());
    for (const auto& cell : cells) {
        std::vector<double> row;
        for (long i = 0; i < d; ++i) row.push_back(cell.x[i]);
        row.push_back(cell.error);
        rows.push_back(std::move(row));
    }
    write_csv(path, header, rows,
              config_digest.empty() ? "" : "config_digest=" + config_digest);
}

void write_contraction_csv(const ContractionResult& result,
                           const std::string& path,
                           const std::string& config_digest) {
    std::vector<std::vector<double>> rows;
    rows.reserve(result.times.size());
    for (size_t k = 0; k < result.times.size(); ++k)
        rows.push_back({result.times[k], result.errors[k]});
    write_csv(path, {"t", "error"}, rows,
              config_digest.empty() ? "" : "config_digest=" + config_digest);
}

}  // namespace kkl
