#include "kkl/dynamics.hpp"

#include "kkl/csv.hpp"

#include <cmath>

namespace kkl {

double saturation_weight(double norm_x, const SaturationSpec& sat) {
    if (sat.r <= 0 || sat.d <= 0)
        throw InputError("saturation: r and d must be positive");
    if (norm_x <= sat.r) return 1.0;
    if (norm_x >= sat.r + sat.d) return 0.0;
    // Unique cubic with p(0)=1, p'(0)=0, p(d)=0, p'(d)=0.
    double s = (norm_x - sat.r) / sat.d;
    return 1.0 + s * s * (2.0 * s - 3.0);
}

SystemModel reverse_duffing() {
    SystemModel sys;
    sys.name = "rev-duffing";
    sys.d_x = 2;
    sys.d_y = 1;
    sys.f = [](const Vec& x, Vec& dx) {
        dx[0] = x[1] * x[1] * x[1];
        dx[1] = -x[0];
    };
    sys.h = [](const Vec& x, Vec& y) { y[0] = x[0]; };
    sys.domain.resize(2, 2);
    sys.domain << -1.0, 1.0, -1.0, 1.0;
    return sys;
}

namespace {

inline void van_der_pol_field(const Vec& x, Vec& dx) {
    dx[0] = x[1];
    dx[1] = (1.0 - x[0] * x[0]) * x[1] - x[0];
}

}  // namespace

SystemModel van_der_pol_unsaturated() {
    SystemModel sys;
    sys.name = "van-der-pol-unsat";
    sys.d_x = 2;
    sys.d_y = 1;
    sys.f = [](const Vec& x, Vec& dx) { van_der_pol_field(x, dx); };
    sys.h = [](const Vec& x, Vec& y) { y[0] = x[0]; };
    sys.domain.resize(2, 2);
    sys.domain << -2.7, 2.7, -2.7, 2.7;
    return sys;
}

SystemModel van_der_pol(const SaturationSpec& sat) {
    SystemModel sys = van_der_pol_unsaturated();
    sys.name = "van-der-pol";
    sys.f = [sat](const Vec& x, Vec& dx) {
        van_der_pol_field(x, dx);
        double g = saturation_weight(x.norm(), sat);
        dx *= g;
    };
    return sys;
}

SystemModel linear_system(const Mat& A, const Mat& C, const Mat& domain) {
    if (A.rows() != A.cols()) throw InputError("linear_system: A must be square");
    if (C.cols() != A.rows()) throw InputError("linear_system: C shape mismatch");
    SystemModel sys;
    sys.name = "linear";
    sys.d_x = static_cast<int>(A.rows());
    sys.d_y = static_cast<int>(C.rows());
    sys.f = [A](const Vec& x, Vec& dx) { dx.noalias() = A * x; };
    sys.h = [C](const Vec& x, Vec& y) { y.noalias() = C * x; };
    sys.domain = domain;
    return sys;
}

SystemModel system_by_name(const std::string& name, const SaturationSpec& sat) {
    if (name == "rev-duffing") return reverse_duffing();
    if (name == "van-der-pol") return van_der_pol(sat);
    if (name == "van-der-pol-unsat") return van_der_pol_unsaturated();
    throw ConfigError("unknown system: " + name);
}

double default_time_step(const std::string& system_name) {
    if (system_name == "rev-duffing") return 1e-3;
    if (system_name == "van-der-pol" || system_name == "van-der-pol-unsat")
        return 1e-2;
    return 1e-3;
}

Vec rk4_step(const DerivFn& f, const Vec& x, double dt) {
    if (dt == 0.0) throw InputError("rk4_step: dt must be nonzero");
    Rk4Stepper stepper(static_cast<int>(x.size()));
    Vec out = x;
    stepper.step(f, out, dt);
    return out;
}

Trajectory simulate(const SystemModel& system, const Vec& x0, double duration,
                    double dt, Direction direction,
                    const SimulateOptions& opts) {
    if (duration <= 0 || dt <= 0)
        throw InputError("simulate: duration and dt must be positive");
    if (x0.size() != system.d_x) throw InputError("simulate: x0 dimension");
    long steps = static_cast<long>(std::ceil(duration / dt - 1e-9));
    double signed_dt = direction == Direction::Forward ? dt : -dt;

    Trajectory traj;
    traj.times.reserve(static_cast<size_t>(steps) + 1);
    traj.states.reserve(static_cast<size_t>(steps) + 1);

    Vec x = x0;
    Rk4Stepper stepper(system.d_x);
    Vec y(system.d_y);
    for (long k = 0; k <= steps; ++k) {
        traj.times.push_back(static_cast<double>(k) * signed_dt);
        traj.states.push_back(x);
        if (opts.record_outputs) {
            system.h(x, y);
            traj.outputs.push_back(y);
        }
        if (k == steps) break;
        try {
            stepper.step(system.f, x, signed_dt);
        } catch (const BlowUpError&) {
            throw BlowUpError("simulate: state blew up at step " +
                                  std::to_string(k + 1) + " of " +
                                  system.name,
                              k + 1);
        }
        if (x.norm() > opts.blowup_norm)
            throw BlowUpError("simulate: state norm exceeded " +
                                  format_double(opts.blowup_norm) +
                                  " at step " + std::to_string(k + 1) +
                                  " of " + system.name,
                              k + 1);
    }
    return traj;
}

void write_trajectory_csv(const Trajectory& traj, const std::string& path) {
    if (traj.states.empty()) throw InputError("write_trajectory_csv: empty");
    size_t d_x = static_cast<size_t>(traj.states.front().size());
    size_t d_y = traj.outputs.empty()
                     ? 0
                     : static_cast<size_t>(traj.outputs.front().size());
    std::vector<std::string> header;
    header.push_back("t");
    for (size_t i = 0; i < d_x; ++i) header.push_back("x" + std::to_string(i + 1));
    for (size_t i = 0; i < d_y; ++i) header.push_back("y" + std::to_string(i + 1));
    std::vector<std::vector<double>> rows;
    rows.reserve(traj.times.size());
    for (size_t k = 0; k < traj.times.size(); ++k) {
        std::vector<double> row;
        row.reserve(1 + d_x + d_y);
        row.push_back(traj.times[k]);
        for (size_t i = 0; i < d_x; ++i) row.push_back(traj.states[k][static_cast<long>(i)]);
        for (size_t i = 0; i < d_y; ++i) row.push_back(traj.outputs[k][static_cast<long>(i)]);
        rows.push_back(std::move(row));
    }
    write_csv(path, header, rows);
}

}  // namespace kkl
