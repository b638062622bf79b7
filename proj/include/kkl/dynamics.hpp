#pragma once

#include "kkl/common.hpp"

#include <functional>
#include <string>
#include <vector>

namespace kkl {

/// In-place derivative / output maps. Hot loops call these millions of
/// times, so they write into caller-owned buffers instead of returning.
using DerivFn = std::function<void(const Vec&, Vec&)>;
using OutputFn = std::function<void(const Vec&, Vec&)>;

/// Smooth C1 cutoff outside a ball: g = 1 for ||x|| <= r, 0 for
/// ||x|| >= r + d, Hermite cubic in between.
struct SaturationSpec {
    double r = 3.0;
    double d = 7.0;
};

/// Radial profile g as a function of ||x||_2.
double saturation_weight(double norm_x, const SaturationSpec& sat);

struct SystemModel {
    std::string name;
    int d_x = 0;
    int d_y = 0;
    DerivFn f;
    OutputFn h;
    Mat domain;  // d_x x 2, column 0 = lower, column 1 = upper

    Vec f_eval(const Vec& x) const {
        Vec dx(d_x);
        f(x, dx);
        return dx;
    }
    Vec h_eval(const Vec& x) const {
        Vec y(d_y);
        h(x, y);
        return y;
    }
};

// Benchmark systems. Variables are treated as already scaled.
SystemModel reverse_duffing();
SystemModel van_der_pol_unsaturated();
SystemModel van_der_pol(const SaturationSpec& sat = {});
/// dx = A x, y = C x on the given domain box; the linear test bed.
SystemModel linear_system(const Mat& A, const Mat& C, const Mat& domain);
/// Factory by name: "rev-duffing", "van-der-pol", "van-der-pol-unsat".
SystemModel system_by_name(const std::string& name,
                           const SaturationSpec& sat = {});

/// Paper time steps: 1e-3 for rev-duffing, 1e-2 for the Van der Pol pair.
double default_time_step(const std::string& system_name);

struct Trajectory {
    std::vector<double> times;
    std::vector<Vec> states;
    std::vector<Vec> outputs;  // empty unless requested
};

/// Classical fixed-step RK4 with preallocated stage buffers.
class Rk4Stepper {
public:
    explicit Rk4Stepper(int dim)
        : k1_(dim), k2_(dim), k3_(dim), k4_(dim), tmp_(dim) {}

    /// One in-place step; dt may be negative. Throws BlowUpError if a stage
    /// goes non-finite (the step index reported is the stage number 1-4).
    template <typename F>
    void step(F&& f, Vec& x, double dt) {
        f(x, k1_);
        tmp_ = x + (0.5 * dt) * k1_;
        f(tmp_, k2_);
        tmp_ = x + (0.5 * dt) * k2_;
        f(tmp_, k3_);
        tmp_ = x + dt * k3_;
        f(tmp_, k4_);
        x += (dt / 6.0) * (k1_ + 2.0 * k2_ + 2.0 * k3_ + k4_);
        if (!x.allFinite()) {
            int stage = !k1_.allFinite()   ? 1
                        : !k2_.allFinite() ? 2
                        : !k3_.allFinite() ? 3
                        : !k4_.allFinite() ? 4
                                           : 4;
            throw BlowUpError("rk4_step: non-finite state at stage " +
                                  std::to_string(stage),
                              stage);
        }
    }

private:
    Vec k1_, k2_, k3_, k4_, tmp_;
};

/// One-shot RK4 step (allocates; use Rk4Stepper in loops).
Vec rk4_step(const DerivFn& f, const Vec& x, double dt);

enum class Direction { Forward, Backward };

struct SimulateOptions {
    double blowup_norm = 1e6;
    bool record_outputs = false;
};

/// Fixed-step integration over ceil(duration/dt) steps. Backward runs the
/// same grid with -dt and decreasing times. Step count is rounded up when
/// duration is not a multiple of dt; the returned times carry the actual
/// horizon.
Trajectory simulate(const SystemModel& system, const Vec& x0, double duration,
                    double dt, Direction direction,
                    const SimulateOptions& opts = {});

/// Header t,x1..xdx[,y1..ydy]; 17 significant digits.
void write_trajectory_csv(const Trajectory& traj, const std::string& path);

}  // namespace kkl
