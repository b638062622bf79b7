#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "kkl/config.hpp"
#include "kkl/dynamics.hpp"
#include "kkl/learning.hpp"
#include "kkl/linfilter.hpp"
#include "kkl/observer.hpp"
#include "kkl/sampling.hpp"
#include "kkl/tuning.hpp"

#include <optional>

namespace py = pybind11;
using namespace kkl;

namespace {

SystemModel system_from_name(const std::string& name, double sat_r,
                             double sat_d) {
    return system_by_name(name, SaturationSpec{sat_r, sat_d});
}

Mat stack_points(const std::vector<Vec>& points) {
    if (points.empty()) return Mat();
    Mat out(points.size(), points.front().size());
    for (size_t i = 0; i < points.size(); ++i)
        out.row(static_cast<long>(i)) = points[i].transpose();
    return out;
}

TrainConfig make_train_config(const std::vector<int>& hidden, double lr,
                              const std::string& lr_schedule, int batch_size,
                              int epochs, int patience, double val_fraction,
                              bool log_omega, uint64_t seed) {
    TrainConfig config;
    config.hidden = hidden;
    config.learning_rate = lr;
    config.lr_schedule = lr_schedule;
    config.batch_size = batch_size;
    config.max_epochs = epochs;
    config.patience = patience;
    config.val_fraction = val_fraction;
    config.log_omega_input = log_omega;
    config.seed = seed;
    return config;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Learned KKL observers with frequency tuning";

    py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<BlowUpError>(m, "BlowUpError", PyExc_RuntimeError);
    py::register_exception<NumericalError>(m, "NumericalError",
                                           PyExc_ArithmeticError);
    py::register_exception<TrainingError>(m, "TrainingError",
                                          PyExc_RuntimeError);
    py::register_exception<FilterStateError>(m, "FilterStateError",
                                             PyExc_RuntimeError);

    // ---- linear filter ----
    py::class_<FilterDesign>(m, "FilterDesign")
        .def_readonly("omega_c", &FilterDesign::omega_c)
        .def_readonly("d_z", &FilterDesign::d_z)
        .def_readonly("poles", &FilterDesign::poles)
        .def_readonly("D", &FilterDesign::D)
        .def_readonly("F", &FilterDesign::F)
        .def_readonly("lambda_min", &FilterDesign::lambda_min)
        .def("to_json", [](const FilterDesign& d) {
            return design_to_json(d).dump(2);
        })
        .def("__repr__", [](const FilterDesign& d) {
            return "FilterDesign(omega_c=" + format_double(d.omega_c) +
                   ", d_z=" + std::to_string(d.d_z) + ")";
        });

    m.def("bessel_poles", &bessel_poles, py::arg("order"), py::arg("omega_c"),
          "Magnitude-normalized Bessel poles scaled by 2*pi*omega_c");
    m.def("bessel_poles_raw", &bessel_poles_raw, py::arg("order"));
    m.def("build_design", &build_design, py::arg("omega_c"), py::arg("d_x"),
          py::arg("d_y"));
    m.def("solve_lyapunov", &solve_lyapunov, py::arg("D"), py::arg("Q"));
    m.def("h2_norm", &h2_norm, py::arg("D"));
    m.def("hinf_norm", &hinf_norm, py::arg("D"), py::arg("F"));
    m.def("frequency_gain", &frequency_gain, py::arg("D"), py::arg("F"),
          py::arg("omega"));

    // ---- dynamics / sampling ----
    m.def(
        "simulate",
        [](const std::string& system, const Vec& x0, double duration, double dt,
           const std::string& direction, double sat_r, double sat_d) {
            SystemModel sys = system_from_name(system, sat_r, sat_d);
            SimulateOptions opts;
            opts.record_outputs = true;
            Trajectory traj = simulate(
                sys, x0, duration, dt,
                direction == "backward" ? Direction::Backward
                                        : Direction::Forward,
                opts);
            Mat states = stack_points(traj.states);
            Mat outputs = stack_points(traj.outputs);
            return py::make_tuple(traj.times, states, outputs);
        },
        py::arg("system"), py::arg("x0"), py::arg("duration"), py::arg("dt"),
        py::arg("direction") = "forward", py::arg("sat_r") = 3.0,
        py::arg("sat_d") = 7.0,
        "Fixed-step RK4 run; returns (times, states, outputs)");

    m.def(
        "lhs",
        [](int n, const Vec& lower, const Vec& upper, uint64_t seed) {
            Mat box(lower.size(), 2);
            box.col(0) = lower;
            box.col(1) = upper;
            return stack_points(lhs(n, box, seed));
        },
        py::arg("n"), py::arg("lower"), py::arg("upper"), py::arg("seed"),
        "Latin hypercube sample, one row per point");

    m.def("convergence_time", &convergence_time, py::arg("design"));

    m.def(
        "generate_dataset",
        [](const std::string& system, const std::vector<double>& omegas,
           int n_per_omega, double dt, uint64_t seed, const std::string& sampler,
           int threads, double sat_r, double sat_d) {
            SystemModel sys = system_from_name(system, sat_r, sat_d);
            double step = dt > 0 ? dt : default_time_step(system);
            Dataset ds = generate_dataset(sys, omegas, n_per_omega, step, seed,
                                          sampler, threads);
            long n = static_cast<long>(ds.pairs.size());
            Mat X(n, ds.d_x), Z(n, ds.d_z);
            Vec W(n);
            for (long i = 0; i < n; ++i) {
                X.row(i) = ds.pairs[static_cast<size_t>(i)].x.transpose();
                Z.row(i) = ds.pairs[static_cast<size_t>(i)].z.transpose();
                W[i] = ds.pairs[static_cast<size_t>(i)].omega_c;
            }
            return py::make_tuple(X, Z, W);
        },
        py::arg("system"), py::arg("omegas"), py::arg("n_per_omega"),
        py::arg("dt") = 0.0, py::arg("seed") = 1, py::arg("sampler") = "lhs",
        py::arg("threads") = 0, py::arg("sat_r") = 3.0, py::arg("sat_d") = 7.0,
        "Backward-forward sampled (x, z, omega_c) arrays, one row per pair");

    // ---- learned observer ----
    py::class_<LearnedObserver>(m, "Observer")
        .def_readonly("d_x", &LearnedObserver::d_x)
        .def_readonly("d_y", &LearnedObserver::d_y)
        .def_readonly("d_z", &LearnedObserver::d_z)
        .def("t", &LearnedObserver::t_apply, py::arg("x"), py::arg("omega_c"),
             "Encode a state into filter coordinates")
        .def("t_star", &LearnedObserver::tstar_apply, py::arg("z"),
             py::arg("omega_c"), "Decode a filter state")
        .def("t_star_jacobian", &LearnedObserver::tstar_jacobian_z,
             py::arg("z"), py::arg("omega_c"))
        .def("design_at", &LearnedObserver::design_at, py::arg("omega_c"))
        .def("save",
             [](const LearnedObserver& obs, const std::string& path) {
                 save_checkpoint(observer_to_json(obs), path);
             })
        .def_static("load", [](const std::string& path) {
            return observer_from_json(load_checkpoint(path));
        });

    m.def(
        "train_supervised",
        [](const std::string& system, const std::vector<double>& omegas,
           int n_per_omega, double dt, uint64_t data_seed,
           const std::vector<int>& hidden, double lr,
           const std::string& lr_schedule, int batch_size, int epochs,
           int patience, double val_fraction, bool log_omega,
           uint64_t train_seed, int threads) {
            SystemModel sys = system_from_name(system, 3.0, 7.0);
            double step = dt > 0 ? dt : default_time_step(system);
            Dataset ds = generate_dataset(sys, omegas, n_per_omega, step,
                                          data_seed, "lhs", threads);
            return train_supervised(
                ds, make_train_config(hidden, lr, lr_schedule, batch_size,
                                      epochs, patience, val_fraction, log_omega,
                                      train_seed));
        },
        py::arg("system"), py::arg("omegas"), py::arg("n_per_omega"),
        py::arg("dt") = 0.0, py::arg("data_seed") = 1,
        py::arg("hidden") = std::vector<int>{50, 50, 50, 50, 50},
        py::arg("lr") = 1e-3, py::arg("lr_schedule") = "constant",
        py::arg("batch_size") = 1024, py::arg("epochs") = 100,
        py::arg("patience") = 10, py::arg("val_fraction") = 0.1,
        py::arg("log_omega") = true, py::arg("train_seed") = 2,
        py::arg("threads") = 0,
        "Generate a dataset and fit the omega-indexed transformation pair");

    // ---- autoencoder ----
    py::class_<AutoencoderModel>(m, "Autoencoder")
        .def_readonly("d_x", &AutoencoderModel::d_x)
        .def_readonly("d_z", &AutoencoderModel::d_z)
        .def_readonly("D", &AutoencoderModel::D)
        .def_readonly("F", &AutoencoderModel::F)
        .def_readonly("lambda_weight", &AutoencoderModel::lambda_weight)
        .def("encode", &AutoencoderModel::encode, py::arg("x"))
        .def("decode", &AutoencoderModel::decode, py::arg("z"))
        .def("save",
             [](const AutoencoderModel& model, const std::string& path) {
                 save_checkpoint(autoencoder_to_json(model), path);
             })
        .def_static("load", [](const std::string& path) {
            return autoencoder_from_json(load_checkpoint(path));
        });

    m.def(
        "train_autoencoder",
        [](const std::string& system, int n_samples, double lambda_weight,
           double omega_init, bool optimize_d, const std::vector<int>& hidden,
           double lr, const std::string& lr_schedule, int batch_size,
           int epochs, int patience, double val_fraction, uint64_t seed) {
            SystemModel sys = system_from_name(system, 3.0, 7.0);
            auto samples = lhs(n_samples, sys.domain, Rng(seed).fork(0xAE).next_u64());
            FilterDesign d_init = build_design(omega_init, sys.d_x, sys.d_y);
            return train_autoencoder(
                samples, sys, lambda_weight, d_init, optimize_d,
                make_train_config(hidden, lr, lr_schedule, batch_size, epochs,
                                  patience, val_fraction, false, seed));
        },
        py::arg("system"), py::arg("n_samples"), py::arg("lambda_weight") = 0.1,
        py::arg("omega_init") = 0.2, py::arg("optimize_d") = false,
        py::arg("hidden") = std::vector<int>{50, 50, 50, 50, 50},
        py::arg("lr") = 1e-3, py::arg("lr_schedule") = "constant",
        py::arg("batch_size") = 1024, py::arg("epochs") = 100,
        py::arg("patience") = 10, py::arg("val_fraction") = 0.1,
        py::arg("seed") = 2,
        "Fit the reconstruction + PDE-residual autoencoder from x samples");

    m.def(
        "pde_residual",
        [](const LearnedObserver& obs, const std::string& system, const Vec& x,
           double omega_c) {
            return pde_residual(obs, system_from_name(system, 3.0, 7.0), x,
                                omega_c);
        },
        py::arg("observer"), py::arg("system"), py::arg("x"),
        py::arg("omega_c"));

    // ---- tuning ----
    m.def(
        "sweep",
        [](const LearnedObserver& obs, const std::string& system,
           const std::vector<double>& omegas, int n_test_points, double dt,
           uint64_t seed, int threads) {
            SystemModel sys = system_from_name(system, 3.0, 7.0);
            double step = dt > 0 ? dt : default_time_step(system);
            TuningReport report =
                sweep(obs, sys, omegas, n_test_points, step, seed, threads);
            py::list entries;
            for (const auto& e : report.entries) {
                py::dict d;
                d["omega_c"] = e.omega_c;
                d["hinf_Geps"] = e.hinf_geps;
                d["h2_Gz"] = e.h2_gz;
                d["J_l2"] = e.j_l2;
                d["alpha"] = e.alpha;
                d["alpha_over_n"] = e.alpha_over_n;
                d["n"] = e.n_points;
                d["valid"] = e.valid;
                entries.append(d);
            }
            return py::make_tuple(report.argmin_omega_c, entries);
        },
        py::arg("observer"), py::arg("system"), py::arg("omegas"),
        py::arg("n_test_points") = 2000, py::arg("dt") = 0.0,
        py::arg("seed") = 1, py::arg("threads") = 0,
        "Criterion sweep; returns (argmin_omega_c, entries)");

    // ---- online estimation ----
    m.def(
        "evaluate",
        [](const LearnedObserver& obs, const std::string& system,
           double omega_c, const Vec& x0, double duration, double dt,
           double sigma, uint64_t seed, bool init_on_manifold) {
            SystemModel sys = system_from_name(system, 3.0, 7.0);
            double step = dt > 0 ? dt : default_time_step(system);
            EstimationRun run =
                evaluate_on_system(make_runtime(obs, omega_c), sys, x0,
                                   duration, step, sigma, seed,
                                   init_on_manifold);
            py::dict out;
            out["t"] = run.truth.times;
            out["x"] = stack_points(run.truth.states);
            out["y_meas"] = stack_points(run.measured);
            out["z"] = stack_points(run.z_traj);
            out["x_hat"] = stack_points(run.estimates);
            out["rmse"] = run.rmse;
            out["rmse_post_transient"] = run.rmse_post_transient;
            return out;
        },
        py::arg("observer"), py::arg("system"), py::arg("omega_c"),
        py::arg("x0"), py::arg("duration") = 50.0, py::arg("dt") = 0.0,
        py::arg("sigma") = 0.0, py::arg("seed") = 0,
        py::arg("init_on_manifold") = false,
        "Noisy online estimation run; returns a dict of arrays and the RMSE");

    m.def(
        "evaluate_autoencoder",
        [](const AutoencoderModel& model, const std::string& system,
           const Vec& x0, double duration, double dt, double sigma,
           uint64_t seed) {
            SystemModel sys = system_from_name(system, 3.0, 7.0);
            double step = dt > 0 ? dt : default_time_step(system);
            EstimationRun run = evaluate_on_system(make_runtime(model), sys, x0,
                                                   duration, step, sigma, seed);
            py::dict out;
            out["rmse"] = run.rmse;
            out["rmse_post_transient"] = run.rmse_post_transient;
            out["x_hat"] = stack_points(run.estimates);
            return out;
        },
        py::arg("model"), py::arg("system"), py::arg("x0"),
        py::arg("duration") = 50.0, py::arg("dt") = 0.0, py::arg("sigma") = 0.0,
        py::arg("seed") = 0);

    m.attr("__version__") = "0.1.0";
}
