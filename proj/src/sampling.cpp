#include "kkl/sampling.hpp"

#include "kkl/csv.hpp"

#include <cmath>
#include <numeric>

namespace kkl {

std::vector<Vec> lhs(int n, const Mat& box, uint64_t seed) {
    if (n < 1) throw InputError("lhs: n >= 1");
    long d = box.rows();
    if (box.cols() != 2) throw InputError("lhs: box must be d x 2");
    for (long k = 0; k < d; ++k)
        if (!(box(k, 0) < box(k, 1)))
            throw InputError("lhs: degenerate box in dimension " +
                             std::to_string(k + 1));

    Rng rng(seed);
    std::vector<Vec> points(static_cast<size_t>(n), Vec(d));
    std::vector<int> perm(static_cast<size_t>(n));
    for (long k = 0; k < d; ++k) {
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        double lo = box(k, 0), width = (box(k, 1) - box(k, 0)) / n;
        for (int i = 0; i < n; ++i) {
            double u = rng.uniform();
            points[static_cast<size_t>(i)][k] = lo + (perm[static_cast<size_t>(i)] + u) * width;
        }
    }
    return points;
}

std::vector<Vec> uniform_grid(int n_target, const Mat& box) {
    if (n_target < 1) throw InputError("uniform_grid: n >= 1");
    long d = box.rows();
    int per_axis = std::max(
        1, static_cast<int>(std::lround(std::pow(static_cast<double>(n_target),
                                                 1.0 / static_cast<double>(d)))));
    long total = 1;
    for (long k = 0; k < d; ++k) total *= per_axis;
    std::vector<Vec> points(static_cast<size_t>(total), Vec(d));
    for (long idx = 0; idx < total; ++idx) {
        long rem = idx;
        for (long k = 0; k < d; ++k) {
            long cell = rem % per_axis;
            rem /= per_axis;
            double width = (box(k, 1) - box(k, 0)) / per_axis;
            points[static_cast<size_t>(idx)][k] =
                box(k, 0) + (static_cast<double>(cell) + 0.5) * width;
        }
    }
    return points;
}

double convergence_time(const FilterDesign& design) {
    if (design.lambda_min <= 0)
        throw InputError("convergence_time: lambda_min must be positive");
    return 10.0 / design.lambda_min;
}

Dataset backward_forward(const SystemModel& system, const FilterDesign& design,
                         const std::vector<Vec>& x_points, double dt,
                         const Vec& z0, int threads) {
    if (dt <= 0) throw InputError("backward_forward: dt > 0");
    if (z0.size() != design.d_z) throw InputError("backward_forward: z0 size");
    const int d_x = system.d_x;
    const int d_z = design.d_z;
    const double t_c = convergence_time(design);
    const long steps = static_cast<long>(std::ceil(t_c / dt - 1e-9));
    const double blowup_norm = 1e6;

    Dataset ds;
    ds.d_x = d_x;
    ds.d_z = d_z;
    ds.pairs.resize(x_points.size());
    std::vector<double> roundtrip(x_points.size(), 0.0);
    std::vector<long> failed(x_points.size(), -1);

    const Mat& D = design.D;
    const Mat& F = design.F;

    parallel_for(static_cast<long>(x_points.size()), threads, [&](long i) {
        const Vec& x_req = x_points[static_cast<size_t>(i)];
        Rk4Stepper back_stepper(d_x);
        Vec x = x_req;
        // Backward pass: x alone (z is not defined backward in time).
        for (long k = 0; k < steps; ++k) {
            try {
                back_stepper.step(system.f, x, -dt);
            } catch (const BlowUpError&) {
                failed[static_cast<size_t>(i)] = k;
                return;
            }
            if (x.norm() > blowup_norm) {
                failed[static_cast<size_t>(i)] = k;
                return;
            }
        }
        // Forward pass: joint (x, z) on the same grid.
        Vec w(d_x + d_z);
        w.head(d_x) = x;
        w.tail(d_z) = z0;
        Vec y(system.d_y);
        Vec xbuf(d_x), dxbuf(d_x);
        Rk4Stepper joint_stepper(d_x + d_z);
        auto joint_f = [&](const Vec& s, Vec& dsdt) {
            xbuf = s.head(d_x);
            system.f(xbuf, dxbuf);
            system.h(xbuf, y);
            dsdt.head(d_x) = dxbuf;
            dsdt.tail(d_z).noalias() = D * s.tail(d_z);
            dsdt.tail(d_z).noalias() += F * y;
        };
        for (long k = 0; k < steps; ++k) {
            try {
                joint_stepper.step(joint_f, w, dt);
            } catch (const BlowUpError&) {
                failed[static_cast<size_t>(i)] = steps + k;
                return;
            }
        }
        TrainingPair& pair = ds.pairs[static_cast<size_t>(i)];
        pair.x = w.head(d_x);
        pair.z = w.tail(d_z);
        pair.omega_c = design.omega_c;
        roundtrip[static_cast<size_t>(i)] = (pair.x - x_req).norm();
    });

    for (size_t i = 0; i < failed.size(); ++i) {
        if (failed[i] >= 0) {
            Vec xi = x_points[i];
            std::string coords;
            for (long k = 0; k < xi.size(); ++k) {
                if (k) coords += ", ";
                coords += format_double(xi[k]);
            }
            throw BlowUpError(
                "backward_forward: trajectory from x_" + std::to_string(i) +
                    " = (" + coords + ") blew up; saturate the dynamics " +
                    "smoothly outside the domain of interest and retry",
                failed[i]);
        }
    }

    double max_rt = 0.0;
    for (double r : roundtrip) max_rt = std::max(max_rt, r);
    if (max_rt > 1e-5)
        log_warn("backward_forward: roundtrip error " + format_double(max_rt) +
                 " exceeds 1e-5 at omega_c=" + format_double(design.omega_c));

    ds.meta.system = system.name;
    ds.meta.dt = dt;
    ds.meta.n_per_omega = static_cast<int>(x_points.size());
    ds.meta.omega_grid = {design.omega_c};
    ds.meta.t_c = {static_cast<double>(steps) * dt};
    ds.meta.z0.assign(z0.data(), z0.data() + z0.size());
    ds.meta.max_roundtrip_error = max_rt;
    return ds;
}

Dataset generate_dataset(const SystemModel& system,
                         const std::vector<double>& omega_grid, int n_per_omega,
                         double dt, uint64_t seed, const std::string& sampler,
                         int threads) {
    if (omega_grid.empty()) throw InputError("generate_dataset: empty omega grid");
    Dataset all;
    all.d_x = system.d_x;
    all.meta.system = system.name;
    all.meta.sampler = sampler;
    all.meta.seed = seed;
    all.meta.n_per_omega = n_per_omega;
    all.meta.dt = dt;
    all.meta.omega_grid = omega_grid;
    Rng master(seed);

    for (size_t w = 0; w < omega_grid.size(); ++w) {
        FilterDesign design =
            build_design(omega_grid[w], system.d_x, system.d_y);
        std::vector<Vec> points;
        if (sampler == "lhs")
            points = lhs(n_per_omega, system.domain, master.fork(w).next_u64());
        else if (sampler == "grid")
            points = uniform_grid(n_per_omega, system.domain);
        else
            throw ConfigError("unknown sampler: " + sampler);
        Vec z0 = Vec::Zero(design.d_z);
        Dataset part = backward_forward(system, design, points, dt, z0, threads);
        all.d_z = part.d_z;
        all.meta.t_c.push_back(part.meta.t_c.front());
        all.meta.max_roundtrip_error = std::max(all.meta.max_roundtrip_error,
                                                part.meta.max_roundtrip_error);
        if (all.meta.z0.empty()) all.meta.z0 = part.meta.z0;
        all.pairs.insert(all.pairs.end(),
                         std::make_move_iterator(part.pairs.begin()),
                         std::make_move_iterator(part.pairs.end()));
        log_info("generated " + std::to_string(n_per_omega) + " pairs at omega_c=" +
                 format_double(omega_grid[w]) + " (t_c=" +
                 format_double(part.meta.t_c.front()) + ")");
    }
    return all;
}

void write_dataset_csv(const Dataset& ds, const std::string& csv_path,
                       const std::string& meta_path) {
    std::vector<std::string> header;
    header.push_back("omega_c");
    for (int i = 0; i < ds.d_x; ++i) header.push_back("x" + std::to_string(i + 1));
    for (int i = 0; i < ds.d_z; ++i) header.push_back("z" + std::to_string(i + 1));
    std::vector<std::vector<double>> rows;
    rows.reserve(ds.pairs.size());
    for (const auto& p : ds.pairs) {
        std::vector<double> row;
        row.reserve(1 + static_cast<size_t>(ds.d_x + ds.d_z));
        row.push_back(p.omega_c);
        for (long i = 0; i < p.x.size(); ++i) row.push_back(p.x[i]);
        for (long i = 0; i < p.z.size(); ++i) row.push_back(p.z[i]);
        rows.push_back(std::move(row));
    }
    write_csv(csv_path, header, rows,
              ds.meta.config_digest.empty()
                  ? ""
                  : "config_digest=" + ds.meta.config_digest);
    write_text_file(meta_path, meta_to_json(ds.meta).dump(2) + "\n");
}

Dataset read_dataset_csv(const std::string& csv_path,
                         const std::string& meta_path) {
    CsvTable table = read_csv(csv_path);
    Dataset ds;
    int d_x = 0, d_z = 0;
    for (const auto& name : table.header) {
        if (name.rfind("x", 0) == 0 && name != "omega_c") ++d_x;
        if (name.rfind("z", 0) == 0) ++d_z;
    }
    if (table.header.empty() || table.header.front() != "omega_c" || d_x == 0 ||
        d_z == 0)
        throw InputError("read_dataset_csv: unexpected header in " + csv_path);
    ds.d_x = d_x;
    ds.d_z = d_z;
    ds.pairs.reserve(table.rows.size());
    for (const auto& row : table.rows) {
        TrainingPair p;
        p.omega_c = row[0];
        p.x = Eigen::Map<const Vec>(row.data() + 1, d_x);
        p.z = Eigen::Map<const Vec>(row.data() + 1 + d_x, d_z);
        ds.pairs.push_back(std::move(p));
    }
    ds.meta = meta_from_json(nlohmann::json::parse(read_text_file(meta_path)));
    return ds;
}

nlohmann::json meta_to_json(const DatasetMeta& meta) {
    nlohmann::json j;
    j["system"] = meta.system;
    j["sampler"] = meta.sampler;
    j["seed"] = meta.seed;
    j["n_per_omega"] = meta.n_per_omega;
    j["dt"] = meta.dt;
    j["omega_grid"] = meta.omega_grid;
    j["t_c"] = meta.t_c;
    j["z0"] = meta.z0;
    j["max_roundtrip_error"] = meta.max_roundtrip_error;
    j["config_digest"] = meta.config_digest;
    return j;
}

DatasetMeta meta_from_json(const nlohmann::json& j) {
    DatasetMeta meta;
    meta.system = j.at("system").get<std::string>();
    meta.sampler = j.at("sampler").get<std::string>();
    meta.seed = j.at("seed").get<uint64_t>();
    meta.n_per_omega = j.at("n_per_omega").get<int>();
    meta.dt = j.at("dt").get<double>();
    meta.omega_grid = j.at("omega_grid").get<std::vector<double>>();
    meta.t_c = j.at("t_c").get<std::vector<double>>();
    meta.z0 = j.at("z0").get<std::vector<double>>();
    meta.max_roundtrip_error = j.at("max_roundtrip_error").get<double>();
    meta.config_digest = j.value("config_digest", "");
    return meta;
}

}  // namespace kkl
