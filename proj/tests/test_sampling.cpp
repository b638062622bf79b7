#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "kkl/sampling.hpp"
#include "support/oracles.hpp"

#include <cmath>
#include <cstdio>
#include <set>

using namespace kkl;

namespace {

Mat unit_box(int d) {
    Mat box(d, 2);
    for (int i = 0; i < d; ++i) {
        box(i, 0) = -1.0;
        box(i, 1) = 1.0;
    }
    return box;
}

}  // namespace

TEST_CASE("lhs basics: stratification, determinism, degenerate box") {
    Mat box = unit_box(2);
    auto single = lhs(1, box, 7);
    REQUIRE(single.size() == 1);
    CHECK(single[0][0] >= -1.0);
    CHECK(single[0][0] <= 1.0);

    const int n = 100;
    auto points = lhs(n, box, 42);
    REQUIRE(points.size() == n);
    for (int dim = 0; dim < 2; ++dim) {
        std::set<int> strata;
        for (const auto& p : points) {
            double u = (p[dim] + 1.0) / 2.0;  // [0,1)
            int cell = static_cast<int>(std::floor(u * n));
            CHECK(cell >= 0);
            CHECK(cell < n);
            strata.insert(cell);
        }
        CHECK(strata.size() == n);  // exactly one point per stratum
    }

    auto again = lhs(n, box, 42);
    for (int i = 0; i < n; ++i) {
        CHECK(points[static_cast<size_t>(i)][0] == again[static_cast<size_t>(i)][0]);
        CHECK(points[static_cast<size_t>(i)][1] == again[static_cast<size_t>(i)][1]);
    }

    Mat bad = unit_box(2);
    bad(1, 1) = -1.0;
    CHECK_THROWS_AS(lhs(10, bad, 1), InputError);
}

TEST_CASE("uniform grid hits ~n cells centered in the box") {
    auto grid = uniform_grid(2000, unit_box(2));
    CHECK(grid.size() == 45 * 45);
    for (const auto& p : grid) {
        CHECK(p[0] > -1.0);
        CHECK(p[0] < 1.0);
    }
}

TEST_CASE("convergence time is 10 / lambda_min") {
    FilterDesign design;
    design.lambda_min = 2.0;
    CHECK(convergence_time(design) == doctest::Approx(5.0));
    design.lambda_min = 10.0;
    CHECK(convergence_time(design) == doctest::Approx(1.0));

    FilterDesign d1 = build_design(0.2, 2, 1);
    FilterDesign d2 = build_design(0.4, 2, 1);
    CHECK(convergence_time(d1) ==
          doctest::Approx(2.0 * convergence_time(d2)).epsilon(1e-9));
}

TEST_CASE("backward-forward pairs satisfy the Sylvester relation") {
    Mat A(2, 2), C(1, 2);
    A << 0.0, 1.0, -1.0, 0.0;
    C << 1.0, 0.0;
    SystemModel sys = linear_system(A, C, unit_box(2));
    FilterDesign design = build_design(0.2, 2, 1);
    Mat T = oracles::solve_sylvester(A, C, design.D, design.F);

    auto points = lhs(50, sys.domain, 5);
    Dataset ds = backward_forward(sys, design, points, 1e-3,
                                  Vec::Zero(design.d_z));
    REQUIRE(ds.pairs.size() == 50);
    double max_err = 0.0;
    for (const auto& p : ds.pairs)
        max_err = std::max(max_err, (p.z - T * p.x).norm());
    CHECK(max_err < 1e-3);
    CHECK(ds.meta.max_roundtrip_error < 1e-5);
}

TEST_CASE("Sylvester relation holds for 5 random observable pairs") {
    Rng rng(404);
    for (int trial = 0; trial < 5; ++trial) {
        double w = rng.uniform(0.5, 2.0);
        double damping = 0.05;
        double angle = rng.uniform(0.0, 2.0 * M_PI);
        Mat R(2, 2);
        R << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
        Mat core(2, 2);
        core << -damping, w, -w, -damping;
        Mat A = R * core * R.transpose();
        Mat C(1, 2);
        C << rng.uniform(0.5, 1.5), rng.uniform(-1.5, -0.5);
        Mat obs_mat(2, 2);
        obs_mat.row(0) = C;
        obs_mat.row(1) = C * A;
        REQUIRE(std::abs(obs_mat.determinant()) > 1e-3);  // observable

        SystemModel sys = linear_system(A, C, unit_box(2));
        FilterDesign design = build_design(0.25, 2, 1);
        Mat T = oracles::solve_sylvester(A, C, design.D, design.F);
        auto points = lhs(20, sys.domain, 600 + static_cast<uint64_t>(trial));
        Dataset ds = backward_forward(sys, design, points, 1e-3,
                                      Vec::Zero(design.d_z));
        for (const auto& p : ds.pairs)
            CHECK((p.z - T * p.x).norm() < 1e-3);
    }
}

TEST_CASE("z0 is forgotten after t_c") {
    Mat A(2, 2), C(1, 2);
    A << 0.0, 1.0, -1.0, 0.0;
    C << 1.0, 0.0;
    SystemModel sys = linear_system(A, C, unit_box(2));
    FilterDesign design = build_design(0.3, 2, 1);
    auto points = lhs(10, sys.domain, 8);
    Dataset zero_init = backward_forward(sys, design, points, 1e-3,
                                         Vec::Zero(design.d_z));
    Dataset ones_init = backward_forward(sys, design, points, 1e-3,
                                         Vec::Ones(design.d_z));
    for (size_t i = 0; i < zero_init.pairs.size(); ++i) {
        double diff =
            (zero_init.pairs[i].z - ones_init.pairs[i].z).norm();
        double rel = diff / (1.0 + zero_init.pairs[i].z.norm());
        CHECK(rel < 10.0 * std::exp(-10.0));
        CHECK(diff < 1e-3);
    }
}

TEST_CASE("grid preservation: emitted x matches the requested grid") {
    SystemModel sys = reverse_duffing();
    FilterDesign design = build_design(0.5, 2, 1);
    auto points = lhs(25, sys.domain, 3);
    Dataset ds = backward_forward(sys, design, points, 1e-3,
                                  Vec::Zero(design.d_z));
    for (size_t i = 0; i < points.size(); ++i)
        CHECK((ds.pairs[i].x - points[i]).norm() <= 1e-5);
}

TEST_CASE("backward blow-up reports the point and suggests saturation") {
    SystemModel plain = van_der_pol_unsaturated();
    FilterDesign design = build_design(0.1, 2, 1);
    Vec corner(2);
    corner << 2.7, 2.7;
    try {
        backward_forward(plain, design, {corner}, 1e-2, Vec::Zero(design.d_z));
        FAIL("expected BlowUpError");
    } catch (const BlowUpError& ex) {
        std::string msg = ex.what();
        CHECK(msg.find("saturate") != std::string::npos);
        CHECK(msg.find("x_0") != std::string::npos);
    }
    SystemModel sat = van_der_pol();
    Dataset ds = backward_forward(sat, design, {corner}, 1e-2,
                                  Vec::Zero(design.d_z));
    CHECK(ds.pairs.front().z.allFinite());
}

TEST_CASE("generate_dataset concatenates per-omega blocks deterministically") {
    SystemModel sys = reverse_duffing();
    std::vector<double> omegas = {0.3, 0.6, 1.0};
    Dataset a = generate_dataset(sys, omegas, 10, 1e-3, 77);
    Dataset b = generate_dataset(sys, omegas, 10, 1e-3, 77);
    REQUIRE(a.pairs.size() == 30);
    REQUIRE(a.meta.t_c.size() == 3);
    for (size_t i = 0; i < a.pairs.size(); ++i) {
        CHECK(a.pairs[i].omega_c == b.pairs[i].omega_c);
        CHECK((a.pairs[i].x - b.pairs[i].x).norm() == 0.0);
        CHECK((a.pairs[i].z - b.pairs[i].z).norm() == 0.0);
    }
    // omega blocks are in grid order, n per omega each
    for (int w = 0; w < 3; ++w)
        for (int i = 0; i < 10; ++i)
            CHECK(a.pairs[static_cast<size_t>(w * 10 + i)].omega_c ==
                  omegas[static_cast<size_t>(w)]);

    // parallel generation produces the identical dataset
    Dataset c = generate_dataset(sys, omegas, 10, 1e-3, 77, "lhs", 4);
    for (size_t i = 0; i < a.pairs.size(); ++i)
        CHECK((a.pairs[i].z - c.pairs[i].z).norm() == 0.0);
}

TEST_CASE("dataset CSV + meta roundtrip is bit-exact") {
    SystemModel sys = reverse_duffing();
    Dataset ds = generate_dataset(sys, {0.4, 0.8}, 5, 1e-3, 11);
    ds.meta.config_digest = "deadbeef00000000";
    write_dataset_csv(ds, "test_ds.csv", "test_ds_meta.json");
    Dataset back = read_dataset_csv("test_ds.csv", "test_ds_meta.json");
    REQUIRE(back.pairs.size() == ds.pairs.size());
    CHECK(back.d_x == ds.d_x);
    CHECK(back.d_z == ds.d_z);
    for (size_t i = 0; i < ds.pairs.size(); ++i) {
        CHECK(back.pairs[i].omega_c == ds.pairs[i].omega_c);
        CHECK((back.pairs[i].x - ds.pairs[i].x).norm() == 0.0);
        CHECK((back.pairs[i].z - ds.pairs[i].z).norm() == 0.0);
    }
    CHECK(back.meta.config_digest == "deadbeef00000000");
    CHECK(back.meta.seed == 11);
    std::remove("test_ds.csv");
    std::remove("test_ds_meta.json");
}
