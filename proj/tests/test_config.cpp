#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "kkl/config.hpp"

#include <cmath>

using namespace kkl;

TEST_CASE("defaults encode the benchmark settings per system") {
    ExperimentConfig duffing = default_config("rev-duffing");
    CHECK(duffing.dt() == 1e-3);
    CHECK(duffing.sampler.n_per_omega == 5000);
    CHECK(duffing.omega_grid.min == 0.03);
    CHECK(duffing.omega_grid.max == 1.0);
    CHECK(duffing.omega_grid.count == 100);
    CHECK(duffing.evaluation.x0 == std::vector<double>{0.6, 0.6});
    CHECK(duffing.make_system().d_x == 2);

    ExperimentConfig vdp = default_config("van-der-pol");
    CHECK(vdp.dt() == 1e-2);
    CHECK(vdp.evaluation.x0 == std::vector<double>{0.1, 0.1});
    CHECK(vdp.evaluation.noise_sigmas == std::vector<double>{0.0, 0.25});
    CHECK(vdp.system.saturation_r == 3.0);
    CHECK(vdp.system.saturation_d == 7.0);
    CHECK(vdp.make_system().domain(0, 1) == 2.7);

    CHECK_THROWS_AS(default_config("pendulum"), ConfigError);
}

TEST_CASE("omega grids: spacing and endpoints") {
    ExperimentConfig config = default_config("rev-duffing");
    auto values = config.omega_values();
    REQUIRE(values.size() == 100);
    CHECK(values.front() == 0.03);
    CHECK(values.back() == 1.0);
    // log spacing: constant ratio
    double ratio = values[1] / values[0];
    for (size_t i = 2; i < values.size(); ++i)
        CHECK(values[i] / values[i - 1] == doctest::Approx(ratio).epsilon(1e-9));

    config.omega_grid.spacing = "linear";
    config.omega_grid.count = 5;
    auto lin = config.omega_values();
    CHECK(lin[1] - lin[0] == doctest::Approx(lin[4] - lin[3]).epsilon(1e-12));
}

TEST_CASE("config text round-trips unchanged through serialization") {
    ExperimentConfig config = default_config("van-der-pol");
    config.sampler.n_per_omega = 1234;
    config.trainer.lr_schedule = "cosine";
    config.network.hidden = {40, 30, 20};
    std::string text = canonical_config_text(config);
    ExperimentConfig parsed = parse_config_text(text);
    CHECK(canonical_config_text(parsed) == text);
    CHECK(config_digest(parsed) == config_digest(config));
}

TEST_CASE("digest is stable and sensitive") {
    ExperimentConfig a = default_config("rev-duffing");
    ExperimentConfig b = default_config("rev-duffing");
    CHECK(config_digest(a) == config_digest(b));
    b.trainer.seed += 1;
    CHECK(config_digest(a) != config_digest(b));
    b = a;
    b.omega_grid.count = 99;
    CHECK(config_digest(a) != config_digest(b));
}

TEST_CASE("parse errors carry the offending field path") {
    CHECK_THROWS_WITH_AS(parse_config_text("[system]\nname = \"warp-drive\"\n"),
                         doctest::Contains("system.name"), ConfigError);
    CHECK_THROWS_WITH_AS(
        parse_config_text("[sampler]\nn_per_omega = banana\n"),
        doctest::Contains("sampler.n_per_omega"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("[sampler]\nwibble = 3\n"),
                         doctest::Contains("sampler.wibble"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("[omega_grid]\nmin = -0.5\n"),
                         doctest::Contains("omega_grid.min"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("key_without_section = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("[trainer]\nmode = \"magic\"\n"),
                    ConfigError);
}

TEST_CASE("comments, whitespace and quoting are tolerated") {
    std::string text = R"(
# experiment
[system]
name = "rev-duffing"   # the oscillator

[sampler]
n_per_omega = 50
seed = 9

[omega_grid]
count = 3
spacing = "log"
)";
    ExperimentConfig config = parse_config_text(text);
    CHECK(config.sampler.n_per_omega == 50);
    CHECK(config.sampler.seed == 9);
    CHECK(config.omega_grid.count == 3);
    CHECK(config.omega_values().size() == 3);
}
