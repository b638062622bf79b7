#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

// End-to-end runs of the kkl-tune binary. The executable path arrives via
// KKL_TUNE_BIN (set by the test harness).

#include "kkl/csv.hpp"
#include "kkl/learning.hpp"
#include "kkl/linfilter.hpp"
#include "kkl/sampling.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;
using namespace kkl;

namespace {

std::string bin_path() {
    const char* env = std::getenv("KKL_TUNE_BIN");
    REQUIRE(env != nullptr);
    return env;
}

struct CliResult {
    int exit_code;
    std::string output;  // stdout + stderr
};

CliResult run_cli(const std::string& args) {
    static int counter = 0;
    std::string log = "cli_out_" + std::to_string(counter++) + ".log";
    std::string cmd = bin_path() + " " + args + " > " + log + " 2>&1";
    int status = std::system(cmd.c_str());
    CliResult result;
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    result.output = read_text_file(log);
    fs::remove(log);
    return result;
}

const char* kTinyConfig = R"(
[system]
name = "rev-duffing"

[sampler]
n_per_omega = 8
seed = 4

[omega_grid]
min = 0.3
max = 1.0
count = 3

[network]
hidden = [8, 8]

[trainer]
epochs = 3
batch_size = 8
patience = 3
seed = 6

[evaluation]
n_test_points = 16
duration = 2.0
)";

struct Workspace {
    fs::path dir;
    explicit Workspace(const std::string& name) : dir(name) {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    std::string file(const std::string& name) const {
        return (dir / name).string();
    }
};

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

}  // namespace

TEST_CASE("full tiny pipeline: generate, train, tune, evaluate, heatmap, contraction") {
    Workspace ws("cli_pipeline");
    write_file(ws.file("config.toml"), kTinyConfig);
    std::string base = "--config " + ws.file("config.toml") + " --out " +
                       ws.dir.string();

    CliResult gen = run_cli("generate " + base);
    CHECK(gen.exit_code == 0);
    CHECK(gen.output.find("t_c") != std::string::npos);
    REQUIRE(fs::exists(ws.file("dataset.csv")));
    REQUIRE(fs::exists(ws.file("dataset_meta.json")));

    // determinism: regenerate into a second directory, byte-identical CSV
    Workspace ws2("cli_pipeline_again");
    write_file(ws2.file("config.toml"), kTinyConfig);
    CliResult gen2 = run_cli("generate --config " + ws2.file("config.toml") +
                             " --out " + ws2.dir.string());
    CHECK(gen2.exit_code == 0);
    CHECK(read_text_file(ws.file("dataset.csv")) ==
          read_text_file(ws2.file("dataset.csv")));

    CliResult train = run_cli("train " + base);
    CHECK(train.exit_code == 0);
    CHECK(train.output.find("loss_T") != std::string::npos);
    REQUIRE(fs::exists(ws.file("checkpoint.json")));
    REQUIRE(fs::exists(ws.file("training_log.csv")));
    CsvTable log = read_csv(ws.file("training_log.csv"));
    CHECK(log.header ==
          std::vector<std::string>{"epoch", "loss_T", "loss_Tstar"});
    CHECK(log.rows.size() == 3);

    CliResult tune = run_cli("tune " + base);
    CHECK(tune.exit_code == 0);
    CHECK(tune.output.find("argmin omega_c") != std::string::npos);
    REQUIRE(fs::exists(ws.file("tuning_report.csv")));
    CsvTable report = read_csv(ws.file("tuning_report.csv"));
    CHECK(report.rows.size() == 3);
    // the artifact carries the config digest as a trailing comment
    CHECK(read_text_file(ws.file("tuning_report.csv")).find("config_digest=") !=
          std::string::npos);

    CliResult eval =
        run_cli("evaluate " + base + " --omega-c 0.5 --sigma 0.1 --seed 3");
    CHECK(eval.exit_code == 0);
    CHECK(eval.output.find("rmse") != std::string::npos);
    REQUIRE(fs::exists(ws.file("run_w0.5_s0.1.csv")));

    CliResult heat = run_cli("heatmap " + base + " --omega-c 0.5 --grid 9");
    CHECK(heat.exit_code == 0);
    REQUIRE(fs::exists(ws.file("heatmap.csv")));
    CHECK(read_csv(ws.file("heatmap.csv")).rows.size() == 9);

    CliResult contr = run_cli("contraction " + base + " --omega-c 0.5");
    CHECK(contr.exit_code == 0);
    bool reported = contr.output.find("slope") != std::string::npos ||
                    contr.output.find("converged") != std::string::npos;
    CHECK(reported);
    REQUIRE(fs::exists(ws.file("contraction.csv")));

    fs::remove_all(ws.dir);
    fs::remove_all(ws2.dir);
}

TEST_CASE("config errors exit with code 2 and name the field") {
    Workspace ws("cli_bad_config");
    write_file(ws.file("config.toml"), "[system]\nname = \"warp-drive\"\n");
    CliResult res = run_cli("generate --config " + ws.file("config.toml"));
    CHECK(res.exit_code == 2);
    CHECK(res.output.find("system.name") != std::string::npos);
    fs::remove_all(ws.dir);
}

TEST_CASE("backward blow-up exits with code 3 and suggests saturation") {
    Workspace ws("cli_blowup");
    write_file(ws.file("config.toml"), R"(
[system]
name = "van-der-pol-unsat"

[sampler]
n_per_omega = 16
seed = 1

[omega_grid]
min = 0.2
max = 0.2
count = 1
)");
    CliResult res = run_cli("generate --config " + ws.file("config.toml") +
                            " --out " + ws.dir.string());
    CHECK(res.exit_code == 3);
    CHECK(res.output.find("saturate") != std::string::npos);
    fs::remove_all(ws.dir);
}

TEST_CASE("pipeline stages reject mismatched config digests with code 2") {
    Workspace ws("cli_digest");
    write_file(ws.file("config.toml"), kTinyConfig);
    std::string base = "--config " + ws.file("config.toml") + " --out " +
                       ws.dir.string();
    REQUIRE(run_cli("generate " + base).exit_code == 0);

    std::string drifted(kTinyConfig);
    drifted += "\n[integrator]\ndt = 0.002\n";
    write_file(ws.file("config2.toml"), drifted);
    CliResult res = run_cli("train --config " + ws.file("config2.toml") +
                            " --out " + ws.dir.string());
    CHECK(res.exit_code == 2);
    CHECK(res.output.find("digest") != std::string::npos);
    fs::remove_all(ws.dir);
}

TEST_CASE("divergent training exits with code 4") {
    Workspace ws("cli_diverge");
    std::string diverging(kTinyConfig);
    diverging.replace(diverging.find("seed = 6"), 8,
                      "seed = 6\nlearning_rate = 1e200");
    write_file(ws.file("config.toml"), diverging);
    std::string base = "--config " + ws.file("config.toml") + " --out " +
                       ws.dir.string();
    REQUIRE(run_cli("generate " + base).exit_code == 0);
    CliResult res = run_cli("train " + base);
    CHECK(res.exit_code == 4);
    CHECK(res.output.find("non-finite") != std::string::npos);
    fs::remove_all(ws.dir);
}

TEST_CASE("sweep with every entry failing exits with code 5") {
    Workspace ws("cli_sweep_fail");
    // A checkpoint with no digest (library-made) against an unsaturated
    // system: every backward-forward test grid blows up.
    Mat A(2, 2), C(1, 2), box(2, 2);
    A << 0.0, 1.0, -1.0, 0.0;
    C << 1.0, 0.0;
    box << -1.0, 1.0, -1.0, 1.0;
    SystemModel sys = linear_system(A, C, box);
    Dataset ds = generate_dataset(sys, {0.3}, 40, 1e-3, 5);
    TrainConfig tc;
    tc.hidden = {8};
    tc.max_epochs = 2;
    tc.batch_size = 32;
    LearnedObserver obs = train_supervised(ds, tc);
    save_checkpoint(observer_to_json(obs), ws.file("checkpoint.json"));

    write_file(ws.file("config.toml"), R"(
[system]
name = "van-der-pol-unsat"

[omega_grid]
min = 0.3
max = 0.6
count = 2

[evaluation]
n_test_points = 9
)");
    CliResult res = run_cli("tune --config " + ws.file("config.toml") +
                            " --out " + ws.dir.string());
    CHECK(res.exit_code == 5);
    fs::remove_all(ws.dir);
}

TEST_CASE("non-finite filter state exits with code 6") {
    Workspace ws("cli_filter_diverge");
    // Hand-crafted autoencoder checkpoint with an anti-stable D.
    AutoencoderModel model;
    model.d_x = 2;
    model.d_y = 1;
    model.d_z = 3;
    model.encoder = make_mlp({2, 4, 3}, 1);
    model.decoder = make_mlp({3, 4, 2}, 2);
    model.D = Mat::Identity(3, 3) * 50.0;
    model.F = Mat::Ones(3, 1);
    model.lambda_weight = 0.1;
    model.pole_params =
        PoleParametrization::from_poles({{-1.0, 0.0}, {-1.0, 1.0}, {-1.0, -1.0}});
    model.initial_poles = {{-1.0, 0.0}, {-1.0, 1.0}, {-1.0, -1.0}};
    model.x_norm = Normalizer::identity(2);
    save_checkpoint(autoencoder_to_json(model), ws.file("checkpoint.json"));

    CliResult res = run_cli("evaluate --system rev-duffing --out " +
                            ws.dir.string() + " --sigma 0");
    CHECK(res.exit_code == 6);
    CHECK(res.output.find("non-finite") != std::string::npos);
    fs::remove_all(ws.dir);
}

TEST_CASE("unknown flags and missing subcommand fail fast") {
    CliResult res = run_cli("");
    CHECK(res.exit_code != 0);
    CliResult res2 = run_cli("generate --nonsense 1");
    CHECK(res2.exit_code != 0);
}
