#include "kkl/config.hpp"
#include "kkl/csv.hpp"
#include "kkl/dynamics.hpp"
#include "kkl/learning.hpp"
#include "kkl/linfilter.hpp"
#include "kkl/observer.hpp"
#include "kkl/sampling.hpp"
#include "kkl/tuning.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace kkl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitBlowUp = 3;
constexpr int kExitTraining = 4;
constexpr int kExitSweep = 5;
constexpr int kExitFilter = 6;

struct CommonArgs {
    std::string config_path;
    std::string system;
    std::string out_dir = ".";
    int threads = 0;
    std::optional<uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "Experiment config file");
    cmd->add_option("--system", args.system,
                    "System name (defaults config when no --config)");
    cmd->add_option("--out", args.out_dir, "Output directory");
    cmd->add_option("--threads", args.threads, "Worker thread cap (0 = auto)");
    cmd->add_option("--seed", args.seed, "Override the stage seed");
}

ExperimentConfig resolve_config(const CommonArgs& args) {
    ExperimentConfig config;
    if (!args.config_path.empty()) {
        config = load_config_file(args.config_path);
        if (!args.system.empty() && args.system != config.system.name)
            throw ConfigError("--system conflicts with config system.name");
    } else {
        config = default_config(args.system.empty() ? "rev-duffing"
                                                    : args.system);
    }
    return config;
}

std::string out_path(const CommonArgs& args, const std::string& name) {
    fs::create_directories(args.out_dir);
    return (fs::path(args.out_dir) / name).string();
}

Vec parse_x0(const std::vector<double>& values) {
    Vec x0(static_cast<long>(values.size()));
    for (size_t i = 0; i < values.size(); ++i) x0[static_cast<long>(i)] = values[i];
    return x0;
}

void check_digest(const std::string& artifact, const std::string& found,
                  const std::string& expected) {
    if (found != expected)
        throw ConfigError("config digest mismatch: " + artifact + " carries " +
                          found + " but the current config hashes to " +
                          expected + "; regenerate the pipeline stages with "
                          "one config");
}

int run_generate(const CommonArgs& args) {
    ExperimentConfig config = resolve_config(args);
    if (args.seed) config.sampler.seed = *args.seed;
    SystemModel system = config.make_system();
    std::vector<double> omegas = config.omega_values();
    Dataset ds = generate_dataset(system, omegas, config.sampler.n_per_omega,
                                  config.dt(), config.sampler.seed,
                                  config.sampler.method, args.threads);
    ds.meta.config_digest = config_digest(config);
    std::string csv = out_path(args, "dataset.csv");
    write_dataset_csv(ds, csv, out_path(args, "dataset_meta.json"));
    std::printf("omega_c        t_c [s]\n");
    for (size_t i = 0; i < omegas.size(); ++i)
        std::printf("%-12g % .6g\n", omegas[i], ds.meta.t_c[i]);
    std::printf("wrote %zu pairs to %s\n", ds.pairs.size(), csv.c_str());
    return kExitOk;
}

int run_train(const CommonArgs& args, const std::string& dataset_path,
              const std::string& resume_path, double fine_tune_omega) {
    ExperimentConfig config = resolve_config(args);
    if (args.seed) config.trainer.seed = *args.seed;
    std::string digest = config_digest(config);
    TrainConfig tc = config.train_config();

    nlohmann::json checkpoint;
    TrainMeta* meta = nullptr;
    LearnedObserver observer;
    AutoencoderModel model;

    if (config.trainer.mode == "supervised") {
        std::string csv = dataset_path.empty() ? out_path(args, "dataset.csv")
                                               : dataset_path;
        std::string meta_path =
            (fs::path(csv).parent_path() / "dataset_meta.json").string();
        Dataset ds = read_dataset_csv(csv, meta_path);
        if (!ds.meta.config_digest.empty())
            check_digest("dataset", ds.meta.config_digest, digest);
        SystemModel system = config.make_system();
        if (ds.d_x != system.d_x)
            throw ConfigError("dataset d_x does not match configured system");
        if (!resume_path.empty()) {
            observer = observer_from_json(load_checkpoint(resume_path));
            std::optional<double> ft;
            if (fine_tune_omega > 0) ft = fine_tune_omega;
            fine_tune(observer, ds, tc, ft);
        } else {
            if (fine_tune_omega > 0)
                throw ConfigError("--fine-tune requires --resume");
            observer = train_supervised(ds, tc);
        }
        observer.meta.config_digest = digest;
        checkpoint = observer_to_json(observer);
        meta = &observer.meta;
    } else {
        SystemModel system = config.make_system();
        std::vector<Vec> samples;
        if (!dataset_path.empty()) {
            std::string meta_path =
                (fs::path(dataset_path).parent_path() / "dataset_meta.json")
                    .string();
            Dataset ds = read_dataset_csv(dataset_path, meta_path);
            for (const auto& p : ds.pairs) samples.push_back(p.x);
        } else {
            samples = lhs(config.trainer.ae_samples, system.domain,
                          Rng(config.sampler.seed).fork(0xAE).next_u64());
        }
        FilterDesign d_init =
            build_design(config.trainer.ae_omega_init, system.d_x, system.d_y);
        model = train_autoencoder(samples, system, config.trainer.lambda_weight,
                                  d_init, config.trainer.optimize_d, tc);
        model.meta.config_digest = digest;
        checkpoint = autoencoder_to_json(model);
        meta = &model.meta;
    }

    save_checkpoint(checkpoint, out_path(args, "checkpoint.json"));
    write_training_log_csv(*meta, out_path(args, "training_log.csv"));
    std::printf("final losses:");
    for (size_t i = 0; i < meta->final_losses.size(); ++i)
        std::printf(" %s=%g", meta->log_labels[i].c_str(),
                    meta->final_losses[i]);
    std::printf("\n");
    return kExitOk;
}

int run_tune(const CommonArgs& args, const std::string& checkpoint_path) {
    ExperimentConfig config = resolve_config(args);
    std::string path = checkpoint_path.empty() ? out_path(args, "checkpoint.json")
                                               : checkpoint_path;
    nlohmann::json j = load_checkpoint(path);
    if (j.at("kind").get<std::string>() != "supervised")
        throw ConfigError("tune needs a supervised (omega-indexed) checkpoint");
    LearnedObserver observer = observer_from_json(j);
    if (!observer.meta.config_digest.empty())
        check_digest("checkpoint", observer.meta.config_digest,
                     config_digest(config));
    SystemModel system = config.make_system();
    uint64_t seed = args.seed ? *args.seed : config.sampler.seed;
    TuningReport report =
        sweep(observer, system, config.omega_values(),
              config.evaluation.n_test_points, config.dt(), seed, args.threads);
    write_report_csv(report, out_path(args, "tuning_report.csv"),
                     config_digest(config));
    std::printf("argmin omega_c = %g\n", report.argmin_omega_c);
    return kExitOk;
}

ObserverRuntime load_runtime(const nlohmann::json& j, double omega_c,
                             const ExperimentConfig& config) {
    if (j.at("kind").get<std::string>() == "supervised") {
        LearnedObserver observer = observer_from_json(j);
        if (!observer.meta.config_digest.empty())
            check_digest("checkpoint", observer.meta.config_digest,
                         config_digest(config));
        if (omega_c <= 0)
            throw ConfigError("--omega-c is required for supervised checkpoints");
        return make_runtime(observer, omega_c);
    }
    AutoencoderModel model = autoencoder_from_json(j);
    if (!model.meta.config_digest.empty())
        check_digest("checkpoint", model.meta.config_digest,
                     config_digest(config));
    return make_runtime(model);
}

int run_evaluate(const CommonArgs& args, const std::string& checkpoint_path,
                 double omega_c, double sigma, std::vector<double> x0_values) {
    ExperimentConfig config = resolve_config(args);
    std::string path = checkpoint_path.empty() ? out_path(args, "checkpoint.json")
                                               : checkpoint_path;
    ObserverRuntime runtime =
        load_runtime(load_checkpoint(path), omega_c, config);
    SystemModel system = config.make_system();
    if (x0_values.empty()) x0_values = config.evaluation.x0;
    Vec x0 = parse_x0(x0_values);
    if (x0.size() != system.d_x)
        throw ConfigError("x0 dimension does not match the system");
    if (sigma < 0) throw ConfigError("sigma must be >= 0");
    uint64_t seed = args.seed ? *args.seed : 0;
    EstimationRun run =
        evaluate_on_system(runtime, system, x0, config.evaluation.duration,
                           config.dt(), sigma, seed);
    char name[128];
    std::snprintf(name, sizeof(name), "run_w%g_s%g.csv",
                  runtime.omega_c, sigma);
    write_run_csv(run, out_path(args, name), config_digest(config));
    std::printf("rmse = %g (post-transient %g)\n", run.rmse,
                run.rmse_post_transient);
    return kExitOk;
}

int run_heatmap(const CommonArgs& args, const std::string& checkpoint_path,
                double omega_c, int grid_points) {
    ExperimentConfig config = resolve_config(args);
    std::string path = checkpoint_path.empty() ? out_path(args, "checkpoint.json")
                                               : checkpoint_path;
    ObserverRuntime runtime =
        load_runtime(load_checkpoint(path), omega_c, config);
    SystemModel system = config.make_system();
    if (grid_points <= 0) grid_points = config.evaluation.n_test_points;
    auto cells =
        error_heatmap(runtime, system, grid_points, config.dt(), args.threads);
    write_heatmap_csv(cells, out_path(args, "heatmap.csv"),
                      config_digest(config));
    double max_err = 0, mean_err = 0;
    for (const auto& cell : cells) {
        max_err = std::max(max_err, cell.error);
        mean_err += cell.error;
    }
    mean_err /= static_cast<double>(cells.size());
    std::printf("heatmap over %zu cells: mean error %g, max error %g\n",
                cells.size(), mean_err, max_err);
    return kExitOk;
}

int run_contraction(const CommonArgs& args, const std::string& checkpoint_path,
                    double omega_c, std::vector<double> x0_values,
                    double duration) {
    ExperimentConfig config = resolve_config(args);
    std::string path = checkpoint_path.empty() ? out_path(args, "checkpoint.json")
                                               : checkpoint_path;
    ObserverRuntime runtime =
        load_runtime(load_checkpoint(path), omega_c, config);
    SystemModel system = config.make_system();
    if (x0_values.empty()) x0_values = config.evaluation.x0;
    Vec x0 = parse_x0(x0_values);
    if (duration <= 0)
        duration = runtime.lambda_min > 0 ? 12.0 / runtime.lambda_min
                                          : config.evaluation.duration;
    ContractionResult result =
        contraction_check(runtime, system, x0, duration, config.dt());
    write_contraction_csv(result, out_path(args, "contraction.csv"),
                          config_digest(config));
    if (result.converged)
        std::printf("error already below threshold (converged)\n");
    else
        std::printf("fitted decay slope = %g (contract: <= %g)\n", result.slope,
                    -0.9 * result.lambda_min);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Learned KKL observers with frequency tuning"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, tune_args, eval_args, heat_args, contr_args;
    std::string dataset_path, resume_path;
    std::string tune_ckpt, eval_ckpt, heat_ckpt, contr_ckpt;
    double fine_tune_omega = 0;
    double eval_omega = 0, eval_sigma = 0, heat_omega = 0, contr_omega = 0;
    std::vector<double> eval_x0, contr_x0;
    int heat_grid = 0;
    double contr_duration = 0;

    auto* generate = app.add_subcommand("generate", "Generate a dataset");
    add_common(generate, gen_args);

    auto* train = app.add_subcommand("train", "Train the transformations");
    add_common(train, train_args);
    train->add_option("--dataset", dataset_path, "Dataset CSV path");
    train->add_option("--resume", resume_path, "Checkpoint to continue from");
    train->add_option("--fine-tune", fine_tune_omega,
                      "Fine-tune at one omega_c (requires --resume)");

    auto* tune = app.add_subcommand("tune", "Sweep the tuning criterion");
    add_common(tune, tune_args);
    tune->add_option("--checkpoint", tune_ckpt, "Checkpoint path");

    auto* evaluate = app.add_subcommand("evaluate", "Run the observer online");
    add_common(evaluate, eval_args);
    evaluate->add_option("--checkpoint", eval_ckpt, "Checkpoint path");
    evaluate->add_option("--omega-c", eval_omega, "Decoding frequency");
    evaluate->add_option("--sigma", eval_sigma, "Measurement noise std");
    evaluate->add_option("--x0", eval_x0, "Initial state (repeat per coord)");

    auto* heatmap = app.add_subcommand("heatmap", "Estimation error heatmap");
    add_common(heatmap, heat_args);
    heatmap->add_option("--checkpoint", heat_ckpt, "Checkpoint path");
    heatmap->add_option("--omega-c", heat_omega, "Decoding frequency");
    heatmap->add_option("--grid", heat_grid, "Grid point budget");

    auto* contraction =
        app.add_subcommand("contraction", "Fit the filter decay rate");
    add_common(contraction, contr_args);
    contraction->add_option("--checkpoint", contr_ckpt, "Checkpoint path");
    contraction->add_option("--omega-c", contr_omega, "Decoding frequency");
    contraction->add_option("--x0", contr_x0, "Initial state");
    contraction->add_option("--duration", contr_duration, "Run length [s]");

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate->parsed()) return run_generate(gen_args);
        if (train->parsed())
            return run_train(train_args, dataset_path, resume_path,
                             fine_tune_omega);
        if (tune->parsed()) return run_tune(tune_args, tune_ckpt);
        if (evaluate->parsed())
            return run_evaluate(eval_args, eval_ckpt, eval_omega, eval_sigma,
                                eval_x0);
        if (heatmap->parsed())
            return run_heatmap(heat_args, heat_ckpt, heat_omega, heat_grid);
        if (contraction->parsed())
            return run_contraction(contr_args, contr_ckpt, contr_omega,
                                   contr_x0, contr_duration);
    } catch (const ConfigError& ex) {
        std::fprintf(stderr, "error: %s\n", ex.what());
        return kExitConfig;
    } catch (const InputError& ex) {
        std::fprintf(stderr, "error: %s\n", ex.what());
        return kExitConfig;
    } catch (const BlowUpError& ex) {
        std::fprintf(stderr, "error: %s\n", ex.what());
        return kExitBlowUp;
    } catch (const TrainingError& ex) {
        std::fprintf(stderr, "error: %s\n", ex.what());
        return kExitTraining;
    } catch (const SweepError& ex) {
        std::fprintf(stderr, "error: %s\n", ex.what());
        return kExitSweep;
    } catch (const FilterStateError& ex) {
        std::fprintf(stderr, "error: %s\n", ex.what());
        return kExitFilter;
    } catch (const std::exception& ex) {
        std::fprintf(stderr, "internal error: %s\n", ex.what());
        return kExitInternal;
    }
    return kExitInternal;
}
