#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "kkl/learning.hpp"
#include "kkl/sampling.hpp"
#include "support/oracles.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdio>

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

SystemModel harmonic_linear() {
    Mat A(2, 2), C(1, 2);
    A << 0.0, 1.0, -1.0, 0.0;
    C << 1.0, 0.0;
    return linear_system(A, C, unit_box(2));
}

TrainConfig small_config(uint64_t seed) {
    TrainConfig config;
    config.hidden = {32, 32};
    config.batch_size = 128;
    config.max_epochs = 150;
    config.patience = 25;
    config.seed = seed;
    return config;
}

}  // namespace

TEST_CASE("fit_normalizers standardizes the training pairs") {
    SystemModel sys = harmonic_linear();
    Dataset ds = generate_dataset(sys, {0.2, 0.6}, 40, 1e-3, 21);
    NormalizerSet norms = fit_normalizers(ds, true);
    Mat zs(ds.d_z, static_cast<long>(ds.pairs.size()));
    for (size_t i = 0; i < ds.pairs.size(); ++i)
        zs.col(static_cast<long>(i)) = ds.pairs[i].z;
    Mat zn = norms.z.transform_batch(zs);
    for (long i = 0; i < zn.rows(); ++i) {
        double mean = zn.row(i).mean();
        double sd = std::sqrt(zn.row(i).array().square().mean() - mean * mean);
        CHECK(std::abs(mean) < 1e-10);
        CHECK(std::abs(sd - 1.0) < 1e-10);
    }
}

TEST_CASE("supervised training: losses drop and the linear map is recovered") {
    SystemModel sys = harmonic_linear();
    Dataset ds = generate_dataset(sys, {0.2}, 500, 1e-3, 33);
    TrainConfig config = small_config(5);
    config.hidden = {50, 50};
    config.batch_size = 64;
    config.max_epochs = 300;
    config.patience = 300;
    config.lr_schedule = "cosine";
    LearnedObserver obs = train_supervised(ds, config);

    REQUIRE(obs.meta.log.size() >= 2);
    CHECK(obs.meta.log.back().losses[0] < obs.meta.log.front().losses[0]);
    CHECK(obs.meta.log.back().losses[1] < obs.meta.log.front().losses[1]);

    // identity round trip on held-out points
    Rng rng(99);
    double max_err = 0.0;
    for (int i = 0; i < 300; ++i) {
        Vec x(2);
        x << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
        Vec x_back = obs.tstar_apply(obs.t_apply(x, 0.2), 0.2);
        max_err = std::max(max_err, (x_back - x).lpNorm<Eigen::Infinity>());
    }
    CHECK(max_err < 1e-2);

    // and the encoder matches the Sylvester solution on the train domain
    FilterDesign design = obs.design_at(0.2);
    Mat A(2, 2), C(1, 2);
    A << 0.0, 1.0, -1.0, 0.0;
    C << 1.0, 0.0;
    Mat T = oracles::solve_sylvester(A, C, design.D, design.F);
    Vec probe(2);
    probe << 0.4, -0.3;
    CHECK((obs.t_apply(probe, 0.2) - T * probe).norm() < 1e-2);
}

TEST_CASE("training is deterministic per seed") {
    SystemModel sys = harmonic_linear();
    Dataset ds = generate_dataset(sys, {0.3}, 150, 1e-3, 3);
    TrainConfig config = small_config(17);
    config.max_epochs = 12;
    LearnedObserver a = train_supervised(ds, config);
    LearnedObserver b = train_supervised(ds, config);
    REQUIRE(a.meta.final_losses.size() == b.meta.final_losses.size());
    for (size_t i = 0; i < a.meta.final_losses.size(); ++i)
        CHECK(std::abs(a.meta.final_losses[i] - b.meta.final_losses[i]) <=
              1e-12 * std::max(1.0, std::abs(b.meta.final_losses[i])));
    CHECK((a.t_net.weights[0] - b.t_net.weights[0]).norm() == 0.0);
}

TEST_CASE("pde_residual vanishes for the exact Sylvester transformation") {
    double omega = 0.25;
    FilterDesign design = build_design(omega, 2, 1);
    Mat A(2, 2), C(1, 2);
    A << 0.0, 1.0, -1.0, 0.0;
    C << 1.0, 0.0;
    Mat T = oracles::solve_sylvester(A, C, design.D, design.F);
    Mat T_pinv = (T.transpose() * T).ldlt().solve(T.transpose());
    LearnedObserver linear = oracles::linear_observer(T, T_pinv, 1);
    SystemModel sys = harmonic_linear();

    Rng rng(1);
    for (int i = 0; i < 20; ++i) {
        Vec x(2);
        x << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
        CHECK(pde_residual(linear, sys, x, omega).norm() < 1e-10);
    }

    // equilibrium of the reverse Duffing with T(0) = 0: identically zero
    SystemModel duffing = reverse_duffing();
    Vec origin = Vec::Zero(2);
    CHECK(pde_residual(linear, duffing, origin, omega).norm() == 0.0);
}

TEST_CASE("pole parametrization assembles Eq-style blocks and stays Hurwitz") {
    FilterDesign design = build_design(0.2, 2, 1);
    PoleParametrization pp = PoleParametrization::from_poles(design.poles);
    CHECK(pp.rho_real.size() == 1);
    CHECK(pp.pairs.size() == 1);
    Mat D = pp.assemble();
    CHECK((D - design.D).norm() < 1e-12 * design.D.norm());

    Vec packed = pp.pack();
    packed[0] += 0.3;  // perturb and reassemble: still Hurwitz by construction
    pp.unpack(packed);
    CHECK(is_hurwitz(pp.assemble(), 1e-6));
}

TEST_CASE("pole gradient matches finite differences of the PDE loss") {
    SystemModel sys = reverse_duffing();
    FilterDesign d_init = build_design(0.2, 2, 1);
    PoleParametrization pp = PoleParametrization::from_poles(d_init.poles);

    Rng rng(55);
    const int batch = 12;
    Mat xb(2, batch), fb(2, batch), hb(1, batch);
    for (int i = 0; i < batch; ++i) {
        Vec x(2);
        x << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
        xb.col(i) = x;
        fb.col(i) = sys.f_eval(x);
        hb.col(i) = sys.h_eval(x);
    }
    MlpParams enc = make_mlp({2, 16, 3}, 8);
    Normalizer x_norm = Normalizer::identity(2);
    Mat F = d_init.F;

    auto loss_at = [&](const Vec& packed) {
        PoleParametrization local = pp;
        local.unpack(packed);
        Mat D = local.assemble();
        Mat xn = xb;  // identity normalizer
        MlpCache cache;
        MlpJvpCache jvp;
        Mat z = forward_cached(enc, xn, cache);
        Mat u = forward_jvp_cached(enc, cache, fb, jvp);
        Mat r = u - D * z - F * hb;
        return 0.5 * r.squaredNorm() / batch;
    };

    // analytic gradient through dL/dD = -(R Z^T)/B
    Mat D = pp.assemble();
    MlpCache cache;
    MlpJvpCache jvp;
    Mat z = forward_cached(enc, xb, cache);
    Mat u = forward_jvp_cached(enc, cache, fb, jvp);
    Mat r = u - D * z - F * hb;
    Mat dD = -(r / batch) * z.transpose();
    Vec analytic = pp.grad_from_dD(dD);

    Vec packed = pp.pack();
    for (long k = 0; k < packed.size(); ++k) {
        double fd = oracles::central_diff(
            [&](double v) {
                Vec p = packed;
                p[k] = v;
                return loss_at(p);
            },
            packed[k], 1e-6);
        CHECK(std::abs(analytic[k] - fd) <
              1e-6 * std::max({1.0, std::abs(fd), std::abs(analytic[k])}));
    }
    (void)x_norm;
}

TEST_CASE("autoencoder training: loss drops, residual path is shared") {
    SystemModel sys = reverse_duffing();
    auto samples = lhs(800, sys.domain, 9);
    FilterDesign d_init = build_design(0.2, 2, 1);
    TrainConfig config = small_config(23);
    config.max_epochs = 40;
    config.patience = 40;
    AutoencoderModel model =
        train_autoencoder(samples, sys, 0.1, d_init, false, config);

    REQUIRE(model.meta.log.size() >= 2);
    CHECK(model.meta.log.back().losses[0] < model.meta.log.front().losses[0]);
    // frozen D stays bit-identical
    CHECK((model.D - d_init.D).norm() == 0.0);

    // pde_residual agrees with a direct Jacobian evaluation
    Vec x(2);
    x << 0.3, -0.5;
    Vec residual = pde_residual(model, sys, x);
    Vec direct = model.encoder_jacobian_x(x) * sys.f_eval(x) -
                 model.D * model.encode(x) - model.F * sys.h_eval(x);
    CHECK((residual - direct).norm() < 1e-12 * (1.0 + direct.norm()));

    // reconstruction actually learned something
    Vec recon = model.decode(model.encode(x));
    CHECK((recon - x).norm() < 0.25);
}

TEST_CASE("autoencoder with trainable D keeps Hurwitz margin") {
    SystemModel sys = reverse_duffing();
    auto samples = lhs(400, sys.domain, 29);
    FilterDesign d_init = build_design(0.2, 2, 1);
    TrainConfig config = small_config(31);
    config.max_epochs = 25;
    config.patience = 25;
    AutoencoderModel model =
        train_autoencoder(samples, sys, 0.1, d_init, true, config);

    CHECK(model.d_trainable);
    Eigen::EigenSolver<Mat> solver(model.D, false);
    for (long i = 0; i < model.D.rows(); ++i)
        CHECK(solver.eigenvalues()(i).real() <= -1e-4);
    // D moved (it is trainable) but remains close to the initialization
    CHECK((model.D - d_init.D).norm() > 0.0);
}

TEST_CASE("checkpoint roundtrips are bit-exact") {
    SystemModel sys = harmonic_linear();
    Dataset ds = generate_dataset(sys, {0.4}, 80, 1e-3, 44);
    TrainConfig config = small_config(3);
    config.max_epochs = 4;
    LearnedObserver obs = train_supervised(ds, config);
    obs.meta.config_digest = "0123456789abcdef";
    LearnedObserver copy = observer_from_json(observer_to_json(obs));
    CHECK((copy.t_net.weights[0] - obs.t_net.weights[0]).norm() == 0.0);
    CHECK((copy.tstar_net.weights.back() - obs.tstar_net.weights.back()).norm() ==
          0.0);
    CHECK(copy.meta.config_digest == obs.meta.config_digest);
    CHECK((copy.z_norm.scale - obs.z_norm.scale).norm() == 0.0);
    Vec x(2);
    x << 0.2, 0.4;
    CHECK((copy.t_apply(x, 0.4) - obs.t_apply(x, 0.4)).norm() == 0.0);

    auto samples = lhs(60, sys.domain, 4);
    FilterDesign d_init = build_design(0.3, 2, 1);
    config.max_epochs = 2;
    AutoencoderModel model =
        train_autoencoder(samples, sys, 0.2, d_init, true, config);
    AutoencoderModel mcopy = autoencoder_from_json(autoencoder_to_json(model));
    CHECK((mcopy.D - model.D).norm() == 0.0);
    CHECK((mcopy.encoder.weights[0] - model.encoder.weights[0]).norm() == 0.0);
    CHECK(mcopy.pole_params.pairs.size() == model.pole_params.pairs.size());
    save_checkpoint(autoencoder_to_json(model), "test_ckpt.json");
    AutoencoderModel from_file = autoencoder_from_json(load_checkpoint("test_ckpt.json"));
    CHECK((from_file.decoder.weights[0] - model.decoder.weights[0]).norm() == 0.0);
    std::remove("test_ckpt.json");
}

TEST_CASE("fine-tune continues from the checkpointed loss level") {
    SystemModel sys = harmonic_linear();
    Dataset ds = generate_dataset(sys, {0.2, 0.7}, 200, 1e-3, 12);
    TrainConfig config = small_config(7);
    config.max_epochs = 60;
    LearnedObserver obs = train_supervised(ds, config);
    double trained_loss = obs.meta.final_losses[0];

    TrainConfig resume = config;
    resume.max_epochs = 3;
    LearnedObserver fresh_ref = train_supervised(ds, resume);
    double fresh_first = fresh_ref.meta.log.front().losses[0];

    fine_tune(obs, ds, resume);
    double resumed_first = obs.meta.log[static_cast<size_t>(60)].losses[0];
    CHECK(resumed_first < fresh_first);           // continues, not restarts
    CHECK(resumed_first < 20.0 * std::max(trained_loss, 1e-9));

    // single-omega fine-tune trains only on the nearest block
    fine_tune(obs, ds, resume, 0.21);
    CHECK(obs.meta.log.size() >= 66);
}
