#include "kkl/learning.hpp"

#include "kkl/csv.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kkl {

namespace {

double condition_omega(double omega_c, bool log_omega) {
    if (omega_c <= 0) throw InputError("omega_c must be positive");
    return log_omega ? std::log10(omega_c) : omega_c;
}

double scheduled_lr(const TrainConfig& config, int epoch) {
    if (config.lr_schedule != "cosine") return config.learning_rate;
    double lr_min = 1e-2 * config.learning_rate;
    double phase = M_PI * static_cast<double>(epoch) /
                   std::max(1, config.max_epochs - 1);
    return lr_min + 0.5 * (config.learning_rate - lr_min) *
                        (1.0 + std::cos(phase));
}

std::vector<int> shuffled_indices(int n, Rng& rng) {
    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    return idx;
}

Mat gather_cols(const Mat& all, const std::vector<int>& idx, int begin, int end) {
    Mat out(all.rows(), end - begin);
    for (int i = begin; i < end; ++i)
        out.col(i - begin) = all.col(idx[static_cast<size_t>(i)]);
    return out;
}

// One supervised regression problem inside the lockstep trainer.
struct NetTask {
    const Mat* inputs = nullptr;   // dim x N (normalized)
    const Mat* targets = nullptr;  // dim x N (normalized)
    MlpParams net;
    MlpAdam adam;
    MlpGrads grads;
    MlpParams best_net;
    double best_val = std::numeric_limits<double>::infinity();
    int stale_epochs = 0;
    bool stopped = false;
    double epoch_train_loss = 0.0;
    double last_logged_loss = 0.0;

    NetTask(MlpParams initial, const AdamConfig& adam_config, const Mat* in,
            const Mat* tg)
        : inputs(in), targets(tg), net(std::move(initial)),
          adam(net, adam_config), best_net(net) {
        grads.init_like(net);
    }
};

void run_lockstep_training(std::vector<NetTask>& tasks,
                           const std::vector<int>& train_idx,
                           const std::vector<int>& val_idx,
                           const TrainConfig& config, Rng& rng,
                           TrainMeta& meta) {
    const int n_train = static_cast<int>(train_idx.size());
    const int batch = std::max(1, std::min(config.batch_size, n_train));
    std::vector<int> order = train_idx;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        rng.shuffle(order);
        double lr = scheduled_lr(config, epoch);
        for (auto& task : tasks) {
            task.adam.set_learning_rate(lr);
            task.epoch_train_loss = 0.0;
        }
        for (int start = 0; start < n_train; start += batch) {
            int end = std::min(start + batch, n_train);
            for (auto& task : tasks) {
                if (task.stopped) continue;
                Mat xb = gather_cols(*task.inputs, order, start, end);
                Mat yb = gather_cols(*task.targets, order, start, end);
                task.grads.set_zero();
                double loss = mse_loss_and_grad(task.net, xb, yb, task.grads);
                if (!std::isfinite(loss))
                    throw TrainingError(
                        "non-finite training loss at epoch " +
                        std::to_string(epoch) + ", batch offset " +
                        std::to_string(start));
                task.adam.step(task.net, task.grads);
                task.epoch_train_loss += loss * (end - start);
            }
        }

        EpochRecord record;
        record.epoch = epoch;
        bool all_stopped = true;
        for (auto& task : tasks) {
            if (!task.stopped) {
                task.epoch_train_loss /= n_train;
                task.last_logged_loss = task.epoch_train_loss;
            }
            record.losses.push_back(task.last_logged_loss);
            if (task.stopped) continue;
            double val_loss = task.epoch_train_loss;
            if (!val_idx.empty()) {
                Mat xv = gather_cols(*task.inputs, val_idx, 0,
                                     static_cast<int>(val_idx.size()));
                Mat yv = gather_cols(*task.targets, val_idx, 0,
                                     static_cast<int>(val_idx.size()));
                val_loss = mse_loss(task.net, xv, yv);
            }
            if (!std::isfinite(val_loss))
                throw TrainingError("non-finite validation loss at epoch " +
                                    std::to_string(epoch));
            if (val_loss < task.best_val * (1.0 - 1e-12)) {
                task.best_val = val_loss;
                task.best_net = task.net;
                task.stale_epochs = 0;
            } else if (++task.stale_epochs >= config.patience) {
                task.stopped = true;
            }
            if (!task.stopped) all_stopped = false;
        }
        meta.log.push_back(std::move(record));
        if (all_stopped) break;
    }
    for (auto& task : tasks)
        if (!val_idx.empty()) task.net = task.best_net;
    meta.final_losses.clear();
    for (auto& task : tasks) meta.final_losses.push_back(task.last_logged_loss);
}

}  // namespace

double LearnedObserver::omega_feature(double omega_c) const {
    return condition_omega(omega_c, log_omega);
}

FilterDesign LearnedObserver::design_at(double omega_c) const {
    return build_design(omega_c, d_x, d_y);
}

Vec LearnedObserver::t_apply(const Vec& x, double omega_c) const {
    Vec in(d_x + 1);
    in.head(d_x) = x_norm.transform(x);
    in[d_x] = omega_norm.transform(
        Vec::Constant(1, omega_feature(omega_c)))[0];
    return z_norm.inverse(mlp_forward(t_net, in));
}

Vec LearnedObserver::tstar_apply(const Vec& z, double omega_c) const {
    Vec in(d_z + 1);
    in.head(d_z) = z_norm.transform(z);
    in[d_z] = omega_norm.transform(
        Vec::Constant(1, omega_feature(omega_c)))[0];
    return x_norm.inverse(mlp_forward(tstar_net, in));
}

Mat LearnedObserver::t_apply_batch(const Mat& x_cols, double omega_c) const {
    Mat in(d_x + 1, x_cols.cols());
    in.topRows(d_x) = x_norm.transform_batch(x_cols);
    in.row(d_x).setConstant(omega_norm.transform(
        Vec::Constant(1, omega_feature(omega_c)))[0]);
    return z_norm.inverse_batch(mlp_forward_batch(t_net, in));
}

Mat LearnedObserver::tstar_apply_batch(const Mat& z_cols, double omega_c) const {
    Mat in(d_z + 1, z_cols.cols());
    in.topRows(d_z) = z_norm.transform_batch(z_cols);
    in.row(d_z).setConstant(omega_norm.transform(
        Vec::Constant(1, omega_feature(omega_c)))[0]);
    return x_norm.inverse_batch(mlp_forward_batch(tstar_net, in));
}

Mat LearnedObserver::t_jacobian_x(const Vec& x, double omega_c) const {
    Vec in(d_x + 1);
    in.head(d_x) = x_norm.transform(x);
    in[d_x] = omega_norm.transform(Vec::Constant(1, omega_feature(omega_c)))[0];
    Mat jac = input_jacobian(t_net, in).leftCols(d_x);
    return z_norm.scale.asDiagonal() * jac * x_norm.scale.cwiseInverse().asDiagonal();
}

Mat LearnedObserver::tstar_jacobian_z(const Vec& z, double omega_c) const {
    Vec in(d_z + 1);
    in.head(d_z) = z_norm.transform(z);
    in[d_z] = omega_norm.transform(Vec::Constant(1, omega_feature(omega_c)))[0];
    Mat jac = input_jacobian(tstar_net, in).leftCols(d_z);
    return x_norm.scale.asDiagonal() * jac * z_norm.scale.cwiseInverse().asDiagonal();
}

NormalizerSet fit_normalizers(const Dataset& dataset, bool log_omega,
                              const std::vector<int>* subset) {
    if (dataset.pairs.empty()) throw InputError("fit_normalizers: empty dataset");
    long n = subset ? static_cast<long>(subset->size())
                    : static_cast<long>(dataset.pairs.size());
    if (n == 0) throw InputError("fit_normalizers: empty subset");
    Mat xs(dataset.d_x, n), zs(dataset.d_z, n), ws(1, n);
    for (long i = 0; i < n; ++i) {
        const TrainingPair& p =
            dataset.pairs[static_cast<size_t>(subset ? (*subset)[static_cast<size_t>(i)] : i)];
        xs.col(i) = p.x;
        zs.col(i) = p.z;
        ws(0, i) = condition_omega(p.omega_c, log_omega);
    }
    NormalizerSet set;
    set.x = Normalizer::fit(xs);
    set.z = Normalizer::fit(zs);
    set.omega = Normalizer::fit(ws);
    return set;
}

LearnedObserver train_supervised(const Dataset& dataset,
                                 const TrainConfig& config) {
    const int n = static_cast<int>(dataset.pairs.size());
    if (n < 2) throw InputError("train_supervised: need at least 2 pairs");
    const int d_x = dataset.d_x, d_z = dataset.d_z;

    Rng rng(config.seed);
    Rng split_rng = rng.fork(1);
    Rng init_rng = rng.fork(2);
    Rng shuffle_rng = rng.fork(3);

    std::vector<int> idx = shuffled_indices(n, split_rng);
    int n_val = static_cast<int>(std::lround(config.val_fraction * n));
    n_val = std::min(n_val, n - 1);
    std::vector<int> val_idx(idx.begin(), idx.begin() + n_val);
    std::vector<int> train_idx(idx.begin() + n_val, idx.end());

    LearnedObserver obs;
    obs.d_x = d_x;
    obs.d_z = d_z;
    if (d_z % (d_x + 1) != 0)
        throw InputError("train_supervised: d_z is not d_y * (d_x + 1)");
    obs.d_y = d_z / (d_x + 1);
    obs.log_omega = config.log_omega_input;
    NormalizerSet norms = fit_normalizers(dataset, config.log_omega_input,
                                          &train_idx);
    obs.x_norm = norms.x;
    obs.z_norm = norms.z;
    obs.omega_norm = norms.omega;

    // Normalized design matrices for both regression problems.
    Mat t_in(d_x + 1, n), t_target(d_z, n), s_in(d_z + 1, n), s_target(d_x, n);
    for (int i = 0; i < n; ++i) {
        const TrainingPair& p = dataset.pairs[static_cast<size_t>(i)];
        Vec xn = obs.x_norm.transform(p.x);
        Vec zn = obs.z_norm.transform(p.z);
        double wn = obs.omega_norm.transform(Vec::Constant(
            1, condition_omega(p.omega_c, obs.log_omega)))[0];
        t_in.col(i).head(d_x) = xn;
        t_in(d_x, i) = wn;
        t_target.col(i) = zn;
        s_in.col(i).head(d_z) = zn;
        s_in(d_z, i) = wn;
        s_target.col(i) = xn;
    }

    std::vector<int> t_sizes{d_x + 1};
    std::vector<int> s_sizes{d_z + 1};
    for (int hsz : config.hidden) {
        t_sizes.push_back(hsz);
        s_sizes.push_back(hsz);
    }
    t_sizes.push_back(d_z);
    s_sizes.push_back(d_x);

    AdamConfig adam{config.learning_rate};
    std::vector<NetTask> tasks;
    tasks.emplace_back(make_mlp(t_sizes, init_rng.next_u64(), config.activation),
                       adam, &t_in, &t_target);
    tasks.emplace_back(make_mlp(s_sizes, init_rng.next_u64(), config.activation),
                       adam, &s_in, &s_target);

    obs.meta.config = config;
    obs.meta.log_labels = {"loss_T", "loss_Tstar"};
    run_lockstep_training(tasks, train_idx, val_idx, config, shuffle_rng,
                          obs.meta);
    obs.t_net = std::move(tasks[0].net);
    obs.tstar_net = std::move(tasks[1].net);
    log_info("supervised training done: loss_T=" +
             format_double(obs.meta.final_losses[0]) + " loss_Tstar=" +
             format_double(obs.meta.final_losses[1]));
    return obs;
}

void fine_tune(LearnedObserver& observer, const Dataset& dataset,
               const TrainConfig& config, std::optional<double> omega_c) {
    std::vector<const TrainingPair*> selected;
    if (omega_c) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& p : dataset.pairs)
            best = std::min(best, std::abs(p.omega_c - *omega_c));
        for (const auto& p : dataset.pairs)
            if (std::abs(p.omega_c - *omega_c) <= best * (1.0 + 1e-12))
                selected.push_back(&p);
    } else {
        for (const auto& p : dataset.pairs) selected.push_back(&p);
    }
    const int n = static_cast<int>(selected.size());
    if (n < 2) throw InputError("fine_tune: not enough pairs selected");
    const int d_x = observer.d_x, d_z = observer.d_z;

    Mat t_in(d_x + 1, n), t_target(d_z, n), s_in(d_z + 1, n), s_target(d_x, n);
    for (int i = 0; i < n; ++i) {
        const TrainingPair& p = *selected[static_cast<size_t>(i)];
        Vec xn = observer.x_norm.transform(p.x);
        Vec zn = observer.z_norm.transform(p.z);
        double wn = observer.omega_norm.transform(Vec::Constant(
            1, condition_omega(p.omega_c, observer.log_omega)))[0];
        t_in.col(i).head(d_x) = xn;
        t_in(d_x, i) = wn;
        t_target.col(i) = zn;
        s_in.col(i).head(d_z) = zn;
        s_in(d_z, i) = wn;
        s_target.col(i) = xn;
    }

    Rng rng(config.seed);
    Rng split_rng = rng.fork(1);
    Rng shuffle_rng = rng.fork(3);
    std::vector<int> idx = shuffled_indices(n, split_rng);
    int n_val = std::min(static_cast<int>(std::lround(config.val_fraction * n)),
                         n - 1);
    std::vector<int> val_idx(idx.begin(), idx.begin() + n_val);
    std::vector<int> train_idx(idx.begin() + n_val, idx.end());

    AdamConfig adam{config.learning_rate};
    std::vector<NetTask> tasks;
    tasks.emplace_back(observer.t_net, adam, &t_in, &t_target);
    tasks.emplace_back(observer.tstar_net, adam, &s_in, &s_target);
    TrainMeta meta;
    meta.config = config;
    meta.log_labels = {"loss_T", "loss_Tstar"};
    run_lockstep_training(tasks, train_idx, val_idx, config, shuffle_rng, meta);
    observer.t_net = std::move(tasks[0].net);
    observer.tstar_net = std::move(tasks[1].net);
    observer.meta.log.insert(observer.meta.log.end(), meta.log.begin(),
                             meta.log.end());
    observer.meta.final_losses = meta.final_losses;
}

// ---------------------------------------------------------------------------
// Autoencoder
// ---------------------------------------------------------------------------

PoleParametrization PoleParametrization::from_poles(
    const std::vector<Complex>& poles) {
    std::vector<Complex> sorted = poles;
    sort_poles(sorted);
    PoleParametrization pp;
    for (size_t i = 0; i < sorted.size();) {
        const Complex& p = sorted[i];
        if (p.real() >= 0)
            throw InputError("pole parametrization: pole not in open left half plane");
        if (p.imag() == 0.0) {
            pp.rho_real.push_back(std::log(-p.real()));
            i += 1;
        } else {
            pp.pairs.emplace_back(std::log(-p.real()), std::abs(p.imag()));
            i += 2;
        }
    }
    return pp;
}

std::vector<Complex> PoleParametrization::to_poles() const {
    std::vector<Complex> poles;
    for (double rho : rho_real) poles.emplace_back(-std::exp(rho), 0.0);
    for (const auto& [rho, mu] : pairs) {
        poles.emplace_back(-std::exp(rho), mu);
        poles.emplace_back(-std::exp(rho), -mu);
    }
    return poles;
}

Mat PoleParametrization::assemble() const {
    long n = static_cast<long>(rho_real.size() + 2 * pairs.size());
    Mat D = Mat::Zero(n, n);
    long pos = 0;
    for (double rho : rho_real) {
        D(pos, pos) = -std::exp(rho);
        ++pos;
    }
    for (const auto& [rho, mu] : pairs) {
        double re = -std::exp(rho);
        D(pos, pos) = re;
        D(pos, pos + 1) = mu;
        D(pos + 1, pos) = -mu;
        D(pos + 1, pos + 1) = re;
        pos += 2;
    }
    return D;
}

long PoleParametrization::dim() const {
    return static_cast<long>(rho_real.size() + 2 * pairs.size());
}

Vec PoleParametrization::pack() const {
    Vec v(static_cast<long>(rho_real.size() + 2 * pairs.size()));
    long i = 0;
    for (double rho : rho_real) v[i++] = rho;
    for (const auto& [rho, mu] : pairs) {
        v[i++] = rho;
        v[i++] = mu;
    }
    return v;
}

void PoleParametrization::unpack(const Vec& v) {
    long i = 0;
    for (double& rho : rho_real) rho = v[i++];
    for (auto& [rho, mu] : pairs) {
        rho = v[i++];
        mu = v[i++];
    }
}

Vec PoleParametrization::grad_from_dD(const Mat& dL_dD) const {
    Vec g(static_cast<long>(rho_real.size() + 2 * pairs.size()));
    long i = 0;
    long pos = 0;
    for (double rho : rho_real) {
        g[i++] = dL_dD(pos, pos) * (-std::exp(rho));
        ++pos;
    }
    for (const auto& [rho, mu] : pairs) {
        (void)mu;
        g[i++] = (dL_dD(pos, pos) + dL_dD(pos + 1, pos + 1)) * (-std::exp(rho));
        g[i++] = dL_dD(pos, pos + 1) - dL_dD(pos + 1, pos);
        pos += 2;
    }
    return g;
}

Vec AutoencoderModel::encode(const Vec& x) const {
    return mlp_forward(encoder, x_norm.transform(x));
}

Vec AutoencoderModel::decode(const Vec& z) const {
    return x_norm.inverse(mlp_forward(decoder, z));
}

Mat AutoencoderModel::encode_batch(const Mat& x_cols) const {
    return mlp_forward_batch(encoder, x_norm.transform_batch(x_cols));
}

Mat AutoencoderModel::decode_batch(const Mat& z_cols) const {
    return x_norm.inverse_batch(mlp_forward_batch(decoder, z_cols));
}

Mat AutoencoderModel::encoder_jacobian_x(const Vec& x) const {
    Mat jac = input_jacobian(encoder, x_norm.transform(x));
    return jac * x_norm.scale.cwiseInverse().asDiagonal();
}

Mat AutoencoderModel::decoder_jacobian_z(const Vec& z) const {
    return x_norm.scale.asDiagonal() * input_jacobian(decoder, z);
}

namespace {

// PDE residual batch shared by training and pde_residual(): columns are
// samples, everything in raw coordinates except the encoder input.
Mat ae_residual_batch(const MlpParams& encoder, const Normalizer& x_norm,
                      const Mat& D, const Mat& F, const Mat& x_raw,
                      const Mat& f_raw, const Mat& h_raw, MlpCache* cache_out,
                      MlpJvpCache* jvp_out, Mat* z_out, Mat* tangents_out) {
    MlpCache local_cache;
    MlpJvpCache local_jvp;
    MlpCache& cache = cache_out ? *cache_out : local_cache;
    MlpJvpCache& jvp = jvp_out ? *jvp_out : local_jvp;
    Mat xn = x_norm.transform_batch(x_raw);
    Mat tangents = f_raw.array().colwise() / x_norm.scale.array();
    Mat z = forward_cached(encoder, xn, cache);
    Mat u = forward_jvp_cached(encoder, cache, tangents, jvp);
    Mat residual = u - D * z - F * h_raw;
    if (z_out) *z_out = std::move(z);
    if (tangents_out) *tangents_out = std::move(tangents);
    return residual;
}

}  // namespace

AutoencoderModel train_autoencoder(const std::vector<Vec>& x_samples,
                                   const SystemModel& system,
                                   double lambda_weight,
                                   const FilterDesign& d_init, bool optimize_d,
                                   const TrainConfig& config) {
    if (lambda_weight <= 0)
        throw InputError("train_autoencoder: lambda_weight must be positive");
    const int n = static_cast<int>(x_samples.size());
    if (n < 2) throw InputError("train_autoencoder: need at least 2 samples");
    const int d_x = system.d_x, d_y = system.d_y, d_z = d_init.d_z;

    Rng rng(config.seed);
    Rng split_rng = rng.fork(1);
    Rng init_rng = rng.fork(2);
    Rng shuffle_rng = rng.fork(3);

    std::vector<int> idx = shuffled_indices(n, split_rng);
    int n_val = std::min(static_cast<int>(std::lround(config.val_fraction * n)),
                         n - 1);
    std::vector<int> val_idx(idx.begin(), idx.begin() + n_val);
    std::vector<int> train_idx(idx.begin() + n_val, idx.end());

    AutoencoderModel model;
    model.d_x = d_x;
    model.d_y = d_y;
    model.d_z = d_z;
    model.lambda_weight = lambda_weight;
    model.d_trainable = optimize_d;
    model.F = d_init.F;
    model.initial_poles = d_init.poles;
    model.pole_params = PoleParametrization::from_poles(d_init.poles);
    model.D = optimize_d ? model.pole_params.assemble() : d_init.D;

    // Raw data matrices; f and h are fixed features of the samples.
    Mat x_raw(d_x, n), f_raw(d_x, n), h_raw(d_y, n);
    Vec fx(d_x), hx(d_y);
    for (int i = 0; i < n; ++i) {
        const Vec& x = x_samples[static_cast<size_t>(i)];
        if (x.size() != d_x) throw InputError("train_autoencoder: sample size");
        x_raw.col(i) = x;
        system.f(x, fx);
        system.h(x, hx);
        f_raw.col(i) = fx;
        h_raw.col(i) = hx;
    }
    {
        Mat x_train(d_x, static_cast<long>(train_idx.size()));
        for (size_t i = 0; i < train_idx.size(); ++i)
            x_train.col(static_cast<long>(i)) =
                x_raw.col(train_idx[i]);
        model.x_norm = Normalizer::fit(x_train);
    }

    std::vector<int> enc_sizes{d_x};
    std::vector<int> dec_sizes{d_z};
    for (int hsz : config.hidden) {
        enc_sizes.push_back(hsz);
        dec_sizes.push_back(hsz);
    }
    enc_sizes.push_back(d_z);
    dec_sizes.push_back(d_x);
    model.encoder = make_mlp(enc_sizes, init_rng.next_u64(), config.activation);
    model.decoder = make_mlp(dec_sizes, init_rng.next_u64(), config.activation);

    AdamConfig adam_config{config.learning_rate};
    MlpAdam enc_adam(model.encoder, adam_config);
    MlpAdam dec_adam(model.decoder, adam_config);
    AdamConfig pole_adam_config = adam_config;
    pole_adam_config.learning_rate *= config.pole_lr_scale;
    VecAdam pole_adam(model.pole_params.dim(), pole_adam_config);
    MlpGrads enc_grads, dec_grads;
    enc_grads.init_like(model.encoder);
    dec_grads.init_like(model.decoder);

    const int batch = std::max(1, std::min(config.batch_size,
                                           static_cast<int>(train_idx.size())));
    std::vector<int> order = train_idx;

    auto eval_losses = [&](const std::vector<int>& subset, double* recon_out,
                           double* pde_out) {
        Mat xb(d_x, static_cast<long>(subset.size()));
        Mat fb(d_x, static_cast<long>(subset.size()));
        Mat hb(d_y, static_cast<long>(subset.size()));
        for (size_t i = 0; i < subset.size(); ++i) {
            xb.col(static_cast<long>(i)) = x_raw.col(subset[i]);
            fb.col(static_cast<long>(i)) = f_raw.col(subset[i]);
            hb.col(static_cast<long>(i)) = h_raw.col(subset[i]);
        }
        Mat z;
        Mat residual = ae_residual_batch(model.encoder, model.x_norm, model.D,
                                         model.F, xb, fb, hb, nullptr, nullptr,
                                         &z, nullptr);
        Mat xn = model.x_norm.transform_batch(xb);
        Mat recon_err = mlp_forward_batch(model.decoder, z) - xn;
        double inv_b = 1.0 / static_cast<double>(subset.size());
        double recon = 0.5 * recon_err.squaredNorm() * inv_b;
        double pde = 0.5 * residual.squaredNorm() * inv_b;
        if (recon_out) *recon_out = recon;
        if (pde_out) *pde_out = pde;
        return lambda_weight * recon + pde;
    };

    struct Best {
        double val = std::numeric_limits<double>::infinity();
        MlpParams enc, dec;
        Mat D;
        Vec pole_vec;
    } best;
    int stale = 0;
    model.meta.config = config;
    model.meta.log_labels = {"loss_total", "loss_recon", "loss_pde"};

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double lr = scheduled_lr(config, epoch);
        enc_adam.set_learning_rate(lr);
        dec_adam.set_learning_rate(lr);
        pole_adam.set_learning_rate(lr * config.pole_lr_scale);
        double epoch_total = 0.0, epoch_recon = 0.0, epoch_pde = 0.0;
        for (size_t start = 0; start < order.size();
             start += static_cast<size_t>(batch)) {
            size_t end = std::min(order.size(), start + static_cast<size_t>(batch));
            long b = static_cast<long>(end - start);
            Mat xb(d_x, b), fb(d_x, b), hb(d_y, b);
            for (long i = 0; i < b; ++i) {
                int col = order[start + static_cast<size_t>(i)];
                xb.col(i) = x_raw.col(col);
                fb.col(i) = f_raw.col(col);
                hb.col(i) = h_raw.col(col);
            }
            MlpCache enc_cache, dec_cache;
            MlpJvpCache enc_jvp;
            Mat z, tangents;
            Mat residual =
                ae_residual_batch(model.encoder, model.x_norm, model.D, model.F,
                                  xb, fb, hb, &enc_cache, &enc_jvp, &z,
                                  &tangents);
            Mat xn = model.x_norm.transform_batch(xb);
            Mat xhat_n = forward_cached(model.decoder, z, dec_cache);
            Mat recon_err = xhat_n - xn;

            double inv_b = 1.0 / static_cast<double>(b);
            double loss_recon = 0.5 * recon_err.squaredNorm() * inv_b;
            double loss_pde = 0.5 * residual.squaredNorm() * inv_b;
            double loss = lambda_weight * loss_recon + loss_pde;
            if (!std::isfinite(loss))
                throw TrainingError("non-finite autoencoder loss at epoch " +
                                    std::to_string(epoch));
            epoch_total += loss * static_cast<double>(b);
            epoch_recon += loss_recon * static_cast<double>(b);
            epoch_pde += loss_pde * static_cast<double>(b);

            dec_grads.set_zero();
            enc_grads.set_zero();
            Mat dz_from_dec =
                backward(model.decoder, dec_cache,
                         Mat(lambda_weight * inv_b * recon_err), dec_grads,
                         /*want_input_grad=*/true);
            Mat d_residual = residual * inv_b;  // dL/d(residual)
            Mat dz = dz_from_dec - model.D.transpose() * d_residual;
            backward_jvp(model.encoder, enc_cache, enc_jvp, dz, d_residual,
                         enc_grads);
            enc_adam.step(model.encoder, enc_grads);
            dec_adam.step(model.decoder, dec_grads);
            if (optimize_d) {
                Mat dD = -d_residual * z.transpose();
                Vec pole_vec = model.pole_params.pack();
                Vec pole_grad = model.pole_params.grad_from_dD(dD);
                pole_adam.step(pole_vec, pole_grad);
                model.pole_params.unpack(pole_vec);
                model.D = model.pole_params.assemble();
            }
        }
        double n_train = static_cast<double>(order.size());
        EpochRecord record;
        record.epoch = epoch;
        record.losses = {epoch_total / n_train, epoch_recon / n_train,
                         epoch_pde / n_train};
        model.meta.log.push_back(record);

        double val_loss = val_idx.empty() ? epoch_total / n_train
                                          : eval_losses(val_idx, nullptr, nullptr);
        if (!std::isfinite(val_loss))
            throw TrainingError("non-finite autoencoder validation loss");
        if (val_loss < best.val * (1.0 - 1e-12)) {
            best.val = val_loss;
            best.enc = model.encoder;
            best.dec = model.decoder;
            best.D = model.D;
            best.pole_vec = model.pole_params.pack();
            stale = 0;
        } else if (++stale >= config.patience) {
            break;
        }
    }
    if (!val_idx.empty() && best.val < std::numeric_limits<double>::infinity()) {
        model.encoder = best.enc;
        model.decoder = best.dec;
        if (optimize_d) {
            model.pole_params.unpack(best.pole_vec);
            model.D = best.D;
        }
    }
    model.meta.final_losses = model.meta.log.empty()
                                  ? std::vector<double>{}
                                  : model.meta.log.back().losses;
    return model;
}

Vec pde_residual(const LearnedObserver& observer, const SystemModel& system,
                 const Vec& x, double omega_c) {
    FilterDesign design = observer.design_at(omega_c);
    Mat jac = observer.t_jacobian_x(x, omega_c);
    Vec t_of_x = observer.t_apply(x, omega_c);
    return jac * system.f_eval(x) - design.D * t_of_x -
           design.F * system.h_eval(x);
}

Vec pde_residual(const AutoencoderModel& model, const SystemModel& system,
                 const Vec& x) {
    Mat residual = ae_residual_batch(model.encoder, model.x_norm, model.D,
                                     model.F, x, system.f_eval(x),
                                     system.h_eval(x), nullptr, nullptr,
                                     nullptr, nullptr);
    return residual.col(0);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

nlohmann::json train_meta_to_json(const TrainMeta& meta) {
    nlohmann::json j;
    j["config"] = train_config_to_json(meta.config);
    j["config_digest"] = meta.config_digest;
    j["log_labels"] = meta.log_labels;
    auto log = nlohmann::json::array();
    for (const auto& rec : meta.log)
        log.push_back({{"epoch", rec.epoch}, {"losses", rec.losses}});
    j["log"] = log;
    j["final_losses"] = meta.final_losses;
    return j;
}

TrainMeta train_meta_from_json(const nlohmann::json& j) {
    TrainMeta meta;
    meta.config = train_config_from_json(j.at("config"));
    meta.config_digest = j.value("config_digest", "");
    meta.log_labels = j.at("log_labels").get<std::vector<std::string>>();
    for (const auto& rec : j.at("log")) {
        EpochRecord r;
        r.epoch = rec.at("epoch").get<int>();
        r.losses = rec.at("losses").get<std::vector<double>>();
        meta.log.push_back(std::move(r));
    }
    meta.final_losses = j.at("final_losses").get<std::vector<double>>();
    return meta;
}

std::vector<double> mat_flat(const Mat& m) {
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(m.size()));
    for (long i = 0; i < m.rows(); ++i)
        for (long c = 0; c < m.cols(); ++c) flat.push_back(m(i, c));
    return flat;
}

Mat mat_unflat(const std::vector<double>& flat, long rows, long cols) {
    if (static_cast<long>(flat.size()) != rows * cols)
        throw InputError("checkpoint: matrix size mismatch");
    Mat m(rows, cols);
    for (long i = 0; i < rows; ++i)
        for (long c = 0; c < cols; ++c)
            m(i, c) = flat[static_cast<size_t>(i * cols + c)];
    return m;
}

}  // namespace

nlohmann::json observer_to_json(const LearnedObserver& observer) {
    nlohmann::json j;
    j["kind"] = "supervised";
    j["d_x"] = observer.d_x;
    j["d_y"] = observer.d_y;
    j["d_z"] = observer.d_z;
    j["log_omega"] = observer.log_omega;
    j["t_net"] = mlp_to_json(observer.t_net);
    j["tstar_net"] = mlp_to_json(observer.tstar_net);
    j["x_norm"] = normalizer_to_json(observer.x_norm);
    j["z_norm"] = normalizer_to_json(observer.z_norm);
    j["omega_norm"] = normalizer_to_json(observer.omega_norm);
    j["meta"] = train_meta_to_json(observer.meta);
    return j;
}

LearnedObserver observer_from_json(const nlohmann::json& j) {
    if (j.at("kind").get<std::string>() != "supervised")
        throw InputError("checkpoint kind is not 'supervised'");
    LearnedObserver obs;
    obs.d_x = j.at("d_x").get<int>();
    obs.d_y = j.at("d_y").get<int>();
    obs.d_z = j.at("d_z").get<int>();
    obs.log_omega = j.at("log_omega").get<bool>();
    obs.t_net = mlp_from_json(j.at("t_net"));
    obs.tstar_net = mlp_from_json(j.at("tstar_net"));
    obs.x_norm = normalizer_from_json(j.at("x_norm"));
    obs.z_norm = normalizer_from_json(j.at("z_norm"));
    obs.omega_norm = normalizer_from_json(j.at("omega_norm"));
    obs.meta = train_meta_from_json(j.at("meta"));
    return obs;
}

nlohmann::json autoencoder_to_json(const AutoencoderModel& model) {
    nlohmann::json j;
    j["kind"] = "autoencoder";
    j["d_x"] = model.d_x;
    j["d_y"] = model.d_y;
    j["d_z"] = model.d_z;
    j["encoder"] = mlp_to_json(model.encoder);
    j["decoder"] = mlp_to_json(model.decoder);
    j["D"] = mat_flat(model.D);
    j["F"] = mat_flat(model.F);
    j["lambda_weight"] = model.lambda_weight;
    j["d_trainable"] = model.d_trainable;
    j["pole_rho_real"] = model.pole_params.rho_real;
    auto pairs = nlohmann::json::array();
    for (const auto& [rho, mu] : model.pole_params.pairs)
        pairs.push_back({rho, mu});
    j["pole_pairs"] = pairs;
    auto init_poles = nlohmann::json::array();
    for (const auto& p : model.initial_poles)
        init_poles.push_back({p.real(), p.imag()});
    j["initial_poles"] = init_poles;
    j["x_norm"] = normalizer_to_json(model.x_norm);
    j["meta"] = train_meta_to_json(model.meta);
    return j;
}

AutoencoderModel autoencoder_from_json(const nlohmann::json& j) {
    if (j.at("kind").get<std::string>() != "autoencoder")
        throw InputError("checkpoint kind is not 'autoencoder'");
    AutoencoderModel model;
    model.d_x = j.at("d_x").get<int>();
    model.d_y = j.at("d_y").get<int>();
    model.d_z = j.at("d_z").get<int>();
    model.encoder = mlp_from_json(j.at("encoder"));
    model.decoder = mlp_from_json(j.at("decoder"));
    model.D = mat_unflat(j.at("D").get<std::vector<double>>(), model.d_z, model.d_z);
    model.F = mat_unflat(j.at("F").get<std::vector<double>>(), model.d_z, model.d_y);
    model.lambda_weight = j.at("lambda_weight").get<double>();
    model.d_trainable = j.at("d_trainable").get<bool>();
    model.pole_params.rho_real =
        j.at("pole_rho_real").get<std::vector<double>>();
    for (const auto& pr : j.at("pole_pairs"))
        model.pole_params.pairs.emplace_back(pr.at(0).get<double>(),
                                             pr.at(1).get<double>());
    for (const auto& p : j.at("initial_poles"))
        model.initial_poles.emplace_back(p.at(0).get<double>(),
                                         p.at(1).get<double>());
    model.x_norm = normalizer_from_json(j.at("x_norm"));
    model.meta = train_meta_from_json(j.at("meta"));
    return model;
}

void save_checkpoint(const nlohmann::json& j, const std::string& path) {
    write_text_file(path, j.dump(2) + "\n");
}

nlohmann::json load_checkpoint(const std::string& path) {
    return nlohmann::json::parse(read_text_file(path));
}

void write_training_log_csv(const TrainMeta& meta, const std::string& path) {
    std::vector<std::string> header{"epoch"};
    header.insert(header.end(), meta.log_labels.begin(), meta.log_labels.end());
    std::vector<std::vector<double>> rows;
    rows.reserve(meta.log.size());
    for (const auto& rec : meta.log) {
        std::vector<double> row{static_cast<double>(rec.epoch)};
        row.insert(row.end(), rec.losses.begin(), rec.losses.end());
        rows.push_back(std::move(row));
    }
    write_csv(path, header, rows,
              meta.config_digest.empty() ? ""
                                         : "config_digest=" + meta.config_digest);
}

nlohmann::json train_config_to_json(const TrainConfig& config) {
    nlohmann::json j;
    j["hidden"] = config.hidden;
    j["activation"] = activation_name(config.activation);
    j["learning_rate"] = config.learning_rate;
    j["lr_schedule"] = config.lr_schedule;
    j["batch_size"] = config.batch_size;
    j["max_epochs"] = config.max_epochs;
    j["val_fraction"] = config.val_fraction;
    j["patience"] = config.patience;
    j["log_omega_input"] = config.log_omega_input;
    j["pole_lr_scale"] = config.pole_lr_scale;
    j["seed"] = config.seed;
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig config;
    config.hidden = j.at("hidden").get<std::vector<int>>();
    config.activation = activation_from_name(j.at("activation").get<std::string>());
    config.learning_rate = j.at("learning_rate").get<double>();
    config.lr_schedule = j.value("lr_schedule", "constant");
    config.batch_size = j.at("batch_size").get<int>();
    config.max_epochs = j.at("max_epochs").get<int>();
    config.val_fraction = j.at("val_fraction").get<double>();
    config.patience = j.at("patience").get<int>();
    config.log_omega_input = j.at("log_omega_input").get<bool>();
    config.pole_lr_scale = j.value("pole_lr_scale", 0.1);
    config.seed = j.at("seed").get<uint64_t>();
    return config;
}

}  // namespace kkl
