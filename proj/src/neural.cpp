#include "kkl/neural.hpp"

#include <cmath>

namespace kkl {

namespace {

inline double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

inline double apply_act(Activation a, double u) {
    return a == Activation::Silu ? silu(u) : u;
}
inline double apply_act_deriv(Activation a, double u) {
    return a == Activation::Silu ? silu_deriv(u) : 1.0;
}
inline double apply_act_second(Activation a, double u) {
    return a == Activation::Silu ? silu_second_deriv(u) : 0.0;
}

}  // namespace

double silu(double u) { return u * sigmoid(u); }

double silu_deriv(double u) {
    double s = sigmoid(u);
    return s * (1.0 + u * (1.0 - s));
}

double silu_second_deriv(double u) {
    double s = sigmoid(u);
    double sp = s * (1.0 - s);
    return sp * (2.0 + u * (1.0 - 2.0 * s));
}

std::string activation_name(Activation a) {
    return a == Activation::Silu ? "silu" : "identity";
}

Activation activation_from_name(const std::string& name) {
    if (name == "silu") return Activation::Silu;
    if (name == "identity") return Activation::Identity;
    throw ConfigError("unknown activation: " + name);
}

long MlpParams::param_count() const {
    long n = 0;
    for (const auto& w : weights) n += w.size();
    for (const auto& b : biases) n += b.size();
    return n;
}

bool MlpParams::all_finite() const {
    for (const auto& w : weights)
        if (!w.allFinite()) return false;
    for (const auto& b : biases)
        if (!b.allFinite()) return false;
    return true;
}

void MlpParams::validate() const {
    if (layer_sizes.size() < 2) throw InputError("mlp: need >= 2 layer sizes");
    if (weights.size() + 1 != layer_sizes.size() || biases.size() != weights.size())
        throw InputError("mlp: layer count mismatch");
    for (size_t k = 0; k < weights.size(); ++k) {
        if (weights[k].rows() != layer_sizes[k + 1] ||
            weights[k].cols() != layer_sizes[k] ||
            biases[k].size() != layer_sizes[k + 1])
            throw InputError("mlp: shape chain broken at layer " +
                             std::to_string(k));
    }
}

MlpParams make_mlp(const std::vector<int>& layer_sizes, uint64_t seed,
                   Activation activation) {
    if (layer_sizes.size() < 2) throw InputError("make_mlp: need >= 2 sizes");
    for (int s : layer_sizes)
        if (s < 1) throw InputError("make_mlp: layer sizes must be positive");
    MlpParams net;
    net.layer_sizes = layer_sizes;
    net.activation = activation;
    Rng rng(seed);
    for (size_t k = 0; k + 1 < layer_sizes.size(); ++k) {
        long rows = layer_sizes[k + 1], cols = layer_sizes[k];
        double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
        Mat w(rows, cols);
        for (long j = 0; j < cols; ++j)
            for (long i = 0; i < rows; ++i) w(i, j) = rng.uniform(-bound, bound);
        net.weights.push_back(std::move(w));
        net.biases.push_back(Vec::Zero(rows));
    }
    return net;
}

Mat forward_cached(const MlpParams& net, const Mat& inputs, MlpCache& cache) {
    if (inputs.rows() != net.input_dim())
        throw InputError("mlp forward: input dimension mismatch");
    int L = net.layer_count();
    cache.acts.assign(static_cast<size_t>(L) + 1, Mat());
    cache.preacts.assign(static_cast<size_t>(L), Mat());
    cache.acts[0] = inputs;
    for (int k = 0; k < L; ++k) {
        Mat& pre = cache.preacts[static_cast<size_t>(k)];
        pre.noalias() = net.weights[static_cast<size_t>(k)] * cache.acts[static_cast<size_t>(k)];
        pre.colwise() += net.biases[static_cast<size_t>(k)];
        if (k + 1 == L) {
            cache.acts[static_cast<size_t>(k) + 1] = pre;
        } else {
            cache.acts[static_cast<size_t>(k) + 1] =
                pre.unaryExpr([&](double u) { return apply_act(net.activation, u); });
        }
    }
    return cache.acts.back();
}

Mat mlp_forward_batch(const MlpParams& net, const Mat& inputs) {
    MlpCache cache;
    return forward_cached(net, inputs, cache);
}

Vec mlp_forward(const MlpParams& net, const Vec& input) {
    return mlp_forward_batch(net, input).col(0);
}

Mat forward_jvp_cached(const MlpParams& net, const MlpCache& cache,
                       const Mat& tangents, MlpJvpCache& jvp_cache) {
    int L = net.layer_count();
    if (tangents.rows() != net.input_dim())
        throw InputError("mlp jvp: tangent dimension mismatch");
    jvp_cache.tacts.assign(static_cast<size_t>(L) + 1, Mat());
    jvp_cache.tpreacts.assign(static_cast<size_t>(L), Mat());
    jvp_cache.tacts[0] = tangents;
    for (int k = 0; k < L; ++k) {
        Mat& tpre = jvp_cache.tpreacts[static_cast<size_t>(k)];
        tpre.noalias() =
            net.weights[static_cast<size_t>(k)] * jvp_cache.tacts[static_cast<size_t>(k)];
        if (k + 1 == L) {
            jvp_cache.tacts[static_cast<size_t>(k) + 1] = tpre;
        } else {
            const Mat& pre = cache.preacts[static_cast<size_t>(k)];
            jvp_cache.tacts[static_cast<size_t>(k) + 1] =
                pre.binaryExpr(tpre, [&](double u, double t) {
                    return apply_act_deriv(net.activation, u) * t;
                });
        }
    }
    return jvp_cache.tacts.back();
}

std::pair<Vec, Vec> forward_jvp(const MlpParams& net, const Vec& input,
                                const Vec& tangent) {
    MlpCache cache;
    MlpJvpCache jvp_cache;
    Mat y = forward_cached(net, input, cache);
    Mat u = forward_jvp_cached(net, cache, tangent, jvp_cache);
    return {y.col(0), u.col(0)};
}

Mat input_jacobian(const MlpParams& net, const Vec& input) {
    int n_in = net.input_dim();
    // Batch the same input n_in times with identity tangents.
    Mat inputs = input.replicate(1, n_in);
    MlpCache cache;
    MlpJvpCache jvp_cache;
    forward_cached(net, inputs, cache);
    Mat jac = forward_jvp_cached(net, cache, Mat::Identity(n_in, n_in), jvp_cache);
    return jac;  // column j = J e_j, so this already is d(out)/d(in)
}

void MlpGrads::init_like(const MlpParams& net) {
    d_weights.clear();
    d_biases.clear();
    for (size_t k = 0; k < net.weights.size(); ++k) {
        d_weights.push_back(Mat::Zero(net.weights[k].rows(), net.weights[k].cols()));
        d_biases.push_back(Vec::Zero(net.biases[k].size()));
    }
}

void MlpGrads::set_zero() {
    for (auto& w : d_weights) w.setZero();
    for (auto& b : d_biases) b.setZero();
}

double MlpGrads::squared_norm() const {
    double total = 0.0;
    for (const auto& w : d_weights) total += w.squaredNorm();
    for (const auto& b : d_biases) total += b.squaredNorm();
    return total;
}

Mat backward(const MlpParams& net, const MlpCache& cache, const Mat& output_grad,
             MlpGrads& grads, bool want_input_grad) {
    int L = net.layer_count();
    Mat ga = output_grad;  // gradient wrt current pre-activation
    for (int k = L - 1; k >= 0; --k) {
        if (k != L - 1) {
            // arriving grad is wrt acts[k+1]; pull through the activation
            ga = ga.binaryExpr(cache.preacts[static_cast<size_t>(k)],
                               [&](double g, double u) {
                                   return g * apply_act_deriv(net.activation, u);
                               });
        }
        grads.d_weights[static_cast<size_t>(k)].noalias() +=
            ga * cache.acts[static_cast<size_t>(k)].transpose();
        grads.d_biases[static_cast<size_t>(k)] += ga.rowwise().sum();
        if (k > 0 || want_input_grad)
            ga = (net.weights[static_cast<size_t>(k)].transpose() * ga).eval();
    }
    return want_input_grad ? ga : Mat();
}

void backward_jvp(const MlpParams& net, const MlpCache& cache,
                  const MlpJvpCache& jvp_cache, const Mat& output_grad,
                  const Mat& tangent_grad, MlpGrads& grads, Mat* input_grad) {
    int L = net.layer_count();
    Mat gs = output_grad;   // dL/d acts[k+1]
    Mat gr = tangent_grad;  // dL/d tacts[k+1]
    Mat ga, gt;
    for (int k = L - 1; k >= 0; --k) {
        if (k == L - 1) {
            ga = gs;
            gt = gr;
        } else {
            const Mat& pre = cache.preacts[static_cast<size_t>(k)];
            const Mat& tpre = jvp_cache.tpreacts[static_cast<size_t>(k)];
            // acts[k+1] = phi(pre), tacts[k+1] = phi'(pre) .* tpre
            ga.resizeLike(gs);
            gt.resizeLike(gr);
            for (long j = 0; j < pre.cols(); ++j)
                for (long i = 0; i < pre.rows(); ++i) {
                    double u = pre(i, j);
                    double d1 = apply_act_deriv(net.activation, u);
                    double d2 = apply_act_second(net.activation, u);
                    ga(i, j) = gs(i, j) * d1 + gr(i, j) * d2 * tpre(i, j);
                    gt(i, j) = gr(i, j) * d1;
                }
        }
        grads.d_weights[static_cast<size_t>(k)].noalias() +=
            ga * cache.acts[static_cast<size_t>(k)].transpose();
        grads.d_weights[static_cast<size_t>(k)].noalias() +=
            gt * jvp_cache.tacts[static_cast<size_t>(k)].transpose();
        grads.d_biases[static_cast<size_t>(k)] += ga.rowwise().sum();
        if (k > 0 || input_grad) {
            gs = (net.weights[static_cast<size_t>(k)].transpose() * ga).eval();
            gr = (net.weights[static_cast<size_t>(k)].transpose() * gt).eval();
        }
    }
    if (input_grad) *input_grad = gs;
}

double mse_loss_and_grad(const MlpParams& net, const Mat& inputs,
                         const Mat& targets, MlpGrads& grads) {
    if (targets.rows() != net.output_dim() || targets.cols() != inputs.cols())
        throw InputError("mse: target shape mismatch");
    if (inputs.cols() == 0) throw InputError("mse: empty batch");
    MlpCache cache;
    Mat out = forward_cached(net, inputs, cache);
    Mat err = out - targets;
    double batch = static_cast<double>(inputs.cols());
    backward(net, cache, Mat(err / batch), grads);
    return 0.5 * err.squaredNorm() / batch;
}

double mse_loss(const MlpParams& net, const Mat& inputs, const Mat& targets) {
    Mat out = mlp_forward_batch(net, inputs);
    return 0.5 * (out - targets).squaredNorm() / static_cast<double>(inputs.cols());
}

Normalizer Normalizer::fit(const Mat& samples) {
    if (samples.cols() < 1) throw InputError("normalizer: empty sample set");
    Normalizer n;
    n.mean = samples.rowwise().mean();
    Mat centered = samples.colwise() - n.mean;
    Vec var = centered.array().square().rowwise().mean().matrix();
    n.scale = var.array().sqrt().max(1e-8).matrix();
    for (long i = 0; i < n.scale.size(); ++i)
        if (n.scale[i] <= 1e-8)
            log_warn("normalizer: component " + std::to_string(i + 1) +
                     " has (near) zero variance; scale floored at 1e-8");
    return n;
}

Normalizer Normalizer::identity(int dim) {
    Normalizer n;
    n.mean = Vec::Zero(dim);
    n.scale = Vec::Ones(dim);
    return n;
}

MlpAdam::MlpAdam(const MlpParams& shape, const AdamConfig& config)
    : config_(config) {
    for (size_t k = 0; k < shape.weights.size(); ++k) {
        m_w_.push_back(Mat::Zero(shape.weights[k].rows(), shape.weights[k].cols()));
        v_w_.push_back(Mat::Zero(shape.weights[k].rows(), shape.weights[k].cols()));
        m_b_.push_back(Vec::Zero(shape.biases[k].size()));
        v_b_.push_back(Vec::Zero(shape.biases[k].size()));
    }
}

void MlpAdam::step(MlpParams& params, const MlpGrads& grads) {
    ++t_;
    double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    double lr = config_.learning_rate;
    for (size_t k = 0; k < params.weights.size(); ++k) {
        m_w_[k] = config_.beta1 * m_w_[k] + (1.0 - config_.beta1) * grads.d_weights[k];
        v_w_[k].array() = config_.beta2 * v_w_[k].array() +
                          (1.0 - config_.beta2) * grads.d_weights[k].array().square();
        params.weights[k].array() -=
            lr * (m_w_[k].array() / bc1) /
            ((v_w_[k].array() / bc2).sqrt() + config_.epsilon);
        m_b_[k] = config_.beta1 * m_b_[k] + (1.0 - config_.beta1) * grads.d_biases[k];
        v_b_[k].array() = config_.beta2 * v_b_[k].array() +
                          (1.0 - config_.beta2) * grads.d_biases[k].array().square();
        params.biases[k].array() -=
            lr * (m_b_[k].array() / bc1) /
            ((v_b_[k].array() / bc2).sqrt() + config_.epsilon);
    }
}

VecAdam::VecAdam(long dim, const AdamConfig& config)
    : config_(config), m_(Vec::Zero(dim)), v_(Vec::Zero(dim)) {}

void VecAdam::step(Vec& params, const Vec& grad) {
    ++t_;
    double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * grad;
    v_.array() = config_.beta2 * v_.array() + (1.0 - config_.beta2) * grad.array().square();
    params.array() -= config_.learning_rate * (m_.array() / bc1) /
                      ((v_.array() / bc2).sqrt() + config_.epsilon);
}

nlohmann::json mlp_to_json(const MlpParams& net) {
    nlohmann::json j;
    j["layer_sizes"] = net.layer_sizes;
    j["activation"] = activation_name(net.activation);
    auto weights = nlohmann::json::array();
    auto biases = nlohmann::json::array();
    for (size_t k = 0; k < net.weights.size(); ++k) {
        std::vector<double> w_flat;
        w_flat.reserve(static_cast<size_t>(net.weights[k].size()));
        for (long i = 0; i < net.weights[k].rows(); ++i)
            for (long c = 0; c < net.weights[k].cols(); ++c)
                w_flat.push_back(net.weights[k](i, c));
        weights.push_back(w_flat);
        biases.push_back(std::vector<double>(
            net.biases[k].data(), net.biases[k].data() + net.biases[k].size()));
    }
    j["weights"] = weights;
    j["biases"] = biases;
    return j;
}

MlpParams mlp_from_json(const nlohmann::json& j) {
    MlpParams net;
    net.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
    net.activation = activation_from_name(j.at("activation").get<std::string>());
    const auto& weights = j.at("weights");
    const auto& biases = j.at("biases");
    for (size_t k = 0; k + 1 < net.layer_sizes.size(); ++k) {
        long rows = net.layer_sizes[k + 1], cols = net.layer_sizes[k];
        auto w_flat = weights.at(k).get<std::vector<double>>();
        auto b_flat = biases.at(k).get<std::vector<double>>();
        if (static_cast<long>(w_flat.size()) != rows * cols ||
            static_cast<long>(b_flat.size()) != rows)
            throw InputError("mlp_from_json: tensor size mismatch");
        Mat w(rows, cols);
        for (long i = 0; i < rows; ++i)
            for (long c = 0; c < cols; ++c)
                w(i, c) = w_flat[static_cast<size_t>(i * cols + c)];
        net.weights.push_back(std::move(w));
        net.biases.push_back(Eigen::Map<const Vec>(b_flat.data(), rows));
    }
    net.validate();
    return net;
}

nlohmann::json normalizer_to_json(const Normalizer& n) {
    nlohmann::json j;
    j["mean"] = std::vector<double>(n.mean.data(), n.mean.data() + n.mean.size());
    j["scale"] =
        std::vector<double>(n.scale.data(), n.scale.data() + n.scale.size());
    return j;
}

Normalizer normalizer_from_json(const nlohmann::json& j) {
    Normalizer n;
    auto mean = j.at("mean").get<std::vector<double>>();
    auto scale = j.at("scale").get<std::vector<double>>();
    n.mean = Eigen::Map<const Vec>(mean.data(), static_cast<long>(mean.size()));
    n.scale = Eigen::Map<const Vec>(scale.data(), static_cast<long>(scale.size()));
    return n;
}

}  // namespace kkl
