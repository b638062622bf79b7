#pragma once

#include "kkl/common.hpp"

#include <vector>

#include "json.hpp"

namespace kkl {

// SiLU: u * sigmoid(u). Hidden activation everywhere; output layers are
// affine.
double silu(double u);
double silu_deriv(double u);
double silu_second_deriv(double u);

enum class Activation { Silu, Identity };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct MlpParams {
    std::vector<int> layer_sizes;     // input, hidden..., output
    std::vector<Mat> weights;         // weights[k]: sizes[k+1] x sizes[k]
    std::vector<Vec> biases;
    Activation activation = Activation::Silu;

    int input_dim() const { return layer_sizes.front(); }
    int output_dim() const { return layer_sizes.back(); }
    int layer_count() const { return static_cast<int>(weights.size()); }
    long param_count() const;
    bool all_finite() const;
    void validate() const;  // throws InputError on shape chain violations
};

/// Glorot-uniform weights (+- sqrt(6/(fan_in+fan_out))), zero biases.
MlpParams make_mlp(const std::vector<int>& layer_sizes, uint64_t seed,
                   Activation activation = Activation::Silu);

Vec mlp_forward(const MlpParams& net, const Vec& input);

/// Columns are samples.
Mat mlp_forward_batch(const MlpParams& net, const Mat& inputs);

/// Output-by-input Jacobian via forward-mode tangents (one batched pass
/// with the identity tangent matrix).
Mat input_jacobian(const MlpParams& net, const Vec& input);

/// (output, J * tangent) in one forward pass.
std::pair<Vec, Vec> forward_jvp(const MlpParams& net, const Vec& input,
                                const Vec& tangent);

// --- training machinery (batched, columns are samples) ---

struct MlpCache {
    std::vector<Mat> acts;      // acts[0] = input, acts[k+1] = layer k output
    std::vector<Mat> preacts;   // preacts[k] = W_k acts[k] + b_k
};

struct MlpJvpCache {
    std::vector<Mat> tacts;     // tangent counterparts of acts
    std::vector<Mat> tpreacts;
};

struct MlpGrads {
    std::vector<Mat> d_weights;
    std::vector<Vec> d_biases;

    void init_like(const MlpParams& net);
    void set_zero();
    double squared_norm() const;
};

Mat forward_cached(const MlpParams& net, const Mat& inputs, MlpCache& cache);

/// Tangent forward pass; forward_cached must have filled `cache` for the
/// same inputs. Returns the tangent output.
Mat forward_jvp_cached(const MlpParams& net, const MlpCache& cache,
                       const Mat& tangents, MlpJvpCache& jvp_cache);

/// Reverse pass. output_grad is dL/d(output), same shape as the output
/// batch. Accumulates into `grads` (callers zero it). Returns dL/d(input)
/// when want_input_grad.
Mat backward(const MlpParams& net, const MlpCache& cache,
             const Mat& output_grad, MlpGrads& grads,
             bool want_input_grad = false);

/// Reverse pass through the primal+tangent graph: output_grad = dL/dy,
/// tangent_grad = dL/d(Jv). Needed for losses on directional derivatives.
void backward_jvp(const MlpParams& net, const MlpCache& cache,
                  const MlpJvpCache& jvp_cache, const Mat& output_grad,
                  const Mat& tangent_grad, MlpGrads& grads,
                  Mat* input_grad = nullptr);

/// Mean over the batch of 0.5 ||net(x) - target||^2; gradients accumulated
/// into `grads`.
double mse_loss_and_grad(const MlpParams& net, const Mat& inputs,
                         const Mat& targets, MlpGrads& grads);
double mse_loss(const MlpParams& net, const Mat& inputs, const Mat& targets);

// --- normalization ---

struct Normalizer {
    Vec mean;
    Vec scale;  // componentwise std, floored at 1e-8

    static Normalizer fit(const Mat& samples);  // columns are samples
    static Normalizer identity(int dim);

    Vec transform(const Vec& v) const { return (v - mean).cwiseQuotient(scale); }
    Vec inverse(const Vec& v) const { return v.cwiseProduct(scale) + mean; }
    Mat transform_batch(const Mat& m) const {
        return ((m.colwise() - mean).array().colwise() / scale.array()).matrix();
    }
    Mat inverse_batch(const Mat& m) const {
        return ((m.array().colwise() * scale.array()).colwise() + mean.array()).matrix();
    }
};

// --- Adam ---

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class MlpAdam {
public:
    MlpAdam(const MlpParams& shape, const AdamConfig& config);
    void step(MlpParams& params, const MlpGrads& grads);
    void set_learning_rate(double lr) { config_.learning_rate = lr; }

private:
    AdamConfig config_;
    long t_ = 0;
    std::vector<Mat> m_w_, v_w_;
    std::vector<Vec> m_b_, v_b_;
};

class VecAdam {
public:
    VecAdam(long dim, const AdamConfig& config);
    void step(Vec& params, const Vec& grad);
    void set_learning_rate(double lr) { config_.learning_rate = lr; }

private:
    AdamConfig config_;
    long t_ = 0;
    Vec m_, v_;
};

// --- serialization ---

nlohmann::json mlp_to_json(const MlpParams& net);
MlpParams mlp_from_json(const nlohmann::json& j);
nlohmann::json normalizer_to_json(const Normalizer& n);
Normalizer normalizer_from_json(const nlohmann::json& j);

}  // namespace kkl
