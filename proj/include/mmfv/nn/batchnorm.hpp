#ifndef MMFV_NN_BATCHNORM_HPP
#define MMFV_NN_BATCHNORM_HPP

#include "mmfv/nn/core.hpp"

namespace mmfv::nn {

struct BatchNormParams {
    Vector gamma, beta;
    Vector running_mean, running_var;  // buffers, not trained
    double momentum = 0.9;
    double epsilon = 1e-3;

    BatchNormParams() = default;
    explicit BatchNormParams(Index features)
        : gamma(Vector::Ones(features)),
          beta(Vector::Zero(features)),
          running_mean(Vector::Zero(features)),
          running_var(Vector::Ones(features)) {}

    Index features() const { return gamma.size(); }

    void collect(ParamList& out, const std::string& prefix) {
        out.push_back(param_ref(prefix + ".gamma", gamma));
        out.push_back(param_ref(prefix + ".beta", beta));
        out.push_back(param_ref(prefix + ".running_mean", running_mean, false));
        out.push_back(param_ref(prefix + ".running_var", running_var, false));
    }
};

struct BatchNormCache {
    Matrix normalized;
    Vector inv_std;
};

/// Normalises with batch statistics (biased variance) and folds them into the
/// running averages: running = momentum * running + (1 - momentum) * batch.
inline Matrix batchnorm_train(const Eigen::Ref<const Matrix>& x, BatchNormParams& p, BatchNormCache& cache) {
    require_shape(x.cols() == p.features(), "batchnorm: width mismatch");
    const double n = static_cast<double>(x.rows());
    const RowVector mean = x.colwise().sum() / n;
    Matrix centered = x.rowwise() - mean;
    const RowVector var = centered.array().square().colwise().sum() / n;
    cache.inv_std = (var.array() + p.epsilon).rsqrt().transpose();
    cache.normalized = centered.array().rowwise() * cache.inv_std.transpose().array();
    p.running_mean = p.momentum * p.running_mean + (1.0 - p.momentum) * mean.transpose();
    p.running_var = p.momentum * p.running_var + (1.0 - p.momentum) * var.transpose();
    Matrix y = cache.normalized.array().rowwise() * p.gamma.transpose().array();
    y.rowwise() += p.beta.transpose();
    return y;
}

inline Matrix batchnorm_train_backward(const BatchNormCache& cache, const BatchNormParams& p,
                                       const Eigen::Ref<const Matrix>& dy, BatchNormParams& grads) {
    const double n = static_cast<double>(dy.rows());
    grads.gamma += (dy.array() * cache.normalized.array()).colwise().sum().transpose().matrix();
    grads.beta += dy.colwise().sum().transpose();
    Matrix dxhat = dy.array().rowwise() * p.gamma.transpose().array();
    const RowVector sum_dxhat = dxhat.colwise().sum();
    const RowVector sum_dxhat_xhat = (dxhat.array() * cache.normalized.array()).colwise().sum();
    Matrix dx = (n * dxhat.array()).matrix();
    dx.rowwise() -= sum_dxhat;
    dx -= (cache.normalized.array().rowwise() * sum_dxhat_xhat.array()).matrix();
    return (dx.array().rowwise() * (cache.inv_std.transpose().array() / n)).matrix();
}

/// Inference mode: fixed running statistics, a per-feature affine map.
inline Matrix batchnorm_infer(const Eigen::Ref<const Matrix>& x, const BatchNormParams& p) {
    require_shape(x.cols() == p.features(), "batchnorm: width mismatch");
    const Vector inv_std = (p.running_var.array() + p.epsilon).rsqrt();
    Matrix y = (x.rowwise() - p.running_mean.transpose()).array().rowwise() *
               (inv_std.array() * p.gamma.array()).transpose();
    y.rowwise() += p.beta.transpose();
    return y;
}

inline Matrix batchnorm_infer_backward(const Eigen::Ref<const Matrix>& x, const BatchNormParams& p,
                                       const Eigen::Ref<const Matrix>& dy, BatchNormParams& grads) {
    const Vector inv_std = (p.running_var.array() + p.epsilon).rsqrt();
    Matrix xhat = (x.rowwise() - p.running_mean.transpose()).array().rowwise() * inv_std.transpose().array();
    grads.gamma += (dy.array() * xhat.array()).colwise().sum().transpose().matrix();
    grads.beta += dy.colwise().sum().transpose();
    return dy.array().rowwise() * (inv_std.array() * p.gamma.array()).transpose();
}

} // namespace mmfv::nn

#endif
