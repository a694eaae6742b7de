#ifndef MMFV_NN_DENSE_HPP
#define MMFV_NN_DENSE_HPP

#include "mmfv/nn/activations.hpp"
#include "mmfv/nn/core.hpp"

namespace mmfv::nn {

enum class Activation { None, Relu };

struct DenseParams {
    Matrix weight;  // [in x out]
    Vector bias;    // [out]

    DenseParams() = default;
    DenseParams(Index in, Index out) : weight(Matrix::Zero(in, out)), bias(Vector::Zero(out)) {}

    Index in_dim() const { return weight.rows(); }
    Index out_dim() const { return weight.cols(); }

    void init(Rng& rng) {
        he_uniform(weight, in_dim(), rng);
        bias.setZero();
    }

    void collect(ParamList& out, const std::string& prefix) {
        out.push_back(param_ref(prefix + ".weight", weight));
        out.push_back(param_ref(prefix + ".bias", bias));
    }
};

/// Row-batched affine map [B x in] -> [B x out] with optional ReLU.
inline Matrix dense_forward(const Eigen::Ref<const Matrix>& x, const DenseParams& p, Activation act) {
    require_shape(x.cols() == p.in_dim(), "dense: input width " + std::to_string(x.cols()) +
                                              " != " + std::to_string(p.in_dim()));
    Matrix y = x * p.weight;
    y.rowwise() += p.bias.transpose();
    if (act == Activation::Relu) y = relu(y);
    return y;
}

inline Vector dense(const Eigen::Ref<const Vector>& x, const DenseParams& p, Activation act) {
    Matrix row = x.transpose();
    return dense_forward(row, p, act).transpose();
}

/// Accumulates weight/bias gradients into `grads`; returns d(input).
/// `y` is the forward output (post-activation).
inline Matrix dense_backward(const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Matrix>& y,
                             Activation act, const Eigen::Ref<const Matrix>& dy, const DenseParams& p,
                             DenseParams& grads) {
    Matrix dz = act == Activation::Relu ? relu_backward(y, dy) : Matrix(dy);
    grads.weight.noalias() += x.transpose() * dz;
    grads.bias += dz.colwise().sum().transpose();
    return dz * p.weight.transpose();
}

} // namespace mmfv::nn

#endif
