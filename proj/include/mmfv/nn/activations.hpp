#ifndef MMFV_NN_ACTIVATIONS_HPP
#define MMFV_NN_ACTIVATIONS_HPP

#include <cmath>
#include <limits>

#include "mmfv/nn/core.hpp"

namespace mmfv::nn {

/// Numerically stable softmax (max-subtracted).
inline Vector softmax(const Eigen::Ref<const Vector>& z) {
    require_shape(z.size() >= 1, "softmax: empty input");
    Vector e = (z.array() - z.maxCoeff()).exp();
    return e / e.sum();
}

inline Matrix softmax_rows(const Eigen::Ref<const Matrix>& z) {
    Matrix out(z.rows(), z.cols());
    for (Index i = 0; i < z.rows(); ++i) {
        const double m = z.row(i).maxCoeff();
        out.row(i) = (z.row(i).array() - m).exp();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

/// -log p[target], clamped away from log(0).
inline double cross_entropy(const Eigen::Ref<const Vector>& probs, Index target) {
    return -std::log(std::max(probs[target], std::numeric_limits<double>::min()));
}

/// Gradient of cross_entropy(softmax(z), target) with respect to z.
inline Vector softmax_cross_entropy_grad(const Eigen::Ref<const Vector>& probs, Index target) {
    Vector g = probs;
    g[target] -= 1.0;
    return g;
}

inline Matrix relu(const Eigen::Ref<const Matrix>& x) { return x.cwiseMax(0.0); }

/// Backprop through ReLU given its output `y`.
inline Matrix relu_backward(const Eigen::Ref<const Matrix>& y, const Eigen::Ref<const Matrix>& dy) {
    return (y.array() > 0.0).select(dy, 0.0);
}

inline double sigmoid(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// Inverted-dropout mask: entries are 0 with probability `rate`, else 1/(1-rate).
inline Matrix dropout_mask(Index rows, Index cols, double rate, Rng& rng) {
    Matrix mask(rows, cols);
    if (rate <= 0.0) {
        mask.setOnes();
        return mask;
    }
    std::bernoulli_distribution keep(1.0 - rate);
    const double s = 1.0 / (1.0 - rate);
    for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? s : 0.0;
    return mask;
}

} // namespace mmfv::nn

#endif
