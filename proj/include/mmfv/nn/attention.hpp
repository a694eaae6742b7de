#ifndef MMFV_NN_ATTENTION_HPP
#define MMFV_NN_ATTENTION_HPP

#include <cmath>

#include "mmfv/nn/activations.hpp"
#include "mmfv/nn/core.hpp"

namespace mmfv::nn {

struct AttentionCache {
    Matrix query, key, value, weights;
    double scale = 1.0;
};

/// softmax(Q K^T / sqrt(d_k)) row-wise; each row sums to 1.
inline Matrix attention_weights(const Eigen::Ref<const Matrix>& query, const Eigen::Ref<const Matrix>& key) {
    require_shape(query.cols() == key.cols(), "sdp_attention: query/key widths differ");
    require_shape(query.cols() > 0, "sdp_attention: d_k must be positive");
    require_shape(key.rows() > 0, "sdp_attention: no keys");
    const double scale = 1.0 / std::sqrt(static_cast<double>(query.cols()));
    Matrix scores = (query * key.transpose()) * scale;
    return softmax_rows(scores);
}

/// Scaled dot-product attention: [a x d_k], [b x d_k], [b x d_v] -> [a x d_v].
inline Matrix sdp_attention(const Eigen::Ref<const Matrix>& query, const Eigen::Ref<const Matrix>& key,
                            const Eigen::Ref<const Matrix>& value, AttentionCache* cache = nullptr) {
    require_shape(key.rows() == value.rows(), "sdp_attention: key/value lengths differ");
    Matrix w = attention_weights(query, key);
    Matrix out = w * value;
    if (cache) {
        cache->query = query;
        cache->key = key;
        cache->value = value;
        cache->weights = std::move(w);
        cache->scale = 1.0 / std::sqrt(static_cast<double>(query.cols()));
    }
    return out;
}

struct AttentionGrads {
    Matrix query, key, value;
};

inline AttentionGrads sdp_attention_backward(const AttentionCache& c, const Eigen::Ref<const Matrix>& d_out) {
    AttentionGrads g;
    g.value = c.weights.transpose() * d_out;
    Matrix dw = d_out * c.value.transpose();
    // softmax Jacobian, one row at a time: ds = w * (dw - <dw, w>)
    Vector inner = (dw.array() * c.weights.array()).rowwise().sum();
    Matrix ds = c.weights.array() * (dw.colwise() - inner).array();
    ds *= c.scale;
    g.query = ds * c.key;
    g.key = ds.transpose() * c.query;
    return g;
}

inline Matrix self_attention(const Eigen::Ref<const Matrix>& x) {
    require_shape(x.rows() >= 1, "self_attention: empty input");
    return sdp_attention(x, x, x);
}

/// self_attention() of `rows` followed by (total_len - rows.rows()) zero
/// padding rows, without materialising the padding. A zero key scores 0
/// against every query and contributes nothing to the values, so only the
/// softmax denominator sees it; a zero query attends uniformly.
inline Matrix self_attention_padded(const Eigen::Ref<const Matrix>& rows, Index total_len) {
    const Index r = rows.rows();
    const Index d = rows.cols();
    require_shape(total_len >= 1 && total_len >= r, "self_attention_padded: bad total length");
    require_shape(d > 0, "self_attention_padded: d_k must be positive");
    Matrix out = Matrix::Zero(total_len, d);
    if (r == 0) return out;
    const Index pad = total_len - r;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Matrix scores = (rows * rows.transpose()) * scale;
    for (Index i = 0; i < r; ++i) {
        double m = scores.row(i).maxCoeff();
        if (pad > 0) m = std::max(m, 0.0);
        auto e = (scores.row(i).array() - m).exp().matrix().eval();
        const double denom = e.sum() + static_cast<double>(pad) * std::exp(-m);
        out.row(i) = (e * rows) / denom;
    }
    if (pad > 0) {
        const RowVector mean = rows.colwise().sum() / static_cast<double>(total_len);
        out.bottomRows(pad).rowwise() = mean;
    }
    return out;
}

} // namespace mmfv::nn

#endif
