#ifndef MMFV_NN_CONV_HPP
#define MMFV_NN_CONV_HPP

#include <limits>
#include <vector>

#include "mmfv/nn/core.hpp"

namespace mmfv::nn {

/// [h x w x c] tensor stored as a row-major matrix with one row per spatial
/// position (row index y * w + x) and one column per channel.
struct FeatureMap {
    Index height = 0;
    Index width = 0;
    Matrix data;

    FeatureMap() = default;
    FeatureMap(Index h, Index w, Index c) : height(h), width(w), data(Matrix::Zero(h * w, c)) {}
    FeatureMap(Index h, Index w, Matrix d) : height(h), width(w), data(std::move(d)) {
        require_shape(data.rows() == h * w, "FeatureMap: data rows != h*w");
    }

    Index channels() const { return data.cols(); }
    double& at(Index y, Index x, Index c) { return data(y * width + x, c); }
    double at(Index y, Index x, Index c) const { return data(y * width + x, c); }
};

/// Kernel tensor [k x k x c_in x c_out] flattened row-major into a
/// [(k*k*c_in) x c_out] matrix.
struct Conv2dParams {
    Index kernel = 3;
    Matrix weight;
    Vector bias;

    Conv2dParams() = default;
    Conv2dParams(Index k, Index in_channels, Index out_channels)
        : kernel(k), weight(Matrix::Zero(k * k * in_channels, out_channels)), bias(Vector::Zero(out_channels)) {}

    Index in_channels() const { return weight.rows() / (kernel * kernel); }
    Index out_channels() const { return weight.cols(); }

    void init(Rng& rng) {
        he_uniform(weight, weight.rows(), rng);
        bias.setZero();
    }

    void collect(ParamList& out, const std::string& prefix) {
        out.push_back(param_ref(prefix + ".kernel", weight));
        out.push_back(param_ref(prefix + ".bias", bias));
    }
};

/// Unrolls every k x k window into one row of [(oh*ow) x (k*k*c)].
inline Matrix im2col(const FeatureMap& x, Index k) {
    const Index oh = x.height - k + 1;
    const Index ow = x.width - k + 1;
    const Index c = x.channels();
    Matrix patches(oh * ow, k * k * c);
    for (Index oy = 0; oy < oh; ++oy)
        for (Index ox = 0; ox < ow; ++ox) {
            double* dst = patches.row(oy * ow + ox).data();
            for (Index dy = 0; dy < k; ++dy) {
                const double* src = x.data.row((oy + dy) * x.width + ox).data();
                std::copy(src, src + k * c, dst + dy * k * c);
            }
        }
    return patches;
}

/// Valid-mode cross-correlation, stride 1, no activation. When `patches` is
/// given the unrolled input is kept for the backward pass.
inline FeatureMap conv2d_valid(const FeatureMap& x, const Conv2dParams& p, Matrix* patches = nullptr) {
    const Index k = p.kernel;
    require_shape(x.height >= k && x.width >= k,
                  "conv2d: input " + std::to_string(x.height) + "x" + std::to_string(x.width) +
                      " smaller than kernel " + std::to_string(k));
    require_shape(x.channels() == p.in_channels(), "conv2d: channel mismatch");
    Matrix cols = im2col(x, k);
    Matrix y = cols * p.weight;
    y.rowwise() += p.bias.transpose();
    if (patches) *patches = std::move(cols);
    return FeatureMap(x.height - k + 1, x.width - k + 1, std::move(y));
}

/// Accumulates kernel/bias gradients; returns d(input) when `input_grad`.
inline FeatureMap conv2d_valid_backward(Index in_height, Index in_width, const Matrix& patches,
                                        const Conv2dParams& p, const FeatureMap& d_out, Conv2dParams& grads,
                                        bool input_grad = true) {
    grads.weight.noalias() += patches.transpose() * d_out.data;
    grads.bias += d_out.data.colwise().sum().transpose();
    if (!input_grad) return {};
    const Index k = p.kernel;
    const Index c = p.in_channels();
    Matrix d_cols = d_out.data * p.weight.transpose();
    FeatureMap dx(in_height, in_width, c);
    for (Index oy = 0; oy < d_out.height; ++oy)
        for (Index ox = 0; ox < d_out.width; ++ox) {
            const double* src = d_cols.row(oy * d_out.width + ox).data();
            for (Index dy = 0; dy < k; ++dy) {
                double* dst = dx.data.row((oy + dy) * in_width + ox).data();
                for (Index i = 0; i < k * c; ++i) dst[i] += src[dy * k * c + i];
            }
        }
    return dx;
}

/// Non-overlapping max pooling; rows/cols that do not fill a window are
/// dropped. `argmax` receives, per output entry, the flat index into x.data
/// (first maximum in window scan order).
inline FeatureMap maxpool2d(const FeatureMap& x, Index pool_h, Index pool_w, std::vector<Index>* argmax = nullptr) {
    require_shape(pool_h >= 1 && pool_w >= 1, "maxpool2d: pool sizes must be >= 1");
    const Index oh = x.height / pool_h;
    const Index ow = x.width / pool_w;
    const Index c = x.channels();
    FeatureMap y(oh, ow, c);
    y.data.setConstant(-std::numeric_limits<double>::infinity());
    std::vector<Index> best(static_cast<std::size_t>(oh * ow * c), 0);
    for (Index oy = 0; oy < oh; ++oy)
        for (Index ox = 0; ox < ow; ++ox) {
            double* out = y.data.row(oy * ow + ox).data();
            Index* at = best.data() + (oy * ow + ox) * c;
            for (Index dy = 0; dy < pool_h; ++dy)
                for (Index dx = 0; dx < pool_w; ++dx) {
                    const Index row = (oy * pool_h + dy) * x.width + ox * pool_w + dx;
                    const double* in = x.data.row(row).data();
                    for (Index ch = 0; ch < c; ++ch)
                        if (in[ch] > out[ch]) {
                            out[ch] = in[ch];
                            at[ch] = row * c + ch;
                        }
                }
        }
    if (argmax) *argmax = std::move(best);
    return y;
}

inline FeatureMap maxpool2d_backward(Index in_height, Index in_width, const std::vector<Index>& argmax,
                                     const FeatureMap& d_out) {
    FeatureMap dx(in_height, in_width, d_out.channels());
    for (Index i = 0; i < d_out.data.size(); ++i)
        dx.data.data()[argmax[static_cast<std::size_t>(i)]] += d_out.data.data()[i];
    return dx;
}

/// maxpool2d(relu(conv2d_valid(x, p))) computed one band of pool_h conv rows
/// at a time; conv rows/cols that no pooling window covers are skipped.
/// `argmax` indexes the full (unmaterialised) conv output exactly as
/// maxpool2d would.
inline FeatureMap conv_relu_pool(const FeatureMap& x, const Conv2dParams& p, Index pool_h, Index pool_w,
                                 std::vector<Index>* argmax = nullptr) {
    const Index k = p.kernel;
    require_shape(x.height >= k && x.width >= k,
                  "conv2d: input " + std::to_string(x.height) + "x" + std::to_string(x.width) +
                      " smaller than kernel " + std::to_string(k));
    require_shape(x.channels() == p.in_channels(), "conv2d: channel mismatch");
    require_shape(pool_h >= 1 && pool_w >= 1, "maxpool2d: pool sizes must be >= 1");
    const Index cin = x.channels();
    const Index cout = p.out_channels();
    const Index conv_w = x.width - k + 1;
    const Index oh = (x.height - k + 1) / pool_h;
    const Index ow = conv_w / pool_w;
    const Index used_w = ow * pool_w;
    FeatureMap y(oh, ow, cout);
    if (argmax) argmax->assign(static_cast<std::size_t>(oh * ow * cout), 0);
    Matrix patches(pool_h * used_w, k * k * cin);
    Matrix band;
    for (Index oy = 0; oy < oh; ++oy) {
        for (Index r = 0; r < pool_h; ++r) {
            const Index cy = oy * pool_h + r;
            for (Index cx = 0; cx < used_w; ++cx) {
                double* dst = patches.row(r * used_w + cx).data();
                for (Index dy = 0; dy < k; ++dy) {
                    const double* src = x.data.row((cy + dy) * x.width + cx).data();
                    std::copy(src, src + k * cin, dst + dy * k * cin);
                }
            }
        }
        band.noalias() = patches * p.weight;
        band.rowwise() += p.bias.transpose();
        band = band.cwiseMax(0.0);
        for (Index ox = 0; ox < ow; ++ox) {
            double* out = y.data.row(oy * ow + ox).data();
            std::fill(out, out + cout, -std::numeric_limits<double>::infinity());
            Index* at = argmax ? argmax->data() + (oy * ow + ox) * cout : nullptr;
            for (Index r = 0; r < pool_h; ++r)
                for (Index dx = 0; dx < pool_w; ++dx) {
                    const Index cx = ox * pool_w + dx;
                    const double* in = band.row(r * used_w + cx).data();
                    for (Index ch = 0; ch < cout; ++ch)
                        if (in[ch] > out[ch]) {
                            out[ch] = in[ch];
                            if (at) at[ch] = ((oy * pool_h + r) * conv_w + cx) * cout + ch;
                        }
                }
        }
    }
    return y;
}

/// Backward through conv -> ReLU -> max-pool in one go. Only the pooled argmax
/// positions carry gradient, so this touches one conv output per pooled
/// entry instead of the whole map. `pooled` is the forward output (a pooled
/// value > 0 means the ReLU was open there). Accumulates kernel/bias
/// gradients; returns d(input) when `input_grad`.
inline FeatureMap conv_relu_pool_backward(const FeatureMap& input, const Conv2dParams& p,
                                          const std::vector<Index>& argmax, const FeatureMap& pooled,
                                          const FeatureMap& d_pooled, Conv2dParams& grads, bool input_grad = true) {
    const Index k = p.kernel;
    const Index cin = p.in_channels();
    const Index cout = p.out_channels();
    const Index conv_w = input.width - k + 1;
    require_shape(d_pooled.data.size() == pooled.data.size(), "conv_relu_pool_backward: gradient shape mismatch");
    FeatureMap dx;
    if (input_grad) dx = FeatureMap(input.height, input.width, cin);
    for (Index i = 0; i < d_pooled.data.size(); ++i) {
        const double g = d_pooled.data.data()[i];
        if (g == 0.0 || !(pooled.data.data()[i] > 0.0)) continue;
        const Index flat = argmax[static_cast<std::size_t>(i)];
        const Index pos = flat / cout;
        const Index ch = flat % cout;
        const Index oy = pos / conv_w;
        const Index ox = pos % conv_w;
        grads.bias[ch] += g;
        for (Index dy = 0; dy < k; ++dy) {
            const double* in = input.data.row((oy + dy) * input.width + ox).data();
            for (Index j = 0; j < k * cin; ++j) {
                const Index w_row = dy * k * cin + j;
                grads.weight(w_row, ch) += g * in[j];
            }
            if (input_grad) {
                double* out = dx.data.row((oy + dy) * input.width + ox).data();
                for (Index j = 0; j < k * cin; ++j) out[j] += g * p.weight(dy * k * cin + j, ch);
            }
        }
    }
    return dx;
}

} // namespace mmfv::nn

#endif
