#ifndef MMFV_NN_GRU_HPP
#define MMFV_NN_GRU_HPP

#include <vector>

#include "mmfv/nn/core.hpp"

namespace mmfv::nn {

/// Single-layer GRU. Gate blocks in every kernel are ordered
/// [update | reset | candidate]:
///   z = sigmoid(x Wz + h Uz + bz)
///   r = sigmoid(x Wr + h Ur + br)
///   c = tanh(x Wc + (r * h) Uc + bc)
///   h' = (1 - z) * h + z * c,   h_0 = 0
struct GruParams {
    Matrix input_kernel;      // [in x 3u]
    Matrix recurrent_kernel;  // [u x 3u]
    Vector bias;              // [3u]

    GruParams() = default;
    GruParams(Index in, Index units)
        : input_kernel(Matrix::Zero(in, 3 * units)),
          recurrent_kernel(Matrix::Zero(units, 3 * units)),
          bias(Vector::Zero(3 * units)) {}

    Index input_dim() const { return input_kernel.rows(); }
    Index units() const { return recurrent_kernel.rows(); }

    void init(Rng& rng) {
        he_uniform(input_kernel, input_dim(), rng);
        he_uniform(recurrent_kernel, units(), rng);
        bias.setZero();
    }

    void collect(ParamList& out, const std::string& prefix) {
        out.push_back(param_ref(prefix + ".input_kernel", input_kernel));
        out.push_back(param_ref(prefix + ".recurrent_kernel", recurrent_kernel));
        out.push_back(param_ref(prefix + ".bias", bias));
    }
};

/// Everything the backward pass needs from a batched forward pass.
struct GruTrace {
    std::vector<Matrix> inputs;  // per sample [T x in]
    std::vector<Matrix> h_prev, update, reset, candidate, reset_h;  // per step [B x u]

    Index batch() const { return static_cast<Index>(inputs.size()); }
    Index steps() const { return static_cast<Index>(h_prev.size()); }
};

namespace detail {
inline Matrix sigmoid(const Matrix& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }
} // namespace detail

/// Runs B equal-length sequences in lock step. Returns one [T x u] context
/// matrix per sample; the final state is its last row.
inline std::vector<Matrix> gru_forward_batch(const std::vector<Matrix>& xs, const GruParams& p,
                                             GruTrace* trace = nullptr) {
    require_shape(!xs.empty(), "gru: empty batch");
    const Index steps = xs.front().rows();
    const Index u = p.units();
    const auto batch = static_cast<Index>(xs.size());
    require_shape(steps >= 1, "gru: sequence must have at least one step");
    std::vector<Matrix> projected;
    projected.reserve(xs.size());
    for (const auto& x : xs) {
        require_shape(x.rows() == steps, "gru: sequences in a batch must share a length");
        require_shape(x.cols() == p.input_dim(), "gru: input width " + std::to_string(x.cols()) +
                                                     " != " + std::to_string(p.input_dim()));
        Matrix xw = x * p.input_kernel;
        xw.rowwise() += p.bias.transpose();
        projected.push_back(std::move(xw));
    }
    if (trace) {
        *trace = GruTrace{};
        trace->inputs = xs;
        for (auto* v : {&trace->h_prev, &trace->update, &trace->reset, &trace->candidate, &trace->reset_h})
            v->reserve(static_cast<std::size_t>(steps));
    }

    const auto u_zr = p.recurrent_kernel.leftCols(2 * u);
    const auto u_c = p.recurrent_kernel.rightCols(u);
    std::vector<Matrix> contexts(xs.size(), Matrix(steps, u));
    Matrix h = Matrix::Zero(batch, u);
    Matrix a(batch, 3 * u);
    for (Index t = 0; t < steps; ++t) {
        for (Index b = 0; b < batch; ++b) a.row(b) = projected[static_cast<std::size_t>(b)].row(t);
        Matrix hu = h * u_zr;
        Matrix z = detail::sigmoid(a.leftCols(u) + hu.leftCols(u));
        Matrix r = detail::sigmoid(a.middleCols(u, u) + hu.rightCols(u));
        Matrix rh = r.cwiseProduct(h);
        Matrix c = (a.rightCols(u) + rh * u_c).array().tanh().matrix();
        Matrix next = h + z.cwiseProduct(c - h);
        for (Index b = 0; b < batch; ++b) contexts[static_cast<std::size_t>(b)].row(t) = next.row(b);
        if (trace) {
            trace->h_prev.push_back(std::move(h));
            trace->update.push_back(std::move(z));
            trace->reset.push_back(std::move(r));
            trace->candidate.push_back(std::move(c));
            trace->reset_h.push_back(std::move(rh));
        }
        h = std::move(next);
    }
    return contexts;
}

struct GruOutput {
    Matrix context;      // [T x u]
    Vector final_state;  // [u]
};

inline GruOutput gru_forward(const Matrix& x, const GruParams& p) {
    auto ctx = gru_forward_batch({x}, p);
    GruOutput out;
    out.final_state = ctx.front().row(ctx.front().rows() - 1).transpose();
    out.context = std::move(ctx.front());
    return out;
}

/// Accumulates parameter gradients into `grads` from per-sample gradients of
/// the context matrices (fold any final-state gradient into the last row).
inline void gru_backward_batch(const GruTrace& trace, const GruParams& p, const std::vector<Matrix>& d_context,
                               GruParams& grads, std::vector<Matrix>* d_inputs = nullptr) {
    const Index batch = trace.batch();
    const Index steps = trace.steps();
    const Index u = p.units();
    require_shape(static_cast<Index>(d_context.size()) == batch, "gru backward: batch size mismatch");
    const auto u_zr = p.recurrent_kernel.leftCols(2 * u);
    const auto u_c = p.recurrent_kernel.rightCols(u);

    std::vector<Matrix> d_proj(static_cast<std::size_t>(batch), Matrix(steps, 3 * u));
    Matrix dh = Matrix::Zero(batch, u);
    Matrix da(batch, 3 * u);
    for (Index t = steps - 1; t >= 0; --t) {
        const auto st = static_cast<std::size_t>(t);
        for (Index b = 0; b < batch; ++b) dh.row(b) += d_context[static_cast<std::size_t>(b)].row(t);
        const Matrix& hp = trace.h_prev[st];
        const Matrix& z = trace.update[st];
        const Matrix& r = trace.reset[st];
        const Matrix& c = trace.candidate[st];

        Matrix dz = dh.cwiseProduct(c - hp);
        Matrix dc = dh.cwiseProduct(z);
        Matrix dh_prev = dh - dh.cwiseProduct(z);

        da.rightCols(u) = dc.array() * (1.0 - c.array().square());
        grads.recurrent_kernel.rightCols(u).noalias() += trace.reset_h[st].transpose() * da.rightCols(u);
        Matrix drh = da.rightCols(u) * u_c.transpose();
        Matrix dr = drh.cwiseProduct(hp);
        dh_prev += drh.cwiseProduct(r);

        da.leftCols(u) = dz.array() * z.array() * (1.0 - z.array());
        da.middleCols(u, u) = dr.array() * r.array() * (1.0 - r.array());
        grads.recurrent_kernel.leftCols(2 * u).noalias() += hp.transpose() * da.leftCols(2 * u);
        dh_prev.noalias() += da.leftCols(2 * u) * u_zr.transpose();

        grads.bias += da.colwise().sum().transpose();
        for (Index b = 0; b < batch; ++b) d_proj[static_cast<std::size_t>(b)].row(t) = da.row(b);
        dh = std::move(dh_prev);
    }
    if (d_inputs) d_inputs->clear();
    for (Index b = 0; b < batch; ++b) {
        const auto sb = static_cast<std::size_t>(b);
        grads.input_kernel.noalias() += trace.inputs[sb].transpose() * d_proj[sb];
        if (d_inputs) d_inputs->push_back(d_proj[sb] * p.input_kernel.transpose());
    }
}

} // namespace mmfv::nn

#endif
