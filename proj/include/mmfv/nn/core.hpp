#ifndef MMFV_NN_CORE_HPP
#define MMFV_NN_CORE_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mmfv/error.hpp"

namespace mmfv::nn {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Rng = std::mt19937_64;

/// Named, shaped view of one parameter (or non-trainable buffer). Optimizers,
/// checkpoints and the gradient checker all work through these.
struct ParamRef {
    std::string name;
    std::vector<Index> shape;
    double* data = nullptr;
    Index size = 0;
    bool trainable = true;
};

using ParamList = std::vector<ParamRef>;

inline ParamRef param_ref(std::string name, Matrix& m, bool trainable = true) {
    return {std::move(name), {m.rows(), m.cols()}, m.data(), m.size(), trainable};
}

inline ParamRef param_ref(std::string name, Vector& v, bool trainable = true) {
    return {std::move(name), {v.size()}, v.data(), v.size(), trainable};
}

inline Eigen::Map<Vector> flat(const ParamRef& p) { return {p.data, p.size}; }

inline void require_same_layout(const ParamList& a, const ParamList& b, const char* what) {
    require_shape(a.size() == b.size(), std::string(what) + ": parameter count mismatch");
    for (std::size_t i = 0; i < a.size(); ++i)
        require_shape(a[i].shape == b[i].shape && a[i].size == b[i].size,
                      std::string(what) + ": shape mismatch for " + a[i].name);
}

inline void zero(const ParamList& list) {
    for (const auto& p : list) flat(p).setZero();
}

inline void scale(const ParamList& list, double s) {
    for (const auto& p : list) flat(p) *= s;
}

/// Uniform(-limit, limit) with limit = sqrt(6 / fan_in).
inline void he_uniform(Matrix& m, Index fan_in, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

/// 64-bit FNV-1a over the raw parameter bytes; used to prove frozen weights
/// never move.
inline std::uint64_t checksum(const ParamList& list) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& p : list) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p.data);
        for (std::size_t i = 0; i < static_cast<std::size_t>(p.size) * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    }
    return h;
}

} // namespace mmfv::nn

#endif
