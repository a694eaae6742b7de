#ifndef MMFV_NN_GRAD_CHECK_HPP
#define MMFV_NN_GRAD_CHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>

#include "mmfv/nn/core.hpp"

namespace mmfv::nn {

struct GradCheckResult {
    double max_relative_error = 0.0;
    Index coordinates = 0;
    std::string worst_param;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
/// gradient is ~0 from dominating through rounding noise.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares analytic gradients against central differences on a random
/// subsample of at least `samples` trainable coordinates (all of them when
/// there are fewer). `loss` must re-run the forward pass reading the current
/// parameter values.
inline GradCheckResult grad_check(const std::function<double()>& loss, const ParamList& params,
                                  const ParamList& analytic, double epsilon = 1e-6, Index samples = 100,
                                  std::uint64_t seed = 0) {
    require_same_layout(params, analytic, "grad_check");
    if (!(epsilon >= 1e-7 && epsilon <= 1e-4)) throw std::invalid_argument("grad_check: epsilon outside [1e-7, 1e-4]");

    std::vector<std::pair<std::size_t, Index>> coords;
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].trainable)
            for (Index k = 0; k < params[i].size; ++k) coords.emplace_back(i, k);
    Rng rng(seed);
    if (static_cast<Index>(coords.size()) > samples) {
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(static_cast<std::size_t>(samples));
    }

    GradCheckResult result;
    for (auto [pi, k] : coords) {
        double& w = params[pi].data[k];
        const double saved = w;
        w = saved + epsilon;
        const double up = loss();
        w = saved - epsilon;
        const double down = loss();
        w = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) throw std::runtime_error("grad_check: non-finite loss");
        const double numeric = (up - down) / (2.0 * epsilon);
        const double a = analytic[pi].data[k];
        const double err = relative_error(a, numeric);
        if (err > result.max_relative_error || result.coordinates == 0) {
            result.max_relative_error = std::max(result.max_relative_error, err);
            result.worst_param = params[pi].name + "[" + std::to_string(k) + "]";
            result.worst_analytic = a;
            result.worst_numeric = numeric;
        }
        ++result.coordinates;
    }
    return result;
}

} // namespace mmfv::nn

#endif
