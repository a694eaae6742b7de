#ifndef MMFV_NN_OPTIM_HPP
#define MMFV_NN_OPTIM_HPP

#include <cmath>
#include <limits>
#include <vector>

#include "mmfv/nn/core.hpp"

namespace mmfv::nn {

struct OptimizerState {
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step = 0;
    std::vector<Vector> first_moment;
    std::vector<Vector> second_moment;

    OptimizerState() = default;
    OptimizerState(double lr, double wd) : learning_rate(lr), weight_decay(wd) {}
};

/// Adam with bias correction and decoupled weight decay:
///   p <- p * (1 - lr * wd);  p <- p - lr * m_hat / (sqrt(v_hat) + eps)
/// Non-trainable entries of `params` are left untouched.
inline void adam_step(const ParamList& params, const ParamList& grads, OptimizerState& state) {
    require_same_layout(params, grads, "adam_step");
    if (state.first_moment.empty()) {
        for (const auto& p : params) {
            state.first_moment.push_back(Vector::Zero(p.size));
            state.second_moment.push_back(Vector::Zero(p.size));
        }
    }
    require_shape(state.first_moment.size() == params.size(), "adam_step: optimizer state does not match params");
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    const double decay = 1.0 - state.learning_rate * state.weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].trainable) continue;
        auto m = state.first_moment[i].array();
        auto v = state.second_moment[i].array();
        require_shape(m.size() == params[i].size, "adam_step: moment shape mismatch for " + params[i].name);
        auto w = flat(params[i]).array();
        const auto g = flat(grads[i]).array();
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v = state.beta2 * v + (1.0 - state.beta2) * g.square();
        w *= decay;
        w -= state.learning_rate * (m / c1) / ((v / c2).sqrt() + state.epsilon);
    }
}

/// Halves the learning rate when the monitored loss has not improved for
/// `patience` consecutive epochs.
class PlateauScheduler {
public:
    explicit PlateauScheduler(Index patience = 3, double factor = 0.5, double min_lr = 1e-7)
        : patience_(patience), factor_(factor), min_lr_(min_lr) {}

    /// Returns true when the learning rate was reduced.
    bool observe(double loss, OptimizerState& state) {
        if (loss < best_) {
            best_ = loss;
            bad_epochs_ = 0;
            return false;
        }
        if (++bad_epochs_ < patience_) return false;
        bad_epochs_ = 0;
        const double next = std::max(min_lr_, state.learning_rate * factor_);
        const bool changed = next < state.learning_rate;
        state.learning_rate = next;
        return changed;
    }

private:
    Index patience_;
    double factor_;
    double min_lr_;
    double best_ = std::numeric_limits<double>::infinity();
    Index bad_epochs_ = 0;
};

} // namespace mmfv::nn

#endif
