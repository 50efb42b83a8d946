#ifndef DTP_OPTIM_HPP
#define DTP_OPTIM_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dtp/error.hpp"
#include "dtp/tensor.hpp"

namespace dtp {

/// Adam with decoupled weight decay and a linear learning-rate warm-up.
/// The warm-up factor rises linearly from `warmup_start_factor` at step 0 to
/// 1.0 after `warmup_steps` steps; with zero gradients the only movement is
/// the weight-decay shrinkage p <- p * (1 - lr_eff * wd).
struct OptimizerState {
    double base_lr = 3.5e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double warmup_start_factor = 0.01;
    std::int64_t warmup_steps = 0;  // 0 disables warm-up
    std::int64_t step_count = 0;

    std::vector<Tensor> params;
    std::vector<std::vector<double>> m;  // first moments, one per parameter
    std::vector<std::vector<double>> v;  // second moments

    void add_param(const Tensor& p) {
        params.push_back(p);
        m.emplace_back(p.size(), 0.0);
        v.emplace_back(p.size(), 0.0);
    }

    void add_params(const std::vector<Tensor>& ps) {
        for (const Tensor& p : ps) add_param(p);
    }

    /// Warm-up multiplier for a given step index (0-based).
    double warmup_factor(std::int64_t step) const {
        if (warmup_steps <= 0 || step >= warmup_steps) return 1.0;
        const double t = static_cast<double>(step) / static_cast<double>(warmup_steps);
        return warmup_start_factor + (1.0 - warmup_start_factor) * t;
    }

    double effective_lr() const { return base_lr * warmup_factor(step_count); }
};

inline void zero_grads(OptimizerState& state) {
    for (Tensor& p : state.params) p.zero_grad();
}

/// One Adam update over every registered parameter. Every parameter must
/// have a populated gradient (zero_grads before backward satisfies this).
inline void adam_step(OptimizerState& state) {
    const double lr = state.effective_lr();
    const std::int64_t t = state.step_count + 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));
    for (std::size_t k = 0; k < state.params.size(); ++k) {
        Tensor& p = state.params[k];
        if (!p.has_grad())
            throw ContractError("adam_step: parameter " + std::to_string(k) +
                                " has no gradient");
        const std::vector<double>& g = p.grad();
        std::vector<double>& w = p.raw_values();
        std::vector<double>& m = state.m[k];
        std::vector<double>& v = state.v[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr * (mhat / (std::sqrt(vhat) + state.epsilon) + state.weight_decay * w[i]);
        }
    }
    state.step_count = t;
}

}  // namespace dtp

#endif  // DTP_OPTIM_HPP
