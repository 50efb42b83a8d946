#ifndef DTP_TESTS_GRADCHECK_HPP
#define DTP_TESTS_GRADCHECK_HPP

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dtp/tensor.hpp"

namespace dtp::testing {

/// Central finite-difference oracle. `f` rebuilds the scalar loss from the
/// given leaf parameters on every call; analytic gradients from one
/// forward/backward are compared element-by-element against
/// (f(x+h) - f(x-h)) / 2h.
struct GradCheckResult {
    bool ok = true;
    double worst_rel = 0.0;
    std::string detail;
};

inline GradCheckResult check_gradients(
    const std::function<dtp::Tensor(const std::vector<dtp::Tensor>&)>& f,
    std::vector<dtp::Tensor> params, double h = 1e-5, double rel_tol = 1e-4) {
    GradCheckResult res;
    for (dtp::Tensor& p : params) p.zero_grad();
    dtp::Tensor loss = f(params);
    dtp::backward(loss);

    for (std::size_t k = 0; k < params.size(); ++k) {
        dtp::Tensor& p = params[k];
        const std::vector<double> analytic = p.grad();
        std::vector<double>& w = p.raw_values();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double orig = w[i];
            w[i] = orig + h;
            const double fp = f(params).item();
            w[i] = orig - h;
            const double fm = f(params).item();
            w[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double denom = std::max({1e-6, std::fabs(analytic[i]), std::fabs(numeric)});
            const double rel = std::fabs(analytic[i] - numeric) / denom;
            if (rel > res.worst_rel) res.worst_rel = rel;
            if (rel > rel_tol && res.ok) {
                res.ok = false;
                res.detail = "param " + std::to_string(k) + " elem " + std::to_string(i) +
                             ": analytic " + std::to_string(analytic[i]) + " vs numeric " +
                             std::to_string(numeric);
            }
        }
    }
    return res;
}

}  // namespace dtp::testing

#endif  // DTP_TESTS_GRADCHECK_HPP
