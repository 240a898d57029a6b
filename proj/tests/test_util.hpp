#ifndef OSR_TEST_UTIL_HPP
#define OSR_TEST_UTIL_HPP

#include <cmath>
#include <functional>
#include <vector>

#include "osr/rng.hpp"
#include "osr/tensor.hpp"

namespace osr::test {

// Central finite differences against analytically accumulated gradients.
//
// `loss_with_grads` must zero its own gradient accumulators, run the forward
// and backward passes, and return the loss. Returns the worst relative error
// max |analytic - numeric| / max(1e-6, |analytic| + |numeric|).
inline double max_grad_rel_err(const std::function<double()>& loss_with_grads, std::vector<nn::Tensor*> params,
                               std::vector<nn::Tensor*> grads, double h = 1e-5) {
    loss_with_grads();
    std::vector<std::vector<double>> analytic;
    for (nn::Tensor* g : grads) analytic.emplace_back(g->data(), g->data() + g->size());

    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        nn::Tensor& p = *params[k];
        for (std::int64_t i = 0; i < p.size(); ++i) {
            const double orig = p[i];
            p[i] = orig + h;
            const double lp = loss_with_grads();
            p[i] = orig - h;
            const double lm = loss_with_grads();
            p[i] = orig;
            const double numeric = (lp - lm) / (2.0 * h);
            const double a = analytic[k][static_cast<std::size_t>(i)];
            const double err = std::fabs(a - numeric) / std::max(1e-6, std::fabs(a) + std::fabs(numeric));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

inline nn::Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    nn::Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    return t;
}

inline nn::Tensor random_unit_tensor(std::vector<int> shape, Rng& rng) {
    nn::Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform();
    return t;
}

}  // namespace osr::test

#endif
