#include "osr/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace osr::nn {

Adam::Adam(std::vector<Tensor*> params, std::vector<Tensor*> grads, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), grads_(std::move(grads)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    if (params_.size() != grads_.size()) throw std::invalid_argument("Adam: parameter/gradient count mismatch");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Tensor* p : params_) {
        m_.emplace_back(p->shape());
        v_.emplace_back(p->shape());
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, t_);
    const double bc2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Tensor& p = *params_[k];
        const Tensor& g = *grads_[k];
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        for (std::int64_t i = 0; i < p.size(); ++i) {
            m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
            v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
            const double mh = m[i] / bc1;
            const double vh = v[i] / bc2;
            p[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
        }
    }
}

}  // namespace osr::nn
