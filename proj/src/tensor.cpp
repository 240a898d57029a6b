#include "osr/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace osr::nn {

std::int64_t Tensor::count(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(count(shape_)), 0.0) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (count(shape_) != static_cast<std::int64_t>(data_.size()))
        throw std::invalid_argument("Tensor: data size does not match shape " + shape_str());
}

void Tensor::set_shape(std::vector<int> shape) {
    if (count(shape) != size()) throw std::invalid_argument("Tensor: reshape changes element count");
    shape_ = std::move(shape);
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
    Tensor t = *this;
    t.set_shape(std::move(shape));
    return t;
}

void Tensor::fill(double v) {
    for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

std::string Tensor::shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape_[i]);
    }
    return s + "]";
}

}  // namespace osr::nn
