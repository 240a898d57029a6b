#ifndef OSR_TENSOR_HPP
#define OSR_TENSOR_HPP

#include <cassert>
#include <cstdint>
#include <string>
#include <vector>

namespace osr::nn {

// Dense row-major tensor of doubles. Value semantics throughout; shape is a
// plain dimension list and the data is a single contiguous buffer.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<double> data);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    const std::vector<int>& shape() const { return shape_; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // In-place shape change; the element count must be preserved.
    void set_shape(std::vector<int> shape);
    Tensor reshaped(std::vector<int> shape) const;

    void fill(double v);
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool all_finite() const;

    std::string shape_str() const;

    static std::int64_t count(const std::vector<int>& shape);

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

}  // namespace osr::nn

#endif
