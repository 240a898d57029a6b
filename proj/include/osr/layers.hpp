#ifndef OSR_LAYERS_HPP
#define OSR_LAYERS_HPP

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "osr/rng.hpp"
#include "osr/tensor.hpp"

namespace osr::nn {

// One differentiable stage. forward() caches whatever backward() needs;
// backward() accumulates parameter gradients and returns the input gradient.
// A layer instance is therefore stateful across a forward/backward pair and
// must not be shared between concurrent calls.
struct Layer {
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x) = 0;
    virtual Tensor backward(const Tensor& dy) = 0;
    virtual std::vector<Tensor*> params() { return {}; }
    virtual std::vector<Tensor*> grads() { return {}; }
    virtual std::unique_ptr<Layer> clone() const = 0;
    virtual std::string describe() const = 0;
};

// Fully connected layer, input [B,in] -> [B,out].
//
// The matrix product is written as explicit loops with the reduction running
// over the input index in ascending order, so the value computed for output
// column j does not depend on how many columns exist. Appending output units
// (teacher augmentation) then provably leaves existing logits bit-identical.
class Dense : public Layer {
public:
    // init_std < 0 selects sqrt(2/in).
    Dense(int in, int out, Rng& rng, double init_std = -1.0);

    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    std::vector<Tensor*> params() override { return {&w_, &b_}; }
    std::vector<Tensor*> grads() override { return {&gw_, &gb_}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }
    std::string describe() const override;

    int in_features() const { return in_; }
    int out_features() const { return out_; }

    // Appends columns initialised from N(0, init_std^2); existing weights are
    // preserved bitwise.
    void append_outputs(int extra, double init_std, Rng& rng);
    // Re-draws the trailing `count` output columns (and biases) from
    // N(0, init_std^2).
    void reinit_tail_outputs(int count, double init_std, Rng& rng);

    Tensor& weight() { return w_; }
    Tensor& bias() { return b_; }

private:
    int in_ = 0, out_ = 0;
    Tensor w_, b_, gw_, gb_;  // w [in,out], b [out]
    Tensor x_;                // cached input
};

// im2col + GEMM convolution, input [B,H,W,C] -> [B,OH,OW,F].
class Conv2d : public Layer {
public:
    Conv2d(int in_ch, int filters, int kernel, int stride, int pad, Rng& rng, double init_std = -1.0);

    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    std::vector<Tensor*> params() override { return {&w_, &b_}; }
    std::vector<Tensor*> grads() override { return {&gw_, &gb_}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
    std::string describe() const override;

private:
    int cin_, f_, k_, s_, p_;
    Tensor w_, b_, gw_, gb_;  // w [k*k*cin, f]
    Tensor cols_;             // cached im2col matrix
    std::vector<int> x_shape_;
};

// Transposed convolution (fractionally strided), input [B,H,W,C] ->
// [B,(H-1)*s+k-2p, ..., F]. Forward scatters GEMM columns into the output;
// backward gathers with the same index map.
class ConvTranspose2d : public Layer {
public:
    ConvTranspose2d(int in_ch, int filters, int kernel, int stride, int pad, Rng& rng, double init_std = -1.0);

    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    std::vector<Tensor*> params() override { return {&w_, &b_}; }
    std::vector<Tensor*> grads() override { return {&gw_, &gb_}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<ConvTranspose2d>(*this); }
    std::string describe() const override;

private:
    int cin_, f_, k_, s_, p_;
    Tensor w_, b_, gw_, gb_;  // w [cin, k*k*f]
    Tensor x_;                // cached input
    std::vector<int> y_shape_;
};

class LeakyRelu : public Layer {
public:
    explicit LeakyRelu(double slope = 0.2) : slope_(slope) {}
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<LeakyRelu>(*this); }
    std::string describe() const override { return "lrelu"; }

private:
    double slope_;
    Tensor x_;
};

class Sigmoid : public Layer {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Sigmoid>(*this); }
    std::string describe() const override { return "sigmoid"; }

private:
    Tensor y_;
};

// [B, d0, d1, ...] -> [B, d0*d1*...]
class Flatten : public Layer {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(*this); }
    std::string describe() const override { return "flatten"; }

private:
    std::vector<int> x_shape_;
};

// [B, n] -> [B, dims...] with product(dims) == n.
class Reshape : public Layer {
public:
    explicit Reshape(std::vector<int> dims) : dims_(std::move(dims)) {}
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& dy) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Reshape>(*this); }
    std::string describe() const override;

private:
    std::vector<int> dims_;
    std::vector<int> x_shape_;
};

// Ordered layer stack.
class Sequential {
public:
    Sequential() = default;
    Sequential(Sequential&&) = default;
    Sequential& operator=(Sequential&&) = default;
    Sequential(const Sequential& o) { *this = o; }
    Sequential& operator=(const Sequential& o) {
        if (this != &o) {
            layers_.clear();
            layers_.reserve(o.layers_.size());
            for (const auto& l : o.layers_) layers_.push_back(l->clone());
        }
        return *this;
    }

    void add(std::unique_ptr<Layer> l) { layers_.push_back(std::move(l)); }

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

    std::vector<Tensor*> params() const;
    std::vector<Tensor*> grads() const;
    std::vector<std::pair<std::string, Tensor*>> named_params(const std::string& prefix) const;
    void zero_grad();
    std::int64_t param_count() const;

    std::size_t layer_count() const { return layers_.size(); }
    Layer& layer(std::size_t i) { return *layers_[i]; }
    const Layer& layer(std::size_t i) const { return *layers_[i]; }

    std::string describe() const;

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace osr::nn

#endif
