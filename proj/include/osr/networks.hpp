#ifndef OSR_NETWORKS_HPP
#define OSR_NETWORKS_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "osr/layers.hpp"
#include "osr/rng.hpp"
#include "osr/shape.hpp"
#include "osr/tensor.hpp"

namespace osr {

// Layer stacks are described by comma-separated descriptor strings:
//
//   conv:F:K:S[:P]    convolution, F filters, KxK kernel, stride S
//                     (default padding (K-1)/2)
//   tconv:F:K:S[:P]   transposed convolution (default padding (K-S)/2)
//   dense:N           fully connected layer with N units
//   reshape:HxWxC     per-sample reshape
//
// A leaky rectifier (slope 0.2) follows every descriptor layer; builders
// append their own heads (logit layer, sigmoid, ...). Preset names ("plain",
// "vgg-small", "paper", "reduced") resolve to descriptors per input shape.
std::string resolve_backbone(const std::string& name_or_descriptor, const ImageShape& shape);
std::string resolve_generator_arch(const std::string& name_or_descriptor, const ImageShape& shape);
std::string resolve_discriminator_arch(const std::string& name_or_descriptor, const ImageShape& shape);

// Softmax classifier body producing C known logits followed by U synthetic
// unknown logits. U may be zero (pure teacher before augmentation).
class ClassifierNet {
public:
    ClassifierNet() = default;
    ClassifierNet(const ImageShape& shape, int known, int unknown, const std::string& backbone, Rng& rng);

    // [B,H,W,Ch] -> [B,C+U]; mutates layer caches, callers needing gradients
    // must pair this with backward().
    nn::Tensor forward_logits(const nn::Tensor& batch);
    nn::Tensor backward(const nn::Tensor& dlogits);

    int known_count() const { return known_; }
    int unknown_count() const { return unknown_; }
    int logit_count() const { return known_ + unknown_; }
    const ImageShape& input_shape() const { return shape_; }
    const std::string& backbone() const { return backbone_; }

    // Appends U unknown output units with N(0, eps_scale^2) weights and marks
    // them frozen. Known-class logits are preserved bit-exactly.
    void append_unknown_outputs(int count, double eps_scale, Rng& rng);
    // Re-draws the unknown output block from N(0, eps_scale^2).
    void reinit_unknown_outputs(double eps_scale, Rng& rng);
    bool unknown_outputs_frozen() const { return unknown_frozen_; }

    nn::Sequential& net() { return net_; }
    const nn::Sequential& net() const { return net_; }
    std::vector<std::pair<std::string, nn::Tensor*>> named_params(const std::string& prefix) const {
        return net_.named_params(prefix);
    }
    void zero_grad() { net_.zero_grad(); }

private:
    ImageShape shape_{};
    int known_ = 0, unknown_ = 0;
    std::string backbone_;
    nn::Sequential net_;
    bool unknown_frozen_ = false;
};

// Conditional generator: a U-dimensional one-hot condition is embedded to the
// noise dimension and multiplied elementwise into the latent vector before
// the deconvolutional stack. Sigmoid output keeps samples in [0,1].
class GeneratorNet {
public:
    GeneratorNet() = default;
    GeneratorNet(const ImageShape& out_shape, int conditions, const std::string& arch, Rng& rng, int noise_dim = 100);
    GeneratorNet(GeneratorNet&&) = default;
    GeneratorNet& operator=(GeneratorNet&&) = default;
    GeneratorNet(const GeneratorNet& o) { *this = o; }
    GeneratorNet& operator=(const GeneratorNet& o);

    // z [B,noise_dim], cv [B,U] -> images [B,H,W,Ch]
    nn::Tensor forward(const nn::Tensor& z, const nn::Tensor& cv);
    // Accumulates gradients for the stack and the condition embedding.
    void backward(const nn::Tensor& dimage);

    int condition_count() const { return conditions_; }
    int noise_dim() const { return noise_dim_; }
    const ImageShape& output_shape() const { return shape_; }
    const std::string& arch() const { return arch_; }

    nn::Dense& embedding() { return *embed_; }
    std::vector<nn::Tensor*> params() const;
    std::vector<nn::Tensor*> grads() const;
    std::vector<std::pair<std::string, nn::Tensor*>> named_params(const std::string& prefix) const;
    void zero_grad();

private:
    ImageShape shape_{};
    int conditions_ = 0, noise_dim_ = 0;
    std::string arch_;
    std::unique_ptr<nn::Dense> embed_;
    nn::Sequential stack_;
    nn::Tensor z_, embedded_;
};

// Real/fake discriminator with a logistic scalar head.
class DiscriminatorNet {
public:
    DiscriminatorNet() = default;
    DiscriminatorNet(const ImageShape& in_shape, const std::string& arch, Rng& rng);

    // [B,H,W,Ch] -> [B] probabilities in (0,1)
    nn::Tensor forward(const nn::Tensor& batch);
    // dscore [B]; returns gradient w.r.t. the input batch.
    nn::Tensor backward(const nn::Tensor& dscore);

    const ImageShape& input_shape() const { return shape_; }
    const std::string& arch() const { return arch_; }

    nn::Sequential& net() { return net_; }
    std::vector<std::pair<std::string, nn::Tensor*>> named_params(const std::string& prefix) const {
        return net_.named_params(prefix);
    }
    void zero_grad() { net_.zero_grad(); }

private:
    ImageShape shape_{};
    std::string arch_;
    nn::Sequential net_;
};

// ---------------------------------------------------------------------------
// Checkpoints: a self-describing binary container of named parameter tensors
// plus the config fingerprint and step counter. Round-trips are bit-exact.
// ---------------------------------------------------------------------------

struct CheckpointData {
    std::string fingerprint;
    std::uint64_t step = 0;
    std::vector<std::pair<std::string, nn::Tensor>> tensors;
};

void save_checkpoint(const std::string& path, const std::vector<std::pair<std::string, nn::Tensor*>>& tensors,
                     const std::string& fingerprint, std::uint64_t step);
CheckpointData read_checkpoint(const std::string& path);
// Copies stored tensors into `dest` (matched by name and shape). Throws
// ParseError when the fingerprint or any shape disagrees, NotFoundError when
// the file or a tensor is missing.
std::uint64_t load_checkpoint(const std::string& path, const std::vector<std::pair<std::string, nn::Tensor*>>& dest,
                              const std::string& expected_fingerprint);

}  // namespace osr

#endif
