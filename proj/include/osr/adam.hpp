#ifndef OSR_ADAM_HPP
#define OSR_ADAM_HPP

#include <vector>

#include "osr/tensor.hpp"

namespace osr::nn {

// Adaptive-moment optimizer. One instance owns the first/second moment state
// for a fixed parameter list; step order is deterministic.
class Adam {
public:
    Adam(std::vector<Tensor*> params, std::vector<Tensor*> grads, double lr, double beta1 = 0.5,
         double beta2 = 0.999, double eps = 1e-8);

    // Applies one update from the currently accumulated gradients.
    void step();
    long steps_taken() const { return t_; }

private:
    std::vector<Tensor*> params_, grads_;
    std::vector<Tensor> m_, v_;
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
};

}  // namespace osr::nn

#endif
