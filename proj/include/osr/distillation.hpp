#ifndef OSR_DISTILLATION_HPP
#define OSR_DISTILLATION_HPP

#include <ostream>
#include <span>
#include <vector>

#include "osr/adam.hpp"
#include "osr/datasets.hpp"
#include "osr/networks.hpp"

namespace osr {

// Posterior over C known slots plus U synthetic unknown slots; one joint
// simplex (entries sum to 1).
struct JointProbabilityVector {
    std::vector<double> known;
    std::vector<double> unknown;
    double tau = 1.0;

    double sum() const;
    double unknown_mass() const;
    double max_known() const;
    int argmax_known() const;  // lowest index on exact ties
};

// Temperature-scaled softmax over all C+U logits, numerically stabilized by
// max subtraction. tau=1 is the standard softmax.
JointProbabilityVector temperature_scaled_probs(std::span<const double> logits, int known, int unknown, double tau);

// Row-wise variant on a [B,K] logit matrix.
nn::Tensor tempered_softmax(const nn::Tensor& logits, double tau);

// Mean natural-log cross-entropy H(Q_i, P_i) over the batch. Student entries
// are floored at 1e-12 before the log. No hard-label term.
double kd_loss(const std::vector<JointProbabilityVector>& teacher, const std::vector<JointProbabilityVector>& student);
double kd_loss(const nn::Tensor& teacher_probs, const nn::Tensor& student_probs);

struct DistillationConfig {
    double tau = 5.0;
    double lr = 0.002;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    int epochs = 3;
    int batch_size = 128;
    double eps_scale = 1e-3;  // unknown-slot weight scale
};

struct TeacherTrainStats {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double train_accuracy = 0.0;
    long steps = 0;
};

// Step 1: standard cross-entropy pretraining on known classes (labels must
// all be valid 0-based known indices). Emits "step,loss,accuracy" rows to
// curve_csv when given.
TeacherTrainStats pretrain_teacher(ClassifierNet& teacher, const ImageSet& data, const DistillationConfig& cfg,
                                   Rng& rng, std::ostream* curve_csv = nullptr);

// Appends U unknown slots with N(0, eps_scale^2) weights; the new units are
// frozen and known-class logits stay bit-identical.
void augment_teacher(ClassifierNet& teacher, int unknown, double eps_scale, Rng& rng);

// Fresh student with C+U outputs whose unknown block starts at N(0, eps^2).
ClassifierNet make_student(const ImageShape& shape, int known, int unknown, const std::string& backbone,
                           double eps_scale, Rng& rng);

// Accumulates the distillation gradient into the student for one batch with
// fixed teacher targets Q^tau; returns the loss. No optimizer step.
double kd_loss_and_grads(ClassifierNet& student, const nn::Tensor& batch, const nn::Tensor& teacher_tau_probs,
                         double tau);

// Standard hard-label cross-entropy at temperature 1; accumulates gradients
// and returns the loss. Optionally hands back the forward logits.
double hard_label_loss_and_grads(ClassifierNet& net, const nn::Tensor& batch, const std::vector<int>& labels,
                                 nn::Tensor* logits_out = nullptr);

// One optimizer update of the student on a known batch (Eq.2); returns the
// loss. Zero-length batches are a no-op.
double distill_step(ClassifierNet& student, ClassifierNet& teacher, const nn::Tensor& batch, double tau,
                    nn::Adam& opt);

// Fraction of samples whose argmax over *known* logits equals the label.
double classification_accuracy(ClassifierNet& net, const ImageSet& data, int chunk = 256);

// Forward a whole set through the classifier in fixed-size chunks.
nn::Tensor forward_logits_all(ClassifierNet& net, const ImageSet& data, int chunk = 256);

}  // namespace osr

#endif
