#ifndef OSR_RECOMMENDER_HPP
#define OSR_RECOMMENDER_HPP

#include <functional>
#include <ostream>
#include <span>
#include <vector>

#include "osr/datasets.hpp"
#include "osr/distillation.hpp"
#include "osr/networks.hpp"

namespace osr {

// One-hot selector over the U synthetic unknown classes.
struct ConditionVector {
    int active = 0;
    int classes = 1;
};

// i.i.d. uniform draw over the U one-hot vectors.
std::vector<ConditionVector> sample_conditions(int batch, int classes, Rng& rng);

// [B,U] 0/1 matrix.
nn::Tensor conditions_to_onehot(std::span<const ConditionVector> cvs);

struct RecommenderConfig {
    double alpha = 0.5;
    double lambda_quantile = 0.01;
    int batch_size = 128;
    double lr = 0.002;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
};

// ---------------------------------------------------------------------------
// Objective values. Each training step computes its gradients against these
// exact quantities; log arguments are floored at 1e-12.
// ---------------------------------------------------------------------------

// Generator objective (minimized): mean over the batch of
//   log(1 - D(G(z))) + alpha * H([0,cv], S(G(z)))
// where the cross-entropy target is zero on the known slots and the one-hot
// condition on the unknown slots.
double generator_loss(std::span<const double> disc_out, const nn::Tensor& student_probs,
                      std::span<const ConditionVector> cvs, double alpha, int known);

// Discriminator objective (maximized): mean log D(x) over real samples plus
// mean log(1 - D(G(z))) over fakes. Training minimizes its negation.
double discriminator_loss(std::span<const double> real_out, std::span<const double> fake_out);

// Unknown-sample loss for the student (minimized): mean of H([0,cv_i], S_i)
// over the masked-in samples; zero when the mask excludes everything.
double student_unknown_loss(const nn::Tensor& student_probs, std::span<const ConditionVector> cvs,
                            const std::vector<bool>& mask, int known);

// True ("worth learning") iff the teacher confidence is strictly below
// lambda; ties are rejected.
std::vector<bool> recommend_filter(std::span<const double> teacher_confidence, double lambda);

// Teacher confidences on a batch: max known-class softmax probability at
// temperature 1.
std::vector<double> teacher_confidences(ClassifierNet& teacher, const nn::Tensor& batch);

// Minimum-confidence threshold: the lower nearest-rank `quantile` of the
// teacher's confidences on the known training samples, so that (at the
// default 0.01) 99% of the training data scores above it.
double calibrate_lambda(ClassifierNet& teacher, const ImageSet& known_train, double quantile = 0.01);

// ---------------------------------------------------------------------------
// Gradient-producing steps. Each accumulates parameter gradients for exactly
// one network (all other networks' accumulators are scratch; callers zero
// what they step) and returns the objective value for that update.
// ---------------------------------------------------------------------------

// Accumulates d(-discriminator_loss)/d(theta_D); returns the maximized value.
double disc_loss_and_grads(DiscriminatorNet& disc, const nn::Tensor& real, const nn::Tensor& fake);

// Accumulates d(generator_loss)/d(theta_G) through both the discriminator and
// the student; returns the loss.
double gen_loss_and_grads(GeneratorNet& gen, DiscriminatorNet& disc, ClassifierNet& student, const nn::Tensor& z,
                          std::span<const ConditionVector> cvs, double alpha);

// Accumulates d(student_unknown_loss)/d(theta_S); returns the loss.
double student_unknown_loss_and_grads(ClassifierNet& student, const nn::Tensor& fake,
                                      std::span<const ConditionVector> cvs, const std::vector<bool>& mask);

// ---------------------------------------------------------------------------
// Alternating training
// ---------------------------------------------------------------------------

// Parameters and state of the four networks plus the calibrated filter
// threshold.
struct ModelBundle {
    ClassifierNet teacher;
    ClassifierNet student;
    GeneratorNet generator;
    DiscriminatorNet discriminator;
    double lambda = 0.0;
};

// Which training signals are active: `distill` transfers teacher knowledge on
// known batches (otherwise the student learns knowns from hard labels, with
// the confidence filter disabled); `recommend` trains the GAN and feeds
// generated samples to the student.
struct VariantToggles {
    bool distill = true;
    bool recommend = true;
};

struct AlternatingLogRow {
    long step = 0;
    double loss_d = 0.0;    // discriminator objective (maximized form)
    double loss_g = 0.0;    // generator loss
    double loss_kd = 0.0;   // known-batch loss (distillation or hard CE)
    double loss_s = 0.0;    // unknown-sample student loss
    double mask_fraction = 0.0;
};

// One update cycle per step: discriminator, then generator, then the student
// on the known batch and on the (re-generated) fake batch through the
// confidence filter. The same latent/condition batch serves the generator
// and student updates. With alpha == 0 the student's unknown-sample update
// is disabled entirely. Deterministic for a fixed rng state.
std::vector<AlternatingLogRow> alternating_train(
    ModelBundle& bundle, const ImageSet& known_train, const DistillationConfig& distill_cfg,
    const RecommenderConfig& rec_cfg, VariantToggles toggles, long steps, Rng& rng,
    std::ostream* log_csv = nullptr,
    const std::function<void(long, ModelBundle&)>& on_step = nullptr, long on_step_every = 0);

// U rows (one synthetic unknown class per row) by per_class columns of
// generated samples, written as a PGM/PPM tile image.
void emit_sample_grid(GeneratorNet& generator, int conditions, int per_class, const std::string& path, Rng& rng);

}  // namespace osr

#endif
