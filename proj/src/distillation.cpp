#include "osr/distillation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "osr/errors.hpp"

namespace osr {

namespace {

constexpr double kProbFloor = 1e-12;

void softmax_row(const double* logits, double* probs, int k, double tau) {
    double mx = logits[0];
    for (int i = 1; i < k; ++i) mx = std::max(mx, logits[i]);
    double z = 0.0;
    for (int i = 0; i < k; ++i) {
        probs[i] = std::exp((logits[i] - mx) / tau);
        z += probs[i];
    }
    for (int i = 0; i < k; ++i) probs[i] /= z;
}

}  // namespace

double JointProbabilityVector::sum() const {
    return std::accumulate(known.begin(), known.end(), 0.0) + std::accumulate(unknown.begin(), unknown.end(), 0.0);
}

double JointProbabilityVector::unknown_mass() const {
    return std::accumulate(unknown.begin(), unknown.end(), 0.0);
}

double JointProbabilityVector::max_known() const {
    return known.empty() ? 0.0 : *std::max_element(known.begin(), known.end());
}

int JointProbabilityVector::argmax_known() const {
    if (known.empty()) throw std::invalid_argument("argmax_known on empty vector");
    return static_cast<int>(std::max_element(known.begin(), known.end()) - known.begin());
}

JointProbabilityVector temperature_scaled_probs(std::span<const double> logits, int known, int unknown, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("temperature must be positive");
    if (known < 0 || unknown < 0 || static_cast<int>(logits.size()) != known + unknown)
        throw std::invalid_argument("temperature_scaled_probs: logit count does not match C+U");
    for (double l : logits)
        if (!std::isfinite(l)) throw std::invalid_argument("temperature_scaled_probs: non-finite logit");
    std::vector<double> p(logits.size());
    softmax_row(logits.data(), p.data(), static_cast<int>(logits.size()), tau);
    JointProbabilityVector out;
    out.tau = tau;
    out.known.assign(p.begin(), p.begin() + known);
    out.unknown.assign(p.begin() + known, p.end());
    return out;
}

nn::Tensor tempered_softmax(const nn::Tensor& logits, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("temperature must be positive");
    if (logits.rank() != 2) throw std::invalid_argument("tempered_softmax: expected [B,K]");
    nn::Tensor probs(logits.shape());
    const int b = logits.dim(0), k = logits.dim(1);
    for (int i = 0; i < b; ++i)
        softmax_row(logits.data() + static_cast<std::int64_t>(i) * k, probs.data() + static_cast<std::int64_t>(i) * k, k, tau);
    return probs;
}

double kd_loss(const nn::Tensor& teacher_probs, const nn::Tensor& student_probs) {
    if (!teacher_probs.same_shape(student_probs))
        throw std::invalid_argument("kd_loss: probability shapes differ");
    const int b = teacher_probs.dim(0);
    if (b == 0) return 0.0;
    double total = 0.0;
    for (std::int64_t i = 0; i < teacher_probs.size(); ++i)
        total -= teacher_probs[i] * std::log(std::max(student_probs[i], kProbFloor));
    return total / b;
}

double kd_loss(const std::vector<JointProbabilityVector>& teacher, const std::vector<JointProbabilityVector>& student) {
    if (teacher.size() != student.size()) throw std::invalid_argument("kd_loss: batch sizes differ");
    if (teacher.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < teacher.size(); ++i) {
        const auto& q = teacher[i];
        const auto& p = student[i];
        if (q.known.size() != p.known.size() || q.unknown.size() != p.unknown.size())
            throw std::invalid_argument("kd_loss: dimensionality mismatch at sample " + std::to_string(i));
        for (std::size_t c = 0; c < q.known.size(); ++c) total -= q.known[c] * std::log(std::max(p.known[c], kProbFloor));
        for (std::size_t c = 0; c < q.unknown.size(); ++c)
            total -= q.unknown[c] * std::log(std::max(p.unknown[c], kProbFloor));
    }
    return total / static_cast<double>(teacher.size());
}

void augment_teacher(ClassifierNet& teacher, int unknown, double eps_scale, Rng& rng) {
    if (unknown < 1) throw std::invalid_argument("augment_teacher: U must be >= 1");
    if (eps_scale < 0.0) throw std::invalid_argument("augment_teacher: negative eps_scale");
    teacher.append_unknown_outputs(unknown, eps_scale, rng);
}

ClassifierNet make_student(const ImageShape& shape, int known, int unknown, const std::string& backbone,
                           double eps_scale, Rng& rng) {
    ClassifierNet student(shape, known, unknown, backbone, rng);
    if (unknown > 0) student.reinit_unknown_outputs(eps_scale, rng);
    return student;
}

double hard_label_loss_and_grads(ClassifierNet& net, const nn::Tensor& batch, const std::vector<int>& labels,
                                 nn::Tensor* logits_out) {
    const int b = batch.dim(0);
    if (static_cast<std::size_t>(b) != labels.size())
        throw std::invalid_argument("hard_label_loss_and_grads: label count mismatch");
    if (b == 0) return 0.0;
    nn::Tensor logits = net.forward_logits(batch);
    const int k = logits.dim(1);
    for (int lbl : labels)
        if (lbl < 0 || lbl >= net.known_count())
            throw std::invalid_argument("hard_label_loss_and_grads: label " + std::to_string(lbl) + " not a known class");
    nn::Tensor probs = tempered_softmax(logits, 1.0);
    nn::Tensor dlogits = probs;
    double loss = 0.0;
    for (int i = 0; i < b; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        loss -= std::log(std::max(probs[static_cast<std::int64_t>(i) * k + y], kProbFloor));
        dlogits[static_cast<std::int64_t>(i) * k + y] -= 1.0;
    }
    for (std::int64_t i = 0; i < dlogits.size(); ++i) dlogits[i] /= b;
    net.backward(dlogits);
    if (logits_out) *logits_out = std::move(logits);
    return loss / b;
}

TeacherTrainStats pretrain_teacher(ClassifierNet& teacher, const ImageSet& data, const DistillationConfig& cfg,
                                   Rng& rng, std::ostream* curve_csv) {
    if (data.count() == 0) throw std::invalid_argument("pretrain_teacher: empty training set");
    for (int lbl : data.labels)
        if (lbl < 0 || lbl >= teacher.known_count())
            throw std::invalid_argument("pretrain_teacher: label " + std::to_string(lbl) +
                                        " outside known range [0," + std::to_string(teacher.known_count() - 1) + "]");
    if (cfg.batch_size < 1) throw std::invalid_argument("pretrain_teacher: batch size must be >= 1");

    nn::Adam opt(teacher.net().params(), teacher.net().grads(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
    if (curve_csv) *curve_csv << "step,loss,accuracy\n";

    TeacherTrainStats stats;
    std::vector<int> order(static_cast<std::size_t>(data.count()));
    std::iota(order.begin(), order.end(), 0);
    bool first = true;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t off = 0; off < order.size(); off += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), off + static_cast<std::size_t>(cfg.batch_size));
            std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(off), order.begin() + static_cast<std::ptrdiff_t>(end));
            nn::Tensor x = data.gather(idx);
            std::vector<int> y;
            y.reserve(idx.size());
            for (int i : idx) y.push_back(data.labels[static_cast<std::size_t>(i)]);

            teacher.zero_grad();
            nn::Tensor logits;
            const double loss = hard_label_loss_and_grads(teacher, x, y, &logits);
            if (!std::isfinite(loss)) throw TrainingDiverged("teacher pretraining loss is not finite", stats.steps);
            if (first) {
                stats.initial_loss = loss;
                first = false;
            }
            opt.step();
            ++stats.steps;
            stats.final_loss = loss;
            if (curve_csv) {
                int correct = 0;
                const int k = logits.dim(1);
                for (std::size_t i = 0; i < idx.size(); ++i) {
                    const double* row = logits.data() + static_cast<std::int64_t>(i) * k;
                    int best = 0;
                    for (int c = 1; c < teacher.known_count(); ++c)
                        if (row[c] > row[best]) best = c;
                    if (best == y[i]) ++correct;
                }
                char line[96];
                std::snprintf(line, sizeof(line), "%ld,%.17g,%.17g\n", stats.steps, loss,
                              static_cast<double>(correct) / static_cast<double>(idx.size()));
                *curve_csv << line;
            }
        }
    }
    stats.train_accuracy = classification_accuracy(teacher, data);
    return stats;
}

double kd_loss_and_grads(ClassifierNet& student, const nn::Tensor& batch, const nn::Tensor& teacher_tau_probs,
                         double tau) {
    const int b = batch.dim(0);
    if (b == 0) return 0.0;
    nn::Tensor logits = student.forward_logits(batch);
    if (!logits.same_shape(teacher_tau_probs))
        throw std::invalid_argument("kd_loss_and_grads: target shape " + teacher_tau_probs.shape_str() +
                                    " does not match student logits " + logits.shape_str());
    nn::Tensor probs = tempered_softmax(logits, tau);
    const double loss = kd_loss(teacher_tau_probs, probs);
    nn::Tensor dlogits = probs;
    for (std::int64_t i = 0; i < dlogits.size(); ++i) dlogits[i] = (dlogits[i] - teacher_tau_probs[i]) / (tau * b);
    student.backward(dlogits);
    return loss;
}

double distill_step(ClassifierNet& student, ClassifierNet& teacher, const nn::Tensor& batch, double tau,
                    nn::Adam& opt) {
    if (batch.dim(0) == 0) return 0.0;
    nn::Tensor q = tempered_softmax(teacher.forward_logits(batch), tau);
    student.zero_grad();
    const double loss = kd_loss_and_grads(student, batch, q, tau);
    if (!std::isfinite(loss)) throw TrainingDiverged("distillation loss is not finite", opt.steps_taken());
    opt.step();
    return loss;
}

nn::Tensor forward_logits_all(ClassifierNet& net, const ImageSet& data, int chunk) {
    const int n = data.count();
    nn::Tensor out({n, net.logit_count()});
    std::vector<int> idx;
    for (int off = 0; off < n; off += chunk) {
        const int end = std::min(n, off + chunk);
        idx.clear();
        for (int i = off; i < end; ++i) idx.push_back(i);
        nn::Tensor logits = net.forward_logits(data.gather(idx));
        std::copy(logits.data(), logits.data() + logits.size(), out.data() + static_cast<std::int64_t>(off) * net.logit_count());
    }
    return out;
}

double classification_accuracy(ClassifierNet& net, const ImageSet& data, int chunk) {
    if (data.count() == 0) return 0.0;
    nn::Tensor logits = forward_logits_all(net, data, chunk);
    const int k = net.logit_count();
    int correct = 0;
    for (int i = 0; i < data.count(); ++i) {
        const double* row = logits.data() + static_cast<std::int64_t>(i) * k;
        int best = 0;
        for (int c = 1; c < net.known_count(); ++c)
            if (row[c] > row[best]) best = c;
        if (best == data.labels[static_cast<std::size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / data.count();
}

}  // namespace osr
