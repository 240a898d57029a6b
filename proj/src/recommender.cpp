#include "osr/recommender.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "osr/errors.hpp"
#include "osr/image_io.hpp"
#include "osr/quantile.hpp"

namespace osr {

namespace {

constexpr double kFloor = 1e-12;

void check_probability(double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string(what) + " outside [0,1]");
}

}  // namespace

std::vector<ConditionVector> sample_conditions(int batch, int classes, Rng& rng) {
    if (batch < 0) throw std::invalid_argument("sample_conditions: negative batch");
    if (classes < 1) throw std::invalid_argument("sample_conditions: U must be >= 1");
    std::vector<ConditionVector> out;
    out.reserve(static_cast<std::size_t>(batch));
    for (int i = 0; i < batch; ++i)
        out.push_back(ConditionVector{static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))), classes});
    return out;
}

nn::Tensor conditions_to_onehot(std::span<const ConditionVector> cvs) {
    const int b = static_cast<int>(cvs.size());
    const int u = b > 0 ? cvs[0].classes : 1;
    nn::Tensor t({b, u});
    for (int i = 0; i < b; ++i) {
        if (cvs[static_cast<std::size_t>(i)].classes != u)
            throw std::invalid_argument("conditions_to_onehot: inconsistent class counts");
        const int a = cvs[static_cast<std::size_t>(i)].active;
        if (a < 0 || a >= u) throw std::invalid_argument("conditions_to_onehot: active index out of range");
        t[static_cast<std::int64_t>(i) * u + a] = 1.0;
    }
    return t;
}

// ---------------------------------------------------------------------------
// Objective values
// ---------------------------------------------------------------------------

double generator_loss(std::span<const double> disc_out, const nn::Tensor& student_probs,
                      std::span<const ConditionVector> cvs, double alpha, int known) {
    const std::size_t b = disc_out.size();
    if (student_probs.rank() != 2 || static_cast<std::size_t>(student_probs.dim(0)) != b || cvs.size() != b)
        throw std::invalid_argument("generator_loss: batch sizes disagree");
    if (alpha < 0.0) throw std::invalid_argument("generator_loss: alpha must be >= 0");
    if (b == 0) return 0.0;
    const int k = student_probs.dim(1);
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        check_probability(disc_out[i], "discriminator output");
        total += std::log(std::max(1.0 - disc_out[i], kFloor));
        const int slot = known + cvs[i].active;
        if (slot >= k) throw std::invalid_argument("generator_loss: condition slot beyond student outputs");
        total -= alpha * std::log(std::max(student_probs[static_cast<std::int64_t>(i) * k + slot], kFloor));
    }
    return total / static_cast<double>(b);
}

double discriminator_loss(std::span<const double> real_out, std::span<const double> fake_out) {
    if (real_out.empty() || fake_out.empty()) throw std::invalid_argument("discriminator_loss: empty batch");
    double real_term = 0.0, fake_term = 0.0;
    for (double d : real_out) {
        check_probability(d, "discriminator output");
        real_term += std::log(std::max(d, kFloor));
    }
    for (double d : fake_out) {
        check_probability(d, "discriminator output");
        fake_term += std::log(std::max(1.0 - d, kFloor));
    }
    return real_term / static_cast<double>(real_out.size()) + fake_term / static_cast<double>(fake_out.size());
}

double student_unknown_loss(const nn::Tensor& student_probs, std::span<const ConditionVector> cvs,
                            const std::vector<bool>& mask, int known) {
    const std::size_t b = cvs.size();
    if (mask.size() != b || static_cast<std::size_t>(student_probs.dim(0)) != b)
        throw std::invalid_argument("student_unknown_loss: batch sizes disagree");
    const int k = student_probs.rank() == 2 ? student_probs.dim(1) : 0;
    double total = 0.0;
    long kept = 0;
    for (std::size_t i = 0; i < b; ++i) {
        if (!mask[i]) continue;
        const int slot = known + cvs[i].active;
        if (slot >= k) throw std::invalid_argument("student_unknown_loss: condition slot beyond student outputs");
        total -= std::log(std::max(student_probs[static_cast<std::int64_t>(i) * k + slot], kFloor));
        ++kept;
    }
    return kept == 0 ? 0.0 : total / static_cast<double>(kept);
}

std::vector<bool> recommend_filter(std::span<const double> teacher_confidence, double lambda) {
    std::vector<bool> mask(teacher_confidence.size());
    for (std::size_t i = 0; i < teacher_confidence.size(); ++i) {
        check_probability(teacher_confidence[i], "confidence");
        mask[i] = teacher_confidence[i] < lambda;
    }
    return mask;
}

std::vector<double> teacher_confidences(ClassifierNet& teacher, const nn::Tensor& batch) {
    nn::Tensor probs = tempered_softmax(teacher.forward_logits(batch), 1.0);
    const int b = probs.dim(0), k = probs.dim(1);
    std::vector<double> conf(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
        const double* row = probs.data() + static_cast<std::int64_t>(i) * k;
        double mx = 0.0;
        for (int c = 0; c < teacher.known_count(); ++c) mx = std::max(mx, row[c]);
        conf[static_cast<std::size_t>(i)] = mx;
    }
    return conf;
}

double calibrate_lambda(ClassifierNet& teacher, const ImageSet& known_train, double quantile) {
    if (known_train.count() == 0) throw std::invalid_argument("calibrate_lambda: empty calibration set");
    std::vector<double> conf;
    conf.reserve(static_cast<std::size_t>(known_train.count()));
    std::vector<int> idx;
    for (int off = 0; off < known_train.count(); off += 256) {
        const int end = std::min(known_train.count(), off + 256);
        idx.clear();
        for (int i = off; i < end; ++i) idx.push_back(i);
        for (double c : teacher_confidences(teacher, known_train.gather(idx))) conf.push_back(c);
    }
    return lower_nearest_rank_quantile(std::move(conf), quantile);
}

// ---------------------------------------------------------------------------
// Gradient-producing steps
// ---------------------------------------------------------------------------

double disc_loss_and_grads(DiscriminatorNet& disc, const nn::Tensor& real, const nn::Tensor& fake) {
    const int br = real.dim(0), bf = fake.dim(0);
    nn::Tensor d_real = disc.forward(real);
    nn::Tensor dreal({br});
    for (int i = 0; i < br; ++i) dreal[i] = -1.0 / (br * std::max(d_real[i], kFloor));
    disc.backward(dreal);

    nn::Tensor d_fake = disc.forward(fake);
    nn::Tensor dfake({bf});
    for (int i = 0; i < bf; ++i) dfake[i] = 1.0 / (bf * std::max(1.0 - d_fake[i], kFloor));
    disc.backward(dfake);

    return discriminator_loss(std::span(d_real.data(), static_cast<std::size_t>(br)),
                              std::span(d_fake.data(), static_cast<std::size_t>(bf)));
}

double gen_loss_and_grads(GeneratorNet& gen, DiscriminatorNet& disc, ClassifierNet& student, const nn::Tensor& z,
                          std::span<const ConditionVector> cvs, double alpha) {
    const int b = z.dim(0);
    nn::Tensor cv1h = conditions_to_onehot(cvs);
    nn::Tensor fake = gen.forward(z, cv1h);

    nn::Tensor d_out = disc.forward(fake);
    nn::Tensor dd({b});
    for (int i = 0; i < b; ++i) dd[i] = -1.0 / (b * std::max(1.0 - d_out[i], kFloor));
    nn::Tensor dfake = disc.backward(dd);

    nn::Tensor logits = student.forward_logits(fake);
    nn::Tensor probs = tempered_softmax(logits, 1.0);
    if (alpha > 0.0) {
        const int k = probs.dim(1);
        nn::Tensor dlogits = probs;
        for (int i = 0; i < b; ++i) dlogits[static_cast<std::int64_t>(i) * k + student.known_count() + cvs[static_cast<std::size_t>(i)].active] -= 1.0;
        for (std::int64_t i = 0; i < dlogits.size(); ++i) dlogits[i] *= alpha / b;
        nn::Tensor dfake_s = student.backward(dlogits);
        for (std::int64_t i = 0; i < dfake.size(); ++i) dfake[i] += dfake_s[i];
    }

    gen.backward(dfake);
    return generator_loss(std::span(d_out.data(), static_cast<std::size_t>(b)), probs, cvs, alpha,
                          student.known_count());
}

double student_unknown_loss_and_grads(ClassifierNet& student, const nn::Tensor& fake,
                                      std::span<const ConditionVector> cvs, const std::vector<bool>& mask) {
    const int b = fake.dim(0);
    long kept = std::count(mask.begin(), mask.end(), true);
    nn::Tensor logits = student.forward_logits(fake);
    nn::Tensor probs = tempered_softmax(logits, 1.0);
    const double loss = student_unknown_loss(probs, cvs, mask, student.known_count());
    if (kept == 0) return loss;
    const int k = probs.dim(1);
    nn::Tensor dlogits({b, k});
    for (int i = 0; i < b; ++i) {
        if (!mask[static_cast<std::size_t>(i)]) continue;
        const double* p = probs.data() + static_cast<std::int64_t>(i) * k;
        double* g = dlogits.data() + static_cast<std::int64_t>(i) * k;
        for (int c = 0; c < k; ++c) g[c] = p[c] / static_cast<double>(kept);
        g[student.known_count() + cvs[static_cast<std::size_t>(i)].active] -= 1.0 / static_cast<double>(kept);
    }
    student.backward(dlogits);
    return loss;
}

// ---------------------------------------------------------------------------
// Alternating training
// ---------------------------------------------------------------------------

namespace {

// Cycles through a shuffled index order, reshuffling at each wrap.
class BatchCursor {
public:
    BatchCursor(int n, Rng& rng) : order_(static_cast<std::size_t>(n)), rng_(rng) {
        std::iota(order_.begin(), order_.end(), 0);
        rng_.shuffle(order_);
    }

    std::vector<int> next(int batch) {
        std::vector<int> idx;
        idx.reserve(static_cast<std::size_t>(batch));
        for (int i = 0; i < batch; ++i) {
            if (pos_ == order_.size()) {
                rng_.shuffle(order_);
                pos_ = 0;
            }
            idx.push_back(order_[pos_++]);
        }
        return idx;
    }

private:
    std::vector<int> order_;
    std::size_t pos_ = 0;
    Rng& rng_;
};

void require_finite(double v, const char* what, long step) {
    if (!std::isfinite(v)) throw TrainingDiverged(std::string(what) + " is not finite", step);
}

}  // namespace

std::vector<AlternatingLogRow> alternating_train(ModelBundle& bundle, const ImageSet& known_train,
                                                 const DistillationConfig& distill_cfg,
                                                 const RecommenderConfig& rec_cfg, VariantToggles toggles,
                                                 long steps, Rng& rng, std::ostream* log_csv,
                                                 const std::function<void(long, ModelBundle&)>& on_step,
                                                 long on_step_every) {
    if (known_train.count() == 0) throw std::invalid_argument("alternating_train: empty known training set");
    if (rec_cfg.batch_size < 1) throw std::invalid_argument("alternating_train: batch size must be >= 1");
    const int unknowns = bundle.student.unknown_count();
    if (toggles.recommend && unknowns != bundle.generator.condition_count())
        throw std::invalid_argument("alternating_train: student unknown slots and generator conditions disagree");
    if (toggles.distill && bundle.teacher.logit_count() != bundle.student.logit_count())
        throw std::invalid_argument("alternating_train: teacher must be augmented to the student's output size");

    nn::Adam opt_s(bundle.student.net().params(), bundle.student.net().grads(), distill_cfg.lr,
                   distill_cfg.adam_beta1, distill_cfg.adam_beta2);
    std::unique_ptr<nn::Adam> opt_g, opt_d;
    if (toggles.recommend) {
        opt_g = std::make_unique<nn::Adam>(bundle.generator.params(), bundle.generator.grads(), rec_cfg.lr,
                                           rec_cfg.adam_beta1, rec_cfg.adam_beta2);
        opt_d = std::make_unique<nn::Adam>(bundle.discriminator.net().params(), bundle.discriminator.net().grads(),
                                           rec_cfg.lr, rec_cfg.adam_beta1, rec_cfg.adam_beta2);
    }

    BatchCursor cursor(known_train.count(), rng);
    const int batch = rec_cfg.batch_size;
    const int zdim = toggles.recommend ? bundle.generator.noise_dim() : 0;

    std::vector<AlternatingLogRow> log;
    log.reserve(static_cast<std::size_t>(steps));
    if (log_csv) *log_csv << "step,loss_d,loss_g,loss_kd,loss_s,mask_fraction\n";

    for (long step = 1; step <= steps; ++step) {
        AlternatingLogRow row;
        row.step = step;

        const std::vector<int> idx = cursor.next(batch);
        nn::Tensor x = known_train.gather(idx);

        nn::Tensor z, cv1h;
        std::vector<ConditionVector> cvs;
        if (toggles.recommend) {
            z = nn::Tensor({batch, zdim});
            for (std::int64_t i = 0; i < z.size(); ++i) z[i] = rng.normal();
            cvs = sample_conditions(batch, unknowns, rng);
            cv1h = conditions_to_onehot(cvs);

            nn::Tensor fake = bundle.generator.forward(z, cv1h);
            bundle.discriminator.zero_grad();
            row.loss_d = disc_loss_and_grads(bundle.discriminator, x, fake);
            require_finite(row.loss_d, "discriminator loss", step);
            opt_d->step();

            bundle.generator.zero_grad();
            row.loss_g = gen_loss_and_grads(bundle.generator, bundle.discriminator, bundle.student, z, cvs,
                                            rec_cfg.alpha);
            require_finite(row.loss_g, "generator loss", step);
            opt_g->step();
        }

        bundle.student.zero_grad();
        if (toggles.distill) {
            nn::Tensor q = tempered_softmax(bundle.teacher.forward_logits(x), distill_cfg.tau);
            row.loss_kd = kd_loss_and_grads(bundle.student, x, q, distill_cfg.tau);
        } else {
            std::vector<int> y;
            y.reserve(idx.size());
            for (int i : idx) y.push_back(known_train.labels[static_cast<std::size_t>(i)]);
            row.loss_kd = hard_label_loss_and_grads(bundle.student, x, y);
        }
        require_finite(row.loss_kd, "known-batch student loss", step);
        opt_s.step();

        if (toggles.recommend && rec_cfg.alpha > 0.0) {
            nn::Tensor fake = bundle.generator.forward(z, cv1h);
            std::vector<bool> mask;
            if (toggles.distill) {
                std::vector<double> conf = teacher_confidences(bundle.teacher, fake);
                mask = recommend_filter(conf, bundle.lambda);
            } else {
                mask.assign(static_cast<std::size_t>(batch), true);
            }
            const long kept = std::count(mask.begin(), mask.end(), true);
            row.mask_fraction = static_cast<double>(kept) / static_cast<double>(batch);
            if (kept > 0) {
                bundle.student.zero_grad();
                row.loss_s = student_unknown_loss_and_grads(bundle.student, fake, cvs, mask);
                require_finite(row.loss_s, "unknown-sample student loss", step);
                opt_s.step();
            }
        }

        log.push_back(row);
        if (log_csv) {
            char line[192];
            std::snprintf(line, sizeof(line), "%ld,%.17g,%.17g,%.17g,%.17g,%.17g\n", row.step, row.loss_d, row.loss_g,
                          row.loss_kd, row.loss_s, row.mask_fraction);
            *log_csv << line;
        }
        if (on_step && on_step_every > 0 && step % on_step_every == 0) on_step(step, bundle);
    }
    return log;
}

void emit_sample_grid(GeneratorNet& generator, int conditions, int per_class, const std::string& path, Rng& rng) {
    if (per_class < 1) throw std::invalid_argument("emit_sample_grid: per_class must be >= 1");
    if (conditions != generator.condition_count())
        throw std::invalid_argument("emit_sample_grid: condition count does not match the generator");
    const ImageShape shape = generator.output_shape();
    nn::Tensor tile({conditions * shape.h, per_class * shape.w, shape.ch});
    for (int row = 0; row < conditions; ++row) {
        nn::Tensor z({per_class, generator.noise_dim()});
        for (std::int64_t i = 0; i < z.size(); ++i) z[i] = rng.normal();
        std::vector<ConditionVector> cvs(static_cast<std::size_t>(per_class), ConditionVector{row, conditions});
        nn::Tensor imgs = generator.forward(z, conditions_to_onehot(cvs));
        for (int col = 0; col < per_class; ++col)
            for (int y = 0; y < shape.h; ++y)
                for (int xpx = 0; xpx < shape.w * shape.ch; ++xpx)
                    tile[(static_cast<std::int64_t>(row) * shape.h + y) * per_class * shape.w * shape.ch +
                         static_cast<std::int64_t>(col) * shape.w * shape.ch + xpx] =
                        imgs[((static_cast<std::int64_t>(col) * shape.h) + y) * shape.w * shape.ch + xpx];
    }
    write_image(path, tile);
}

}  // namespace osr
