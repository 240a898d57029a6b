#include <doctest.h>

#include <cmath>
#include <numeric>

#include "osr/distillation.hpp"
#include "osr/errors.hpp"
#include "test_util.hpp"

using namespace osr;
using nn::Tensor;

namespace {

// Independent softmax evaluation for oracle values.
std::vector<double> softmax_oracle(std::vector<double> logits, double tau) {
    double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double& l : logits) {
        l = std::exp((l - mx) / tau);
        z += l;
    }
    for (double& l : logits) l /= z;
    return logits;
}

double entropy(const std::vector<double>& p) {
    double h = 0.0;
    for (double v : p)
        if (v > 0) h -= v * std::log(v);
    return h;
}

}  // namespace

TEST_CASE("temperature softmax: symmetry, tau=1, oracle case") {
    // all-zero logits -> uniform over C+U
    JointProbabilityVector u = temperature_scaled_probs(std::vector<double>{0, 0, 0}, 2, 1, 7.3);
    CHECK(u.known[0] == doctest::Approx(1.0 / 3));
    CHECK(u.known[1] == doctest::Approx(1.0 / 3));
    CHECK(u.unknown[0] == doctest::Approx(1.0 / 3));

    // tau=1 equals the standard softmax
    std::vector<double> logits{1.2, -0.4, 0.3, 2.0};
    JointProbabilityVector p1 = temperature_scaled_probs(logits, 3, 1, 1.0);
    std::vector<double> oracle = softmax_oracle(logits, 1.0);
    for (int i = 0; i < 3; ++i) CHECK(p1.known[static_cast<std::size_t>(i)] == doctest::Approx(oracle[static_cast<std::size_t>(i)]).epsilon(1e-12));
    CHECK(p1.unknown[0] == doctest::Approx(oracle[3]).epsilon(1e-12));

    // known (2,0), unknown (1), tau=5 -> proportional to (e^0.4, e^0, e^0.2)
    JointProbabilityVector p5 = temperature_scaled_probs(std::vector<double>{2, 0, 1}, 2, 1, 5.0);
    const double z = std::exp(0.4) + std::exp(0.0) + std::exp(0.2);
    CHECK(p5.known[0] == doctest::Approx(std::exp(0.4) / z).epsilon(1e-12));
    CHECK(p5.known[1] == doctest::Approx(std::exp(0.0) / z).epsilon(1e-12));
    CHECK(p5.unknown[0] == doctest::Approx(std::exp(0.2) / z).epsilon(1e-12));

    CHECK_THROWS_AS(temperature_scaled_probs(logits, 3, 1, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(temperature_scaled_probs(logits, 3, 1, -2.0), std::invalid_argument);
    CHECK_THROWS_AS(temperature_scaled_probs(logits, 2, 1, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(temperature_scaled_probs(std::vector<double>{1.0, std::nan("")}, 1, 1, 1.0), std::invalid_argument);
}

TEST_CASE("temperature softmax properties over random draws") {
    Rng rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        const int c = 2 + static_cast<int>(rng.below(5));
        const int u = static_cast<int>(rng.below(4));
        std::vector<double> logits(static_cast<std::size_t>(c + u));
        for (double& l : logits) l = 10.0 * rng.normal();
        const double tau = 0.25 + 8.0 * rng.uniform();
        JointProbabilityVector p = temperature_scaled_probs(logits, c, u, tau);

        // sums to one
        CHECK(std::fabs(p.sum() - 1.0) < 1e-6);

        // max softened probability is non-increasing in tau
        JointProbabilityVector hotter = temperature_scaled_probs(logits, c, u, tau * 2.0);
        auto maxall = [](const JointProbabilityVector& v) {
            double m = 0.0;
            for (double x : v.known) m = std::max(m, x);
            for (double x : v.unknown) m = std::max(m, x);
            return m;
        };
        CHECK(maxall(hotter) <= maxall(p) + 1e-12);

        // argmax is tau-invariant
        auto argmax_all = [&](const JointProbabilityVector& v) {
            std::vector<double> all = v.known;
            all.insert(all.end(), v.unknown.begin(), v.unknown.end());
            return static_cast<int>(std::max_element(all.begin(), all.end()) - all.begin());
        };
        CHECK(argmax_all(hotter) == argmax_all(p));
    }
}

TEST_CASE("batch tempered softmax matches the single-vector path") {
    Rng rng(22);
    Tensor logits = test::random_tensor({5, 7}, rng, 3.0);
    Tensor probs = tempered_softmax(logits, 2.5);
    for (int i = 0; i < 5; ++i) {
        std::vector<double> row(logits.data() + i * 7, logits.data() + (i + 1) * 7);
        JointProbabilityVector jv = temperature_scaled_probs(row, 4, 3, 2.5);
        for (int j = 0; j < 4; ++j) CHECK(probs[i * 7 + j] == doctest::Approx(jv.known[static_cast<std::size_t>(j)]).epsilon(1e-14));
        for (int j = 0; j < 3; ++j) CHECK(probs[i * 7 + 4 + j] == doctest::Approx(jv.unknown[static_cast<std::size_t>(j)]).epsilon(1e-14));
    }
}

TEST_CASE("distillation loss: entropy floor, one-hot, hand-summed batch") {
    // uniform over 20 slots -> ln 20
    Tensor q({1, 20}), p({1, 20});
    q.fill(0.05);
    p.fill(0.05);
    CHECK(kd_loss(q, p) == doctest::Approx(std::log(20.0)).epsilon(1e-9));

    // identical one-hots -> ~0
    Tensor q1({1, 4}), p1({1, 4});
    q1[2] = 1.0;
    p1[2] = 1.0;
    CHECK(kd_loss(q1, p1) == doctest::Approx(0.0));

    // two-sample hand table, summed independently here
    Tensor qt({2, 3}, {0.5, 0.3, 0.2, 0.8, 0.1, 0.1});
    Tensor pt({2, 3}, {0.4, 0.4, 0.2, 0.7, 0.2, 0.1});
    double want = 0.0;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j) want -= qt[i * 3 + j] * std::log(pt[i * 3 + j]);
    want /= 2.0;
    CHECK(kd_loss(qt, pt) == doctest::Approx(want).epsilon(1e-12));

    // JPV overload agrees
    std::vector<JointProbabilityVector> qv(2), pv(2);
    qv[0].known = {0.5, 0.3};
    qv[0].unknown = {0.2};
    qv[1].known = {0.8, 0.1};
    qv[1].unknown = {0.1};
    pv[0].known = {0.4, 0.4};
    pv[0].unknown = {0.2};
    pv[1].known = {0.7, 0.2};
    pv[1].unknown = {0.1};
    CHECK(kd_loss(qv, pv) == doctest::Approx(want).epsilon(1e-12));

    CHECK_THROWS_AS(kd_loss(Tensor({1, 3}), Tensor({1, 4})), std::invalid_argument);
}

TEST_CASE("kd loss dominates the target entropy") {
    Rng rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        const int k = 3 + static_cast<int>(rng.below(6));
        std::vector<double> ql(static_cast<std::size_t>(k)), pl(static_cast<std::size_t>(k));
        for (double& v : ql) v = 3.0 * rng.normal();
        for (double& v : pl) v = 3.0 * rng.normal();
        std::vector<double> qs = softmax_oracle(ql, 1.0), ps = softmax_oracle(pl, 1.0);
        Tensor q({1, k}, qs), p({1, k}, ps);
        CHECK(kd_loss(q, p) >= entropy(qs) - 1e-9);
        CHECK(kd_loss(q, q) == doctest::Approx(entropy(qs)).epsilon(1e-9));
    }
}

TEST_CASE("teacher pretraining overfits one batch and rejects bad labels") {
    // two separable blob classes on 6x6 images
    Rng rng(24);
    const int n = 32;
    ImageSet data;
    data.images = Tensor({n, 6, 6, 1});
    data.labels.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int cls = i % 2;
        data.labels[static_cast<std::size_t>(i)] = cls;
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x) {
                const bool lit = cls == 0 ? (y < 3) : (y >= 3);
                data.images[(static_cast<std::int64_t>(i) * 36) + y * 6 + x] = lit ? 0.9 + 0.1 * rng.uniform() : 0.1 * rng.uniform();
            }
    }
    ClassifierNet teacher(ImageShape{6, 6, 1}, 2, 0, "dense:8", rng);
    DistillationConfig cfg;
    cfg.epochs = 40;
    cfg.batch_size = 32;
    cfg.lr = 0.01;
    Rng train_rng(25);
    TeacherTrainStats stats = pretrain_teacher(teacher, data, cfg, train_rng);
    CHECK(stats.final_loss < 0.01);
    CHECK(stats.final_loss < stats.initial_loss);
    CHECK(stats.train_accuracy == doctest::Approx(1.0));

    ImageSet bad = data;
    bad.labels[3] = kUnknownLabel;
    CHECK_THROWS_AS(pretrain_teacher(teacher, bad, cfg, train_rng), std::invalid_argument);
    ImageSet bad2 = data;
    bad2.labels[0] = 7;
    CHECK_THROWS_AS(pretrain_teacher(teacher, bad2, cfg, train_rng), std::invalid_argument);
}

TEST_CASE("augmented teacher keeps unknown mass small") {
    Rng rng(26);
    // teacher with confidently separated logits
    ClassifierNet teacher(ImageShape{4, 4, 1}, 3, 0, "dense:6", rng);
    ImageSet data;
    const int n = 24;
    data.images = Tensor({n, 4, 4, 1});
    data.labels.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int cls = i % 3;
        data.labels[static_cast<std::size_t>(i)] = cls;
        for (int p = 0; p < 16; ++p) data.images[i * 16 + p] = (p % 3 == cls) ? 1.0 : 0.05;
    }
    DistillationConfig cfg;
    cfg.epochs = 60;
    cfg.batch_size = 8;
    cfg.lr = 0.01;
    Rng train_rng(27);
    pretrain_teacher(teacher, data, cfg, train_rng);

    Rng aug_rng(28);
    augment_teacher(teacher, 4, 1e-3, aug_rng);
    Tensor probs = tempered_softmax(teacher.forward_logits(data.images), 1.0);
    for (int i = 0; i < n; ++i) {
        double winner = 0.0, umax = 0.0;
        for (int c = 0; c < 3; ++c) winner = std::max(winner, probs[i * 7 + c]);
        for (int u = 3; u < 7; ++u) umax = std::max(umax, probs[i * 7 + u]);
        CHECK(umax < winner);
    }
    CHECK_THROWS_AS(augment_teacher(teacher, 0, 1e-3, aug_rng), std::invalid_argument);
}

TEST_CASE("kd gradient matches finite differences on a tiny student") {
    Rng rng(29);
    ClassifierNet student = make_student(ImageShape{6, 6, 1}, 2, 2, "conv:2:3:2,dense:4", 1e-3, rng);
    CHECK(student.net().param_count() <= 1000);
    Tensor x = test::random_unit_tensor({3, 6, 6, 1}, rng);
    Tensor qlogits = test::random_tensor({3, 4}, rng, 2.0);
    Tensor q = tempered_softmax(qlogits, 5.0);
    auto loss = [&] {
        student.zero_grad();
        return kd_loss_and_grads(student, x, q, 5.0);
    };
    CHECK(test::max_grad_rel_err(loss, student.net().params(), student.net().grads()) < 1e-4);
}

TEST_CASE("repeated distillation reaches the teacher-entropy floor") {
    Rng rng(30);
    ClassifierNet teacher(ImageShape{5, 5, 1}, 2, 0, "dense:6", rng);
    Rng aug_rng(31);
    augment_teacher(teacher, 1, 1e-3, aug_rng);
    ClassifierNet student = make_student(ImageShape{5, 5, 1}, 2, 1, "dense:6", 1e-3, rng);

    Tensor x = test::random_unit_tensor({8, 5, 5, 1}, rng);
    const double tau = 5.0;
    Tensor q = tempered_softmax(teacher.forward_logits(x), tau);
    double floor = kd_loss(q, q);  // mean target entropy

    nn::Adam opt(student.net().params(), student.net().grads(), 0.01);
    double loss = 0.0;
    for (int step = 0; step < 600; ++step) {
        ImageSet dummy;
        student.zero_grad();
        loss = kd_loss_and_grads(student, x, q, tau);
        opt.step();
    }
    CHECK(loss - floor < 0.01);
    CHECK(loss >= floor - 1e-9);

    // student argmax over known slots matches the teacher's argmax
    Tensor tp = tempered_softmax(teacher.forward_logits(x), 1.0);
    Tensor sp = tempered_softmax(student.forward_logits(x), 1.0);
    int agree = 0;
    for (int i = 0; i < 8; ++i) {
        const int ta = tp[i * 3] > tp[i * 3 + 1] ? 0 : 1;
        const int sa = sp[i * 3] > sp[i * 3 + 1] ? 0 : 1;
        agree += ta == sa ? 1 : 0;
    }
    CHECK(agree == 8);
}

TEST_CASE("distill_step is a no-op on the empty batch") {
    Rng rng(32);
    ClassifierNet teacher(ImageShape{4, 4, 1}, 2, 0, "dense:4", rng);
    Rng aug(33);
    augment_teacher(teacher, 1, 1e-3, aug);
    ClassifierNet student = make_student(ImageShape{4, 4, 1}, 2, 1, "dense:4", 1e-3, rng);
    nn::Adam opt(student.net().params(), student.net().grads(), 0.01);
    std::vector<double> before;
    for (nn::Tensor* p : student.net().params())
        before.insert(before.end(), p->data(), p->data() + p->size());
    const double loss = distill_step(student, teacher, Tensor({0, 4, 4, 1}), 5.0, opt);
    CHECK(loss == 0.0);
    std::vector<double> after;
    for (nn::Tensor* p : student.net().params())
        after.insert(after.end(), p->data(), p->data() + p->size());
    CHECK(before == after);
}
