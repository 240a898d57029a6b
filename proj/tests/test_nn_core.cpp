#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "osr/adam.hpp"
#include "osr/layers.hpp"
#include "osr/rng.hpp"
#include "osr/tensor.hpp"
#include "test_util.hpp"

using namespace osr;
using namespace osr::nn;

TEST_CASE("tensor shape handling") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    t.fill(1.5);
    CHECK(t[5] == 1.5);
    Tensor r = t.reshaped({3, 2});
    CHECK(r.dim(0) == 3);
    CHECK_THROWS_AS(t.reshaped({4, 2}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("rng replays bit-exactly and respects bounds") {
    Rng a(1234), b(1234);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(7);
    for (int i = 0; i < 1000; ++i) {
        CHECK(c.below(10) < 10);
        const double u = c.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    Rng d1(3), d2(3);
    std::vector<int> v1{1, 2, 3, 4, 5, 6}, v2 = v1;
    d1.shuffle(v1);
    d2.shuffle(v2);
    CHECK(v1 == v2);
    std::vector<int> sorted = v1;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{1, 2, 3, 4, 5, 6});
}

TEST_CASE("normal draws have sane moments") {
    Rng r(99);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        sum += x;
        sq += x * x;
    }
    CHECK(std::fabs(sum / n) < 0.03);
    CHECK(std::fabs(sq / n - 1.0) < 0.05);
}

TEST_CASE("seed derivation separates components") {
    CHECK(derive_seed(0, "alpha") != derive_seed(0, "beta"));
    CHECK(derive_seed(0, "alpha") != derive_seed(1, "alpha"));
    CHECK(derive_seed(5, "gamma") == derive_seed(5, "gamma"));
}

TEST_CASE("dense forward matches a hand computation") {
    Rng rng(1);
    Dense d(2, 2, rng);
    d.weight()[0] = 1.0;  // w[0,0]
    d.weight()[1] = 2.0;  // w[0,1]
    d.weight()[2] = 3.0;  // w[1,0]
    d.weight()[3] = 4.0;  // w[1,1]
    d.bias()[0] = 0.5;
    d.bias()[1] = -0.5;
    Tensor x({1, 2}, {10.0, 20.0});
    Tensor y = d.forward(x);
    CHECK(y[0] == doctest::Approx(10.0 * 1.0 + 20.0 * 3.0 + 0.5));
    CHECK(y[1] == doctest::Approx(10.0 * 2.0 + 20.0 * 4.0 - 0.5));
}

TEST_CASE("dense handles the empty batch") {
    Rng rng(1);
    Dense d(3, 4, rng);
    Tensor y = d.forward(Tensor({0, 3}));
    CHECK(y.dim(0) == 0);
    CHECK(y.dim(1) == 4);
}

namespace {

// Loss = fixed random projection of the stack output; exercises every layer's
// backward including the input gradient.
double projected_loss(Sequential& net, const Tensor& x, const Tensor& proj) {
    net.zero_grad();
    Tensor y = net.forward(x);
    REQUIRE(y.size() == proj.size());
    double loss = 0.0;
    for (std::int64_t i = 0; i < y.size(); ++i) loss += y[i] * proj[i];
    net.backward(proj.reshaped(y.shape()));
    return loss;
}

}  // namespace

TEST_CASE("gradient check: dense + activations") {
    Rng rng(42);
    Sequential net;
    net.add(std::make_unique<Dense>(6, 5, rng));
    net.add(std::make_unique<LeakyRelu>(0.2));
    net.add(std::make_unique<Dense>(5, 3, rng));
    net.add(std::make_unique<Sigmoid>());
    Tensor x = test::random_tensor({4, 6}, rng);
    Tensor proj = test::random_tensor({4 * 3}, rng);
    auto loss = [&] { return projected_loss(net, x, proj); };
    CHECK(test::max_grad_rel_err(loss, net.params(), net.grads()) < 1e-6);
}

TEST_CASE("gradient check: convolution stack") {
    Rng rng(7);
    Sequential net;
    net.add(std::make_unique<Conv2d>(1, 2, 3, 2, 1, rng));
    net.add(std::make_unique<LeakyRelu>(0.2));
    net.add(std::make_unique<Flatten>());
    net.add(std::make_unique<Dense>(2 * 4 * 4, 3, rng));
    Tensor x = test::random_tensor({2, 8, 8, 1}, rng);
    Tensor proj = test::random_tensor({2 * 3}, rng);
    auto loss = [&] { return projected_loss(net, x, proj); };
    CHECK(test::max_grad_rel_err(loss, net.params(), net.grads()) < 1e-6);
}

TEST_CASE("gradient check: transposed convolution stack") {
    Rng rng(11);
    Sequential net;
    net.add(std::make_unique<Dense>(5, 2 * 2 * 2, rng));
    net.add(std::make_unique<LeakyRelu>(0.2));
    net.add(std::make_unique<Reshape>(std::vector<int>{2, 2, 2}));
    net.add(std::make_unique<ConvTranspose2d>(2, 2, 4, 2, 1, rng));
    net.add(std::make_unique<LeakyRelu>(0.2));
    net.add(std::make_unique<Conv2d>(2, 1, 3, 1, 1, rng));
    net.add(std::make_unique<Sigmoid>());
    Tensor x = test::random_tensor({2, 5}, rng);
    Tensor proj = test::random_tensor({2 * 4 * 4}, rng);
    auto loss = [&] { return projected_loss(net, x, proj); };
    CHECK(test::max_grad_rel_err(loss, net.params(), net.grads()) < 1e-6);
}

TEST_CASE("gradient flows back to the input") {
    Rng rng(13);
    Sequential net;
    net.add(std::make_unique<Conv2d>(1, 2, 3, 1, 1, rng));
    net.add(std::make_unique<LeakyRelu>(0.2));
    net.add(std::make_unique<Flatten>());
    net.add(std::make_unique<Dense>(2 * 5 * 5, 2, rng));
    Tensor x = test::random_tensor({1, 5, 5, 1}, rng);
    Tensor proj = test::random_tensor({2}, rng);

    net.zero_grad();
    Tensor y = net.forward(x);
    double base = y[0] * proj[0] + y[1] * proj[1];
    Tensor dx = net.backward(proj.reshaped({1, 2}));

    const double h = 1e-5;
    double worst = 0.0;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        Tensor xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double lp0 = [&] {
            Tensor t = net.forward(xp);
            return t[0] * proj[0] + t[1] * proj[1];
        }();
        const double lm0 = [&] {
            Tensor t = net.forward(xm);
            return t[0] * proj[0] + t[1] * proj[1];
        }();
        const double numeric = (lp0 - lm0) / (2 * h);
        worst = std::max(worst, std::fabs(numeric - dx[i]) / std::max(1e-6, std::fabs(numeric) + std::fabs(dx[i])));
    }
    CHECK(worst < 1e-6);
    CHECK(base == base);  // silence unused warning
}

TEST_CASE("conv and tconv output geometry") {
    Rng rng(3);
    Conv2d conv(1, 4, 3, 2, 1, rng);
    Tensor y = conv.forward(Tensor({1, 28, 28, 1}));
    CHECK(y.shape() == std::vector<int>{1, 14, 14, 4});

    ConvTranspose2d tconv(4, 8, 4, 2, 1, rng);
    Tensor z = tconv.forward(y);
    CHECK(z.shape() == std::vector<int>{1, 28, 28, 8});
}

TEST_CASE("adam minimizes a quadratic") {
    Tensor p({1}), g({1});
    p[0] = 0.0;
    Adam opt({&p}, {&g}, 0.1);
    for (int i = 0; i < 500; ++i) {
        g[0] = 2.0 * (p[0] - 3.0);
        opt.step();
    }
    CHECK(p[0] == doctest::Approx(3.0).epsilon(1e-3));
}

TEST_CASE("sequential copies are deep") {
    Rng rng(5);
    Sequential net;
    net.add(std::make_unique<Dense>(3, 2, rng));
    Sequential copy = net;
    Tensor x = test::random_tensor({1, 3}, rng);
    Tensor y0 = net.forward(x);
    Tensor y1 = copy.forward(x);
    for (std::int64_t i = 0; i < y0.size(); ++i) CHECK(y0[i] == y1[i]);
    (*copy.params()[0])[0] += 1.0;
    Tensor y2 = net.forward(x);
    for (std::int64_t i = 0; i < y0.size(); ++i) CHECK(y0[i] == y2[i]);
}
