#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "osr/datasets.hpp"
#include "osr/errors.hpp"
#include "test_util.hpp"

using namespace osr;

TEST_CASE("openness reproduces the published values") {
    CHECK(std::fabs(openness(6, 10, 6) - 0.134) < 0.001);
    CHECK(std::fabs(openness(4, 14, 4) - 0.333) < 0.001);
    CHECK(std::fabs(openness(4, 54, 4) - 0.629) < 0.001);
    CHECK(std::fabs(openness(20, 200, 20) - 0.574) < 0.001);
    CHECK(std::fabs(openness(10, 57, 10) - 0.454) < 0.001);
}

TEST_CASE("openness closed-set case and monotonicity") {
    for (int k : {1, 3, 10, 47}) CHECK(openness(k, k, k) == doctest::Approx(0.0));
    // strictly decreasing in c_tr for fixed c_te + c_r
    double prev = 2.0;
    for (int c_tr = 1; c_tr <= 20; ++c_tr) {
        const double v = openness(c_tr, 30, 10);
        CHECK(v < prev);
        prev = v;
    }
    CHECK_THROWS_AS(openness(0, 5, 5), std::invalid_argument);
    CHECK_THROWS_AS(openness(5, 0, 5), std::invalid_argument);
    CHECK_THROWS_AS(openness(5, 5, -1), std::invalid_argument);
}

TEST_CASE("open set splits partition the universe deterministically") {
    std::vector<int> ids{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    OpenSetSplit s = make_open_set_split(ids, 6, 0);
    CHECK(s.known_class_ids.size() == 6);
    CHECK(s.unknown_class_ids.size() == 4);
    CHECK(std::fabs(s.openness - 0.134) < 0.001);

    // disjoint and exhaustive
    std::vector<int> all = s.known_class_ids;
    all.insert(all.end(), s.unknown_class_ids.begin(), s.unknown_class_ids.end());
    std::sort(all.begin(), all.end());
    CHECK(all == ids);

    OpenSetSplit s2 = make_open_set_split(ids, 6, 0);
    CHECK(s.known_class_ids == s2.known_class_ids);
    CHECK(s.unknown_class_ids == s2.unknown_class_ids);

    OpenSetSplit s9 = make_open_set_split(ids, 9, 1);
    CHECK(s9.known_class_ids.size() == 9);
    CHECK(s9.unknown_class_ids.size() == 1);

    CHECK_THROWS_AS(make_open_set_split(ids, 0, 0), std::invalid_argument);
    CHECK_THROWS_AS(make_open_set_split(ids, 10, 0), std::invalid_argument);
}

TEST_CASE("split property: random draws always partition") {
    std::vector<int> ids{3, 7, 11, 15, 19, 23, 27};
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(ids.size() - 1)));
        OpenSetSplit s = make_open_set_split(ids, k, rng.next_u64());
        CHECK(static_cast<int>(s.known_class_ids.size()) == k);
        for (int id : s.known_class_ids)
            CHECK(std::find(s.unknown_class_ids.begin(), s.unknown_class_ids.end(), id) == s.unknown_class_ids.end());
        CHECK(s.known_class_ids.size() + s.unknown_class_ids.size() == ids.size());
    }
}

TEST_CASE("split manifest round-trips") {
    OpenSetSplit s = make_open_set_split({0, 1, 2, 3, 4}, 3, 42);
    s.dataset = "mnist";
    OpenSetSplit t = OpenSetSplit::from_manifest(s.manifest());
    CHECK(t.known_class_ids == s.known_class_ids);
    CHECK(t.unknown_class_ids == s.unknown_class_ids);
    CHECK(t.openness == s.openness);
    CHECK(t.seed == s.seed);
    CHECK(t.dataset == "mnist");
    CHECK_THROWS_AS(OpenSetSplit::from_manifest("bogus_key = 3\n"), ParseError);
}

TEST_CASE("noise synthesis: range, mean, determinism") {
    DatasetHandle d = synthesize_noise(10000, ImageShape{28, 28, 1}, 5);
    CHECK(d.test.count() == 10000);
    double sum = 0.0;
    bool in_range = true;
    for (std::int64_t i = 0; i < d.test.images.size(); ++i) {
        in_range &= d.test.images[i] >= 0.0 && d.test.images[i] <= 1.0;
        sum += d.test.images[i];
    }
    CHECK(in_range);
    const double mean = sum / static_cast<double>(d.test.images.size());
    CHECK(mean > 0.49);
    CHECK(mean < 0.51);
    for (int lbl : d.test.labels) REQUIRE(lbl == kUnknownLabel);

    DatasetHandle one = synthesize_noise(1, ImageShape{4, 4, 1}, 9);
    CHECK(one.test.count() == 1);

    DatasetHandle d2 = synthesize_noise(10000, ImageShape{28, 28, 1}, 5);
    bool identical = true;
    for (std::int64_t i = 0; i < d.test.images.size(); ++i) identical &= d.test.images[i] == d2.test.images[i];
    CHECK(identical);

    CHECK_THROWS_AS(synthesize_noise(0, ImageShape{4, 4, 1}, 0), std::invalid_argument);
}

TEST_CASE("mnist-noise superimposition is the elementwise max") {
    DatasetHandle digits;
    digits.name = "digits";
    digits.shape = ImageShape{2, 2, 1};
    digits.test.images = nn::Tensor({2, 2, 2, 1}, {0.0, 0.0, 0.0, 0.0, 0.7, 0.1, 0.9, 0.3});
    digits.test.labels = {0, 1};
    DatasetHandle noise;
    noise.name = "noise";
    noise.shape = ImageShape{2, 2, 1};
    noise.test.images = nn::Tensor({2, 2, 2, 1}, {0.5, 0.2, 0.8, 0.4, 0.6, 0.05, 0.95, 0.3});
    noise.test.labels = {kUnknownLabel, kUnknownLabel};

    DatasetHandle mixed = synthesize_mnist_noise(digits, noise);
    // all-zero digit -> output equals the noise
    CHECK(mixed.test.images[0] == 0.5);
    CHECK(mixed.test.images[1] == 0.2);
    CHECK(mixed.test.images[2] == 0.8);
    CHECK(mixed.test.images[3] == 0.4);
    // hand-evaluated elementwise max for the second pair
    CHECK(mixed.test.images[4] == 0.7);
    CHECK(mixed.test.images[5] == 0.1);
    CHECK(mixed.test.images[6] == 0.95);
    CHECK(mixed.test.images[7] == 0.3);
    for (int lbl : mixed.test.labels) CHECK(lbl == kUnknownLabel);

    // output dominates both inputs pointwise
    for (std::int64_t i = 0; i < mixed.test.images.size(); ++i) {
        CHECK(mixed.test.images[i] >= digits.test.images[i]);
        CHECK(mixed.test.images[i] >= noise.test.images[i]);
    }

    // all-ones digit -> output all ones
    DatasetHandle ones = digits;
    ones.test.images.fill(1.0);
    DatasetHandle mixed1 = synthesize_mnist_noise(ones, noise);
    for (std::int64_t i = 0; i < mixed1.test.images.size(); ++i) CHECK(mixed1.test.images[i] == 1.0);

    DatasetHandle shorter = noise;
    shorter.test.images = nn::Tensor({1, 2, 2, 1});
    shorter.test.labels = {kUnknownLabel};
    CHECK_THROWS_AS(synthesize_mnist_noise(digits, shorter), std::invalid_argument);
}

namespace {

// Minimal IDX fixture: n images of h x w with pixel value = image index, and
// labels cycling 0..2.
void write_idx_fixture(const std::string& dir, const std::string& prefix, int n, int h, int w) {
    std::filesystem::create_directories(dir);
    auto be32 = [](std::ofstream& os, std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
        os.write(reinterpret_cast<char*>(b), 4);
    };
    std::ofstream imgs(dir + "/" + prefix + "-images-idx3-ubyte", std::ios::binary | std::ios::trunc);
    be32(imgs, 0x803);
    be32(imgs, static_cast<std::uint32_t>(n));
    be32(imgs, static_cast<std::uint32_t>(h));
    be32(imgs, static_cast<std::uint32_t>(w));
    for (int i = 0; i < n; ++i)
        for (int p = 0; p < h * w; ++p) imgs.put(static_cast<char>(i % 256));
    std::ofstream lbls(dir + "/" + prefix + "-labels-idx1-ubyte", std::ios::binary | std::ios::trunc);
    be32(lbls, 0x801);
    be32(lbls, static_cast<std::uint32_t>(n));
    for (int i = 0; i < n; ++i) lbls.put(static_cast<char>(i % 3));
}

}  // namespace

TEST_CASE("idx loader normalizes and validates") {
    const std::string root = "idx_fixture_root";
    write_idx_fixture(root + "/mnist", "train", 6, 4, 4);
    write_idx_fixture(root + "/mnist", "t10k", 3, 4, 4);

    DatasetHandle d = load_dataset("mnist", root);
    CHECK(d.train.count() == 6);
    CHECK(d.test.count() == 3);
    CHECK(d.shape == ImageShape{4, 4, 1});
    CHECK(d.train.images[0] == 0.0);
    CHECK(d.train.images[16] == doctest::Approx(1.0 / 255.0));
    CHECK(d.train.labels == std::vector<int>{0, 1, 2, 0, 1, 2});

    CHECK_THROWS_AS(load_dataset("mnist", "no_such_root"), NotFoundError);
    CHECK_THROWS_AS(load_dataset("cifar-100", root), NotFoundError);

    {
        std::ofstream bad(root + "/mnist/train-images-idx3-ubyte", std::ios::binary | std::ios::trunc);
        bad << "garbage";
    }
    CHECK_THROWS_AS(load_dataset("mnist", root), ParseError);
    std::filesystem::remove_all(root);
}

TEST_CASE("noise dataset name delegates to the synthesizer") {
    DatasetHandle d = load_dataset("noise", "");
    CHECK(d.test.count() == 10000);
    CHECK(d.shape == ImageShape{28, 28, 1});
}

TEST_CASE("bundled mnist subset loads when present") {
    std::string root;
    for (const char* candidate : {"data", "../data", "../../data"})
        if (std::filesystem::exists(std::string(candidate) + "/mnist/train-images-idx3-ubyte")) {
            root = candidate;
            break;
        }
    if (root.empty()) return;  // dataset not checked out
    DatasetHandle d = load_dataset("mnist", root);
    CHECK(d.shape == ImageShape{28, 28, 1});
    CHECK(d.train.distinct_labels() == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    bool in_range = true;
    for (std::int64_t i = 0; i < 28 * 28; ++i) in_range &= d.train.images[i] >= 0.0 && d.train.images[i] <= 1.0;
    CHECK(in_range);
}

TEST_CASE("filter, relabel, subsample, gather") {
    ImageSet set;
    set.images = nn::Tensor({5, 1, 1, 1}, {10, 20, 30, 40, 50});
    set.labels = {7, 3, 7, 9, 3};

    ImageSet knowns = filter_classes(set, {3, 7}, true);
    CHECK(knowns.count() == 4);
    CHECK(knowns.labels == std::vector<int>{1, 0, 1, 0});  // 3 -> 0, 7 -> 1
    CHECK(knowns.images[0] == 10.0);

    ImageSet raw = filter_classes(set, {9}, false);
    CHECK(raw.labels == std::vector<int>{9});

    ImageSet unk = mark_all_unknown(set);
    for (int lbl : unk.labels) CHECK(lbl == kUnknownLabel);

    Rng rng(4);
    ImageSet sub = subsample(set, 3, rng);
    CHECK(sub.count() == 3);
    Rng rng2(4);
    ImageSet sub2 = subsample(set, 3, rng2);
    for (int i = 0; i < 3; ++i) CHECK(sub.labels[static_cast<std::size_t>(i)] == sub2.labels[static_cast<std::size_t>(i)]);

    nn::Tensor batch = set.gather(std::vector<int>{4, 0});
    CHECK(batch.dim(0) == 2);
    CHECK(batch[0] == 50.0);
    CHECK(batch[1] == 10.0);
}
