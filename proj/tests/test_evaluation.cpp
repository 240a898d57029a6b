#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "osr/commands.hpp"
#include "osr/evaluation.hpp"
#include "test_util.hpp"

using namespace osr;
using nn::Tensor;

namespace {

// Exhaustive pairwise rank statistic: the oracle the fast path must equal.
double auroc_bruteforce(const std::vector<double>& scores, const std::vector<bool>& is_unknown) {
    double wins = 0.0;
    long pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!is_unknown[i]) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (is_unknown[j]) continue;
            ++pairs;
            if (scores[i] > scores[j])
                wins += 1.0;
            else if (scores[i] == scores[j])
                wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("auroc: perfect separation, all ties, 6-point case") {
    std::vector<double> s1{1, 1, 1, 0, 0, 0};
    std::vector<bool> u1{true, true, true, false, false, false};
    CHECK(auroc(s1, u1) == doctest::Approx(1.0));

    std::vector<double> s2(8, 0.3);
    std::vector<bool> u2{true, false, true, false, true, false, true, false};
    CHECK(auroc(s2, u2) == doctest::Approx(0.5));

    std::vector<double> s3{0.9, 0.1, 0.5, 0.5, 0.3, 0.8};
    std::vector<bool> u3{true, false, true, false, false, true};
    CHECK(auroc(s3, u3) == doctest::Approx(auroc_bruteforce(s3, u3)).epsilon(1e-12));

    CHECK_THROWS_AS(auroc(std::vector<double>{0.5, 0.6}, std::vector<bool>{true, true}), std::invalid_argument);
    CHECK_THROWS_AS(auroc(std::vector<double>{0.5, 0.6}, std::vector<bool>{false, false}), std::invalid_argument);
}

TEST_CASE("auroc equals the exhaustive pair statistic on random instances") {
    Rng rng(81);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(199));
        std::vector<double> scores(static_cast<std::size_t>(n));
        std::vector<bool> unknown(static_cast<std::size_t>(n));
        int n_u = 0;
        for (int i = 0; i < n; ++i) {
            // coarse quantization forces plenty of ties
            scores[static_cast<std::size_t>(i)] = std::floor(rng.uniform() * 8.0) / 8.0;
            unknown[static_cast<std::size_t>(i)] = rng.uniform() < 0.4;
            n_u += unknown[static_cast<std::size_t>(i)] ? 1 : 0;
        }
        if (n_u == 0) unknown[0] = true, ++n_u;
        if (n_u == n) unknown[0] = false, --n_u;
        CHECK(auroc(scores, unknown) == doctest::Approx(auroc_bruteforce(scores, unknown)).epsilon(1e-12));
    }
}

TEST_CASE("auroc complement symmetry on tie-free scores") {
    Rng rng(82);
    std::vector<double> scores;
    std::vector<bool> unknown;
    for (int i = 0; i < 50; ++i) {
        scores.push_back(static_cast<double>(i) + rng.uniform() * 0.5);  // strictly increasing, tie-free
        unknown.push_back(rng.uniform() < 0.5);
    }
    if (std::count(unknown.begin(), unknown.end(), true) == 0) unknown[0] = true;
    if (std::count(unknown.begin(), unknown.end(), false) == 0) unknown[1] = false;
    std::vector<double> negated = scores;
    for (double& v : negated) v = -v;
    CHECK(auroc(scores, unknown) + auroc(negated, unknown) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("macro f1: identity, all-unknown mix, toy confusion matrix") {
    // perfect predictions
    std::vector<int> truth{0, 1, 2, kUnknownLabel, 1, kUnknownLabel};
    CHECK(macro_f1(truth, truth, 3).macro_f1 == doctest::Approx(1.0));

    // 1:1 known/unknown mix, everything predicted unknown:
    // unknown precision 1/2, recall 1 -> F1 2/3; known classes 0
    std::vector<int> t2, p2;
    for (int i = 0; i < 12; ++i) {
        t2.push_back(i < 6 ? i % 3 : kUnknownLabel);
        p2.push_back(kUnknownLabel);
    }
    MacroF1Result r2 = macro_f1(p2, t2, 3);
    CHECK(r2.per_class.size() == 4);
    CHECK(r2.per_class[3].cls == kUnknownLabel);
    CHECK(r2.per_class[3].f1 == doctest::Approx(2.0 / 3.0));
    for (int c = 0; c < 3; ++c) CHECK(r2.per_class[static_cast<std::size_t>(c)].f1 == doctest::Approx(0.0));
    CHECK(r2.macro_f1 == doctest::Approx((2.0 / 3.0) / 4.0));

    // toy 3-class case hand-computed from its confusion matrix:
    // truth:      0 0 1 1 2 2
    // predicted:  0 1 1 1 2 0
    // class 0: tp=1 fp=1 fn=1 -> P=R=0.5, F1=0.5
    // class 1: tp=2 fp=1 fn=0 -> P=2/3, R=1, F1=0.8
    // class 2: tp=1 fp=0 fn=1 -> P=1, R=0.5, F1=2/3
    // unknown: absent everywhere -> F1=0 but still in the vocabulary
    std::vector<int> t3{0, 0, 1, 1, 2, 2};
    std::vector<int> p3{0, 1, 1, 1, 2, 0};
    MacroF1Result r3 = macro_f1(p3, t3, 3);
    CHECK(r3.per_class[0].f1 == doctest::Approx(0.5));
    CHECK(r3.per_class[1].f1 == doctest::Approx(0.8));
    CHECK(r3.per_class[2].f1 == doctest::Approx(2.0 / 3.0));
    CHECK(r3.per_class[3].f1 == doctest::Approx(0.0));
    CHECK(r3.macro_f1 == doctest::Approx((0.5 + 0.8 + 2.0 / 3.0 + 0.0) / 4.0));

    // vocabulary violations
    CHECK_THROWS_AS(macro_f1({3}, {0}, 3), std::invalid_argument);
    CHECK_THROWS_AS(macro_f1({0}, {-7}, 3), std::invalid_argument);
}

TEST_CASE("macro f1 is invariant to sample order") {
    Rng rng(83);
    std::vector<int> truth, preds;
    for (int i = 0; i < 60; ++i) {
        truth.push_back(static_cast<int>(rng.below(4)) - 1);  // -1..2
        preds.push_back(static_cast<int>(rng.below(4)) - 1);
    }
    const double base = macro_f1(preds, truth, 3).macro_f1;
    std::vector<std::size_t> perm(truth.size());
    std::iota(perm.begin(), perm.end(), 0);
    Rng shuffle_rng(84);
    shuffle_rng.shuffle(perm);
    std::vector<int> t2, p2;
    for (std::size_t i : perm) {
        t2.push_back(truth[i]);
        p2.push_back(preds[i]);
    }
    CHECK(macro_f1(p2, t2, 3).macro_f1 == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("variant tags map to toggles") {
    CHECK(variant_from_string("TRS") == AblationVariant::TRS);
    CHECK(variant_name(AblationVariant::RS) == "RS");
    CHECK_THROWS_AS(variant_from_string("XYZ"), std::invalid_argument);
    CHECK(variant_toggles(AblationVariant::T).distill == false);
    CHECK(variant_toggles(AblationVariant::T).recommend == false);
    CHECK(variant_toggles(AblationVariant::TS).distill == true);
    CHECK(variant_toggles(AblationVariant::TS).recommend == false);
    CHECK(variant_toggles(AblationVariant::RS).distill == false);
    CHECK(variant_toggles(AblationVariant::RS).recommend == true);
    CHECK(variant_toggles(AblationVariant::TRS).distill == true);
    CHECK(variant_toggles(AblationVariant::TRS).recommend == true);
}

namespace {

// Four-class blob dataset written as IDX files so the whole pipeline can run
// against load_dataset("mnist", root).
void write_blob_idx_root(const std::string& root, int per_class_train, int per_class_test) {
    std::filesystem::create_directories(root + "/mnist");
    auto be32 = [](std::ofstream& os, std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
        os.write(reinterpret_cast<char*>(b), 4);
    };
    Rng rng(85);
    auto write_split = [&](const std::string& prefix, int per_class) {
        const int n = per_class * 4;
        std::ofstream imgs(root + "/mnist/" + prefix + "-images-idx3-ubyte", std::ios::binary | std::ios::trunc);
        be32(imgs, 0x803);
        be32(imgs, static_cast<std::uint32_t>(n));
        be32(imgs, 8);
        be32(imgs, 8);
        std::ofstream lbls(root + "/mnist/" + prefix + "-labels-idx1-ubyte", std::ios::binary | std::ios::trunc);
        be32(lbls, 0x801);
        be32(lbls, static_cast<std::uint32_t>(n));
        for (int i = 0; i < n; ++i) {
            const int cls = i % 4;
            lbls.put(static_cast<char>(cls));
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) {
                    const bool lit = (cls == 0 && y < 4 && x < 4) || (cls == 1 && y < 4 && x >= 4) ||
                                     (cls == 2 && y >= 4 && x < 4) || (cls == 3 && y >= 4 && x >= 4);
                    const double v = lit ? 0.75 + 0.25 * rng.uniform() : 0.15 * rng.uniform();
                    imgs.put(static_cast<char>(std::lround(v * 255.0)));
                }
        }
    };
    write_split("train", per_class_train);
    write_split("t10k", per_class_test);
}

ExperimentConfig blob_config(const std::string& root, const std::string& out) {
    ExperimentConfig cfg;
    cfg.dataset = "mnist";
    cfg.data_root = root;
    cfg.num_known = 2;
    cfg.backbone = "dense:8";
    cfg.generator_arch = "dense:8,reshape:2x2x2,tconv:2:4:2,tconv:2:4:2,conv:1:3:1";
    cfg.discriminator_arch = "conv:2:3:2";
    cfg.synthetic_unknowns = 2;
    cfg.noise_dim = 6;
    cfg.batch_size = 16;
    cfg.teacher_epochs = 15;
    cfg.steps = 60;
    cfg.out_dir = out;
    cfg.seed = 11;
    return cfg;
}

}  // namespace

TEST_CASE("ablation harness: four variants, one split, coherent reports") {
    const std::string root = "eval_fixture_root";
    write_blob_idx_root(root, 40, 12);
    ExperimentConfig cfg = blob_config(root, "eval_fixture_out");

    EvaluationReport t = run_ablation(AblationVariant::T, cfg);
    EvaluationReport ts = run_ablation(AblationVariant::TS, cfg);
    EvaluationReport rs = run_ablation(AblationVariant::RS, cfg);
    EvaluationReport trs = run_ablation(AblationVariant::TRS, cfg);

    // shared split manifest and fingerprint... the variant differs per run
    CHECK(t.split_manifest == trs.split_manifest);
    CHECK(ts.split_manifest == trs.split_manifest);
    CHECK(rs.split_manifest == trs.split_manifest);

    // structural differences: the full pipeline tracks student unknown mass,
    // the teacher-only baseline has none
    CHECK(trs.mean_unknown_mass_unknown.has_value());
    CHECK_FALSE(t.mean_unknown_mass_known.has_value());
    CHECK(t.baseline_auroc.has_value());
    CHECK_FALSE(rs.baseline_auroc.has_value());

    // all four use the classwise strategy and the full vocabulary
    for (const EvaluationReport* r : {&t, &ts, &rs, &trs}) {
        CHECK(r->strategy == "classwise");
        CHECK(r->per_class.size() == 3);  // 2 knowns + unknown
        CHECK(r->auroc_value >= 0.0);
        CHECK(r->auroc_value <= 1.0);
        CHECK(r->macro_f1_value >= 0.0);
        CHECK(r->macro_f1_value <= 1.0);
        CHECK(r->known_test_count == r->unknown_test_count);  // 1:1 ratio
    }

    // report JSON parses and embeds provenance
    CHECK(trs.to_json().find("config_fingerprint") != std::string::npos);

    std::filesystem::remove_all(root);
    std::filesystem::remove_all("eval_fixture_out");
}

TEST_CASE("openness sweep on the blob fixture") {
    const std::string root = "sweep_fixture_root";
    write_blob_idx_root(root, 40, 12);
    ExperimentConfig cfg = blob_config(root, "sweep_fixture_out");
    std::filesystem::create_directories("sweep_fixture_out");

    // degenerate sweep: one count, one repeat -> one row per variant
    auto rows = run_openness_sweep(cfg, {AblationVariant::T, AblationVariant::TRS}, {2}, 1,
                                   "sweep_fixture_out/sweep");
    CHECK(rows.size() == 2);
    for (const auto& r : rows) {
        CHECK(r.unknown_class_count == 2);
        CHECK(r.openness_value == doctest::Approx(openness(2, 4, 2)));
        CHECK(r.macro_f1_value >= 0.0);
        CHECK(r.macro_f1_value <= 1.0);
    }
    CHECK(std::filesystem::exists("sweep_fixture_out/sweep.csv"));
    CHECK(std::filesystem::exists("sweep_fixture_out/sweep.svg"));

    // counts beyond the pool are rejected
    CHECK_THROWS_AS(run_openness_sweep(cfg, {AblationVariant::T}, {7}, 1, ""), std::invalid_argument);

    std::filesystem::remove_all(root);
    std::filesystem::remove_all("sweep_fixture_out");
}

TEST_CASE("unknown probability histogram emits bins x 2 rows") {
    Rng rng(86);
    ClassifierNet student = make_student(ImageShape{8, 8, 1}, 2, 2, "dense:6", 1e-3, rng);
    ImageSet known, unknown;
    known.images = test::random_unit_tensor({30, 8, 8, 1}, rng);
    known.labels.assign(30, 0);
    unknown.images = test::random_unit_tensor({25, 8, 8, 1}, rng);
    unknown.labels.assign(25, kUnknownLabel);

    HistogramSummary s = emit_unknown_probability_histogram(student, known, unknown, "hist_test", 20);
    CHECK(s.mean_known >= 0.0);
    CHECK(s.mean_unknown >= 0.0);

    std::ifstream csv("hist_test.csv");
    REQUIRE(static_cast<bool>(csv));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "population,bin_lo,bin_hi,count");
    int rows = 0;
    long total = 0;
    while (std::getline(csv, line)) {
        ++rows;
        total += std::stol(line.substr(line.rfind(',') + 1));
    }
    CHECK(rows == 40);  // bin count x 2 populations
    CHECK(total == 55);
    CHECK(std::filesystem::exists("hist_test.svg"));
    std::filesystem::remove("hist_test.csv");
    std::filesystem::remove("hist_test.svg");
}
