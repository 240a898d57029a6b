#include "osr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "osr/errors.hpp"
#include "osr/quantile.hpp"

namespace osr {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_short(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

double auroc(std::span<const double> scores, const std::vector<bool>& is_unknown) {
    if (scores.size() != is_unknown.size()) throw std::invalid_argument("auroc: size mismatch");
    const std::size_t n = scores.size();
    std::size_t n_unknown = 0;
    for (bool u : is_unknown) n_unknown += u ? 1 : 0;
    const std::size_t n_known = n - n_unknown;
    if (n_unknown == 0 || n_known == 0) throw std::invalid_argument("auroc: both populations must be present");
    for (double s : scores)
        if (!std::isfinite(s)) throw std::invalid_argument("auroc: non-finite score");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Average ranks across tied groups, then the rank-sum statistic.
    double rank_sum_unknown = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k)
            if (is_unknown[order[k]]) rank_sum_unknown += avg_rank;
        i = j + 1;
    }
    const double nu = static_cast<double>(n_unknown), nk = static_cast<double>(n_known);
    return (rank_sum_unknown - nu * (nu + 1.0) / 2.0) / (nu * nk);
}

MacroF1Result macro_f1(const std::vector<int>& predictions, const std::vector<int>& truth, int known_classes) {
    if (predictions.size() != truth.size()) throw std::invalid_argument("macro_f1: size mismatch");
    if (known_classes < 1) throw std::invalid_argument("macro_f1: needs at least one known class");
    auto slot = [&](int lbl) -> int {
        if (lbl == kUnknownLabel) return known_classes;
        if (lbl < 0 || lbl >= known_classes)
            throw std::invalid_argument("macro_f1: label " + std::to_string(lbl) + " outside the declared vocabulary");
        return lbl;
    };

    const int classes = known_classes + 1;
    std::vector<long> tp(classes, 0), fp(classes, 0), fn(classes, 0), support(classes, 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int t = slot(truth[i]);
        const int p = slot(predictions[i]);
        ++support[t];
        if (t == p) {
            ++tp[t];
        } else {
            ++fn[t];
            ++fp[p];
        }
    }

    MacroF1Result res;
    double sum_f1 = 0.0;
    for (int c = 0; c < classes; ++c) {
        PerClassMetrics m;
        m.cls = c == known_classes ? kUnknownLabel : c;
        m.support = support[c];
        const long denom_p = tp[c] + fp[c], denom_r = tp[c] + fn[c];
        m.precision = denom_p > 0 ? static_cast<double>(tp[c]) / denom_p : 0.0;
        m.recall = denom_r > 0 ? static_cast<double>(tp[c]) / denom_r : 0.0;
        m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
        sum_f1 += m.f1;
        res.per_class.push_back(m);
    }
    res.macro_f1 = sum_f1 / classes;
    return res;
}

// ---------------------------------------------------------------------------
// Variants
// ---------------------------------------------------------------------------

AblationVariant variant_from_string(const std::string& tag) {
    if (tag == "T") return AblationVariant::T;
    if (tag == "TS") return AblationVariant::TS;
    if (tag == "RS") return AblationVariant::RS;
    if (tag == "TRS") return AblationVariant::TRS;
    throw std::invalid_argument("unknown variant '" + tag + "' (expected T, TS, RS or TRS)");
}

std::string variant_name(AblationVariant v) {
    switch (v) {
        case AblationVariant::T: return "T";
        case AblationVariant::TS: return "TS";
        case AblationVariant::RS: return "RS";
        case AblationVariant::TRS: return "TRS";
    }
    return "?";
}

VariantToggles variant_toggles(AblationVariant v) {
    switch (v) {
        case AblationVariant::T: return {false, false};
        case AblationVariant::TS: return {true, false};
        case AblationVariant::RS: return {false, true};
        case AblationVariant::TRS: return {true, true};
    }
    return {true, true};
}

ScoreSource TrainedVariant::score_source() const {
    if (!has_student) return ScoreSource::TeacherOnly;
    if (!has_teacher) return ScoreSource::StudentOnly;
    return ScoreSource::Averaged;
}

ClassifierNet pretrain_variant_teacher(const ExperimentConfig& cfg, const ImageSet& known_train,
                                       std::ostream* curve_csv, TeacherTrainStats* stats) {
    int known = 0;
    for (int lbl : known_train.labels) known = std::max(known, lbl + 1);
    Rng init_rng(derive_seed(cfg.seed, "teacher-init"));
    ImageShape shape{known_train.images.dim(1), known_train.images.dim(2), known_train.images.dim(3)};
    ClassifierNet teacher(shape, known, 0, cfg.backbone, init_rng);
    DistillationConfig dc;
    dc.tau = cfg.tau;
    dc.lr = cfg.lr;
    dc.adam_beta1 = cfg.adam_beta1;
    dc.adam_beta2 = cfg.adam_beta2;
    dc.epochs = cfg.teacher_epochs;
    dc.batch_size = cfg.batch_size;
    dc.eps_scale = cfg.eps_scale;
    Rng train_rng(derive_seed(cfg.seed, "teacher-train"));
    TeacherTrainStats s = pretrain_teacher(teacher, known_train, dc, train_rng, curve_csv);
    if (stats) *stats = s;
    return teacher;
}

TrainedVariant train_variant(AblationVariant v, const ExperimentConfig& cfg, const ImageSet& known_train,
                             int known_classes, const ClassifierNet* pretrained_teacher, std::ostream* alt_csv,
                             const std::function<void(long, ModelBundle&)>& on_step, long on_step_every) {
    const VariantToggles toggles = variant_toggles(v);
    const bool needs_teacher = v != AblationVariant::RS;
    if (needs_teacher && !pretrained_teacher)
        throw std::invalid_argument("train_variant: variant " + variant_name(v) + " needs a pretrained teacher");

    TrainedVariant tv;
    tv.variant = v;
    tv.has_teacher = needs_teacher;
    tv.has_student = v != AblationVariant::T;
    tv.has_gan = toggles.recommend;

    const ImageShape shape{known_train.images.dim(1), known_train.images.dim(2), known_train.images.dim(3)};
    const int unknowns = cfg.synthetic_unknowns;

    if (needs_teacher) {
        tv.bundle.teacher = *pretrained_teacher;
        if (tv.has_student) {
            Rng aug_rng(derive_seed(cfg.seed, "augment"));
            augment_teacher(tv.bundle.teacher, unknowns, cfg.eps_scale, aug_rng);
        }
    }

    if (tv.has_student) {
        Rng student_rng(derive_seed(cfg.seed, "student-init"));
        tv.bundle.student = make_student(shape, known_classes, unknowns, cfg.backbone, cfg.eps_scale, student_rng);
    }
    if (tv.has_gan) {
        Rng gen_rng(derive_seed(cfg.seed, "generator-init"));
        tv.bundle.generator = GeneratorNet(shape, unknowns, cfg.generator_arch, gen_rng, cfg.noise_dim);
        Rng disc_rng(derive_seed(cfg.seed, "discriminator-init"));
        tv.bundle.discriminator = DiscriminatorNet(shape, cfg.discriminator_arch, disc_rng);
    }

    if (toggles.distill && toggles.recommend)
        tv.bundle.lambda = calibrate_lambda(tv.bundle.teacher, known_train, cfg.lambda_quantile);

    if (tv.has_student) {
        DistillationConfig dc;
        dc.tau = cfg.tau;
        dc.lr = cfg.lr;
        dc.adam_beta1 = cfg.adam_beta1;
        dc.adam_beta2 = cfg.adam_beta2;
        dc.batch_size = cfg.batch_size;
        dc.eps_scale = cfg.eps_scale;
        RecommenderConfig rc;
        rc.alpha = cfg.alpha;
        rc.lambda_quantile = cfg.lambda_quantile;
        rc.batch_size = cfg.batch_size;
        rc.lr = cfg.lr;
        rc.adam_beta1 = cfg.adam_beta1;
        rc.adam_beta2 = cfg.adam_beta2;
        Rng loop_rng(derive_seed(cfg.seed, "alternating"));
        alternating_train(tv.bundle, known_train, dc, rc, toggles, cfg.steps, loop_rng, alt_csv, on_step,
                          on_step_every);
    }

    nn::Tensor k_matrix = known_score_matrix(tv.has_teacher ? &tv.bundle.teacher : nullptr,
                                             tv.has_student ? &tv.bundle.student : nullptr, known_train,
                                             tv.score_source());
    tv.epsilons = calibrate_epsilons(k_matrix, known_train.labels, known_classes, cfg.eps_quantile);
    return tv;
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

VariantScores score_set(TrainedVariant& tv, const ImageSet& data) {
    const int n = data.count();
    VariantScores out;
    out.unknown_scores.resize(static_cast<std::size_t>(n));
    out.closed_set_argmax.resize(static_cast<std::size_t>(n));

    nn::Tensor q_probs, p_probs;
    int qk = 0, pk = 0;
    if (tv.has_teacher) {
        q_probs = tempered_softmax(forward_logits_all(tv.bundle.teacher, data), 1.0);
        qk = tv.bundle.teacher.logit_count();
        out.baseline_scores.resize(static_cast<std::size_t>(n));
    }
    if (tv.has_student) {
        p_probs = tempered_softmax(forward_logits_all(tv.bundle.student, data), 1.0);
        pk = tv.bundle.student.logit_count();
        out.student_unknown_mass.resize(static_cast<std::size_t>(n));
    }

    const int c = tv.has_teacher ? tv.bundle.teacher.known_count() : tv.bundle.student.known_count();
    out.known_scores = nn::Tensor({n, c});

    for (int i = 0; i < n; ++i) {
        double q_max = 0.0;
        int q_arg = 0;
        if (tv.has_teacher) {
            const double* q = q_probs.data() + static_cast<std::int64_t>(i) * qk;
            for (int j = 0; j < c; ++j)
                if (q[j] > q[q_arg]) q_arg = j;
            q_max = q[q_arg];
            out.baseline_scores[static_cast<std::size_t>(i)] = 1.0 - q_max;
        }
        double p_mass = 0.0, p_max = 0.0;
        int p_arg = 0;
        if (tv.has_student) {
            const double* p = p_probs.data() + static_cast<std::int64_t>(i) * pk;
            for (int j = c; j < pk; ++j) p_mass += p[j];
            for (int j = 0; j < c; ++j)
                if (p[j] > p[p_arg]) p_arg = j;
            p_max = p[p_arg];
            out.student_unknown_mass[static_cast<std::size_t>(i)] = p_mass;
        }

        double score = 0.0;
        if (tv.has_teacher && tv.has_student)
            score = (1.0 - q_max) * p_mass;
        else if (tv.has_teacher)
            score = 1.0 - q_max;
        else
            score = (1.0 - p_max) * p_mass;
        out.unknown_scores[static_cast<std::size_t>(i)] = score;
        out.closed_set_argmax[static_cast<std::size_t>(i)] = tv.has_teacher ? q_arg : p_arg;

        double* krow = out.known_scores.data() + static_cast<std::int64_t>(i) * c;
        for (int j = 0; j < c; ++j) {
            if (tv.has_teacher && tv.has_student)
                krow[j] = 0.5 * (q_probs[static_cast<std::int64_t>(i) * qk + j] + p_probs[static_cast<std::int64_t>(i) * pk + j]);
            else if (tv.has_teacher)
                krow[j] = q_probs[static_cast<std::int64_t>(i) * qk + j];
            else
                krow[j] = p_probs[static_cast<std::int64_t>(i) * pk + j];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation sets and reports
// ---------------------------------------------------------------------------

EvalSets make_eval_sets(const DatasetHandle& ds, const OpenSetSplit& split, const ExperimentConfig& cfg) {
    EvalSets sets;
    sets.known_test = filter_classes(ds.test, split.known_class_ids, true);

    ImageSet unknown_raw;
    if (cfg.unknown_dataset == "split") {
        unknown_raw = filter_classes(ds.test, split.unknown_class_ids, false);
    } else {
        DatasetHandle u = load_dataset(cfg.unknown_dataset, cfg.data_root, derive_seed(cfg.seed, "unknown-dataset"));
        if (!(u.shape == ds.shape))
            throw std::invalid_argument("unknown dataset " + cfg.unknown_dataset + " has shape " + u.shape.str() +
                                        ", expected " + ds.shape.str());
        unknown_raw = u.test;
    }
    if (unknown_raw.count() == 0) throw std::invalid_argument("evaluation unknown set is empty");
    sets.unknown_test = mark_all_unknown(unknown_raw);

    const int n = std::min(sets.known_test.count(), sets.unknown_test.count());
    Rng rk(derive_seed(cfg.seed, "eval-subsample-known"));
    Rng ru(derive_seed(cfg.seed, "eval-subsample-unknown"));
    sets.known_test = subsample(sets.known_test, n, rk);
    sets.unknown_test = subsample(sets.unknown_test, n, ru);
    return sets;
}

namespace {

void write_scores_csv(const std::string& path, const VariantScores& s, const std::vector<int>& decisions,
                      int known_classes, int offset) {
    std::ofstream os(path, offset == 0 ? std::ios::trunc : std::ios::app);
    if (!os) throw NotFoundError("cannot write scores csv: " + path);
    if (offset == 0) {
        os << "sample,teacher_max_prob,student_unknown_mass,unknown_score";
        for (int c = 0; c < known_classes; ++c) os << ",k" << c;
        os << ",decision\n";
    }
    for (std::size_t i = 0; i < s.unknown_scores.size(); ++i) {
        os << (offset + static_cast<long>(i)) << ",";
        os << (s.baseline_scores.empty() ? "nan" : fmt(1.0 - s.baseline_scores[i])) << ",";
        os << (s.student_unknown_mass.empty() ? "nan" : fmt(s.student_unknown_mass[i])) << ",";
        os << fmt(s.unknown_scores[i]);
        for (int c = 0; c < known_classes; ++c) os << "," << fmt(s.known_scores[static_cast<std::int64_t>(i) * known_classes + c]);
        const int d = decisions[i];
        os << "," << (d == kUnknownLabel ? std::string("unknown") : std::to_string(d)) << "\n";
    }
}

std::vector<int> decide(const VariantScores& s, const std::vector<double>& epsilons, double delta,
                        const std::string& strategy, int known_classes) {
    std::vector<int> out(s.unknown_scores.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (strategy == "classwise") {
            std::vector<double> krow(static_cast<std::size_t>(known_classes));
            for (int c = 0; c < known_classes; ++c) krow[static_cast<std::size_t>(c)] = s.known_scores[static_cast<std::int64_t>(i) * known_classes + c];
            out[i] = recognize_scores(krow, epsilons);
        } else if (strategy == "score") {
            out[i] = s.unknown_scores[i] > delta ? kUnknownLabel : s.closed_set_argmax[i];
        } else {
            throw std::invalid_argument("unknown strategy '" + strategy + "' (expected 'score' or 'classwise')");
        }
    }
    return out;
}

}  // namespace

EvaluationReport evaluate_variant(TrainedVariant& tv, const EvalSets& sets, const OpenSetSplit& split,
                                  const ExperimentConfig& cfg, const std::string& strategy,
                                  const std::string& scores_csv_path) {
    if (strategy == "classwise" && tv.epsilons.empty())
        throw NotFoundError("classwise evaluation requires calibrated epsilons; run calibrate first");

    VariantScores ks = score_set(tv, sets.known_test);
    VariantScores us = score_set(tv, sets.unknown_test);

    const int c = tv.has_teacher ? tv.bundle.teacher.known_count() : tv.bundle.student.known_count();
    std::vector<int> pred_known = decide(ks, tv.epsilons, cfg.delta, strategy, c);
    std::vector<int> pred_unknown = decide(us, tv.epsilons, cfg.delta, strategy, c);

    std::vector<int> predictions = pred_known;
    predictions.insert(predictions.end(), pred_unknown.begin(), pred_unknown.end());
    std::vector<int> truth = sets.known_test.labels;
    truth.insert(truth.end(), sets.unknown_test.labels.begin(), sets.unknown_test.labels.end());

    std::vector<double> scores = ks.unknown_scores;
    scores.insert(scores.end(), us.unknown_scores.begin(), us.unknown_scores.end());
    std::vector<bool> is_unknown(scores.size(), false);
    for (std::size_t i = ks.unknown_scores.size(); i < scores.size(); ++i) is_unknown[i] = true;

    EvaluationReport rep;
    rep.variant = variant_name(tv.variant);
    rep.strategy = strategy;
    rep.auroc_value = auroc(scores, is_unknown);
    if (tv.has_teacher) {
        std::vector<double> base = ks.baseline_scores;
        base.insert(base.end(), us.baseline_scores.begin(), us.baseline_scores.end());
        rep.baseline_auroc = auroc(base, is_unknown);
    }
    MacroF1Result f1 = macro_f1(predictions, truth, c);
    rep.macro_f1_value = f1.macro_f1;
    rep.per_class = std::move(f1.per_class);
    rep.openness_value = split.openness;
    rep.known_classes = c;
    rep.known_test_count = sets.known_test.count();
    rep.unknown_test_count = sets.unknown_test.count();
    long correct = 0;
    for (std::size_t i = 0; i < ks.closed_set_argmax.size(); ++i)
        if (ks.closed_set_argmax[i] == sets.known_test.labels[i]) ++correct;
    rep.closed_set_accuracy = sets.known_test.count() ? static_cast<double>(correct) / sets.known_test.count() : 0.0;
    if (tv.has_student) {
        auto mean = [](const std::vector<double>& v) {
            return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        };
        rep.mean_unknown_mass_known = mean(ks.student_unknown_mass);
        rep.mean_unknown_mass_unknown = mean(us.student_unknown_mass);
    }
    rep.split_manifest = split.manifest();
    rep.config_fingerprint = cfg.fingerprint();

    if (!scores_csv_path.empty()) {
        write_scores_csv(scores_csv_path, ks, pred_known, c, 0);
        write_scores_csv(scores_csv_path, us, pred_unknown, c, sets.known_test.count());
    }
    return rep;
}

std::string EvaluationReport::to_json() const {
    nlohmann::ordered_json j;
    j["variant"] = variant;
    j["strategy"] = strategy;
    j["auroc"] = auroc_value;
    if (baseline_auroc) j["baseline_auroc"] = *baseline_auroc;
    j["macro_f1"] = macro_f1_value;
    nlohmann::ordered_json pc = nlohmann::ordered_json::array();
    for (const auto& m : per_class) {
        nlohmann::ordered_json row;
        row["class"] = m.cls == kUnknownLabel ? "unknown" : std::to_string(m.cls);
        row["precision"] = m.precision;
        row["recall"] = m.recall;
        row["f1"] = m.f1;
        row["support"] = m.support;
        pc.push_back(row);
    }
    j["per_class"] = pc;
    j["openness"] = openness_value;
    j["known_classes"] = known_classes;
    j["known_test_count"] = known_test_count;
    j["unknown_test_count"] = unknown_test_count;
    j["closed_set_accuracy"] = closed_set_accuracy;
    if (mean_unknown_mass_known) j["mean_unknown_mass_known"] = *mean_unknown_mass_known;
    if (mean_unknown_mass_unknown) j["mean_unknown_mass_unknown"] = *mean_unknown_mass_unknown;
    j["split_manifest"] = split_manifest;
    j["config_fingerprint"] = config_fingerprint;
    return j.dump(2) + "\n";
}

void EvaluationReport::save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw NotFoundError("cannot write report: " + path);
    os << to_json();
}

OpenSetSplit split_from_config(const ExperimentConfig& cfg, const DatasetHandle& ds) {
    std::vector<int> ids = cfg.known_id_list();
    OpenSetSplit split;
    if (ids.empty()) {
        split = make_open_set_split(ds.train.distinct_labels(), cfg.num_known, derive_seed(cfg.seed, "split"));
    } else {
        std::vector<int> all = ds.train.distinct_labels();
        std::sort(ids.begin(), ids.end());
        split.known_class_ids = ids;
        for (int id : all)
            if (std::find(ids.begin(), ids.end(), id) == ids.end()) split.unknown_class_ids.push_back(id);
        split.c_tr = static_cast<int>(ids.size());
        split.c_te = static_cast<int>(all.size());
        split.c_r = split.c_tr;
        split.openness = openness(split.c_tr, split.c_te, split.c_r);
        split.seed = cfg.seed;
    }
    split.dataset = cfg.dataset;
    split.validate();
    return split;
}

EvaluationReport run_ablation(AblationVariant v, const ExperimentConfig& cfg) {
    cfg.require_valid();
    DatasetHandle ds = load_dataset(cfg.dataset, cfg.data_root, cfg.seed);
    OpenSetSplit split = split_from_config(cfg, ds);

    ImageSet known_train = filter_classes(ds.train, split.known_class_ids, true);
    const int c = static_cast<int>(split.known_class_ids.size());

    ClassifierNet teacher;
    TrainedVariant tv;
    if (v == AblationVariant::RS) {
        tv = train_variant(v, cfg, known_train, c, nullptr);
    } else {
        teacher = pretrain_variant_teacher(cfg, known_train);
        tv = train_variant(v, cfg, known_train, c, &teacher);
    }
    EvalSets sets = make_eval_sets(ds, split, cfg);
    return evaluate_variant(tv, sets, split, cfg, "classwise");
}

// ---------------------------------------------------------------------------
// SVG emission
// ---------------------------------------------------------------------------

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> pts;
};

void write_svg_line_plot(const std::string& path, const std::string& title, const std::string& xlabel,
                         const std::string& ylabel, const std::vector<Series>& series) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw NotFoundError("cannot write plot: " + path);
    const int W = 640, H = 440, ml = 70, mr = 30, mt = 40, mb = 50;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (auto [x, y] : s.pts) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (xmin >= xmax) xmax = xmin + 1.0;
    if (ymin >= ymax) ymax = ymin + 1.0;
    const double xpad = 0.05 * (xmax - xmin), ypad = 0.05 * (ymax - ymin);
    xmin -= xpad, xmax += xpad, ymin -= ypad, ymax += ypad;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };

    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    os << "<rect width='100%' height='100%' fill='white'/>\n";
    os << "<text x='" << W / 2 << "' y='20' text-anchor='middle' font-size='15'>" << title << "</text>\n";
    os << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr << "' y2='" << H - mb << "' stroke='black'/>\n";
    os << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << H - mb << "' stroke='black'/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double xv = xmin + (xmax - xmin) * t / 4.0, yv = ymin + (ymax - ymin) * t / 4.0;
        os << "<text x='" << px(xv) << "' y='" << H - mb + 18 << "' text-anchor='middle' font-size='11'>" << fmt_short(xv)
           << "</text>\n";
        os << "<text x='" << ml - 8 << "' y='" << py(yv) + 4 << "' text-anchor='end' font-size='11'>" << fmt_short(yv)
           << "</text>\n";
    }
    os << "<text x='" << (ml + W - mr) / 2 << "' y='" << H - 12 << "' text-anchor='middle' font-size='12'>" << xlabel
       << "</text>\n";
    os << "<text x='16' y='" << (mt + H - mb) / 2 << "' text-anchor='middle' font-size='12' transform='rotate(-90 16 "
       << (mt + H - mb) / 2 << ")'>" << ylabel << "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = kPalette[s % 6];
        os << "<polyline fill='none' stroke='" << color << "' stroke-width='2' points='";
        for (auto [x, y] : series[s].pts) os << px(x) << "," << py(y) << " ";
        os << "'/>\n";
        for (auto [x, y] : series[s].pts)
            os << "<circle cx='" << px(x) << "' cy='" << py(y) << "' r='3' fill='" << color << "'/>\n";
        os << "<text x='" << W - mr - 100 << "' y='" << mt + 16 * static_cast<int>(s) << "' font-size='12' fill='" << color
           << "'>" << series[s].name << "</text>\n";
    }
    os << "</svg>\n";
}

void write_svg_histogram(const std::string& path, const std::string& title, const std::vector<double>& edges,
                         const std::vector<long>& known_counts, const std::vector<long>& unknown_counts) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw NotFoundError("cannot write plot: " + path);
    const int W = 640, H = 440, ml = 70, mr = 30, mt = 40, mb = 50;
    long cmax = 1;
    for (long c : known_counts) cmax = std::max(cmax, c);
    for (long c : unknown_counts) cmax = std::max(cmax, c);
    const std::size_t bins = known_counts.size();
    const double bw = static_cast<double>(W - ml - mr) / static_cast<double>(bins);
    auto py = [&](double c) { return H - mb - c / static_cast<double>(cmax) * (H - mt - mb); };
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    os << "<rect width='100%' height='100%' fill='white'/>\n";
    os << "<text x='" << W / 2 << "' y='20' text-anchor='middle' font-size='15'>" << title << "</text>\n";
    for (std::size_t b = 0; b < bins; ++b) {
        const double x0 = ml + static_cast<double>(b) * bw;
        os << "<rect x='" << x0 << "' y='" << py(static_cast<double>(known_counts[b])) << "' width='" << bw * 0.45
           << "' height='" << (H - mb - py(static_cast<double>(known_counts[b]))) << "' fill='" << kPalette[0] << "'/>\n";
        os << "<rect x='" << x0 + bw * 0.45 << "' y='" << py(static_cast<double>(unknown_counts[b])) << "' width='"
           << bw * 0.45 << "' height='" << (H - mb - py(static_cast<double>(unknown_counts[b]))) << "' fill='"
           << kPalette[1] << "'/>\n";
    }
    os << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr << "' y2='" << H - mb << "' stroke='black'/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double xv = edges.front() + (edges.back() - edges.front()) * t / 4.0;
        os << "<text x='" << ml + (W - ml - mr) * t / 4.0 << "' y='" << H - mb + 18
           << "' text-anchor='middle' font-size='11'>" << fmt_short(xv) << "</text>\n";
    }
    os << "<text x='" << W - mr - 120 << "' y='" << mt << "' font-size='12' fill='" << kPalette[0] << "'>known</text>\n";
    os << "<text x='" << W - mr - 120 << "' y='" << mt + 16 << "' font-size='12' fill='" << kPalette[1]
       << "'>unknown</text>\n";
    os << "<text x='" << (ml + W - mr) / 2 << "' y='" << H - 12 << "' text-anchor='middle' font-size='12'>"
       << "unknown probability" << "</text>\n";
    os << "</svg>\n";
}

void write_svg_heatmap(const std::string& path, const std::string& title, const std::vector<double>& row_vals,
                       const std::vector<double>& col_vals, const std::vector<std::vector<double>>& cells,
                       const std::string& row_name, const std::string& col_name) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw NotFoundError("cannot write plot: " + path);
    const int W = 640, H = 440, ml = 90, mr = 30, mt = 50, mb = 60;
    double vmin = 1e300, vmax = -1e300;
    for (const auto& row : cells)
        for (double v : row) {
            vmin = std::min(vmin, v);
            vmax = std::max(vmax, v);
        }
    if (vmin >= vmax) vmax = vmin + 1e-9;
    const double cw = static_cast<double>(W - ml - mr) / static_cast<double>(col_vals.size());
    const double chh = static_cast<double>(H - mt - mb) / static_cast<double>(row_vals.size());
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    os << "<rect width='100%' height='100%' fill='white'/>\n";
    os << "<text x='" << W / 2 << "' y='22' text-anchor='middle' font-size='15'>" << title << "</text>\n";
    for (std::size_t r = 0; r < row_vals.size(); ++r) {
        for (std::size_t cidx = 0; cidx < col_vals.size(); ++cidx) {
            const double t = (cells[r][cidx] - vmin) / (vmax - vmin);
            const int red = static_cast<int>(255 * (1.0 - t)), green = static_cast<int>(160 * t + 60 * (1 - t));
            const double x0 = ml + static_cast<double>(cidx) * cw, y0 = mt + static_cast<double>(r) * chh;
            os << "<rect x='" << x0 << "' y='" << y0 << "' width='" << cw << "' height='" << chh << "' fill='rgb(" << red
               << "," << green << ",90)'/>\n";
            os << "<text x='" << x0 + cw / 2 << "' y='" << y0 + chh / 2 + 4
               << "' text-anchor='middle' font-size='12' fill='white'>" << fmt_short(cells[r][cidx]) << "</text>\n";
        }
        os << "<text x='" << ml - 8 << "' y='" << mt + static_cast<double>(r) * chh + chh / 2 + 4
           << "' text-anchor='end' font-size='12'>" << fmt_short(row_vals[r]) << "</text>\n";
    }
    for (std::size_t cidx = 0; cidx < col_vals.size(); ++cidx)
        os << "<text x='" << ml + static_cast<double>(cidx) * cw + cw / 2 << "' y='" << H - mb + 18
           << "' text-anchor='middle' font-size='12'>" << fmt_short(col_vals[cidx]) << "</text>\n";
    os << "<text x='" << (ml + W - mr) / 2 << "' y='" << H - 14 << "' text-anchor='middle' font-size='12'>" << col_name
       << "</text>\n";
    os << "<text x='20' y='" << (mt + H - mb) / 2 << "' text-anchor='middle' font-size='12' transform='rotate(-90 20 "
       << (mt + H - mb) / 2 << ")'>" << row_name << "</text>\n";
    os << "</svg>\n";
}

}  // namespace

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

namespace {

// Shared scaffolding for the sweep/grid drivers: split, relabeled training
// knowns, precomputed eval pools.
struct SweepContext {
    DatasetHandle ds;
    OpenSetSplit split;
    ImageSet known_train;
    ImageSet known_test;   // relabeled
    ImageSet unknown_pool; // original labels retained
    std::vector<int> pool_classes;
    int known_classes = 0;
};

SweepContext make_sweep_context(const ExperimentConfig& cfg) {
    SweepContext ctx;
    ctx.ds = load_dataset(cfg.dataset, cfg.data_root, cfg.seed);
    ctx.split = split_from_config(cfg, ctx.ds);
    ctx.known_train = filter_classes(ctx.ds.train, ctx.split.known_class_ids, true);
    ctx.known_test = filter_classes(ctx.ds.test, ctx.split.known_class_ids, true);
    ctx.known_classes = static_cast<int>(ctx.split.known_class_ids.size());
    if (cfg.unknown_dataset == "split") {
        ctx.unknown_pool = filter_classes(ctx.ds.test, ctx.split.unknown_class_ids, false);
    } else {
        DatasetHandle u = load_dataset(cfg.unknown_dataset, cfg.data_root, derive_seed(cfg.seed, "unknown-dataset"));
        ctx.unknown_pool = u.test;
    }
    ctx.pool_classes = ctx.unknown_pool.distinct_labels();
    if (ctx.unknown_pool.count() == 0 || ctx.pool_classes.empty())
        throw std::invalid_argument("openness sweep: unknown pool is empty");
    return ctx;
}

// Macro-F1 of precomputed predictions on a drawn unknown subset vs the known
// test side, both subsampled to a 1:1 ratio.
double sweep_f1(const std::vector<int>& known_preds, const std::vector<int>& known_truth,
                const std::vector<int>& pool_preds, const std::vector<int>& pool_sample_indices, int known_classes,
                Rng& rng) {
    std::vector<int> uidx = pool_sample_indices;
    const int n = std::min(static_cast<int>(known_preds.size()), static_cast<int>(uidx.size()));
    rng.shuffle(uidx);
    uidx.resize(static_cast<std::size_t>(n));
    std::vector<int> kidx(known_preds.size());
    std::iota(kidx.begin(), kidx.end(), 0);
    rng.shuffle(kidx);
    kidx.resize(static_cast<std::size_t>(n));

    std::vector<int> preds, truth;
    preds.reserve(2 * static_cast<std::size_t>(n));
    truth.reserve(2 * static_cast<std::size_t>(n));
    for (int i : kidx) {
        preds.push_back(known_preds[static_cast<std::size_t>(i)]);
        truth.push_back(known_truth[static_cast<std::size_t>(i)]);
    }
    for (int i : uidx) {
        preds.push_back(pool_preds[static_cast<std::size_t>(i)]);
        truth.push_back(kUnknownLabel);
    }
    return macro_f1(preds, truth, known_classes).macro_f1;
}

std::vector<int> classwise_predictions(TrainedVariant& tv, const ImageSet& data, int known_classes) {
    VariantScores s = score_set(tv, data);
    std::vector<int> preds(s.unknown_scores.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        std::vector<double> krow(static_cast<std::size_t>(known_classes));
        for (int c = 0; c < known_classes; ++c)
            krow[static_cast<std::size_t>(c)] = s.known_scores[static_cast<std::int64_t>(i) * known_classes + c];
        preds[i] = recognize_scores(krow, tv.epsilons);
    }
    return preds;
}

}  // namespace

std::vector<SweepRow> run_openness_sweep(const ExperimentConfig& cfg, const std::vector<AblationVariant>& variants,
                                         const std::vector<int>& unknown_class_counts, int repeats,
                                         const std::string& out_prefix) {
    if (repeats < 1) throw std::invalid_argument("openness sweep: repeats must be >= 1");
    SweepContext ctx = make_sweep_context(cfg);
    for (int count : unknown_class_counts)
        if (count < 1 || count > static_cast<int>(ctx.pool_classes.size()))
            throw std::invalid_argument("openness sweep: unknown-class count " + std::to_string(count) +
                                        " exceeds the pool (" + std::to_string(ctx.pool_classes.size()) + " classes)");

    bool needs_teacher = false;
    for (AblationVariant v : variants) needs_teacher |= v != AblationVariant::RS;
    ClassifierNet teacher;
    if (needs_teacher) teacher = pretrain_variant_teacher(cfg, ctx.known_train);

    // Precompute predictions for the known test side and the whole pool.
    std::vector<std::vector<int>> known_preds, pool_preds;
    std::vector<std::string> names;
    for (AblationVariant v : variants) {
        TrainedVariant tv = train_variant(v, cfg, ctx.known_train, ctx.known_classes,
                                          v == AblationVariant::RS ? nullptr : &teacher);
        known_preds.push_back(classwise_predictions(tv, ctx.known_test, ctx.known_classes));
        pool_preds.push_back(classwise_predictions(tv, ctx.unknown_pool, ctx.known_classes));
        names.push_back(variant_name(v));
    }

    std::vector<SweepRow> rows;
    for (int count : unknown_class_counts) {
        for (int rep = 0; rep < repeats; ++rep) {
            Rng draw_rng(derive_seed(cfg.seed, "sweep-draw-" + std::to_string(count) + "-" + std::to_string(rep)));
            std::vector<int> classes = ctx.pool_classes;
            draw_rng.shuffle(classes);
            classes.resize(static_cast<std::size_t>(count));
            std::vector<int> sample_idx;
            for (int i = 0; i < ctx.unknown_pool.count(); ++i)
                if (std::find(classes.begin(), classes.end(), ctx.unknown_pool.labels[static_cast<std::size_t>(i)]) !=
                    classes.end())
                    sample_idx.push_back(i);
            const double op = openness(ctx.known_classes, ctx.known_classes + count, ctx.known_classes);
            for (std::size_t vi = 0; vi < names.size(); ++vi) {
                Rng mix_rng(derive_seed(cfg.seed, "sweep-mix-" + std::to_string(count) + "-" + std::to_string(rep)));
                SweepRow row;
                row.variant = names[vi];
                row.unknown_class_count = count;
                row.openness_value = op;
                row.repeat = rep;
                row.macro_f1_value = sweep_f1(known_preds[vi], ctx.known_test.labels, pool_preds[vi], sample_idx,
                                              ctx.known_classes, mix_rng);
                rows.push_back(row);
            }
        }
    }

    if (!out_prefix.empty()) {
        std::ofstream csv(out_prefix + ".csv", std::ios::trunc);
        if (!csv) throw NotFoundError("cannot write sweep csv: " + out_prefix + ".csv");
        csv << "variant,unknown_classes,openness,repeat,macro_f1\n";
        for (const auto& r : rows)
            csv << r.variant << "," << r.unknown_class_count << "," << fmt(r.openness_value) << "," << r.repeat << ","
                << fmt(r.macro_f1_value) << "\n";

        std::vector<Series> series;
        for (const auto& name : names) {
            Series s;
            s.name = name;
            for (int count : unknown_class_counts) {
                double sum = 0.0;
                int m = 0;
                double op = 0.0;
                for (const auto& r : rows)
                    if (r.variant == name && r.unknown_class_count == count) {
                        sum += r.macro_f1_value;
                        op = r.openness_value;
                        ++m;
                    }
                if (m) s.pts.emplace_back(op, sum / m);
            }
            series.push_back(std::move(s));
        }
        write_svg_line_plot(out_prefix + ".svg", "macro-F1 vs openness", "openness", "macro-F1", series);
    }
    return rows;
}

std::vector<GridRow> run_sensitivity_grid(const ExperimentConfig& cfg, const std::vector<double>& taus,
                                          const std::vector<double>& alphas,
                                          const std::vector<int>& unknown_class_counts,
                                          const std::string& out_prefix) {
    if (taus.empty() || alphas.empty()) throw std::invalid_argument("sensitivity grid: empty axis");
    SweepContext ctx = make_sweep_context(cfg);
    for (int count : unknown_class_counts)
        if (count < 1 || count > static_cast<int>(ctx.pool_classes.size()))
            throw std::invalid_argument("sensitivity grid: unknown-class count " + std::to_string(count) +
                                        " exceeds the pool");
    ClassifierNet teacher = pretrain_variant_teacher(cfg, ctx.known_train);

    std::vector<GridRow> rows;
    for (double tau : taus) {
        for (double alpha : alphas) {
            ExperimentConfig cell = cfg;
            cell.tau = tau;
            cell.alpha = alpha;
            TrainedVariant tv = train_variant(AblationVariant::TRS, cell, ctx.known_train, ctx.known_classes, &teacher);
            std::vector<int> kp = classwise_predictions(tv, ctx.known_test, ctx.known_classes);
            std::vector<int> pp = classwise_predictions(tv, ctx.unknown_pool, ctx.known_classes);
            for (int count : unknown_class_counts) {
                Rng draw_rng(derive_seed(cfg.seed, "grid-draw-" + std::to_string(count)));
                std::vector<int> classes = ctx.pool_classes;
                draw_rng.shuffle(classes);
                classes.resize(static_cast<std::size_t>(count));
                std::vector<int> sample_idx;
                for (int i = 0; i < ctx.unknown_pool.count(); ++i)
                    if (std::find(classes.begin(), classes.end(),
                                  ctx.unknown_pool.labels[static_cast<std::size_t>(i)]) != classes.end())
                        sample_idx.push_back(i);
                Rng mix_rng(derive_seed(cfg.seed, "grid-mix-" + std::to_string(count)));
                GridRow row;
                row.tau = tau;
                row.alpha = alpha;
                row.unknown_class_count = count;
                row.openness_value = openness(ctx.known_classes, ctx.known_classes + count, ctx.known_classes);
                row.macro_f1_value =
                    sweep_f1(kp, ctx.known_test.labels, pp, sample_idx, ctx.known_classes, mix_rng);
                rows.push_back(row);
            }
        }
    }

    if (!out_prefix.empty()) {
        std::ofstream csv(out_prefix + ".csv", std::ios::trunc);
        if (!csv) throw NotFoundError("cannot write grid csv: " + out_prefix + ".csv");
        csv << "tau,alpha,unknown_classes,openness,macro_f1\n";
        for (const auto& r : rows)
            csv << fmt(r.tau) << "," << fmt(r.alpha) << "," << r.unknown_class_count << "," << fmt(r.openness_value)
                << "," << fmt(r.macro_f1_value) << "\n";
        for (int count : unknown_class_counts) {
            std::vector<std::vector<double>> cells(taus.size(), std::vector<double>(alphas.size(), 0.0));
            double op = 0.0;
            for (const auto& r : rows) {
                if (r.unknown_class_count != count) continue;
                const auto ti = std::find(taus.begin(), taus.end(), r.tau) - taus.begin();
                const auto ai = std::find(alphas.begin(), alphas.end(), r.alpha) - alphas.begin();
                cells[static_cast<std::size_t>(ti)][static_cast<std::size_t>(ai)] = r.macro_f1_value;
                op = r.openness_value;
            }
            write_svg_heatmap(out_prefix + "_u" + std::to_string(count) + ".svg",
                              "macro-F1, openness " + fmt_short(op * 100.0) + "%", taus, alphas, cells, "tau", "alpha");
        }
    }
    return rows;
}

HistogramSummary emit_unknown_probability_histogram(ClassifierNet& student, const ImageSet& known_test,
                                                    const ImageSet& unknown_test, const std::string& out_prefix,
                                                    int bins) {
    if (bins < 1) throw std::invalid_argument("histogram: bins must be >= 1");
    auto masses = [&](const ImageSet& set) {
        nn::Tensor probs = tempered_softmax(forward_logits_all(student, set), 1.0);
        const int k = student.logit_count();
        std::vector<double> m(static_cast<std::size_t>(set.count()));
        for (int i = 0; i < set.count(); ++i) {
            double s = 0.0;
            for (int j = student.known_count(); j < k; ++j) s += probs[static_cast<std::int64_t>(i) * k + j];
            m[static_cast<std::size_t>(i)] = s;
        }
        return m;
    };
    std::vector<double> mk = masses(known_test), mu = masses(unknown_test);

    std::vector<long> ck(static_cast<std::size_t>(bins), 0), cu(static_cast<std::size_t>(bins), 0);
    auto fill_counts = [&](const std::vector<double>& m, std::vector<long>& c) {
        for (double v : m) {
            int b = static_cast<int>(v * bins);
            b = std::clamp(b, 0, bins - 1);
            ++c[static_cast<std::size_t>(b)];
        }
    };
    fill_counts(mk, ck);
    fill_counts(mu, cu);

    std::ofstream csv(out_prefix + ".csv", std::ios::trunc);
    if (!csv) throw NotFoundError("cannot write histogram csv: " + out_prefix + ".csv");
    csv << "population,bin_lo,bin_hi,count\n";
    for (int b = 0; b < bins; ++b)
        csv << "known," << fmt(static_cast<double>(b) / bins) << "," << fmt(static_cast<double>(b + 1) / bins) << ","
            << ck[static_cast<std::size_t>(b)] << "\n";
    for (int b = 0; b < bins; ++b)
        csv << "unknown," << fmt(static_cast<double>(b) / bins) << "," << fmt(static_cast<double>(b + 1) / bins) << ","
            << cu[static_cast<std::size_t>(b)] << "\n";

    std::vector<double> edges(static_cast<std::size_t>(bins) + 1);
    for (int b = 0; b <= bins; ++b) edges[static_cast<std::size_t>(b)] = static_cast<double>(b) / bins;
    write_svg_histogram(out_prefix + ".svg", "unknown probability by population", edges, ck, cu);

    auto mean = [](const std::vector<double>& v) {
        return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    return HistogramSummary{mean(mk), mean(mu)};
}

}  // namespace osr
