#include "osr/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "osr/errors.hpp"
#include "osr/image_io.hpp"

namespace osr {

namespace fs = std::filesystem;

void ExperimentPaths::prepare() const {
    fs::create_directories(root);
    fs::create_directories(checkpoints_dir());
    fs::create_directories(logs_dir());
    fs::create_directories(samples_dir());
    fs::create_directories(reports_dir());
}

namespace {

struct LoadedExperiment {
    DatasetHandle ds;
    OpenSetSplit split;
    ImageSet known_train;
    int known_classes = 0;
};

LoadedExperiment load_experiment(const ExperimentConfig& cfg, const ExperimentPaths& paths, bool split_from_disk) {
    LoadedExperiment exp;
    exp.ds = load_dataset(cfg.dataset, cfg.data_root, cfg.seed);
    if (split_from_disk)
        exp.split = OpenSetSplit::load(paths.split_manifest());
    else
        exp.split = split_from_config(cfg, exp.ds);
    exp.known_train = filter_classes(exp.ds.train, exp.split.known_class_ids, true);
    exp.known_classes = static_cast<int>(exp.split.known_class_ids.size());
    return exp;
}

void require_artifact(const std::string& path, const std::string& producer) {
    if (!fs::exists(path)) throw NotFoundError("missing artifact " + path + " — run `" + producer + "` first");
}

// Rebuilds network shells and fills them from the stored checkpoints.
TrainedVariant load_trained_variant(const ExperimentConfig& cfg, const ExperimentPaths& paths,
                                    const LoadedExperiment& exp) {
    TrainedVariant tv;
    tv.variant = variant_from_string(cfg.variant);
    tv.has_teacher = tv.variant != AblationVariant::RS;
    tv.has_student = tv.variant != AblationVariant::T;
    tv.has_gan = variant_toggles(tv.variant).recommend;
    const std::string fp = cfg.fingerprint();
    const ImageShape shape = exp.ds.shape;
    const int c = exp.known_classes, u = cfg.synthetic_unknowns;

    Rng shell_rng(derive_seed(cfg.seed, "shell"));
    if (tv.has_teacher) {
        if (tv.has_student) {
            require_artifact(paths.teacher_augmented_ckpt(), "train");
            tv.bundle.teacher = ClassifierNet(shape, c, u, cfg.backbone, shell_rng);
            load_checkpoint(paths.teacher_augmented_ckpt(), tv.bundle.teacher.named_params("teacher"), fp);
        } else {
            require_artifact(paths.teacher_ckpt(), "train-teacher");
            tv.bundle.teacher = ClassifierNet(shape, c, 0, cfg.backbone, shell_rng);
            load_checkpoint(paths.teacher_ckpt(), tv.bundle.teacher.named_params("teacher"), fp);
        }
    }
    if (tv.has_student) {
        require_artifact(paths.student_ckpt(), "train");
        tv.bundle.student = ClassifierNet(shape, c, u, cfg.backbone, shell_rng);
        load_checkpoint(paths.student_ckpt(), tv.bundle.student.named_params("student"), fp);
    }
    if (tv.has_gan) {
        require_artifact(paths.generator_ckpt(), "train");
        tv.bundle.generator = GeneratorNet(shape, u, cfg.generator_arch, shell_rng, cfg.noise_dim);
        load_checkpoint(paths.generator_ckpt(), tv.bundle.generator.named_params("generator"), fp);
        require_artifact(paths.discriminator_ckpt(), "train");
        tv.bundle.discriminator = DiscriminatorNet(shape, cfg.discriminator_arch, shell_rng);
        load_checkpoint(paths.discriminator_ckpt(), tv.bundle.discriminator.named_params("discriminator"), fp);
    }
    return tv;
}

}  // namespace

TeacherTrainStats cmd_train_teacher(const ExperimentConfig& cfg) {
    cfg.require_valid();
    ExperimentPaths paths{cfg.out_dir};
    paths.prepare();
    cfg.save(paths.config_echo());

    LoadedExperiment exp = load_experiment(cfg, paths, false);
    exp.split.save(paths.split_manifest());

    std::ofstream curve(paths.teacher_curve_csv(), std::ios::trunc);
    TeacherTrainStats stats;
    ClassifierNet teacher = pretrain_variant_teacher(cfg, exp.known_train, &curve, &stats);
    save_checkpoint(paths.teacher_ckpt(), teacher.named_params("teacher"), cfg.fingerprint(),
                    static_cast<std::uint64_t>(stats.steps));
    return stats;
}

std::vector<AlternatingLogRow> cmd_train(const ExperimentConfig& cfg) {
    cfg.require_valid();
    ExperimentPaths paths{cfg.out_dir};
    paths.prepare();
    cfg.save(paths.config_echo());

    LoadedExperiment exp = load_experiment(cfg, paths, false);
    exp.split.save(paths.split_manifest());

    const AblationVariant variant = variant_from_string(cfg.variant);
    ClassifierNet teacher;
    const bool needs_teacher = variant != AblationVariant::RS;
    if (needs_teacher) {
        require_artifact(paths.teacher_ckpt(), "train-teacher");
        Rng shell_rng(derive_seed(cfg.seed, "shell"));
        teacher = ClassifierNet(exp.ds.shape, exp.known_classes, 0, cfg.backbone, shell_rng);
        load_checkpoint(paths.teacher_ckpt(), teacher.named_params("teacher"), cfg.fingerprint());
    }

    std::ofstream alt_csv(paths.alternating_csv(), std::ios::trunc);
    auto grid_cb = [&](long step, ModelBundle& bundle) {
        char name[64];
        std::snprintf(name, sizeof(name), "/grid_step%06ld.pgm", step);
        Rng grid_rng(derive_seed(cfg.seed, "grid-" + std::to_string(step)));
        emit_sample_grid(bundle.generator, bundle.generator.condition_count(), 10, paths.samples_dir() + name,
                         grid_rng);
    };
    const bool want_grids = variant_toggles(variant).recommend && cfg.grid_every > 0;

    TrainedVariant tv =
        train_variant(variant, cfg, exp.known_train, exp.known_classes, needs_teacher ? &teacher : nullptr, &alt_csv,
                      want_grids ? std::function<void(long, ModelBundle&)>(grid_cb) : nullptr, cfg.grid_every);
    alt_csv.close();

    const std::string fp = cfg.fingerprint();
    const auto step_count = static_cast<std::uint64_t>(cfg.steps);
    if (tv.has_teacher && tv.has_student)
        save_checkpoint(paths.teacher_augmented_ckpt(), tv.bundle.teacher.named_params("teacher"), fp, step_count);
    if (tv.has_student) save_checkpoint(paths.student_ckpt(), tv.bundle.student.named_params("student"), fp, step_count);
    if (tv.has_gan) {
        save_checkpoint(paths.generator_ckpt(), tv.bundle.generator.named_params("generator"), fp, step_count);
        save_checkpoint(paths.discriminator_ckpt(), tv.bundle.discriminator.named_params("discriminator"), fp,
                        step_count);
        Rng grid_rng(derive_seed(cfg.seed, "grid-final"));
        emit_sample_grid(tv.bundle.generator, tv.bundle.generator.condition_count(), 10,
                         paths.samples_dir() + "/grid_final.pgm", grid_rng);
    }

    InferenceThresholds th;
    th.delta = cfg.delta;
    th.epsilons = tv.epsilons;
    th.eps_quantile = cfg.eps_quantile;
    th.lambda = tv.bundle.lambda;
    th.lambda_quantile = cfg.lambda_quantile;
    th.save(paths.thresholds_file());

    // Re-read the loop log for the caller (the CSV on disk is authoritative).
    std::vector<AlternatingLogRow> rows;
    std::ifstream is(paths.alternating_csv());
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
        AlternatingLogRow r;
        if (std::sscanf(line.c_str(), "%ld,%lf,%lf,%lf,%lf,%lf", &r.step, &r.loss_d, &r.loss_g, &r.loss_kd, &r.loss_s,
                        &r.mask_fraction) == 6)
            rows.push_back(r);
    }
    return rows;
}

InferenceThresholds cmd_calibrate(const ExperimentConfig& cfg) {
    cfg.require_valid();
    ExperimentPaths paths{cfg.out_dir};
    paths.prepare();
    require_artifact(paths.split_manifest(), "train");
    LoadedExperiment exp = load_experiment(cfg, paths, true);
    TrainedVariant tv = load_trained_variant(cfg, paths, exp);

    InferenceThresholds th;
    th.delta = cfg.delta;
    th.eps_quantile = cfg.eps_quantile;
    th.lambda_quantile = cfg.lambda_quantile;
    if (tv.has_teacher && tv.has_student)
        th.lambda = calibrate_lambda(tv.bundle.teacher, exp.known_train, cfg.lambda_quantile);
    nn::Tensor k = known_score_matrix(tv.has_teacher ? &tv.bundle.teacher : nullptr,
                                      tv.has_student ? &tv.bundle.student : nullptr, exp.known_train,
                                      tv.score_source());
    th.epsilons = calibrate_epsilons(k, exp.known_train.labels, exp.known_classes, cfg.eps_quantile);
    th.save(paths.thresholds_file());
    return th;
}

EvaluationReport cmd_evaluate(const ExperimentConfig& cfg, const std::string& strategy) {
    cfg.require_valid();
    if (strategy != "score" && strategy != "classwise")
        throw std::invalid_argument("strategy must be 'score' or 'classwise', got '" + strategy + "'");
    ExperimentPaths paths{cfg.out_dir};
    paths.prepare();
    require_artifact(paths.split_manifest(), "train");
    LoadedExperiment exp = load_experiment(cfg, paths, true);
    TrainedVariant tv = load_trained_variant(cfg, paths, exp);

    if (strategy == "classwise") {
        if (!fs::exists(paths.thresholds_file()))
            throw NotFoundError("classwise evaluation needs " + paths.thresholds_file() +
                                " — run `calibrate` (or `train`) first");
        InferenceThresholds th = InferenceThresholds::load(paths.thresholds_file());
        if (static_cast<int>(th.epsilons.size()) != exp.known_classes)
            throw ParseError("thresholds file has " + std::to_string(th.epsilons.size()) + " epsilons, expected " +
                             std::to_string(exp.known_classes));
        tv.epsilons = th.epsilons;
        tv.bundle.lambda = th.lambda;
    }

    EvalSets sets = make_eval_sets(exp.ds, exp.split, cfg);
    const std::string tag = strategy + "_" + cfg.unknown_dataset;
    EvaluationReport rep = evaluate_variant(tv, sets, exp.split, cfg, strategy,
                                            paths.reports_dir() + "/scores_" + tag + ".csv");
    rep.save(paths.reports_dir() + "/evaluation_" + tag + ".json");
    if (tv.has_student)
        emit_unknown_probability_histogram(tv.bundle.student, sets.known_test, sets.unknown_test,
                                           paths.reports_dir() + "/histogram_" + cfg.unknown_dataset);
    return rep;
}

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg, const std::vector<int>& unknown_class_counts,
                                int repeats, const std::vector<std::string>& variants) {
    cfg.require_valid();
    ExperimentPaths paths{cfg.out_dir};
    paths.prepare();
    cfg.save(paths.config_echo());
    std::vector<AblationVariant> vs;
    for (const auto& v : variants) vs.push_back(variant_from_string(v));
    if (vs.empty()) vs = {AblationVariant::T, AblationVariant::TS, AblationVariant::RS, AblationVariant::TRS};
    return run_openness_sweep(cfg, vs, unknown_class_counts, repeats, paths.reports_dir() + "/sweep");
}

std::vector<GridRow> cmd_grid(const ExperimentConfig& cfg, const std::vector<double>& taus,
                              const std::vector<double>& alphas, const std::vector<int>& unknown_class_counts) {
    cfg.require_valid();
    ExperimentPaths paths{cfg.out_dir};
    paths.prepare();
    cfg.save(paths.config_echo());
    return run_sensitivity_grid(cfg, taus, alphas, unknown_class_counts, paths.reports_dir() + "/sensitivity");
}

std::string cmd_generate(const ExperimentConfig& cfg, int per_class) {
    cfg.require_valid();
    ExperimentPaths paths{cfg.out_dir};
    paths.prepare();
    require_artifact(paths.generator_ckpt(), "train");
    Rng shell_rng(derive_seed(cfg.seed, "shell"));
    DatasetHandle ds = load_dataset(cfg.dataset, cfg.data_root, cfg.seed);
    GeneratorNet gen(ds.shape, cfg.synthetic_unknowns, cfg.generator_arch, shell_rng, cfg.noise_dim);
    load_checkpoint(paths.generator_ckpt(), gen.named_params("generator"), cfg.fingerprint());
    Rng grid_rng(derive_seed(cfg.seed, "grid-manual"));
    const std::string path = paths.samples_dir() + "/grid_manual.pgm";
    emit_sample_grid(gen, cfg.synthetic_unknowns, per_class, path, grid_rng);
    return path;
}

}  // namespace osr
