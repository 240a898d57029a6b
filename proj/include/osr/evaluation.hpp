#ifndef OSR_EVALUATION_HPP
#define OSR_EVALUATION_HPP

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "osr/config.hpp"
#include "osr/inference.hpp"
#include "osr/recommender.hpp"

namespace osr {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

// Probability that a random unknown outranks a random known, ties counted
// half (rank statistic, no curve binning). Both populations must be present.
double auroc(std::span<const double> scores, const std::vector<bool>& is_unknown);

struct PerClassMetrics {
    int cls = 0;  // known index, or the unknown sentinel
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    long support = 0;
};

struct MacroF1Result {
    double macro_f1 = 0.0;
    std::vector<PerClassMetrics> per_class;  // C known rows then the unknown row
};

// Unweighted mean F1 over the fixed vocabulary of C known classes plus
// "unknown"; classes never predicted still contribute their (possibly zero)
// F1. Labels outside the vocabulary are an error.
MacroF1Result macro_f1(const std::vector<int>& predictions, const std::vector<int>& truth, int known_classes);

// ---------------------------------------------------------------------------
// Ablation variants
// ---------------------------------------------------------------------------

// T  = teacher alone; TS = distillation without the recommender;
// RS = recommender with a from-scratch student (no teacher, filter disabled);
// TRS = the full pipeline.
enum class AblationVariant { T, TS, RS, TRS };

AblationVariant variant_from_string(const std::string& tag);
std::string variant_name(AblationVariant v);
VariantToggles variant_toggles(AblationVariant v);

// Trained models plus calibrated thresholds for one variant.
struct TrainedVariant {
    AblationVariant variant = AblationVariant::TRS;
    ModelBundle bundle;
    bool has_teacher = false, has_student = false, has_gan = false;
    std::vector<double> epsilons;
    TeacherTrainStats teacher_stats;

    ScoreSource score_source() const;
};

// Pure teacher (no unknown slots) trained on the known training set.
ClassifierNet pretrain_variant_teacher(const ExperimentConfig& cfg, const ImageSet& known_train,
                                       std::ostream* curve_csv = nullptr, TeacherTrainStats* stats = nullptr);

// Builds and trains one variant. `pretrained_teacher` (required for T, TS,
// TRS) is copied, so one teacher can seed several variants.
TrainedVariant train_variant(AblationVariant v, const ExperimentConfig& cfg, const ImageSet& known_train,
                             int known_classes, const ClassifierNet* pretrained_teacher,
                             std::ostream* alt_csv = nullptr,
                             const std::function<void(long, ModelBundle&)>& on_step = nullptr,
                             long on_step_every = 0);

// ---------------------------------------------------------------------------
// Scoring and reports
// ---------------------------------------------------------------------------

// Per-sample model outputs over an image set.
struct VariantScores {
    std::vector<double> unknown_scores;       // variant's detection score
    std::vector<double> baseline_scores;      // 1 - max teacher confidence (if teacher)
    std::vector<double> student_unknown_mass; // sum of unknown-slot probabilities (if student)
    nn::Tensor known_scores;                  // [N, C]
    std::vector<int> closed_set_argmax;       // argmax over known slots
};

VariantScores score_set(TrainedVariant& tv, const ImageSet& data);

struct EvaluationReport {
    std::string variant;
    std::string strategy;  // "score" or "classwise"
    double auroc_value = 0.0;
    std::optional<double> baseline_auroc;  // softmax 1-max-confidence baseline
    double macro_f1_value = 0.0;
    std::vector<PerClassMetrics> per_class;
    double openness_value = 0.0;
    int known_classes = 0;
    long known_test_count = 0, unknown_test_count = 0;
    double closed_set_accuracy = 0.0;
    std::optional<double> mean_unknown_mass_known;
    std::optional<double> mean_unknown_mass_unknown;
    std::string split_manifest;
    std::string config_fingerprint;

    std::string to_json() const;
    void save(const std::string& path) const;
};

// Split selection for a config: explicit known_ids when given, otherwise a
// seeded random draw of num_known classes.
OpenSetSplit split_from_config(const ExperimentConfig& cfg, const DatasetHandle& ds);

// Known test samples carry 0-based known labels, unknown samples the
// sentinel; the larger side is pre-subsampled to a 1:1 ratio.
struct EvalSets {
    ImageSet known_test;
    ImageSet unknown_test;
};

// Assembles the evaluation sets for a split: knowns from the dataset's test
// partition, unknowns either from the held-out classes ("split") or from a
// named unknown dataset; both sides subsampled (seeded) to 1:1.
EvalSets make_eval_sets(const DatasetHandle& ds, const OpenSetSplit& split, const ExperimentConfig& cfg);

// Evaluates one trained variant. strategy "score" thresholds the unknown
// score at cfg.delta and lets the teacher classify the rest; "classwise"
// applies the per-class recognition rule with the calibrated epsilons.
EvaluationReport evaluate_variant(TrainedVariant& tv, const EvalSets& sets, const OpenSetSplit& split,
                                  const ExperimentConfig& cfg, const std::string& strategy,
                                  const std::string& scores_csv_path = "");

// Trains and evaluates one ablation variant end to end (classwise strategy).
EvaluationReport run_ablation(AblationVariant v, const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct SweepRow {
    std::string variant;
    int unknown_class_count = 0;
    double openness_value = 0.0;
    int repeat = 0;
    double macro_f1_value = 0.0;
};

// Macro-F1 against openness: every variant is trained once on the knowns,
// then for each unknown-class count `repeats` random class draws from the
// unknown pool are scored. Writes <out_prefix>.csv and <out_prefix>.svg.
std::vector<SweepRow> run_openness_sweep(const ExperimentConfig& cfg, const std::vector<AblationVariant>& variants,
                                         const std::vector<int>& unknown_class_counts, int repeats,
                                         const std::string& out_prefix);

struct GridRow {
    double tau = 0.0, alpha = 0.0;
    int unknown_class_count = 0;
    double openness_value = 0.0;
    double macro_f1_value = 0.0;
};

// Macro-F1 over a (tau, alpha) grid at each openness level; one full TRS
// training per cell. Writes <out_prefix>.csv plus one SVG heatmap per level.
std::vector<GridRow> run_sensitivity_grid(const ExperimentConfig& cfg, const std::vector<double>& taus,
                                          const std::vector<double>& alphas,
                                          const std::vector<int>& unknown_class_counts,
                                          const std::string& out_prefix);

struct HistogramSummary {
    double mean_known = 0.0;
    double mean_unknown = 0.0;
};

// Histogram of the student's unknown-slot mass over the known and unknown
// test populations. Writes <out_prefix>.csv (bins x 2 rows) and an SVG.
HistogramSummary emit_unknown_probability_histogram(ClassifierNet& student, const ImageSet& known_test,
                                                    const ImageSet& unknown_test, const std::string& out_prefix,
                                                    int bins = 20);

}  // namespace osr

#endif
