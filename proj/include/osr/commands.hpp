#ifndef OSR_COMMANDS_HPP
#define OSR_COMMANDS_HPP

#include <string>
#include <vector>

#include "osr/config.hpp"
#include "osr/evaluation.hpp"

namespace osr {

// Canonical file layout inside an experiment directory. Every command writes
// here; re-running `evaluate` from the directory alone reproduces reports.
struct ExperimentPaths {
    std::string root;

    std::string config_echo() const { return root + "/config.echo"; }
    std::string split_manifest() const { return root + "/split.manifest"; }
    std::string checkpoints_dir() const { return root + "/checkpoints"; }
    std::string teacher_ckpt() const { return checkpoints_dir() + "/teacher.ckpt"; }
    std::string teacher_augmented_ckpt() const { return checkpoints_dir() + "/teacher_augmented.ckpt"; }
    std::string student_ckpt() const { return checkpoints_dir() + "/student.ckpt"; }
    std::string generator_ckpt() const { return checkpoints_dir() + "/generator.ckpt"; }
    std::string discriminator_ckpt() const { return checkpoints_dir() + "/discriminator.ckpt"; }
    std::string logs_dir() const { return root + "/logs"; }
    std::string teacher_curve_csv() const { return logs_dir() + "/teacher_train.csv"; }
    std::string alternating_csv() const { return logs_dir() + "/alternating.csv"; }
    std::string thresholds_file() const { return root + "/thresholds.txt"; }
    std::string samples_dir() const { return root + "/samples"; }
    std::string reports_dir() const { return root + "/reports"; }

    void prepare() const;  // creates the directory tree
};

// Step 1: pretrain the pure teacher; writes the split manifest, training
// curve and teacher checkpoint.
TeacherTrainStats cmd_train_teacher(const ExperimentConfig& cfg);

// Steps 2-1/2-2: augmentation, lambda calibration and the alternating loop
// for the configured variant; writes all checkpoints, the loss log,
// thresholds and a final sample grid.
std::vector<AlternatingLogRow> cmd_train(const ExperimentConfig& cfg);

// Recomputes lambda and the per-class epsilons from the stored checkpoints.
InferenceThresholds cmd_calibrate(const ExperimentConfig& cfg);

// strategy is "score" (unknown-score threshold at cfg.delta) or "classwise"
// (per-class recognition rule; requires calibrated thresholds on disk).
EvaluationReport cmd_evaluate(const ExperimentConfig& cfg, const std::string& strategy);

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& cfg, const std::vector<int>& unknown_class_counts,
                                int repeats, const std::vector<std::string>& variants);

std::vector<GridRow> cmd_grid(const ExperimentConfig& cfg, const std::vector<double>& taus,
                              const std::vector<double>& alphas, const std::vector<int>& unknown_class_counts);

// Emits a conditions x per_class sample grid from the stored generator.
std::string cmd_generate(const ExperimentConfig& cfg, int per_class);

}  // namespace osr

#endif
