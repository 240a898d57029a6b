#ifndef OSR_INFERENCE_HPP
#define OSR_INFERENCE_HPP

#include <string>
#include <vector>

#include "osr/datasets.hpp"
#include "osr/distillation.hpp"
#include "osr/networks.hpp"

namespace osr {

// Decision thresholds: delta gates the unknown score (strategy 1); the
// per-class epsilons gate the averaged known score (strategy 2).
struct InferenceThresholds {
    double delta = 0.5;
    std::vector<double> epsilons;
    double eps_quantile = 0.10;
    double lambda = 0.0;  // recommender filter threshold, kept with the rest
    double lambda_quantile = 0.01;

    void save(const std::string& path) const;
    static InferenceThresholds load(const std::string& path);
};

struct RecognitionResult {
    int decision = kUnknownLabel;  // known-class index or the unknown sentinel
    double unknown_score = 0.0;
    std::vector<double> known_scores;
};

// (1 - max known teacher probability) * (student unknown mass). Both factors
// live in [0,1], so the score does too.
double unknown_score(const JointProbabilityVector& teacher, const JointProbabilityVector& student);

// Strategy 1: unknown iff the score strictly exceeds delta.
bool detect_unknown(double score, double delta);

// Strategy-1 decision for one sample: the teacher alone classifies whatever
// is not rejected.
int detect_or_classify(const JointProbabilityVector& teacher, const JointProbabilityVector& student, double delta);

// Elementwise mean of the two known-slot sub-vectors.
std::vector<double> known_class_scores(const JointProbabilityVector& teacher, const JointProbabilityVector& student);

// Which posterior feeds the averaged known score (the full method averages
// teacher and student; single-model baselines use one side).
enum class ScoreSource { TeacherOnly, StudentOnly, Averaged };

// [N, C] matrix of known scores for a whole set under the chosen source.
// Pass null for the network a source does not use.
nn::Tensor known_score_matrix(ClassifierNet* teacher, ClassifierNet* student, const ImageSet& data,
                              ScoreSource source, int chunk = 256);

// Per-class thresholds: epsilon_k is the lower nearest-rank eps_quantile of
// the class-k training scores, so that (at the default 0.10) 90% of class-k
// calibration samples score strictly above it.
std::vector<double> calibrate_epsilons(const nn::Tensor& known_scores, const std::vector<int>& labels,
                                       int known_classes, double eps_quantile);
std::vector<double> calibrate_epsilons(ClassifierNet& teacher, ClassifierNet& student, const ImageSet& known_train,
                                       double eps_quantile);

// Strategy 2: the argmax known score wins if it strictly exceeds its class
// threshold, otherwise the sample is unknown. Ties take the lowest index.
int recognize_scores(const std::vector<double>& known_scores, const std::vector<double>& epsilons);
RecognitionResult recognize(const JointProbabilityVector& teacher, const JointProbabilityVector& student,
                            const std::vector<double>& epsilons);

}  // namespace osr

#endif
