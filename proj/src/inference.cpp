#include "osr/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "osr/errors.hpp"
#include "osr/quantile.hpp"

namespace osr {

double unknown_score(const JointProbabilityVector& teacher, const JointProbabilityVector& student) {
    return (1.0 - teacher.max_known()) * student.unknown_mass();
}

bool detect_unknown(double score, double delta) {
    if (delta < 0.0 || delta > 1.0) throw std::invalid_argument("detect_unknown: delta outside [0,1]");
    return score > delta;
}

int detect_or_classify(const JointProbabilityVector& teacher, const JointProbabilityVector& student, double delta) {
    if (detect_unknown(unknown_score(teacher, student), delta)) return kUnknownLabel;
    return teacher.argmax_known();
}

std::vector<double> known_class_scores(const JointProbabilityVector& teacher, const JointProbabilityVector& student) {
    if (teacher.known.size() != student.known.size())
        throw std::invalid_argument("known_class_scores: known-slot counts differ");
    std::vector<double> k(teacher.known.size());
    for (std::size_t i = 0; i < k.size(); ++i) k[i] = 0.5 * (teacher.known[i] + student.known[i]);
    return k;
}

nn::Tensor known_score_matrix(ClassifierNet* teacher, ClassifierNet* student, const ImageSet& data,
                              ScoreSource source, int chunk) {
    ClassifierNet* primary = source == ScoreSource::StudentOnly ? student : teacher;
    if (!primary || (source == ScoreSource::Averaged && !student))
        throw std::invalid_argument("known_score_matrix: required network is missing");
    const int c = primary->known_count();
    const int n = data.count();
    nn::Tensor scores({n, c});

    auto accumulate = [&](ClassifierNet& net, double weight) {
        nn::Tensor logits = forward_logits_all(net, data, chunk);
        nn::Tensor probs = tempered_softmax(logits, 1.0);
        const int k = net.logit_count();
        if (net.known_count() != c) throw std::invalid_argument("known_score_matrix: known-class counts differ");
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j)
                scores[static_cast<std::int64_t>(i) * c + j] += weight * probs[static_cast<std::int64_t>(i) * k + j];
    };

    switch (source) {
        case ScoreSource::TeacherOnly:
            accumulate(*teacher, 1.0);
            break;
        case ScoreSource::StudentOnly:
            accumulate(*student, 1.0);
            break;
        case ScoreSource::Averaged:
            accumulate(*teacher, 0.5);
            accumulate(*student, 0.5);
            break;
    }
    return scores;
}

std::vector<double> calibrate_epsilons(const nn::Tensor& known_scores, const std::vector<int>& labels,
                                       int known_classes, double eps_quantile) {
    if (known_scores.rank() != 2 || known_scores.dim(1) != known_classes)
        throw std::invalid_argument("calibrate_epsilons: score matrix must be [N,C]");
    if (static_cast<std::size_t>(known_scores.dim(0)) != labels.size())
        throw std::invalid_argument("calibrate_epsilons: label count mismatch");
    std::vector<double> eps(static_cast<std::size_t>(known_classes));
    for (int k = 0; k < known_classes; ++k) {
        std::vector<double> vals;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == k) vals.push_back(known_scores[static_cast<std::int64_t>(i) * known_classes + k]);
        if (vals.empty())
            throw std::invalid_argument("calibrate_epsilons: class " + std::to_string(k) + " has no calibration samples");
        eps[static_cast<std::size_t>(k)] = lower_nearest_rank_quantile(std::move(vals), eps_quantile);
    }
    return eps;
}

std::vector<double> calibrate_epsilons(ClassifierNet& teacher, ClassifierNet& student, const ImageSet& known_train,
                                       double eps_quantile) {
    nn::Tensor scores = known_score_matrix(&teacher, &student, known_train, ScoreSource::Averaged);
    return calibrate_epsilons(scores, known_train.labels, teacher.known_count(), eps_quantile);
}

int recognize_scores(const std::vector<double>& known_scores, const std::vector<double>& epsilons) {
    if (known_scores.empty()) throw std::invalid_argument("recognize_scores: empty score vector");
    if (known_scores.size() != epsilons.size())
        throw std::invalid_argument("recognize_scores: expected " + std::to_string(known_scores.size()) + " thresholds");
    std::size_t best = 0;
    for (std::size_t k = 1; k < known_scores.size(); ++k)
        if (known_scores[k] > known_scores[best]) best = k;
    return known_scores[best] > epsilons[best] ? static_cast<int>(best) : kUnknownLabel;
}

RecognitionResult recognize(const JointProbabilityVector& teacher, const JointProbabilityVector& student,
                            const std::vector<double>& epsilons) {
    RecognitionResult r;
    r.known_scores = known_class_scores(teacher, student);
    r.unknown_score = unknown_score(teacher, student);
    r.decision = recognize_scores(r.known_scores, epsilons);
    return r;
}

// ---------------------------------------------------------------------------
// Threshold persistence (flat text, replayable)
// ---------------------------------------------------------------------------

void InferenceThresholds::save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw NotFoundError("cannot write thresholds: " + path);
    char buf[64];
    auto put = [&](const char* key, double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << key << " = " << buf << "\n";
    };
    put("delta", delta);
    put("eps_quantile", eps_quantile);
    put("lambda", lambda);
    put("lambda_quantile", lambda_quantile);
    os << "epsilons =";
    for (double e : epsilons) {
        std::snprintf(buf, sizeof(buf), "%.17g", e);
        os << " " << buf;
    }
    os << "\n";
}

InferenceThresholds InferenceThresholds::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw NotFoundError("thresholds file not found: " + path);
    InferenceThresholds t;
    t.epsilons.clear();
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string key, eq;
        ls >> key >> eq;
        if (eq != "=") throw ParseError("thresholds: bad line '" + line + "'");
        if (key == "delta")
            ls >> t.delta;
        else if (key == "eps_quantile")
            ls >> t.eps_quantile;
        else if (key == "lambda")
            ls >> t.lambda;
        else if (key == "lambda_quantile")
            ls >> t.lambda_quantile;
        else if (key == "epsilons") {
            double v;
            while (ls >> v) t.epsilons.push_back(v);
        } else {
            throw ParseError("thresholds: unknown key '" + key + "'");
        }
        if (ls.fail() && key != "epsilons") throw ParseError("thresholds: bad value in '" + line + "'");
    }
    return t;
}

}  // namespace osr
