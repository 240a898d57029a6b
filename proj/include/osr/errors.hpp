#ifndef OSR_ERRORS_HPP
#define OSR_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace osr {

// Requested resource (dataset file, checkpoint, calibration artifact) is absent.
class NotFoundError : public std::runtime_error {
public:
    explicit NotFoundError(const std::string& what) : std::runtime_error(what) {}
};

// A file exists but its contents cannot be decoded.
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// A loss or gradient became non-finite during training.
class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(const std::string& what, long step)
        : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
    long step() const { return step_; }

private:
    long step_;
};

}  // namespace osr

#endif
