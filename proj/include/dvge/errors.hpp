#pragma once

#include <stdexcept>
#include <string>

namespace dvge {

// Incompatible tensor shapes fed to a primitive; the message names the op.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// A fairness metric was requested on a batch where it is undefined
// (empty group, or a group without positive labels).
struct UndefinedMetric : std::runtime_error {
    explicit UndefinedMetric(const std::string& msg) : std::runtime_error(msg) {}
};

// Training produced a non-finite loss or gradient; the run is aborted.
struct TrainingDiverged : std::runtime_error {
    explicit TrainingDiverged(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input file; the message carries row/column context where known.
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dvge
