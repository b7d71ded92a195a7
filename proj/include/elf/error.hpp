#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace elf {

/// Tensor extents disagree with what an operation requires.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Architecture description could not be parsed. `line()` is 1-based, 0 when unknown.
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Malformed on-disk file (weight archive, keypoint file, homography, image).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Histogram with fewer than two occupied bins has no entropy split.
class DegenerateHistogram : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Metric is not defined for the given input (e.g. an empty keypoint list).
class MetricError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

}  // namespace elf
