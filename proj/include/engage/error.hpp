#pragma once

#include <stdexcept>
#include <string>

namespace engage {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input record.
class ParseError : public Error {
public:
    using Error::Error;
};

/// A value outside its documented domain.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Missing file, unreadable file, or unavailable model weights.
class LoadError : public Error {
public:
    using Error::Error;
};

/// Evaluation data overlaps data a model was trained or fine-tuned on.
class LeakageError : public Error {
public:
    using Error::Error;
};

/// Optimisation diverged.
class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace engage
