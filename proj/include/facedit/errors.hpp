#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace facedit {

// Base for every error raised by the library. The CLI maps subclasses onto
// process exit codes (see tools/facedit_cli.cpp).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class ContractViolation : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Numerical failures: singular divisions, non-finite values, degenerate
// directions or features.
class NumericalError : public Error {
public:
    using Error::Error;
};

class SingularityError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class DegenerateFeatureError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class DegenerateDirectionError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class DegenerateFlowError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

// Something a stage needs was never produced (cache, checkpoint, feature).
class MissingArtifactError : public Error {
public:
    using Error::Error;
};

class MissingFeatureError : public MissingArtifactError {
public:
    MissingFeatureError(const std::string& what, std::vector<std::string> gaps)
        : MissingArtifactError(what), gaps_(std::move(gaps)) {}

    const std::vector<std::string>& gaps() const noexcept { return gaps_; }

private:
    std::vector<std::string> gaps_;
};

class IntegrityError : public MissingArtifactError {
public:
    using MissingArtifactError::MissingArtifactError;
};

class VersionError : public MissingArtifactError {
public:
    using MissingArtifactError::MissingArtifactError;
};

class WriteOnceViolation : public Error {
public:
    using Error::Error;
};

class InvalidDataset : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

}  // namespace facedit
