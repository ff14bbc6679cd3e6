#pragma once

#include <stdexcept>
#include <string>

namespace avbf {

enum class ErrorCode {
    Generic = 1,
    InvalidArgument = 2,
    Io = 3,
    BehindCamera = 4,
    SingularConfiguration = 5,
    BadFormat = 6,
    UndefinedRatio = 7,
    NonFinite = 8,
};

/// Base error for the whole library. Every failure carries a code so the
/// C boundary can translate it into a status without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

struct InvalidArgument : Error {
    explicit InvalidArgument(const std::string& msg) : Error(ErrorCode::InvalidArgument, msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(ErrorCode::Io, msg) {}
};

/// Projection of a point with non-positive depth.
struct BehindCameraError : Error {
    explicit BehindCameraError(const std::string& msg) : Error(ErrorCode::BehindCamera, msg) {}
};

/// Rank-deficient normal equations in the rigid alignment.
struct SingularConfigurationError : Error {
    SingularConfigurationError(int rank, const std::string& msg)
        : Error(ErrorCode::SingularConfiguration, msg), rank(rank) {}
    int rank;
};

struct BadFormatError : Error {
    explicit BadFormatError(const std::string& msg) : Error(ErrorCode::BadFormat, msg) {}
};

struct UndefinedRatioError : Error {
    explicit UndefinedRatioError(const std::string& msg) : Error(ErrorCode::UndefinedRatio, msg) {}
};

struct NonFiniteError : Error {
    explicit NonFiniteError(const std::string& msg) : Error(ErrorCode::NonFinite, msg) {}
};

}  // namespace avbf
