#ifndef MCDIFF_ERROR_HPP
#define MCDIFF_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace mcdiff {

enum class ErrorKind {
    DimensionMismatch,
    NonFiniteValue,
    NonSquareImage,
    GeometryMismatch,
    InfeasibleMask,
    NegativeActivity,
    IndexOutOfRange,
    EmptyBatch,
    EmptyDataset,
    DivergenceDetected,
    NonFiniteIterate,
    ZeroScoreField,
    ImageTooSmall,
    ZeroReference,
    EmptyList,
    InvalidArgument,
    IoError,
    FormatError,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept
{
    switch (kind) {
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::NonSquareImage: return "NonSquareImage";
    case ErrorKind::GeometryMismatch: return "GeometryMismatch";
    case ErrorKind::InfeasibleMask: return "InfeasibleMask";
    case ErrorKind::NegativeActivity: return "NegativeActivity";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::DivergenceDetected: return "DivergenceDetected";
    case ErrorKind::NonFiniteIterate: return "NonFiniteIterate";
    case ErrorKind::ZeroScoreField: return "ZeroScoreField";
    case ErrorKind::ImageTooSmall: return "ImageTooSmall";
    case ErrorKind::ZeroReference: return "ZeroReference";
    case ErrorKind::EmptyList: return "EmptyList";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::FormatError: return "FormatError";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the kinds above so
/// callers (and tests) can branch on it without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind)
    {
    }

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool condition, ErrorKind kind, const std::string& what)
{
    if (!condition) fail(kind, what);
}

} // namespace mcdiff

#endif
