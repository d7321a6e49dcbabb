#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lst {

enum class ErrorKind {
    bad_magic,
    truncated,
    bad_label,
    empty_dataset,
    shape_mismatch,
    spec_invalid,
    io_error,
    format_version_mismatch,
    checksum_mismatch,
    unsupported_spec,
    bad_argument,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::bad_magic: return "BadMagic";
        case ErrorKind::truncated: return "Truncated";
        case ErrorKind::bad_label: return "BadLabel";
        case ErrorKind::empty_dataset: return "EmptyDataset";
        case ErrorKind::shape_mismatch: return "ShapeMismatch";
        case ErrorKind::spec_invalid: return "SpecInvalid";
        case ErrorKind::io_error: return "IoError";
        case ErrorKind::format_version_mismatch: return "FormatVersionMismatch";
        case ErrorKind::checksum_mismatch: return "ChecksumMismatch";
        case ErrorKind::unsupported_spec: return "UnsupportedSpec";
        case ErrorKind::bad_argument: return "BadArgument";
    }
    return "Unknown";
}

// Every failure in the library is reported as an Error; kind() lets callers
// and tests branch on the category without parsing the message.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

} // namespace lst
