#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace promptloop {

enum class ErrorCode {
    EmptyPrompt,
    InvalidCharacters,
    InvalidKeyword,
    ConfigInvalid,
    UnbalancedDelimiter,
    InvalidWeightLiteral,
    NestingTooDeep,
    UnknownKeyword,
    WeightAboveCap,
    DimensionMismatch,
    ZeroVector,
    InvalidEmbedding,
    EmptyBatch,
    PreconditionViolation,
    NoKeywordsExtracted,
    BatchSizeMismatch,
    VocabularyExhausted,
    RefinerNoProgress,
    Backend,
    IoError,
    MissingTrace,
    SchemaMismatch,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Base error for every failure raised by the library. The code is stable and
/// is what callers branch on; the message is for humans.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Parse failure inside the prompt weight syntax; `position` is a 0-based byte offset.
class ParseError : public Error {
public:
    ParseError(ErrorCode code, std::size_t position, const std::string& message)
        : Error(code, message), position_(position) {}

    [[nodiscard]] std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

enum class BackendErrorKind { Timeout, Protocol, ModelFailure, InvalidResponse };

std::string_view to_string(BackendErrorKind kind) noexcept;

class BackendError : public Error {
public:
    BackendError(BackendErrorKind kind, const std::string& detail);

    [[nodiscard]] BackendErrorKind kind() const noexcept { return kind_; }
    [[nodiscard]] const std::string& detail() const noexcept { return detail_; }
    [[nodiscard]] bool retryable() const noexcept {
        return kind_ == BackendErrorKind::Timeout || kind_ == BackendErrorKind::ModelFailure;
    }
    [[nodiscard]] std::optional<int> iteration() const noexcept { return iteration_; }

    /// Copy of this error tagged with the loop iteration it surfaced in.
    [[nodiscard]] BackendError at_iteration(int iteration) const;

private:
    BackendErrorKind kind_;
    std::string detail_;
    std::optional<int> iteration_;
};

}  // namespace promptloop
