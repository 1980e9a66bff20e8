#include "promptloop/core_model.hpp"

#include <cmath>

#include <fmt/format.h>

#include "promptloop/text_util.hpp"

namespace promptloop {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::EmptyPrompt: return "EmptyPrompt";
        case ErrorCode::InvalidCharacters: return "InvalidCharacters";
        case ErrorCode::InvalidKeyword: return "InvalidKeyword";
        case ErrorCode::ConfigInvalid: return "ConfigInvalid";
        case ErrorCode::UnbalancedDelimiter: return "UnbalancedDelimiter";
        case ErrorCode::InvalidWeightLiteral: return "InvalidWeightLiteral";
        case ErrorCode::NestingTooDeep: return "NestingTooDeep";
        case ErrorCode::UnknownKeyword: return "UnknownKeyword";
        case ErrorCode::WeightAboveCap: return "WeightAboveCap";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::ZeroVector: return "ZeroVector";
        case ErrorCode::InvalidEmbedding: return "InvalidEmbedding";
        case ErrorCode::EmptyBatch: return "EmptyBatch";
        case ErrorCode::PreconditionViolation: return "PreconditionViolation";
        case ErrorCode::NoKeywordsExtracted: return "NoKeywordsExtracted";
        case ErrorCode::BatchSizeMismatch: return "BatchSizeMismatch";
        case ErrorCode::VocabularyExhausted: return "VocabularyExhausted";
        case ErrorCode::RefinerNoProgress: return "RefinerNoProgress";
        case ErrorCode::Backend: return "BackendError";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::MissingTrace: return "MissingTrace";
        case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    }
    return "Unknown";
}

std::string_view to_string(BackendErrorKind kind) noexcept {
    switch (kind) {
        case BackendErrorKind::Timeout: return "Timeout";
        case BackendErrorKind::Protocol: return "Protocol";
        case BackendErrorKind::ModelFailure: return "ModelFailure";
        case BackendErrorKind::InvalidResponse: return "InvalidResponse";
    }
    return "Unknown";
}

BackendError::BackendError(BackendErrorKind kind, const std::string& detail)
    : Error(ErrorCode::Backend, fmt::format("backend error ({}): {}", to_string(kind), detail)),
      kind_(kind),
      detail_(detail) {}

BackendError BackendError::at_iteration(int iteration) const {
    BackendError copy(kind_, fmt::format("iteration {}: {}", iteration, detail_));
    copy.iteration_ = iteration;
    return copy;
}

Prompt validate_prompt(std::string_view text, std::string_view negative_text) {
    if (text::trim(text).empty()) throw Error(ErrorCode::EmptyPrompt, "prompt is empty");
    if (text::has_forbidden_control(text)) {
        throw Error(ErrorCode::InvalidCharacters, "prompt contains control characters");
    }
    if (text::has_forbidden_control(negative_text)) {
        throw Error(ErrorCode::InvalidCharacters, "negative prompt contains control characters");
    }
    return Prompt(std::string(text), std::string(negative_text));
}

Keyword::Keyword(std::string_view phrase, double weight) : phrase_(text::trim(phrase)), weight_(weight) {
    if (phrase_.empty()) throw Error(ErrorCode::InvalidKeyword, "keyword phrase is empty");
    if (!std::isfinite(weight) || weight <= 0.0) {
        throw Error(ErrorCode::InvalidKeyword, fmt::format("keyword '{}' has non-positive weight {}", phrase_, weight));
    }
}

std::string Keyword::key() const { return text::casefold(phrase_); }

KeywordSet::KeywordSet(const std::vector<Keyword>& keywords) {
    for (const auto& k : keywords) insert(k);
}

bool KeywordSet::insert(const Keyword& keyword) {
    if (find(keyword.phrase()) != nullptr) return false;
    keywords_.push_back(keyword);
    return true;
}

const Keyword* KeywordSet::find(std::string_view phrase) const {
    const auto key = text::casefold(text::trim(phrase));
    for (const auto& k : keywords_) {
        if (k.key() == key) return &k;
    }
    return nullptr;
}

std::vector<std::string> KeywordSet::phrases() const {
    std::vector<std::string> out;
    out.reserve(keywords_.size());
    for (const auto& k : keywords_) out.push_back(k.phrase());
    return out;
}

Embedding::Embedding(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw Error(ErrorCode::InvalidEmbedding, "embedding has zero dimensions");
    for (double v : values_) {
        if (!std::isfinite(v)) throw Error(ErrorCode::InvalidEmbedding, "embedding contains a non-finite value");
    }
}

std::string image_relpath(int iteration, int index_in_batch) {
    return fmt::format("iter{:02d}/img{:02d}.png", iteration, index_in_batch);
}

SimilarityScore::SimilarityScore(double value) : value_(value) {
    if (!std::isfinite(value) || value < -1.0 - kTolerance || value > 1.0 + kTolerance) {
        throw Error(ErrorCode::PreconditionViolation, fmt::format("similarity {} outside [-1, 1]", value));
    }
}

std::string_view to_string(Aggregation a) noexcept {
    return a == Aggregation::MaxOverBatch ? "max" : "mean";
}

Aggregation aggregation_from_string(std::string_view s) {
    if (s == "max" || s == "MaxOverBatch") return Aggregation::MaxOverBatch;
    if (s == "mean" || s == "MeanOverBatch") return Aggregation::MeanOverBatch;
    throw Error(ErrorCode::ConfigInvalid, fmt::format("aggregation: unknown mode '{}'", s));
}

void RunConfig::validate() const {
    auto fail = [](std::string_view field, const std::string& why) {
        throw Error(ErrorCode::ConfigInvalid, fmt::format("{}: {}", field, why));
    };
    if (!(threshold > 0.0 && threshold < 1.0)) fail("threshold", fmt::format("{} not in (0, 1)", threshold));
    if (batch_size < 1) fail("batch_size", "must be >= 1");
    if (max_iterations < 1) fail("max_iterations", "must be >= 1");
    if (!(weight_step > 1.0) || !std::isfinite(weight_step)) fail("weight_step", "must be > 1");
    if (!(weight_cap >= weight_step) || !std::isfinite(weight_cap)) fail("weight_cap", "must be >= weight_step");
    if (reweight_attempts_before_generalize < 0) fail("reweight_attempts_before_generalize", "must be >= 0");
}

RunConfig default_config() { return RunConfig{}; }

bool passes_threshold(double score, const RunConfig& config) noexcept {
    return config.strict_threshold ? score > config.threshold : score >= config.threshold;
}

}  // namespace promptloop
