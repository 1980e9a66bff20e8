#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "promptloop/core_model.hpp"

namespace promptloop {

class Scorer;

struct KeywordResult {
    std::string phrase;
    std::vector<SimilarityScore> per_image_scores;
    SimilarityScore aggregated;
    bool passed = false;

    friend bool operator==(const KeywordResult&, const KeywordResult&) = default;
};

struct SentenceResult {
    std::string sentence;
    SimilarityScore aggregated;

    friend bool operator==(const SentenceResult&, const SentenceResult&) = default;
};

struct SimilarityReport {
    std::vector<KeywordResult> keyword_results;
    std::vector<SentenceResult> sentence_results;
    SimilarityScore overall;
    bool all_passed = false;

    friend bool operator==(const SimilarityReport&, const SimilarityReport&) = default;
};

namespace scoring {

/// (a.b) / (|a||b|), clamped to [-1, 1]. Throws DimensionMismatch or ZeroVector.
SimilarityScore cosine(const Embedding& a, const Embedding& b);

/// Throws EmptyBatch.
SimilarityScore aggregate(std::span<const SimilarityScore> scores, Aggregation mode);

/// Splits after '.', '!' or '?' when followed by whitespace or the end of text.
std::vector<std::string> split_sentences(std::string_view text);

/// Scores pre-computed text embeddings against a batch of image embeddings.
/// `text_embeddings` holds one row per keyword, then one per sentence, then the
/// full text. Only keywords are gated; sentences and overall are report-only.
SimilarityReport build_report(std::span<const Embedding> image_embeddings,
                              const KeywordSet& keywords,
                              std::span<const std::string> sentences,
                              std::span<const Embedding> text_embeddings,
                              const RunConfig& config);

/// Texts in the order build_report() expects their embeddings.
std::vector<std::string> report_texts(const KeywordSet& keywords,
                                      std::span<const std::string> sentences,
                                      std::string_view full_text);

/// Encodes the keyword, sentence and full-text strings with `text_encoder` and
/// scores them against every image.
SimilarityReport evaluate(std::span<const Embedding> image_embeddings,
                          const KeywordSet& keywords,
                          std::span<const std::string> sentences,
                          std::string_view full_text,
                          Scorer& text_encoder,
                          const RunConfig& config);

}  // namespace scoring
}  // namespace promptloop
