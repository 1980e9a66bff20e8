#include "promptloop/scoring.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include <fmt/format.h>

#include "promptloop/backends.hpp"
#include "promptloop/text_util.hpp"

namespace promptloop {

void require_uniform_dims(std::span<const Embedding> rows, std::string_view what) {
    if (rows.empty()) return;
    const auto dim = rows.front().dim();
    for (const auto& row : rows) {
        if (row.dim() != dim) {
            throw Error(ErrorCode::DimensionMismatch,
                        fmt::format("{}: embedding dims differ ({} vs {})", what, dim, row.dim()));
        }
    }
}

namespace scoring {

SimilarityScore cosine(const Embedding& a, const Embedding& b) {
    if (a.dim() != b.dim()) {
        throw Error(ErrorCode::DimensionMismatch, fmt::format("cosine: dims {} and {}", a.dim(), b.dim()));
    }
    double dot = 0.0;
    double norm_a = 0.0;
    double norm_b = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        dot += a[i] * b[i];
        norm_a += a[i] * a[i];
        norm_b += b[i] * b[i];
    }
    if (norm_a == 0.0 || norm_b == 0.0) throw Error(ErrorCode::ZeroVector, "cosine: zero-norm vector");
    // sqrt of each norm separately keeps the product symmetric and avoids overflow.
    const double value = dot / (std::sqrt(norm_a) * std::sqrt(norm_b));
    return SimilarityScore(std::clamp(value, -1.0, 1.0));
}

SimilarityScore aggregate(std::span<const SimilarityScore> scores, Aggregation mode) {
    if (scores.empty()) throw Error(ErrorCode::EmptyBatch, "aggregate: no scores");
    if (mode == Aggregation::MaxOverBatch) return *std::max_element(scores.begin(), scores.end());
    double sum = 0.0;
    for (const auto& s : scores) sum += s.value();
    return SimilarityScore(std::clamp(sum / static_cast<double>(scores.size()), -1.0, 1.0));
}

std::vector<std::string> split_sentences(std::string_view text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    auto emit = [&](std::size_t end) {
        auto piece = text::trim(text.substr(start, end - start));
        if (!piece.empty()) out.emplace_back(piece);
        start = end;
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c != '.' && c != '!' && c != '?') continue;
        const bool at_end = i + 1 == text.size();
        const bool before_space = !at_end && std::isspace(static_cast<unsigned char>(text[i + 1])) != 0;
        if (at_end || before_space) {
            emit(i);
            start = i + 1;
        }
    }
    emit(text.size());
    return out;
}

std::vector<std::string> report_texts(const KeywordSet& keywords,
                                      std::span<const std::string> sentences,
                                      std::string_view full_text) {
    auto texts = keywords.phrases();
    texts.insert(texts.end(), sentences.begin(), sentences.end());
    texts.emplace_back(full_text);
    return texts;
}

SimilarityReport build_report(std::span<const Embedding> image_embeddings,
                              const KeywordSet& keywords,
                              std::span<const std::string> sentences,
                              std::span<const Embedding> text_embeddings,
                              const RunConfig& config) {
    if (image_embeddings.empty()) throw Error(ErrorCode::EmptyBatch, "evaluate: no images");
    const auto expected = keywords.size() + sentences.size() + 1;
    if (text_embeddings.size() != expected) {
        throw Error(ErrorCode::PreconditionViolation,
                    fmt::format("evaluate: {} text embeddings for {} texts", text_embeddings.size(), expected));
    }
    require_uniform_dims(image_embeddings, "image embeddings");

    auto score_text = [&](const Embedding& text) {
        std::vector<SimilarityScore> scores;
        scores.reserve(image_embeddings.size());
        for (const auto& image : image_embeddings) scores.push_back(cosine(image, text));
        return scores;
    };

    SimilarityReport report;
    report.all_passed = true;
    std::size_t row = 0;
    for (const auto& k : keywords) {
        KeywordResult r;
        r.phrase = k.phrase();
        r.per_image_scores = score_text(text_embeddings[row++]);
        r.aggregated = aggregate(r.per_image_scores, config.aggregation);
        r.passed = passes_threshold(r.aggregated.value(), config);
        report.all_passed = report.all_passed && r.passed;
        report.keyword_results.push_back(std::move(r));
    }
    for (const auto& sentence : sentences) {
        const auto scores = score_text(text_embeddings[row++]);
        report.sentence_results.push_back({sentence, aggregate(scores, config.aggregation)});
    }
    report.overall = aggregate(score_text(text_embeddings[row]), config.aggregation);
    return report;
}

SimilarityReport evaluate(std::span<const Embedding> image_embeddings,
                          const KeywordSet& keywords,
                          std::span<const std::string> sentences,
                          std::string_view full_text,
                          Scorer& text_encoder,
                          const RunConfig& config) {
    const auto texts = report_texts(keywords, sentences, full_text);
    const auto embedded = text_encoder.embed_text(texts);
    if (embedded.size() != texts.size()) {
        throw BackendError(BackendErrorKind::InvalidResponse,
                           fmt::format("text encoder returned {} rows for {} texts", embedded.size(), texts.size()));
    }
    return build_report(image_embeddings, keywords, sentences, embedded, config);
}

}  // namespace scoring
}  // namespace promptloop
