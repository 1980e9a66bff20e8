#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "promptloop/error.hpp"

namespace promptloop {

/// The user's scene description. Construct through validate_prompt().
class Prompt {
public:
    [[nodiscard]] const std::string& text() const noexcept { return text_; }
    [[nodiscard]] const std::string& negative_text() const noexcept { return negative_; }

    friend bool operator==(const Prompt&, const Prompt&) = default;

private:
    friend Prompt validate_prompt(std::string_view text, std::string_view negative_text);
    Prompt(std::string text, std::string negative) : text_(std::move(text)), negative_(std::move(negative)) {}

    std::string text_;
    std::string negative_;
};

/// Throws Error{EmptyPrompt} or Error{InvalidCharacters}. The text is kept
/// verbatim; trimming is only used for the emptiness check.
Prompt validate_prompt(std::string_view text, std::string_view negative_text = {});

/// One extracted keyword phrase and its attention multiplier.
class Keyword {
public:
    explicit Keyword(std::string_view phrase, double weight = 1.0);

    [[nodiscard]] const std::string& phrase() const noexcept { return phrase_; }
    [[nodiscard]] double weight() const noexcept { return weight_; }
    [[nodiscard]] std::string key() const;

    [[nodiscard]] Keyword with_weight(double weight) const { return Keyword(phrase_, weight); }

    friend bool operator==(const Keyword&, const Keyword&) = default;

private:
    std::string phrase_;
    double weight_;
};

/// Ordered keywords, deduplicated by case-folded phrase. The first spelling wins.
class KeywordSet {
public:
    KeywordSet() = default;
    explicit KeywordSet(const std::vector<Keyword>& keywords);

    /// Returns false (and leaves the set unchanged) when the phrase is already present.
    bool insert(const Keyword& keyword);

    [[nodiscard]] const Keyword* find(std::string_view phrase) const;
    [[nodiscard]] std::size_t size() const noexcept { return keywords_.size(); }
    [[nodiscard]] bool empty() const noexcept { return keywords_.empty(); }
    [[nodiscard]] const std::vector<Keyword>& items() const noexcept { return keywords_; }
    [[nodiscard]] auto begin() const noexcept { return keywords_.begin(); }
    [[nodiscard]] auto end() const noexcept { return keywords_.end(); }
    [[nodiscard]] const Keyword& operator[](std::size_t i) const { return keywords_.at(i); }

    [[nodiscard]] std::vector<std::string> phrases() const;

    friend bool operator==(const KeywordSet&, const KeywordSet&) = default;

private:
    std::vector<Keyword> keywords_;
};

/// Fixed-dimension real feature vector; every entry finite.
class Embedding {
public:
    explicit Embedding(std::vector<double> values);

    [[nodiscard]] std::size_t dim() const noexcept { return values_.size(); }
    [[nodiscard]] const std::vector<double>& values() const noexcept { return values_; }
    [[nodiscard]] double operator[](std::size_t i) const { return values_[i]; }

    friend bool operator==(const Embedding&, const Embedding&) = default;

private:
    std::vector<double> values_;
};

using ImageBytes = std::vector<std::uint8_t>;
using ImagePayload = std::variant<std::filesystem::path, ImageBytes, Embedding>;

/// Reference to one generated image. The payload is storage detail: equality
/// compares identity only, so a trace read back from disk equals the in-memory one.
struct ImageRef {
    std::string id;
    int iteration = 0;
    int index_in_batch = 0;
    ImagePayload payload = ImageBytes{};

    [[nodiscard]] const Embedding* latent() const noexcept { return std::get_if<Embedding>(&payload); }
    [[nodiscard]] const std::filesystem::path* path() const noexcept {
        return std::get_if<std::filesystem::path>(&payload);
    }

    friend bool operator==(const ImageRef& a, const ImageRef& b) noexcept {
        return a.id == b.id && a.iteration == b.iteration && a.index_in_batch == b.index_in_batch;
    }
};

/// Relative location of an image inside a run directory: iter{NN}/img{MM}.png.
std::string image_relpath(int iteration, int index_in_batch);

class SimilarityScore {
public:
    static constexpr double kTolerance = 1e-9;

    SimilarityScore() = default;
    explicit SimilarityScore(double value);

    [[nodiscard]] double value() const noexcept { return value_; }

    friend bool operator==(const SimilarityScore&, const SimilarityScore&) = default;
    friend auto operator<=>(const SimilarityScore& a, const SimilarityScore& b) noexcept {
        return a.value_ <=> b.value_;
    }

private:
    double value_ = 0.0;
};

enum class Aggregation { MaxOverBatch, MeanOverBatch };

std::string_view to_string(Aggregation a) noexcept;
Aggregation aggregation_from_string(std::string_view s);

struct RunConfig {
    double threshold = 0.2;
    int batch_size = 16;
    int max_iterations = 8;
    double weight_step = 1.1;
    double weight_cap = 1.5;
    int reweight_attempts_before_generalize = 2;
    std::uint64_t seed = 0;
    Aggregation aggregation = Aggregation::MaxOverBatch;
    bool strict_threshold = true;

    /// Throws Error{ConfigInvalid} naming the first offending field.
    void validate() const;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

RunConfig default_config();

/// Threshold gate: score > T when strict, score >= T otherwise.
[[nodiscard]] bool passes_threshold(double score, const RunConfig& config) noexcept;

}  // namespace promptloop
