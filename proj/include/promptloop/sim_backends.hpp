#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "promptloop/backends.hpp"
#include "promptloop/resources.hpp"

/// Deterministic offline stand-ins for the language model, the diffusion model
/// and the vision-language encoder. Everything lives in one latent space where
/// each token owns an orthonormal basis direction, so similarities have closed
/// forms: with every keyword included at weights w, cos(image, e_k) = w_k / |w|.
namespace promptloop::sim {

struct SimWorldConfig {
    std::size_t dim = 64;
    std::uint64_t seed = 0;
    /// Keywords at or above this weight are always depicted.
    double inclusion_threshold = 1.05;
    double noise_sigma = 0.0;
    /// Chance that a keyword below the inclusion threshold is left out of one image.
    double drop_probability = 0.5;
    /// Case-folded phrases the generator can never depict.
    std::set<std::string> blocked;

    void validate() const;
};

/// Shared vocabulary: case-folded token -> basis index, assigned in first-seen
/// order. Thread-safe; identical call sequences give identical assignments.
class SimWorld {
public:
    explicit SimWorld(SimWorldConfig config = {}, const StopWords& stopwords = StopWords::bundled());

    [[nodiscard]] const SimWorldConfig& config() const noexcept { return config_; }
    [[nodiscard]] std::size_t dim() const noexcept { return config_.dim; }
    [[nodiscard]] const StopWords& stopwords() const noexcept { return stopwords_; }

    /// Throws Error{VocabularyExhausted} once `dim` tokens are registered.
    std::size_t direction_index(std::string_view token);

    /// Unit vector: normalized sum of the directions of the text's non-stop-word
    /// tokens (all tokens when every token is a stop word).
    std::vector<double> text_direction(std::string_view text);

    /// Direction used for an image in which nothing was depicted.
    std::vector<double> empty_scene_direction();

    [[nodiscard]] bool is_blocked(std::string_view phrase) const;
    [[nodiscard]] std::vector<std::string> vocabulary() const;

    /// Extends the registry to match a vocabulary recorded elsewhere. Throws
    /// Error{SchemaMismatch} when the two disagree on an assigned index.
    void adopt_vocabulary(const std::vector<std::string>& vocabulary);

private:
    SimWorldConfig config_;
    const StopWords& stopwords_;
    mutable std::mutex mutex_;
    std::map<std::string, std::size_t, std::less<>> index_;
    std::vector<std::string> order_;
};

/// Content tokens of `text`: case-folded, punctuation-stripped, stop words removed.
std::vector<std::string> content_tokens(std::string_view text, const StopWords& stopwords);

/// Splits on commas and whitespace, drops stop words, deduplicates.
class SimExtractor final : public Extractor {
public:
    explicit SimExtractor(const StopWords& stopwords = StopWords::bundled()) : stopwords_(stopwords) {}
    KeywordSet extract_keywords(const Prompt& prompt) override;

private:
    const StopWords& stopwords_;
};

/// Emits latent embeddings instead of pixels; see the namespace comment.
class SimGenerator final : public Generator {
public:
    explicit SimGenerator(std::shared_ptr<SimWorld> world) : world_(std::move(world)) {}
    std::vector<ImageRef> generate(const GenerationRequest& request) override;

private:
    std::shared_ptr<SimWorld> world_;
};

class SimScorer final : public Scorer {
public:
    explicit SimScorer(std::shared_ptr<SimWorld> world) : world_(std::move(world)) {}
    std::vector<Embedding> embed_text(std::span<const std::string> texts) override;
    std::vector<Embedding> embed_image(std::span<const ImageRef> images) override;

private:
    std::shared_ptr<SimWorld> world_;
};

/// Keeps the last comma segment, then its last two tokens, then consults the
/// override table; a two-token phrase left unchanged is reduced to its head.
class SimRefiner final : public Refiner {
public:
    explicit SimRefiner(const OverrideTable& overrides = OverrideTable::bundled()) : overrides_(overrides) {}
    std::string refine_keyword(const std::string& phrase, const Prompt& context) override;

private:
    const OverrideTable& overrides_;
};

/// Simulated extractor, generator, scorer and refiner sharing one world.
BackendSet make_sim_backends(std::shared_ptr<SimWorld> world);

}  // namespace promptloop::sim
