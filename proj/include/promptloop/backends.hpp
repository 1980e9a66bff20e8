#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "promptloop/core_model.hpp"

namespace promptloop {

/// Distills a scene description into keywords (all weights 1.0, deduplicated,
/// stop words removed from single-token keywords).
class Extractor {
public:
    virtual ~Extractor() = default;
    virtual KeywordSet extract_keywords(const Prompt& prompt) = 0;
};

struct GenerationRequest {
    std::string rendered_prompt;
    std::string negative;
    int batch_size = 1;
    std::uint64_t seed = 0;
    /// Loop iteration the batch belongs to; used for image identity and file layout.
    int iteration = 0;
};

/// Produces exactly `batch_size` images, index_in_batch 0..batch_size-1.
class Generator {
public:
    virtual ~Generator() = default;
    virtual std::vector<ImageRef> generate(const GenerationRequest& request) = 0;
};

/// One embedding per input, order preserved, equal dims within a run.
class Scorer {
public:
    virtual ~Scorer() = default;
    virtual std::vector<Embedding> embed_text(std::span<const std::string> texts) = 0;
    virtual std::vector<Embedding> embed_image(std::span<const ImageRef> images) = 0;
};

/// Returns a more general replacement for a failing keyword phrase.
class Refiner {
public:
    virtual ~Refiner() = default;
    virtual std::string refine_keyword(const std::string& phrase, const Prompt& context) = 0;
};

struct BackendSet {
    std::shared_ptr<Extractor> extractor;
    std::shared_ptr<Generator> generator;
    std::shared_ptr<Scorer> scorer;
    std::shared_ptr<Refiner> refiner;
};

/// Throws DimensionMismatch unless `rows` is non-empty with one shared dim.
void require_uniform_dims(std::span<const Embedding> rows, std::string_view what);

}  // namespace promptloop
