#include "promptloop/sim_backends.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "promptloop/image_io.hpp"
#include "promptloop/prompt_dsl.hpp"
#include "promptloop/text_util.hpp"

namespace promptloop::sim {

namespace {

constexpr std::string_view kEmptySceneToken = "<empty scene>";
constexpr std::string_view kPunctuation = ".,;:!?\"'()[]{}";

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// Stable stream key for one random draw site.
std::mt19937_64 stream(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0;
    for (auto p : parts) h = splitmix64(h ^ p);
    return std::mt19937_64(h);
}

void normalize_in_place(std::vector<double>& v) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) return;
    for (double& x : v) x /= norm;
}

std::string strip_punctuation(std::string_view token) {
    auto b = token.find_first_not_of(kPunctuation);
    if (b == std::string_view::npos) return {};
    auto e = token.find_last_not_of(kPunctuation);
    return std::string(token.substr(b, e - b + 1));
}

}  // namespace

void SimWorldConfig::validate() const {
    if (dim < 1) throw Error(ErrorCode::ConfigInvalid, "sim.dim: must be >= 1");
    if (!(inclusion_threshold > 0.0)) throw Error(ErrorCode::ConfigInvalid, "sim.inclusion_threshold: must be > 0");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
        throw Error(ErrorCode::ConfigInvalid, "sim.noise_sigma: must be >= 0");
    }
    if (!(drop_probability >= 0.0 && drop_probability <= 1.0)) {
        throw Error(ErrorCode::ConfigInvalid, "sim.drop_probability: must be in [0, 1]");
    }
}

std::vector<std::string> content_tokens(std::string_view text, const StopWords& stopwords) {
    std::vector<std::string> all;
    for (const auto& raw : text::tokens(text)) {
        auto t = text::casefold(strip_punctuation(raw));
        if (!t.empty()) all.push_back(std::move(t));
    }
    std::vector<std::string> content;
    for (const auto& t : all) {
        if (!stopwords.contains(t)) content.push_back(t);
    }
    return content.empty() ? all : content;
}

SimWorld::SimWorld(SimWorldConfig config, const StopWords& stopwords)
    : config_(std::move(config)), stopwords_(stopwords) {
    config_.validate();
    std::set<std::string> folded;
    for (const auto& b : config_.blocked) folded.insert(text::casefold(text::trim(b)));
    config_.blocked = std::move(folded);
}

std::size_t SimWorld::direction_index(std::string_view token) {
    std::lock_guard lock(mutex_);
    if (auto it = index_.find(token); it != index_.end()) return it->second;
    if (order_.size() >= config_.dim) {
        throw Error(ErrorCode::VocabularyExhausted,
                    fmt::format("sim world of dim {} cannot place token '{}'", config_.dim, token));
    }
    const auto idx = order_.size();
    index_.emplace(std::string(token), idx);
    order_.emplace_back(token);
    return idx;
}

std::vector<double> SimWorld::text_direction(std::string_view text) {
    const auto toks = content_tokens(text, stopwords_);
    if (toks.empty()) throw BackendError(BackendErrorKind::InvalidResponse, "sim: cannot embed empty text");
    std::vector<double> v(config_.dim, 0.0);
    for (const auto& t : toks) v[direction_index(t)] += 1.0;
    normalize_in_place(v);
    return v;
}

std::vector<double> SimWorld::empty_scene_direction() {
    std::vector<double> v(config_.dim, 0.0);
    v[direction_index(kEmptySceneToken)] = 1.0;
    return v;
}

bool SimWorld::is_blocked(std::string_view phrase) const {
    return config_.blocked.count(text::casefold(text::trim(phrase))) > 0;
}

std::vector<std::string> SimWorld::vocabulary() const {
    std::lock_guard lock(mutex_);
    return order_;
}

void SimWorld::adopt_vocabulary(const std::vector<std::string>& vocabulary) {
    std::lock_guard lock(mutex_);
    if (vocabulary.size() > config_.dim) {
        throw Error(ErrorCode::SchemaMismatch, "recorded vocabulary is larger than the world dimension");
    }
    const auto common = std::min(vocabulary.size(), order_.size());
    for (std::size_t i = 0; i < common; ++i) {
        if (vocabulary[i] != order_[i]) {
            throw Error(ErrorCode::SchemaMismatch,
                        fmt::format("vocabulary index {} is '{}' here but '{}' in the record", i, order_[i], vocabulary[i]));
        }
    }
    for (std::size_t i = common; i < vocabulary.size(); ++i) {
        if (index_.count(vocabulary[i]) > 0) {
            throw Error(ErrorCode::SchemaMismatch, fmt::format("vocabulary token '{}' repeated", vocabulary[i]));
        }
        index_.emplace(vocabulary[i], i);
        order_.push_back(vocabulary[i]);
    }
}

KeywordSet SimExtractor::extract_keywords(const Prompt& prompt) {
    KeywordSet out;
    for (const auto& raw : text::tokens(prompt.text())) {
        auto token = strip_punctuation(raw);
        if (token.empty() || stopwords_.contains(token)) continue;
        out.insert(Keyword(token));
    }
    if (out.empty()) throw Error(ErrorCode::NoKeywordsExtracted, "no keywords left after stop-word filtering");
    return out;
}

std::vector<ImageRef> SimGenerator::generate(const GenerationRequest& request) {
    if (request.batch_size < 1) {
        throw Error(ErrorCode::PreconditionViolation, fmt::format("batch_size {} < 1", request.batch_size));
    }
    std::vector<dsl::WeightedPhrase> phrases;
    std::vector<dsl::WeightedPhrase> suppressed;
    try {
        phrases = dsl::weighted_phrases(dsl::parse(request.rendered_prompt));
        suppressed = dsl::weighted_phrases(dsl::parse(request.negative));
    } catch (const ParseError& e) {
        throw BackendError(BackendErrorKind::Protocol, fmt::format("sim generator: {}", e.what()));
    }

    const auto& cfg = world_->config();
    std::set<std::string> negative;
    for (const auto& p : suppressed) negative.insert(text::casefold(p.phrase));

    struct Component {
        std::string key;
        double weight;
        std::vector<double> direction;
    };
    std::vector<Component> components;
    for (const auto& p : phrases) {
        auto key = text::casefold(p.phrase);
        auto direction = world_->text_direction(p.phrase);
        if (world_->is_blocked(key) || negative.count(key) > 0) continue;
        components.push_back({std::move(key), p.weight, std::move(direction)});
    }

    const auto world_seed = cfg.seed;
    const auto iteration = static_cast<std::uint64_t>(request.iteration);
    std::vector<ImageRef> images;
    images.reserve(static_cast<std::size_t>(request.batch_size));
    for (int i = 0; i < request.batch_size; ++i) {
        const auto index = static_cast<std::uint64_t>(i);
        std::vector<double> latent(cfg.dim, 0.0);
        for (const auto& c : components) {
            double coeff = c.weight;
            if (c.weight < cfg.inclusion_threshold) {
                auto rng = stream({world_seed, request.seed, fnv1a(c.key), index, iteration});
                std::bernoulli_distribution drop(cfg.drop_probability);
                if (drop(rng)) coeff = 0.0;
            }
            for (std::size_t d = 0; d < cfg.dim; ++d) latent[d] += coeff * c.direction[d];
        }
        if (cfg.noise_sigma > 0.0) {
            auto rng = stream({world_seed, request.seed, fnv1a("noise"), index, iteration});
            std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
            for (double& x : latent) x += noise(rng);
        }
        bool empty = true;
        for (double x : latent) empty = empty && x == 0.0;
        if (empty) latent = world_->empty_scene_direction();
        normalize_in_place(latent);
        images.push_back(ImageRef{image_relpath(request.iteration, i), request.iteration, i, Embedding(std::move(latent))});
    }
    return images;
}

std::vector<Embedding> SimScorer::embed_text(std::span<const std::string> texts) {
    if (texts.empty()) throw Error(ErrorCode::PreconditionViolation, "embed_text: no inputs");
    std::vector<Embedding> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.emplace_back(world_->text_direction(t));
    return out;
}

std::vector<Embedding> SimScorer::embed_image(std::span<const ImageRef> images) {
    if (images.empty()) throw Error(ErrorCode::PreconditionViolation, "embed_image: no inputs");
    std::vector<Embedding> out;
    out.reserve(images.size());
    for (const auto& image : images) {
        if (const auto* latent = image.latent()) {
            out.push_back(*latent);
            continue;
        }
        std::vector<std::uint8_t> bytes;
        if (const auto* path = image.path()) {
            bytes = image_io::read_bytes(*path);
        } else {
            bytes = std::get<ImageBytes>(image.payload);
        }
        auto payload = image_io::decode_latent_png(bytes);
        if (!payload) {
            throw BackendError(BackendErrorKind::InvalidResponse,
                               fmt::format("image '{}' carries no simulated latent", image.id));
        }
        world_->adopt_vocabulary(payload->vocabulary);
        out.push_back(std::move(payload->latent));
    }
    for (const auto& e : out) {
        if (e.dim() != world_->dim()) {
            throw Error(ErrorCode::DimensionMismatch,
                        fmt::format("latent of dim {} in a world of dim {}", e.dim(), world_->dim()));
        }
    }
    return out;
}

std::string SimRefiner::refine_keyword(const std::string& phrase, const Prompt&) {
    if (text::trim(phrase).empty()) throw Error(ErrorCode::PreconditionViolation, "refine_keyword: empty phrase");
    if (const auto* hit = overrides_.lookup(phrase)) return *hit;

    const auto segments = text::split_any(phrase, ",");
    const auto last_segment = segments.empty() ? std::string(text::trim(phrase)) : segments.back();
    auto toks = text::split_any(last_segment, " \t\n");
    if (toks.size() > 2) toks.erase(toks.begin(), toks.end() - 2);
    auto reduced = text::join(toks, " ");
    if (const auto* hit = overrides_.lookup(reduced)) return *hit;
    if (text::casefold(reduced) == text::casefold(text::trim(phrase)) && toks.size() == 2) return toks.back();
    return reduced;
}

BackendSet make_sim_backends(std::shared_ptr<SimWorld> world) {
    return BackendSet{std::make_shared<SimExtractor>(world->stopwords()),
                      std::make_shared<SimGenerator>(world),
                      std::make_shared<SimScorer>(world),
                      std::make_shared<SimRefiner>()};
}

}  // namespace promptloop::sim
