#include "doctest.h"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "promptloop/image_io.hpp"
#include "promptloop/prompt_dsl.hpp"
#include "promptloop/resources.hpp"
#include "promptloop/scoring.hpp"
#include "promptloop/sim_backends.hpp"

using namespace promptloop;

namespace {

std::shared_ptr<sim::SimWorld> world(std::size_t dim = 64, double drop = 0.5) {
    sim::SimWorldConfig cfg;
    cfg.dim = dim;
    cfg.drop_probability = drop;
    return std::make_shared<sim::SimWorld>(cfg);
}

std::vector<std::string> words(int n) {
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) out.push_back(fmt::format("thing{}", i));
    return out;
}

/// Cosine of every keyword against the first generated image.
std::vector<double> keyword_cosines(sim::SimWorld& w, const KeywordSet& ks, std::uint64_t seed = 0) {
    sim::SimGenerator gen(std::shared_ptr<sim::SimWorld>(&w, [](auto*) {}));
    sim::SimScorer scorer(std::shared_ptr<sim::SimWorld>(&w, [](auto*) {}));
    const auto images = gen.generate({dsl::compose_prompt(ks), "", 1, seed, 0});
    const auto texts = scorer.embed_text(ks.phrases());
    std::vector<double> out;
    for (const auto& t : texts) out.push_back(scoring::cosine(*images[0].latent(), t).value());
    return out;
}

}  // namespace

TEST_CASE("bundled data files") {
    CHECK(StopWords::bundled().size() == 179);
    CHECK(StopWords::bundled().contains("the"));
    CHECK_FALSE(StopWords::bundled().contains("castle"));
    REQUIRE(OverrideTable::bundled().lookup("Snow-Covered Path") != nullptr);
    CHECK(*OverrideTable::bundled().lookup("snow-covered path") == "path");
    CHECK(resources::extract_instruction().find("{description}") != std::string_view::npos);
    CHECK(resources::generalize_instruction().find("{phrase}") != std::string_view::npos);
}

TEST_CASE("sim extractor") {
    sim::SimExtractor ex;
    CHECK(ex.extract_keywords(validate_prompt("alpha, beta, alpha")).phrases() == std::vector<std::string>{"alpha", "beta"});
    CHECK(ex.extract_keywords(validate_prompt("a cabin in the woods")).phrases() ==
          std::vector<std::string>{"cabin", "woods"});
    try {
        ex.extract_keywords(validate_prompt("the of and"));
        FAIL("expected NoKeywordsExtracted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NoKeywordsExtracted);
    }
}

TEST_CASE("sim refiner") {
    sim::SimRefiner r;
    const auto ctx = validate_prompt("ctx");
    CHECK(r.refine_keyword("Cozy, rustic cabin", ctx) == "cabin");
    CHECK(r.refine_keyword("cars", ctx) == "cars");
    CHECK(r.refine_keyword("snow-covered path", ctx) == "path");
    CHECK(r.refine_keyword("very old stone bridge", ctx) == "stone bridge");
    CHECK(r.refine_keyword("old bridge", ctx) == "bridge");
}

TEST_CASE("sim scorer text embeddings") {
    auto w = world();
    sim::SimScorer s(w);
    const std::vector<std::string> texts{"castle", "castle snow", "castle"};
    const auto e = s.embed_text(texts);
    CHECK(e[0] == e[2]);
    CHECK(scoring::cosine(e[0], e[0]).value() == doctest::Approx(1.0).epsilon(1e-15));
    const double inv = 1.0 / std::sqrt(2.0);
    const auto castle = w->direction_index("castle");
    const auto snow = w->direction_index("snow");
    CHECK(e[1][castle] == doctest::Approx(inv).epsilon(1e-15));
    CHECK(e[1][snow] == doctest::Approx(inv).epsilon(1e-15));
    CHECK_THROWS_AS(s.embed_text({}), Error);
}

TEST_CASE("vocabulary overflow is an error") {
    auto w = world(3);
    sim::SimScorer s(w);
    const std::vector<std::string> texts{"a1 b1 c1"};
    CHECK_NOTHROW(s.embed_text(texts));
    try {
        const std::vector<std::string> more{"d1"};
        s.embed_text(more);
        FAIL("expected VocabularyExhausted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::VocabularyExhausted);
    }
}

TEST_CASE("closed form: n keywords at weight 1 all included give 1/sqrt(n)") {
    for (int n : {1, 4, 9, 16, 25}) {
        auto w = world(64, 0.0);
        KeywordSet ks;
        for (const auto& p : words(n)) ks.insert(Keyword(p));
        for (double c : keyword_cosines(*w, ks)) CHECK(std::abs(c - 1.0 / std::sqrt(n)) < 1e-9);
    }
}

TEST_CASE("closed form with unequal weights and monotonicity") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> weight(1.05, 1.5);
    for (int trial = 0; trial < 50; ++trial) {
        auto w = world(64, 0.5);
        KeywordSet ks;
        std::vector<double> ws;
        for (const auto& p : words(6)) {
            ws.push_back(std::round(weight(rng) * 1e4) / 1e4);
            ks.insert(Keyword(p, ws.back()));
        }
        double norm = 0;
        for (double x : ws) norm += x * x;
        norm = std::sqrt(norm);
        const auto before = keyword_cosines(*w, ks);
        for (std::size_t k = 0; k < ws.size(); ++k) CHECK(std::abs(before[k] - ws[k] / norm) < 1e-9);

        // Raise one keyword's weight.
        const std::size_t k = trial % ws.size();
        const auto boosted = dsl::set_weight(ks, ks[k].phrase(), ks[k].weight() + 0.25, 10.0);
        const auto after = keyword_cosines(*w, boosted);
        for (std::size_t j = 0; j < ws.size(); ++j) {
            if (j == k) {
                CHECK(after[j] > before[j]);
            } else {
                CHECK(after[j] < before[j]);
            }
        }
    }
}

TEST_CASE("sim generator contract") {
    auto w = world();
    sim::SimGenerator gen(w);
    const GenerationRequest req{"castle, (snow:1.1), waterfall", "", 16, 42, 3};
    const auto a = gen.generate(req);
    const auto b = gen.generate(req);
    REQUIRE(a.size() == 16);
    for (int i = 0; i < 16; ++i) {
        CHECK(a[i].index_in_batch == i);
        CHECK(a[i].iteration == 3);
        CHECK(a[i].id == image_relpath(3, i));
        CHECK(*a[i].latent() == *b[i].latent());
    }
    CHECK_THROWS_AS(gen.generate({"castle", "", 0, 0, 0}), Error);
}

TEST_CASE("dropping every keyword yields the empty-scene image") {
    auto w = world(64, 1.0);
    sim::SimGenerator gen(w);
    sim::SimScorer scorer(w);
    const auto images = gen.generate({"castle, snow", "", 2, 0, 0});
    const std::vector<std::string> texts{"castle", "snow"};
    for (const auto& e : scorer.embed_text(texts)) CHECK(scoring::cosine(*images[0].latent(), e).value() == 0.0);
}

TEST_CASE("blocked and negative phrases are never depicted") {
    sim::SimWorldConfig cfg;
    cfg.blocked = {"Dragon"};
    auto w = std::make_shared<sim::SimWorld>(cfg);
    sim::SimGenerator gen(w);
    sim::SimScorer scorer(w);
    const auto images = gen.generate({"(dragon:1.5), (castle:1.2), (moat:1.2)", "moat", 4, 1, 0});
    const std::vector<std::string> texts{"dragon", "castle", "moat"};
    const auto t = scorer.embed_text(texts);
    for (const auto& img : images) {
        CHECK(scoring::cosine(*img.latent(), t[0]).value() == 0.0);
        CHECK(scoring::cosine(*img.latent(), t[1]).value() == doctest::Approx(1.0));
        CHECK(scoring::cosine(*img.latent(), t[2]).value() == 0.0);
    }
}

TEST_CASE("latent PNG round trip and offline rescoring") {
    auto w = world();
    sim::SimGenerator gen(w);
    const auto images = gen.generate({"(castle:1.2), (snow:1.2)", "", 1, 0, 0});
    const auto png = image_io::encode_latent_png({*images[0].latent(), w->vocabulary()});
    CHECK(image_io::has_png_signature(png));
    const auto back = image_io::decode_latent_png(png);
    REQUIRE(back.has_value());
    CHECK(back->latent == *images[0].latent());
    CHECK(back->vocabulary == w->vocabulary());

    // A fresh world learns the vocabulary from the image itself.
    auto fresh = world();
    sim::SimScorer scorer(fresh);
    const std::vector<ImageRef> refs{ImageRef{"x", 0, 0, ImageBytes(png.begin(), png.end())}};
    const auto emb = scorer.embed_image(refs);
    const std::vector<std::string> texts{"snow"};
    CHECK(scoring::cosine(emb[0], scorer.embed_text(texts)[0]).value() == doctest::Approx(1.0 / std::sqrt(2.0)));
}

TEST_CASE("base64 round trip") {
    std::mt19937_64 rng(1);
    for (std::size_t n = 0; n < 40; ++n) {
        std::vector<std::uint8_t> bytes(n);
        for (auto& b : bytes) b = static_cast<std::uint8_t>(rng());
        CHECK(image_io::base64_decode(image_io::base64_encode(bytes)) == bytes);
    }
    const std::string_view man = "Man";
    CHECK(image_io::base64_encode(std::span(reinterpret_cast<const std::uint8_t*>(man.data()), man.size())) == "TWFu");
}
