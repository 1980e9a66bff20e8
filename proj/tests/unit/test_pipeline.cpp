#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "promptloop/pipeline.hpp"
#include "promptloop/prompt_dsl.hpp"
#include "promptloop/sim_backends.hpp"
#include "promptloop/trace_io.hpp"

using namespace promptloop;
namespace fs = std::filesystem;

namespace {

class MapRefiner final : public Refiner {
public:
    std::map<std::string, std::string> table;
    int calls = 0;
    std::string refine_keyword(const std::string& phrase, const Prompt&) override {
        ++calls;
        const auto it = table.find(phrase);
        return it == table.end() ? phrase : it->second;
    }
};

SimilarityReport report_for(const KeywordSet& ks, const std::vector<std::string>& failing) {
    SimilarityReport r;
    r.all_passed = failing.empty();
    for (const auto& k : ks) {
        KeywordResult kr;
        kr.phrase = k.phrase();
        kr.passed = std::find(failing.begin(), failing.end(), k.phrase()) == failing.end();
        kr.aggregated = SimilarityScore(kr.passed ? 0.3 : 0.1);
        kr.per_image_scores = {kr.aggregated};
        r.keyword_results.push_back(kr);
    }
    return r;
}

sim::SimWorldConfig quiet_world(double drop = 1.0) {
    sim::SimWorldConfig w;
    w.drop_probability = drop;
    return w;
}

RunTrace sim_run(const std::string& prompt, RunConfig cfg, sim::SimWorldConfig wc, PolicyKind policy) {
    auto world = std::make_shared<sim::SimWorld>(wc);
    return run(validate_prompt(prompt), cfg, sim::make_sim_backends(world), {policy, {}});
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("promptloop_pipeline_" + name);
    fs::remove_all(p);
    return p;
}

const Prompt kCtx = validate_prompt("context");

}  // namespace

TEST_CASE("reweight one failing keyword") {
    KeywordSet ks({Keyword("cars"), Keyword("neon")});
    RefinementPolicy policy(PolicyKind::ReweightOnly);
    MapRefiner refiner;
    const auto r = refine_step(ks, report_for(ks, {"cars"}), policy, refiner, kCtx, RunConfig{});
    CHECK(r.keywords[0] == Keyword("cars", 1.1));
    CHECK(r.keywords[1] == Keyword("neon"));
    CHECK(r.action.type() == "reweight");
    CHECK(r.action.reweighted == std::vector<std::string>{"cars"});
    CHECK(dsl::compose_prompt(r.keywords) == "(cars:1.1), neon");
    CHECK(refiner.calls == 0);
}

TEST_CASE("cap reached switches to generalization") {
    KeywordSet ks({Keyword("cozy rustic cabin", 1.49)});
    RefinementPolicy policy;
    MapRefiner refiner;
    refiner.table["cozy rustic cabin"] = "cabin";
    const auto r = refine_step(ks, report_for(ks, {"cozy rustic cabin"}), policy, refiner, kCtx, RunConfig{});
    REQUIRE(r.keywords.size() == 1);
    CHECK(r.keywords[0] == Keyword("cabin", 1.0));
    CHECK(r.action.type() == "generalize");
    CHECK(r.action.generalized[0] == std::pair<std::string, std::string>{"cozy rustic cabin", "cabin"});
}

TEST_CASE("reweight_only holds a keyword at the cap") {
    KeywordSet ks({Keyword("x", 1.49)});
    RefinementPolicy policy(PolicyKind::ReweightOnly);
    MapRefiner refiner;
    const auto r = refine_step(ks, report_for(ks, {"x"}), policy, refiner, kCtx, RunConfig{});
    CHECK(r.keywords[0].weight() == 1.49);
    CHECK(r.action.empty());
}

TEST_CASE("attempt counters trigger generalization") {
    KeywordSet ks({Keyword("old bridge")});
    RefinementPolicy policy;
    MapRefiner refiner;
    refiner.table["old bridge"] = "bridge";
    RunConfig cfg;
    auto r = refine_step(ks, report_for(ks, {"old bridge"}), policy, refiner, kCtx, cfg);
    CHECK(r.keywords[0].weight() == 1.1);
    r = refine_step(r.keywords, report_for(r.keywords, {"old bridge"}), policy, refiner, kCtx, cfg);
    CHECK(r.keywords[0].weight() == 1.21);
    CHECK(policy.attempts("OLD BRIDGE") == 2);
    r = refine_step(r.keywords, report_for(r.keywords, {"old bridge"}), policy, refiner, kCtx, cfg);
    CHECK(r.keywords[0] == Keyword("bridge"));
    CHECK(policy.attempts("old bridge") == 0);
}

TEST_CASE("generalize_only never reweights") {
    KeywordSet ks({Keyword("red car"), Keyword("sky")});
    RefinementPolicy policy(PolicyKind::GeneralizeOnly);
    MapRefiner refiner;
    refiner.table["red car"] = "car";
    const auto r = refine_step(ks, report_for(ks, {"red car"}), policy, refiner, kCtx, RunConfig{});
    CHECK(r.keywords.phrases() == std::vector<std::string>{"car", "sky"});
    CHECK(r.action.reweighted.empty());
}

TEST_CASE("refine_step errors") {
    KeywordSet ks({Keyword("a"), Keyword("b")});
    MapRefiner refiner;
    RefinementPolicy policy(PolicyKind::GeneralizeOnly);
    try {
        refine_step(ks, report_for(ks, {}), policy, refiner, kCtx, RunConfig{});
        FAIL("expected PreconditionViolation");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::PreconditionViolation);
    }
    try {
        refine_step(ks, report_for(ks, {"a"}), policy, refiner, kCtx, RunConfig{});
        FAIL("expected RefinerNoProgress");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::RefinerNoProgress);
    }
    refiner.table["a"] = "  A ";
    CHECK_THROWS_AS(refine_step(ks, report_for(ks, {"a"}), policy, refiner, kCtx, RunConfig{}), Error);
}

TEST_CASE("generalization that collides with a passing keyword merges") {
    KeywordSet ks({Keyword("stone bridge"), Keyword("bridge", 1.2)});
    RefinementPolicy policy(PolicyKind::GeneralizeOnly);
    MapRefiner refiner;
    refiner.table["stone bridge"] = "Bridge";
    const auto r = refine_step(ks, report_for(ks, {"stone bridge"}), policy, refiner, kCtx, RunConfig{});
    REQUIRE(r.keywords.size() == 1);
    CHECK(r.keywords[0] == Keyword("bridge", 1.2));
}

TEST_CASE("passing keywords are untouched across random reports") {
    std::mt19937_64 rng(11);
    std::bernoulli_distribution fail(0.4);
    for (int trial = 0; trial < 200; ++trial) {
        KeywordSet ks;
        std::vector<std::string> failing;
        for (int i = 0; i < 8; ++i) {
            const auto p = "kw" + std::to_string(i);
            ks.insert(Keyword(p, 1.0 + 0.05 * (rng() % 10)));
            if (fail(rng)) failing.push_back(p);
        }
        if (failing.empty()) failing.push_back("kw0");
        RefinementPolicy policy(PolicyKind::ReweightOnly);
        MapRefiner refiner;
        const auto r = refine_step(ks, report_for(ks, failing), policy, refiner, kCtx, RunConfig{});
        for (const auto& k : ks) {
            const auto* after = r.keywords.find(k.phrase());
            REQUIRE(after != nullptr);
            const bool failed = std::find(failing.begin(), failing.end(), k.phrase()) != failing.end();
            if (failed) {
                CHECK(after->weight() >= k.weight());
                CHECK(after->weight() <= 1.5);
            } else {
                CHECK(*after == k);
            }
        }
    }
}

TEST_CASE("sim run converges after one reweight") {
    RunConfig cfg;
    cfg.threshold = 0.2;
    const auto trace = sim_run("castle, snow, waterfall, forest", cfg, quiet_world(), PolicyKind::ReweightOnly);
    CHECK(trace.outcome == Outcome::Converged);
    REQUIRE(trace.records.size() == 2);
    CHECK(trace.records[0].action.reweighted.size() == 4);
    CHECK(trace.records[1].action.empty());
    CHECK(trace.records[1].rendered_prompt == "(castle:1.1), (snow:1.1), (waterfall:1.1), (forest:1.1)");
    for (const auto& k : trace.records[1].report.keyword_results) CHECK(std::abs(k.aggregated.value() - 0.5) < 1e-9);
    CHECK(std::abs(trace.final_max_similarity.value() - 0.5) < 1e-9);
    CHECK(trace.records[1].seed == 1);
}

TEST_CASE("blocked keyword hits the cap") {
    RunConfig cfg;
    cfg.max_iterations = 5;
    auto wc = quiet_world();
    wc.blocked = {"dragon"};
    const auto trace = sim_run("castle dragon", cfg, wc, PolicyKind::ReweightOnly);
    CHECK(trace.outcome == Outcome::IterationCapReached);
    CHECK(trace.records.size() == 5);
    CHECK(trace.records.back().action.empty());
    CHECK(trace.records[4].keywords.find("dragon")->weight() == 1.4641);

    // A single word cannot be generalized further.
    try {
        sim_run("castle dragon", cfg, wc, PolicyKind::ReweightThenGeneralize);
        FAIL("expected RefinerNoProgress");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::RefinerNoProgress);
    }
}

TEST_CASE("no keywords is an error") {
    try {
        sim_run("the of and", RunConfig{}, quiet_world(), PolicyKind::ReweightOnly);
        FAIL("expected NoKeywordsExtracted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NoKeywordsExtracted);
    }
}

TEST_CASE("loop invariants over seeded sim runs") {
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        RunConfig cfg;
        cfg.seed = seed;
        cfg.batch_size = 4;
        cfg.threshold = 0.3;
        auto wc = quiet_world(0.5);
        wc.seed = seed;
        wc.noise_sigma = 0.05;
        const auto trace = sim_run("A cozy stone cottage beside a frozen lake under northern lights", cfg, wc,
                                   PolicyKind::ReweightThenGeneralize);
        REQUIRE_FALSE(trace.records.empty());
        CHECK(trace.records.size() <= static_cast<std::size_t>(cfg.max_iterations));
        for (std::size_t i = 0; i < trace.records.size(); ++i) {
            const auto& rec = trace.records[i];
            CHECK(rec.iteration == static_cast<int>(i));
            CHECK(rec.seed == (seed ^ i));
            // The rendered prompt encodes exactly the keyword weights.
            const auto phrases = dsl::weighted_phrases(dsl::parse(rec.rendered_prompt));
            REQUIRE(phrases.size() == rec.keywords.size());
            for (std::size_t k = 0; k < phrases.size(); ++k) {
                CHECK(phrases[k].phrase == rec.keywords[k].phrase());
                CHECK(phrases[k].weight == rec.keywords[k].weight());
            }
            for (const auto& k : rec.keywords) CHECK(k.weight() <= cfg.weight_cap);
            // Weights never decrease for a phrase that survives.
            if (i + 1 < trace.records.size()) {
                for (const auto& k : rec.keywords) {
                    if (const auto* next = trace.records[i + 1].keywords.find(k.phrase())) CHECK(next->weight() >= k.weight());
                }
            }
        }
        if (trace.outcome == Outcome::Converged) {
            for (const auto& k : trace.records.back().report.keyword_results) CHECK(k.aggregated.value() > cfg.threshold);
        }
    }
}

TEST_CASE("trace persists and loads back") {
    RunConfig cfg;
    cfg.batch_size = 3;
    auto world = std::make_shared<sim::SimWorld>(quiet_world());
    const auto trace = run(validate_prompt("castle. snowy peaks.", "fog"), cfg, sim::make_sim_backends(world),
                           {PolicyKind::ReweightOnly, {}});
    const auto dir = scratch("roundtrip");
    trace_io::persist_trace(trace, dir, {world->vocabulary()});
    CHECK(fs::exists(dir / "trace.jsonl"));
    CHECK(fs::exists(dir / "config.json"));
    CHECK(fs::exists(dir / "iter00/img02.png"));
    CHECK(fs::exists(dir / "iter01/img00.png"));
    const auto back = trace_io::load_trace(dir);
    CHECK(back == trace);
    CHECK(back.initial_prompt.negative_text() == "fog");
    CHECK(back.records[0].image_refs[0].path() != nullptr);

    // Persisting the reloaded trace copies images and reproduces the trace file.
    const auto dir2 = scratch("roundtrip2");
    trace_io::persist_trace(back, dir2);
    std::ifstream a(dir / "trace.jsonl"), b(dir2 / "trace.jsonl");
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
    CHECK(fs::file_size(dir / "iter00/img00.png") == fs::file_size(dir2 / "iter00/img00.png"));
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("trace loading errors") {
    const auto dir = scratch("errors");
    fs::create_directories(dir);
    auto code_of = [](auto&& f) {
        try {
            f();
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::Backend;
    };
    CHECK(code_of([&] { trace_io::load_records(dir / "trace.jsonl"); }) == ErrorCode::MissingTrace);
    std::ofstream(dir / "trace.jsonl").close();
    CHECK(code_of([&] { trace_io::load_records(dir / "trace.jsonl"); }) == ErrorCode::MissingTrace);
    std::ofstream(dir / "trace.jsonl") << "{\"iteration\": 0}\n";
    CHECK(code_of([&] { trace_io::load_records(dir / "trace.jsonl"); }) == ErrorCode::SchemaMismatch);
    std::ofstream(dir / "trace.jsonl") << "not json\n";
    CHECK(code_of([&] { trace_io::load_records(dir / "trace.jsonl"); }) == ErrorCode::SchemaMismatch);

    // A directory path below a regular file cannot be created.
    std::ofstream(dir / "plain").close();
    auto world = std::make_shared<sim::SimWorld>(quiet_world());
    RunConfig cfg;
    cfg.batch_size = 1;
    const auto trace = run(validate_prompt("castle"), cfg, sim::make_sim_backends(world), {PolicyKind::ReweightOnly, {}});
    CHECK(code_of([&] { trace_io::persist_trace(trace, dir / "plain" / "out"); }) == ErrorCode::IoError);
    fs::remove_all(dir);
}

TEST_CASE("config json round trip and strictness") {
    RunConfig cfg;
    cfg.seed = 99;
    cfg.aggregation = Aggregation::MeanOverBatch;
    cfg.strict_threshold = false;
    CHECK(trace_io::config_from_json(trace_io::config_to_json(cfg)) == cfg);
    auto j = trace_io::config_to_json(cfg);
    j["bogus"] = 1;
    CHECK_THROWS_AS(trace_io::config_from_json(j), Error);
    j = trace_io::config_to_json(cfg);
    j["threshold"] = "high";
    CHECK_THROWS_AS(trace_io::config_from_json(j), Error);
    j = trace_io::config_to_json(cfg);
    j["threshold"] = 1.5;
    CHECK_THROWS_AS(trace_io::config_from_json(j), Error);
}

namespace {

class FailingScorer final : public Scorer {
public:
    std::vector<Embedding> embed_text(std::span<const std::string> texts) override {
        return std::vector<Embedding>(texts.size(), Embedding({1.0, 0.0}));
    }
    std::vector<Embedding> embed_image(std::span<const ImageRef> images) override {
        if (images.front().iteration == 1) throw BackendError(BackendErrorKind::ModelFailure, "encoder crashed");
        return std::vector<Embedding>(images.size(), Embedding({0.0, 1.0}));
    }
};

}  // namespace

TEST_CASE("backend errors carry the iteration") {
    auto world = std::make_shared<sim::SimWorld>(quiet_world());
    auto backends = sim::make_sim_backends(world);
    backends.scorer = std::make_shared<FailingScorer>();
    RunConfig cfg;
    cfg.batch_size = 2;
    try {
        run(validate_prompt("castle"), cfg, backends, {PolicyKind::ReweightOnly, {}});
        FAIL("expected BackendError");
    } catch (const BackendError& e) {
        CHECK(e.kind() == BackendErrorKind::ModelFailure);
        REQUIRE(e.iteration().has_value());
        CHECK(*e.iteration() == 1);
    }
}

TEST_CASE("on_iteration sees every record") {
    std::vector<int> seen;
    auto world = std::make_shared<sim::SimWorld>(quiet_world());
    RunOptions opts{PolicyKind::ReweightOnly, [&](const IterationRecord& r) { seen.push_back(r.iteration); }};
    RunConfig cfg;
    cfg.batch_size = 1;
    const auto trace = run(validate_prompt("castle snow"), cfg, sim::make_sim_backends(world), opts);
    CHECK(seen.size() == trace.records.size());
}
