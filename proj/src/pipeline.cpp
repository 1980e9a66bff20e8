#include "promptloop/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <set>

#include <fmt/format.h>

#include "promptloop/prompt_dsl.hpp"
#include "promptloop/text_util.hpp"

namespace promptloop {

namespace {

template <typename F>
auto at_iteration(int iteration, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const BackendError& e) {
        if (e.iteration()) throw;
        throw e.at_iteration(iteration);
    }
}

SimilarityScore max_keyword_score(const SimilarityReport& report) {
    SimilarityScore best(-1.0);
    for (const auto& k : report.keyword_results) best = std::max(best, k.aggregated);
    return best;
}

}  // namespace

std::string PolicyAction::type() const {
    if (!generalized.empty()) return "generalize";
    if (!reweighted.empty()) return "reweight";
    return "none";
}

std::string_view to_string(Outcome o) noexcept {
    return o == Outcome::Converged ? "Converged" : "IterationCapReached";
}

std::string_view to_string(PolicyKind k) noexcept {
    switch (k) {
        case PolicyKind::ReweightThenGeneralize: return "reweight_then_generalize";
        case PolicyKind::ReweightOnly: return "reweight_only";
        case PolicyKind::GeneralizeOnly: return "generalize_only";
    }
    return "?";
}

PolicyKind policy_from_string(std::string_view s) {
    for (auto k : {PolicyKind::ReweightThenGeneralize, PolicyKind::ReweightOnly, PolicyKind::GeneralizeOnly}) {
        if (s == to_string(k)) return k;
    }
    throw Error(ErrorCode::ConfigInvalid,
                fmt::format("policy: '{}' is not one of reweight_then_generalize, reweight_only, generalize_only", s));
}

int RefinementPolicy::attempts(std::string_view phrase) const {
    const auto it = counters_.find(text::casefold(phrase));
    return it == counters_.end() ? 0 : it->second;
}

void RefinementPolicy::record_reweight(std::string_view phrase) { ++counters_[text::casefold(phrase)]; }

void RefinementPolicy::reset(std::string_view phrase) { counters_.erase(text::casefold(phrase)); }

double quantize_weight(double w) { return std::round(w * 1e4) / 1e4; }

RefineResult refine_step(const KeywordSet& keywords,
                         const SimilarityReport& report,
                         RefinementPolicy& policy,
                         Refiner& refiner,
                         const Prompt& context,
                         const RunConfig& config) {
    std::set<std::string> failing;
    for (const auto& r : report.keyword_results) {
        if (!r.passed) failing.insert(text::casefold(r.phrase));
    }
    std::set<std::string> passing;
    for (const auto& k : keywords) {
        if (failing.count(k.key()) == 0) passing.insert(k.key());
    }
    if (passing.size() == keywords.size()) {
        throw Error(ErrorCode::PreconditionViolation, "refine_step: no keyword failed");
    }

    RefineResult out;
    for (const auto& k : keywords) {
        if (passing.count(k.key()) > 0) {
            out.keywords.insert(k);
            continue;
        }
        const double boosted = k.weight() * config.weight_step;
        const bool can_boost = boosted <= config.weight_cap;
        bool reweight = false;
        switch (policy.kind()) {
            case PolicyKind::ReweightOnly: reweight = can_boost; break;
            case PolicyKind::GeneralizeOnly: reweight = false; break;
            case PolicyKind::ReweightThenGeneralize:
                reweight = can_boost && policy.attempts(k.phrase()) < config.reweight_attempts_before_generalize;
                break;
        }
        if (reweight) {
            policy.record_reweight(k.phrase());
            out.keywords.insert(k.with_weight(std::min(quantize_weight(boosted), config.weight_cap)));
            out.action.reweighted.push_back(k.phrase());
            continue;
        }
        if (policy.kind() == PolicyKind::ReweightOnly) {
            out.keywords.insert(k);
            continue;
        }
        auto replacement = std::string(text::trim(refiner.refine_keyword(k.phrase(), context)));
        if (replacement.empty() || text::casefold(replacement) == k.key()) {
            throw Error(ErrorCode::RefinerNoProgress,
                        fmt::format("refiner returned '{}' for '{}'", replacement, k.phrase()));
        }
        policy.reset(k.phrase());
        policy.reset(replacement);
        out.action.generalized.emplace_back(k.phrase(), replacement);
        // A replacement that collides with a passing keyword merges into it.
        if (passing.count(text::casefold(replacement)) == 0) out.keywords.insert(Keyword(replacement));
    }
    return out;
}

RunTrace run(const Prompt& prompt, const RunConfig& config, const BackendSet& backends, const RunOptions& options) {
    config.validate();
    if (!backends.extractor || !backends.generator || !backends.scorer || !backends.refiner) {
        throw Error(ErrorCode::PreconditionViolation, "run: every backend role must be provided");
    }

    auto keywords = at_iteration(0, [&] { return backends.extractor->extract_keywords(prompt); });
    if (keywords.empty()) throw Error(ErrorCode::NoKeywordsExtracted, "extractor returned no keywords");

    const auto sentences = scoring::split_sentences(prompt.text());
    RefinementPolicy policy(options.policy);
    std::vector<IterationRecord> records;
    Outcome outcome = Outcome::IterationCapReached;

    for (int it = 0; it < config.max_iterations; ++it) {
        IterationRecord rec;
        rec.iteration = it;
        rec.seed = config.seed ^ static_cast<std::uint64_t>(it);
        rec.rendered_prompt = dsl::compose_prompt(keywords);
        rec.keywords = keywords;

        const GenerationRequest request{rec.rendered_prompt, prompt.negative_text(), config.batch_size, rec.seed, it};
        rec.image_refs = at_iteration(it, [&] { return backends.generator->generate(request); });
        if (rec.image_refs.size() != static_cast<std::size_t>(config.batch_size)) {
            throw Error(ErrorCode::BatchSizeMismatch,
                        fmt::format("iteration {}: generator returned {} images, expected {}", it,
                                    rec.image_refs.size(), config.batch_size));
        }

        const auto texts = scoring::report_texts(keywords, sentences, prompt.text());
        auto image_job = std::async(std::launch::async, [&] {
            return at_iteration(it, [&] { return backends.scorer->embed_image(rec.image_refs); });
        });
        auto text_job = std::async(std::launch::async, [&] {
            return at_iteration(it, [&] { return backends.scorer->embed_text(texts); });
        });
        // Collect both before rethrowing so no job outlives this frame.
        std::vector<Embedding> image_emb, text_emb;
        std::exception_ptr failure;
        try {
            image_emb = image_job.get();
        } catch (...) {
            failure = std::current_exception();
        }
        try {
            text_emb = text_job.get();
        } catch (...) {
            if (!failure) failure = std::current_exception();
        }
        if (failure) std::rethrow_exception(failure);

        rec.report = scoring::build_report(image_emb, keywords, sentences, text_emb, config);

        const bool last = it + 1 == config.max_iterations;
        if (rec.report.all_passed) {
            outcome = Outcome::Converged;
        } else if (!last) {
            auto step = at_iteration(
                it, [&] { return refine_step(keywords, rec.report, policy, *backends.refiner, prompt, config); });
            keywords = std::move(step.keywords);
            rec.action = std::move(step.action);
        }
        records.push_back(std::move(rec));
        if (options.on_iteration) options.on_iteration(records.back());
        if (outcome == Outcome::Converged) break;
    }

    const auto final_max = max_keyword_score(records.back().report);
    return RunTrace{config, prompt, std::move(records), outcome, final_max};
}

}  // namespace promptloop
