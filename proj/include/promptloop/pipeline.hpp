#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "promptloop/backends.hpp"
#include "promptloop/core_model.hpp"
#include "promptloop/scoring.hpp"

namespace promptloop {

/// What refine_step changed. A step may both reweight and generalize.
struct PolicyAction {
    std::vector<std::string> reweighted;
    std::vector<std::pair<std::string, std::string>> generalized;

    /// "none", "reweight", or "generalize" (any generalization wins).
    [[nodiscard]] std::string type() const;
    [[nodiscard]] bool empty() const noexcept { return reweighted.empty() && generalized.empty(); }

    friend bool operator==(const PolicyAction&, const PolicyAction&) = default;
};

struct IterationRecord {
    int iteration = 0;
    std::uint64_t seed = 0;
    std::string rendered_prompt;
    KeywordSet keywords;
    std::vector<ImageRef> image_refs;
    SimilarityReport report;
    /// Refinement applied after this iteration; empty on the final record.
    PolicyAction action;

    friend bool operator==(const IterationRecord&, const IterationRecord&) = default;
};

enum class Outcome { Converged, IterationCapReached };

std::string_view to_string(Outcome o) noexcept;

struct RunTrace {
    RunConfig config;
    Prompt initial_prompt;
    std::vector<IterationRecord> records;
    Outcome outcome = Outcome::IterationCapReached;
    SimilarityScore final_max_similarity;

    friend bool operator==(const RunTrace&, const RunTrace&) = default;
};

enum class PolicyKind { ReweightThenGeneralize, ReweightOnly, GeneralizeOnly };

std::string_view to_string(PolicyKind k) noexcept;
PolicyKind policy_from_string(std::string_view s);

/// Refinement policy with per-keyword reweight counters keyed by case-folded phrase.
class RefinementPolicy {
public:
    explicit RefinementPolicy(PolicyKind kind = PolicyKind::ReweightThenGeneralize) : kind_(kind) {}

    [[nodiscard]] PolicyKind kind() const noexcept { return kind_; }
    [[nodiscard]] int attempts(std::string_view phrase) const;
    void record_reweight(std::string_view phrase);
    void reset(std::string_view phrase);

private:
    PolicyKind kind_;
    std::map<std::string, int, std::less<>> counters_;
};

struct RefineResult {
    KeywordSet keywords;
    PolicyAction action;
};

/// Weights produced by reweighting are rounded to 4 fractional digits.
double quantize_weight(double w);

/// Applies the policy to every failing keyword; passing keywords are untouched.
/// Throws PreconditionViolation when nothing failed and RefinerNoProgress when
/// a generalization returns the same phrase.
RefineResult refine_step(const KeywordSet& keywords,
                         const SimilarityReport& report,
                         RefinementPolicy& policy,
                         Refiner& refiner,
                         const Prompt& context,
                         const RunConfig& config);

struct RunOptions {
    PolicyKind policy = PolicyKind::ReweightThenGeneralize;
    /// Called after each iteration's record is complete.
    std::function<void(const IterationRecord&)> on_iteration;
};

/// Generate -> score -> gate -> refine until every keyword passes or the
/// iteration cap is reached. Iteration i generates with seed config.seed ^ i.
RunTrace run(const Prompt& prompt, const RunConfig& config, const BackendSet& backends, const RunOptions& options = {});

}  // namespace promptloop
