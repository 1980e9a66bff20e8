#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "promptloop/adapters.hpp"
#include "promptloop/pipeline.hpp"
#include "promptloop/sim_backends.hpp"

namespace promptloop::cli {

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitCap = 3;

inline constexpr const char* kApiKeyEnv = "PROMPTLOOP_API_KEY";

/// Contents of a --config file. RunConfig keys sit at the top level next to
/// policy, backend, out_dir, prompt, negative_prompt, sim, endpoints, image and
/// scorer_parallelism. Unknown keys are rejected.
struct CliConfig {
    RunConfig run;
    PolicyKind policy = PolicyKind::ReweightThenGeneralize;
    std::string backend = "sim";
    std::optional<std::filesystem::path> out_dir;
    std::optional<std::string> prompt;
    std::string negative_prompt;
    sim::SimWorldConfig sim;
    bool sim_dim_set = false;
    /// Keyed by role (extractor, generator, scorer, refiner) or "default".
    std::map<std::string, http::EndpointConfig> endpoints;
    http::ImageSettings image;
    int scorer_parallelism = 4;
};

/// Throws Error{ConfigInvalid}.
CliConfig parse_cli_config(const nlohmann::json& j);
CliConfig load_cli_config(const std::filesystem::path& path);

/// Endpoint for `role`, falling back to "default"; the API key from the
/// environment wins over the file. Throws Error{ConfigInvalid} if none.
http::EndpointConfig endpoint_for(const CliConfig& config, const std::string& role);

/// Entry point shared by the executable and the tests. `args` excludes argv[0].
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace promptloop::cli
