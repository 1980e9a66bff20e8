#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "promptloop/pipeline.hpp"

namespace promptloop::trace_io {

using Json = nlohmann::ordered_json;

Json config_to_json(const RunConfig& config);
/// Rejects unknown keys; missing keys keep their defaults. Revalidates.
RunConfig config_from_json(const Json& j);

/// One trace.jsonl line.
Json record_to_json(const IterationRecord& record);
/// Image payloads are set to paths under `run_dir`. Throws Error{SchemaMismatch}.
IterationRecord record_from_json(const Json& j, const std::filesystem::path& run_dir = {});

struct PersistOptions {
    /// Recorded inside simulated-latent PNGs so they can be rescored later.
    std::vector<std::string> latent_vocabulary;
};

/// Writes trace.jsonl, config.json, run.json and every image under
/// iter{NN}/img{MM}.png. Overwrites existing files. Throws Error{IoError}.
void persist_trace(const RunTrace& trace, const std::filesystem::path& out_dir, const PersistOptions& options = {});

/// Reads trace.jsonl lines only. Throws Error{MissingTrace} when the file is
/// absent or holds no records, Error{SchemaMismatch} on malformed content.
std::vector<IterationRecord> load_records(const std::filesystem::path& trace_file);

/// Inverse of persist_trace.
RunTrace load_trace(const std::filesystem::path& run_dir);

}  // namespace promptloop::trace_io
