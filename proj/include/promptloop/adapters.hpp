#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "promptloop/backends.hpp"
#include "promptloop/resources.hpp"

/// HTTP clients for the four backend roles.
///
/// Wire protocol (field names are fixed):
///   POST /v1/extract     {prompt}                    -> {keywords:[string]}
///   POST /v1/generate    {prompt, negative_prompt, batch_size, seed, width, height, steps}
///                                                    -> {images:[base64 PNG]}
///   POST /v1/embed/text  {texts:[string]}            -> {embeddings:[[number]], dim}
///   POST /v1/embed/image {images:[base64]}           -> {embeddings:[[number]], dim}
/// Requests carry `Authorization: Bearer <api_key>` when a key is configured.
namespace promptloop::http {

struct EndpointConfig {
    std::string base_url;
    std::optional<std::string> api_key;
    int timeout_ms = 60000;
    int max_retries = 2;
    int backoff_base_ms = 500;

    /// Throws Error{ConfigInvalid}.
    void validate() const;
};

struct ParsedUrl {
    std::string scheme;
    std::string host;
    int port = 0;
    std::string path_prefix;
};

/// Throws Error{ConfigInvalid} unless `url` is an absolute http(s) URL.
ParsedUrl parse_url(const std::string& url);

/// Backoff before retry number `attempt` (0-based): base * 2^attempt.
std::chrono::milliseconds backoff_delay(const EndpointConfig& cfg, int attempt);

/// Request/response exchange log with secrets redacted. Thread-safe.
class HttpLog {
public:
    struct Entry {
        std::string endpoint;
        int attempt = 0;
        nlohmann::json request;
        int status = 0;
        nlohmann::json response;
        std::string error;
    };

    void add_secret(const std::string& secret);
    void record(Entry entry);
    [[nodiscard]] std::vector<Entry> entries() const;
    [[nodiscard]] std::size_t size() const;
    /// One JSON object per line.
    void write_jsonl(const std::filesystem::path& path) const;

private:
    [[nodiscard]] std::string redact(std::string s) const;
    [[nodiscard]] nlohmann::json redact_json(const nlohmann::json& j) const;

    mutable std::mutex mutex_;
    std::vector<std::string> secrets_;
    std::vector<Entry> entries_;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// JSON-over-HTTP POST with status mapping and retry/backoff.
///   transport failure, 408, 429 -> Timeout (retryable)
///   5xx                         -> ModelFailure (retryable)
///   other non-2xx, non-JSON     -> Protocol
class JsonClient {
public:
    JsonClient(EndpointConfig config, std::shared_ptr<HttpLog> log, Sleeper sleeper = {});

    nlohmann::json post(const std::string& endpoint, const nlohmann::json& body) const;

    [[nodiscard]] const EndpointConfig& config() const noexcept { return config_; }

private:
    nlohmann::json post_once(const std::string& endpoint, const nlohmann::json& body, int attempt) const;

    EndpointConfig config_;
    ParsedUrl url_;
    std::shared_ptr<HttpLog> log_;
    Sleeper sleeper_;
};

/// Completion parsing shared by the chat adapters. Accepts either
/// {keywords:[...]} or a chat-completions body {choices:[{message:{content}}]}.
std::string completion_text(const nlohmann::json& response);

/// Splits on commas and newlines, trims, strips list bullets and quotes,
/// deduplicates and applies the stop-word filter to single-token keywords.
/// Throws Error{NoKeywordsExtracted} when nothing is left.
KeywordSet parse_keyword_completion(const std::string& completion, const StopWords& stopwords);

/// First non-empty line, trimmed of whitespace, quotes and trailing punctuation.
/// Throws BackendError{InvalidResponse} if empty or equal to `original` after case folding.
std::string parse_generalize_completion(const std::string& completion, const std::string& original);

class ChatExtractor final : public Extractor {
public:
    ChatExtractor(JsonClient client, const StopWords& stopwords = StopWords::bundled())
        : client_(std::move(client)), stopwords_(stopwords) {}
    KeywordSet extract_keywords(const Prompt& prompt) override;

private:
    JsonClient client_;
    const StopWords& stopwords_;
};

/// Generalization requests go through the extract endpoint with the
/// generalization instruction; the first line of the completion is the answer.
class ChatRefiner final : public Refiner {
public:
    explicit ChatRefiner(JsonClient client) : client_(std::move(client)) {}
    std::string refine_keyword(const std::string& phrase, const Prompt& context) override;

private:
    JsonClient client_;
};

struct ImageSettings {
    int width = 512;
    int height = 512;
    int steps = 30;
};

/// Writes decoded PNGs under `output_dir` as iter{NN}/img{MM}.png. With an
/// empty output_dir the bytes stay in memory. On any failure, files written by
/// the failing call are removed and nothing is returned.
class Txt2ImgGenerator final : public Generator {
public:
    Txt2ImgGenerator(JsonClient client, std::filesystem::path output_dir, ImageSettings settings = {})
        : client_(std::move(client)), output_dir_(std::move(output_dir)), settings_(settings) {}
    std::vector<ImageRef> generate(const GenerationRequest& request) override;

private:
    JsonClient client_;
    std::filesystem::path output_dir_;
    ImageSettings settings_;
};

/// Image batches are split across at most `parallelism` concurrent requests.
class HttpScorer final : public Scorer {
public:
    HttpScorer(JsonClient client, int parallelism = 4);
    std::vector<Embedding> embed_text(std::span<const std::string> texts) override;
    std::vector<Embedding> embed_image(std::span<const ImageRef> images) override;

private:
    std::vector<Embedding> parse_embeddings(const nlohmann::json& response, std::size_t expected);

    JsonClient client_;
    int parallelism_;
    std::mutex dim_mutex_;
    std::optional<std::size_t> dim_;
};

}  // namespace promptloop::http
