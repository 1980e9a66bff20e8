#include "promptloop/adapters.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <future>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "promptloop/image_io.hpp"
#include "promptloop/text_util.hpp"

namespace promptloop::http {

using nlohmann::json;

namespace {

constexpr std::size_t kLoggedStringLimit = 4096;

BackendError status_error(int status, const std::string& endpoint, const std::string& body) {
    const auto snippet = body.substr(0, 200);
    if (status == 408 || status == 429) {
        return BackendError(BackendErrorKind::Timeout, fmt::format("{} returned HTTP {}: {}", endpoint, status, snippet));
    }
    if (status >= 500) {
        return BackendError(BackendErrorKind::ModelFailure,
                            fmt::format("{} returned HTTP {}: {}", endpoint, status, snippet));
    }
    return BackendError(BackendErrorKind::Protocol, fmt::format("{} returned HTTP {}: {}", endpoint, status, snippet));
}

std::string strip_wrapping(std::string_view s) {
    constexpr std::string_view kEdge = " \t\r\n\"'`*";
    auto b = s.find_first_not_of(kEdge);
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(kEdge);
    return std::string(s.substr(b, e - b + 1));
}

/// Drops "-", "*", "•" bullets and "1." / "1)" numbering.
std::string strip_list_marker(std::string_view s) {
    s = text::trim(s);
    if (s.starts_with("- ") || s.starts_with("* ")) return std::string(text::trim(s.substr(2)));
    if (s.starts_with("\xE2\x80\xA2")) return std::string(text::trim(s.substr(3)));
    std::size_t i = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i])) != 0) ++i;
    if (i > 0 && i + 1 < s.size() && (s[i] == '.' || s[i] == ')') && s[i + 1] == ' ') {
        return std::string(text::trim(s.substr(i + 1)));
    }
    return std::string(s);
}

}  // namespace

ParsedUrl parse_url(const std::string& url) {
    ParsedUrl out;
    const auto sep = url.find("://");
    if (sep == std::string::npos) throw Error(ErrorCode::ConfigInvalid, fmt::format("base_url '{}' is not absolute", url));
    out.scheme = text::casefold(url.substr(0, sep));
    if (out.scheme != "http" && out.scheme != "https") {
        throw Error(ErrorCode::ConfigInvalid, fmt::format("base_url '{}' must use http or https", url));
    }
    auto rest = std::string_view(url).substr(sep + 3);
    const auto slash = rest.find('/');
    auto authority = rest.substr(0, slash);
    out.path_prefix = slash == std::string_view::npos ? "" : std::string(rest.substr(slash));
    while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
    if (authority.find('@') != std::string_view::npos) {
        throw Error(ErrorCode::ConfigInvalid, "base_url must not embed credentials");
    }
    out.port = out.scheme == "https" ? 443 : 80;
    auto colon = authority.rfind(':');
    if (colon != std::string_view::npos && authority.find(']') == std::string_view::npos) {
        int port = 0;
        const auto digits = authority.substr(colon + 1);
        auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
        if (ec != std::errc{} || ptr != digits.data() + digits.size() || port <= 0 || port > 65535) {
            throw Error(ErrorCode::ConfigInvalid, fmt::format("base_url '{}' has an invalid port", url));
        }
        out.port = port;
        authority = authority.substr(0, colon);
    }
    out.host = std::string(authority);
    if (out.host.empty()) throw Error(ErrorCode::ConfigInvalid, fmt::format("base_url '{}' has no host", url));
    return out;
}

void EndpointConfig::validate() const {
    parse_url(base_url);
    if (timeout_ms <= 0) throw Error(ErrorCode::ConfigInvalid, "timeout_ms: must be > 0");
    if (max_retries < 0) throw Error(ErrorCode::ConfigInvalid, "max_retries: must be >= 0");
    if (backoff_base_ms <= 0) throw Error(ErrorCode::ConfigInvalid, "backoff_base_ms: must be > 0");
}

std::chrono::milliseconds backoff_delay(const EndpointConfig& cfg, int attempt) {
    return std::chrono::milliseconds(static_cast<long long>(cfg.backoff_base_ms) << attempt);
}

void HttpLog::add_secret(const std::string& secret) {
    if (secret.empty()) return;
    std::lock_guard lock(mutex_);
    secrets_.push_back(secret);
}

std::string HttpLog::redact(std::string s) const {
    for (const auto& secret : secrets_) {
        for (auto pos = s.find(secret); pos != std::string::npos; pos = s.find(secret, pos)) {
            s.replace(pos, secret.size(), "[REDACTED]");
        }
    }
    if (s.size() > kLoggedStringLimit) s = fmt::format("<{} chars elided>", s.size());
    return s;
}

json HttpLog::redact_json(const json& j) const {
    if (j.is_string()) return redact(j.get<std::string>());
    if (j.is_array()) {
        json out = json::array();
        for (const auto& v : j) out.push_back(redact_json(v));
        return out;
    }
    if (j.is_object()) {
        json out = json::object();
        for (const auto& [k, v] : j.items()) out[redact(k)] = redact_json(v);
        return out;
    }
    return j;
}

void HttpLog::record(Entry entry) {
    std::lock_guard lock(mutex_);
    entry.request = redact_json(entry.request);
    entry.response = redact_json(entry.response);
    entry.error = redact(entry.error);
    entries_.push_back(std::move(entry));
}

std::vector<HttpLog::Entry> HttpLog::entries() const {
    std::lock_guard lock(mutex_);
    return entries_;
}

std::size_t HttpLog::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

void HttpLog::write_jsonl(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
    for (const auto& e : entries()) {
        json line = {{"endpoint", e.endpoint},
                     {"attempt", e.attempt},
                     {"request", e.request},
                     {"status", e.status},
                     {"response", e.response}};
        if (!e.error.empty()) line["error"] = e.error;
        out << line.dump() << '\n';
    }
}

JsonClient::JsonClient(EndpointConfig config, std::shared_ptr<HttpLog> log, Sleeper sleeper)
    : config_(std::move(config)), url_(parse_url(config_.base_url)), log_(std::move(log)), sleeper_(std::move(sleeper)) {
    config_.validate();
    if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    if (log_ && config_.api_key) log_->add_secret(*config_.api_key);
}

json JsonClient::post(const std::string& endpoint, const json& body) const {
    for (int attempt = 0;; ++attempt) {
        try {
            return post_once(endpoint, body, attempt);
        } catch (const BackendError& e) {
            if (!e.retryable() || attempt >= config_.max_retries) throw;
            sleeper_(backoff_delay(config_, attempt));
        }
    }
}

json JsonClient::post_once(const std::string& endpoint, const json& body, int attempt) const {
    HttpLog::Entry entry{endpoint, attempt, body, 0, nullptr, {}};
    auto finish = [&](BackendError error) -> BackendError {
        entry.error = error.what();
        if (log_) log_->record(std::move(entry));
        return error;
    };

    httplib::Client client(fmt::format("{}://{}:{}", url_.scheme, url_.host, url_.port));
    const auto timeout = std::chrono::milliseconds(config_.timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (config_.api_key) headers.emplace("Authorization", "Bearer " + *config_.api_key);

    auto result = client.Post(url_.path_prefix + endpoint, headers, body.dump(), "application/json");
    if (!result) {
        throw finish(BackendError(BackendErrorKind::Timeout,
                                  fmt::format("{}: transport failure ({})", endpoint, httplib::to_string(result.error()))));
    }
    entry.status = result->status;
    auto parsed = json::parse(result->body, nullptr, false);
    entry.response = parsed.is_discarded() ? json(result->body) : parsed;
    if (result->status < 200 || result->status >= 300) throw finish(status_error(result->status, endpoint, result->body));
    if (parsed.is_discarded() || !parsed.is_object()) {
        throw finish(BackendError(BackendErrorKind::Protocol, fmt::format("{}: response is not a JSON object", endpoint)));
    }
    if (log_) log_->record(std::move(entry));
    return parsed;
}

std::string completion_text(const json& response) {
    if (response.contains("keywords")) {
        const auto& kw = response.at("keywords");
        if (!kw.is_array()) throw BackendError(BackendErrorKind::InvalidResponse, "'keywords' is not an array");
        std::vector<std::string> parts;
        for (const auto& v : kw) {
            if (!v.is_string()) throw BackendError(BackendErrorKind::InvalidResponse, "'keywords' holds a non-string");
            parts.push_back(v.get<std::string>());
        }
        return text::join(parts, "\n");
    }
    if (response.contains("choices")) {
        try {
            return response.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception& e) {
            throw BackendError(BackendErrorKind::InvalidResponse, fmt::format("malformed choices: {}", e.what()));
        }
    }
    throw BackendError(BackendErrorKind::InvalidResponse, "response has neither 'keywords' nor 'choices'");
}

KeywordSet parse_keyword_completion(const std::string& completion, const StopWords& stopwords) {
    KeywordSet out;
    for (const auto& piece : text::split_any(completion, ",\n")) {
        auto phrase = strip_wrapping(strip_list_marker(piece));
        while (!phrase.empty() && (phrase.back() == '.' || phrase.back() == ';')) phrase.pop_back();
        phrase = std::string(text::trim(phrase));
        if (phrase.empty()) continue;
        const bool single_token = phrase.find_first_of(" \t") == std::string::npos;
        if (single_token && stopwords.contains(phrase)) continue;
        out.insert(Keyword(phrase));
    }
    if (out.empty()) throw Error(ErrorCode::NoKeywordsExtracted, "completion held no keywords");
    return out;
}

std::string parse_generalize_completion(const std::string& completion, const std::string& original) {
    std::string line;
    for (const auto& l : text::split_any(completion, "\n")) {
        line = l;
        break;
    }
    auto phrase = strip_wrapping(line);
    while (!phrase.empty() && std::string_view(".,;:!?").find(phrase.back()) != std::string_view::npos) {
        phrase.pop_back();
    }
    phrase = strip_wrapping(phrase);
    if (phrase.empty()) throw BackendError(BackendErrorKind::InvalidResponse, "empty generalization");
    if (text::casefold(phrase) == text::casefold(text::trim(original))) {
        throw BackendError(BackendErrorKind::InvalidResponse, fmt::format("generalization of '{}' is unchanged", original));
    }
    return phrase;
}

KeywordSet ChatExtractor::extract_keywords(const Prompt& prompt) {
    const auto instruction = fill_template(resources::extract_instruction(), "description", prompt.text());
    const auto response = client_.post("/v1/extract", json{{"prompt", instruction}});
    return parse_keyword_completion(completion_text(response), stopwords_);
}

std::string ChatRefiner::refine_keyword(const std::string& phrase, const Prompt& context) {
    if (text::trim(phrase).empty()) throw Error(ErrorCode::PreconditionViolation, "refine_keyword: empty phrase");
    auto instruction = fill_template(resources::generalize_instruction(), "phrase", phrase);
    instruction = fill_template(instruction, "description", context.text());
    const auto response = client_.post("/v1/extract", json{{"prompt", instruction}});
    return parse_generalize_completion(completion_text(response), phrase);
}

std::vector<ImageRef> Txt2ImgGenerator::generate(const GenerationRequest& request) {
    if (request.batch_size < 1) {
        throw Error(ErrorCode::PreconditionViolation, fmt::format("batch_size {} < 1", request.batch_size));
    }
    const json body = {{"prompt", request.rendered_prompt},
                       {"negative_prompt", request.negative},
                       {"batch_size", request.batch_size},
                       {"seed", request.seed},
                       {"width", settings_.width},
                       {"height", settings_.height},
                       {"steps", settings_.steps}};
    const auto response = client_.post("/v1/generate", body);
    if (!response.contains("images") || !response.at("images").is_array()) {
        throw BackendError(BackendErrorKind::InvalidResponse, "/v1/generate: missing 'images' array");
    }
    const auto& images = response.at("images");
    if (images.size() != static_cast<std::size_t>(request.batch_size)) {
        throw Error(ErrorCode::BatchSizeMismatch,
                    fmt::format("/v1/generate returned {} images for batch_size {}", images.size(), request.batch_size));
    }

    std::vector<ImageBytes> decoded;
    decoded.reserve(images.size());
    for (const auto& item : images) {
        if (!item.is_string()) throw BackendError(BackendErrorKind::InvalidResponse, "/v1/generate: non-string image");
        ImageBytes bytes;
        try {
            bytes = image_io::base64_decode(item.get<std::string>());
        } catch (const Error&) {
            throw BackendError(BackendErrorKind::InvalidResponse, "/v1/generate: image is not valid base64");
        }
        if (!image_io::has_png_signature(bytes)) {
            throw BackendError(BackendErrorKind::InvalidResponse, "/v1/generate: image is not a PNG");
        }
        decoded.push_back(std::move(bytes));
    }

    std::vector<ImageRef> refs;
    refs.reserve(decoded.size());
    std::vector<std::filesystem::path> written;
    try {
        for (std::size_t i = 0; i < decoded.size(); ++i) {
            const auto rel = image_relpath(request.iteration, static_cast<int>(i));
            ImageRef ref{rel, request.iteration, static_cast<int>(i), ImageBytes{}};
            if (output_dir_.empty()) {
                ref.payload = std::move(decoded[i]);
            } else {
                const auto path = output_dir_ / rel;
                std::filesystem::create_directories(path.parent_path());
                written.push_back(path);
                image_io::write_bytes(path, decoded[i]);
                ref.payload = path;
            }
            refs.push_back(std::move(ref));
        }
    } catch (...) {
        std::error_code ec;
        for (const auto& p : written) std::filesystem::remove(p, ec);
        throw;
    }
    return refs;
}

HttpScorer::HttpScorer(JsonClient client, int parallelism) : client_(std::move(client)), parallelism_(parallelism) {
    if (parallelism_ < 1) throw Error(ErrorCode::ConfigInvalid, "embed parallelism must be >= 1");
}

std::vector<Embedding> HttpScorer::parse_embeddings(const json& response, std::size_t expected) {
    if (!response.contains("embeddings") || !response.at("embeddings").is_array() || !response.contains("dim") ||
        !response.at("dim").is_number_integer()) {
        throw BackendError(BackendErrorKind::InvalidResponse, "embedding response lacks 'embeddings' or 'dim'");
    }
    const auto& rows = response.at("embeddings");
    if (rows.size() != expected) {
        throw BackendError(BackendErrorKind::InvalidResponse,
                           fmt::format("{} embeddings returned for {} inputs", rows.size(), expected));
    }
    const auto dim = response.at("dim").get<long long>();
    if (dim < 1) throw Error(ErrorCode::DimensionMismatch, fmt::format("declared dim {} < 1", dim));
    std::vector<Embedding> out;
    out.reserve(rows.size());
    for (const auto& row : rows) {
        if (!row.is_array()) throw BackendError(BackendErrorKind::InvalidResponse, "embedding row is not an array");
        if (row.size() != static_cast<std::size_t>(dim)) {
            throw Error(ErrorCode::DimensionMismatch,
                        fmt::format("embedding row of length {} with declared dim {}", row.size(), dim));
        }
        std::vector<double> values;
        values.reserve(row.size());
        for (const auto& v : row) {
            if (!v.is_number()) throw BackendError(BackendErrorKind::InvalidResponse, "embedding value is not a number");
            values.push_back(v.get<double>());
        }
        try {
            out.emplace_back(std::move(values));
        } catch (const Error& e) {
            throw BackendError(BackendErrorKind::InvalidResponse, e.what());
        }
    }
    std::lock_guard lock(dim_mutex_);
    if (!dim_) dim_ = static_cast<std::size_t>(dim);
    if (*dim_ != static_cast<std::size_t>(dim)) {
        throw Error(ErrorCode::DimensionMismatch, fmt::format("scorer dim changed from {} to {}", *dim_, dim));
    }
    return out;
}

std::vector<Embedding> HttpScorer::embed_text(std::span<const std::string> texts) {
    if (texts.empty()) throw Error(ErrorCode::PreconditionViolation, "embed_text: no inputs");
    const auto response = client_.post("/v1/embed/text", json{{"texts", std::vector<std::string>(texts.begin(), texts.end())}});
    return parse_embeddings(response, texts.size());
}

std::vector<Embedding> HttpScorer::embed_image(std::span<const ImageRef> images) {
    if (images.empty()) throw Error(ErrorCode::PreconditionViolation, "embed_image: no inputs");
    std::vector<std::string> encoded;
    encoded.reserve(images.size());
    for (const auto& image : images) {
        if (const auto* path = image.path()) {
            encoded.push_back(image_io::base64_encode(image_io::read_bytes(*path)));
        } else if (const auto* bytes = std::get_if<ImageBytes>(&image.payload)) {
            encoded.push_back(image_io::base64_encode(*bytes));
        } else {
            throw Error(ErrorCode::PreconditionViolation,
                        fmt::format("image '{}' has no pixel data for the HTTP scorer", image.id));
        }
    }

    const auto chunks = std::min<std::size_t>(static_cast<std::size_t>(parallelism_), encoded.size());
    const auto per_chunk = (encoded.size() + chunks - 1) / chunks;
    std::vector<std::future<std::vector<Embedding>>> pending;
    for (std::size_t start = 0; start < encoded.size(); start += per_chunk) {
        const auto stop = std::min(encoded.size(), start + per_chunk);
        std::vector<std::string> part(encoded.begin() + static_cast<std::ptrdiff_t>(start),
                                      encoded.begin() + static_cast<std::ptrdiff_t>(stop));
        pending.push_back(std::async(std::launch::async, [this, part = std::move(part)] {
            const auto response = client_.post("/v1/embed/image", json{{"images", part}});
            return parse_embeddings(response, part.size());
        }));
    }
    std::vector<Embedding> out;
    out.reserve(images.size());
    std::exception_ptr first_error;
    for (auto& f : pending) {
        try {
            auto rows = f.get();
            out.insert(out.end(), std::make_move_iterator(rows.begin()), std::make_move_iterator(rows.end()));
        } catch (...) {
            if (!first_error) first_error = std::current_exception();
        }
    }
    if (first_error) std::rethrow_exception(first_error);
    return out;
}

}  // namespace promptloop::http
