#include "promptloop/trace_io.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "promptloop/image_io.hpp"

namespace promptloop::trace_io {

namespace fs = std::filesystem;

namespace {

constexpr const char* kTraceFile = "trace.jsonl";
constexpr const char* kConfigFile = "config.json";
constexpr const char* kRunFile = "run.json";

[[noreturn]] void schema(const std::string& why) { throw Error(ErrorCode::SchemaMismatch, why); }

const Json& field(const Json& j, const char* name) {
    if (!j.is_object() || !j.contains(name)) schema(fmt::format("missing field '{}'", name));
    return j.at(name);
}

double number(const Json& j, const char* name) {
    const auto& v = field(j, name);
    if (!v.is_number()) schema(fmt::format("field '{}' must be a number", name));
    return v.get<double>();
}

std::string string(const Json& j, const char* name) {
    const auto& v = field(j, name);
    if (!v.is_string()) schema(fmt::format("field '{}' must be a string", name));
    return v.get<std::string>();
}

const Json& array(const Json& j, const char* name) {
    const auto& v = field(j, name);
    if (!v.is_array()) schema(fmt::format("field '{}' must be an array", name));
    return v;
}

SimilarityScore score(double v) {
    try {
        return SimilarityScore(v);
    } catch (const Error& e) {
        schema(e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
    out << text;
    if (!out) throw Error(ErrorCode::IoError, fmt::format("short write to {}", path.string()));
}

Json parse_document(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, fmt::format("cannot read {}", path.string()));
    auto j = Json::parse(in, nullptr, false);
    if (j.is_discarded()) schema(fmt::format("{} is not valid JSON", path.string()));
    return j;
}

void store_image(const ImageRef& ref, const fs::path& target, const PersistOptions& options) {
    if (const auto* latent = ref.latent()) {
        image_io::write_bytes(target, image_io::encode_latent_png({*latent, options.latent_vocabulary}));
    } else if (const auto* src = ref.path()) {
        std::error_code ec;
        if (fs::exists(target) && fs::equivalent(*src, target, ec)) return;
        fs::copy_file(*src, target, fs::copy_options::overwrite_existing);
    } else {
        image_io::write_bytes(target, std::get<ImageBytes>(ref.payload));
    }
}

}  // namespace

Json config_to_json(const RunConfig& c) {
    Json j;
    j["threshold"] = c.threshold;
    j["batch_size"] = c.batch_size;
    j["max_iterations"] = c.max_iterations;
    j["weight_step"] = c.weight_step;
    j["weight_cap"] = c.weight_cap;
    j["reweight_attempts_before_generalize"] = c.reweight_attempts_before_generalize;
    j["seed"] = c.seed;
    j["aggregation"] = std::string(to_string(c.aggregation));
    j["strict_threshold"] = c.strict_threshold;
    return j;
}

RunConfig config_from_json(const Json& j) {
    if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, "config must be a JSON object");
    RunConfig c;
    auto bad = [](const std::string& key, const char* want) {
        return Error(ErrorCode::ConfigInvalid, fmt::format("{}: expected {}", key, want));
    };
    auto as_int = [&](const std::string& key, const Json& v) {
        if (!v.is_number_integer()) throw bad(key, "an integer");
        const auto n = v.get<long long>();
        if (n < INT32_MIN || n > INT32_MAX) throw bad(key, "a 32-bit integer");
        return static_cast<int>(n);
    };
    auto as_real = [&](const std::string& key, const Json& v) {
        if (!v.is_number()) throw bad(key, "a number");
        return v.get<double>();
    };
    for (const auto& [key, v] : j.items()) {
        if (key == "threshold") {
            c.threshold = as_real(key, v);
        } else if (key == "batch_size") {
            c.batch_size = as_int(key, v);
        } else if (key == "max_iterations") {
            c.max_iterations = as_int(key, v);
        } else if (key == "weight_step") {
            c.weight_step = as_real(key, v);
        } else if (key == "weight_cap") {
            c.weight_cap = as_real(key, v);
        } else if (key == "reweight_attempts_before_generalize") {
            c.reweight_attempts_before_generalize = as_int(key, v);
        } else if (key == "seed") {
            if (!v.is_number_unsigned()) throw bad(key, "a non-negative integer");
            c.seed = v.get<std::uint64_t>();
        } else if (key == "aggregation") {
            if (!v.is_string()) throw bad(key, "a string");
            c.aggregation = aggregation_from_string(v.get<std::string>());
        } else if (key == "strict_threshold") {
            if (!v.is_boolean()) throw bad(key, "a boolean");
            c.strict_threshold = v.get<bool>();
        } else {
            throw Error(ErrorCode::ConfigInvalid, fmt::format("unknown config key '{}'", key));
        }
    }
    c.validate();
    return c;
}

Json record_to_json(const IterationRecord& r) {
    Json j;
    j["iteration"] = r.iteration;
    j["seed"] = r.seed;
    j["rendered_prompt"] = r.rendered_prompt;
    j["keywords"] = Json::array();
    for (const auto& k : r.keywords) j["keywords"].push_back({{"phrase", k.phrase()}, {"weight", k.weight()}});
    j["images"] = Json::array();
    for (const auto& img : r.image_refs) j["images"].push_back(img.id);
    j["keyword_scores"] = Json::array();
    for (const auto& k : r.report.keyword_results) {
        Json scores = Json::array();
        for (const auto& s : k.per_image_scores) scores.push_back(s.value());
        j["keyword_scores"].push_back(
            {{"phrase", k.phrase}, {"scores", scores}, {"aggregated", k.aggregated.value()}, {"passed", k.passed}});
    }
    j["sentence_scores"] = Json::array();
    for (const auto& s : r.report.sentence_results) {
        j["sentence_scores"].push_back({{"sentence", s.sentence}, {"aggregated", s.aggregated.value()}});
    }
    j["overall"] = r.report.overall.value();
    Json action;
    action["type"] = r.action.type();
    if (!r.action.reweighted.empty()) action["reweighted"] = r.action.reweighted;
    if (!r.action.generalized.empty()) {
        action["generalized"] = Json::array();
        for (const auto& [from, to] : r.action.generalized) action["generalized"].push_back({{"from", from}, {"to", to}});
    }
    j["action"] = action;
    return j;
}

IterationRecord record_from_json(const Json& j, const fs::path& run_dir) {
    IterationRecord r;
    const auto& it = field(j, "iteration");
    if (!it.is_number_integer() || it.get<long long>() < 0) schema("field 'iteration' must be a non-negative integer");
    r.iteration = it.get<int>();
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_unsigned()) schema("field 'seed' must be a non-negative integer");
        r.seed = j.at("seed").get<std::uint64_t>();
    }
    r.rendered_prompt = string(j, "rendered_prompt");
    try {
        for (const auto& k : array(j, "keywords")) r.keywords.insert(Keyword(string(k, "phrase"), number(k, "weight")));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::SchemaMismatch) throw;
        schema(fmt::format("invalid keyword: {}", e.what()));
    }
    int index = 0;
    for (const auto& img : array(j, "images")) {
        if (!img.is_string()) schema("image entries must be strings");
        const auto id = img.get<std::string>();
        r.image_refs.push_back(ImageRef{id, r.iteration, index++, run_dir / id});
    }
    for (const auto& k : array(j, "keyword_scores")) {
        KeywordResult kr;
        kr.phrase = string(k, "phrase");
        for (const auto& s : array(k, "scores")) {
            if (!s.is_number()) schema("scores must be numbers");
            kr.per_image_scores.push_back(score(s.get<double>()));
        }
        kr.aggregated = score(number(k, "aggregated"));
        const auto& passed = field(k, "passed");
        if (!passed.is_boolean()) schema("field 'passed' must be a boolean");
        kr.passed = passed.get<bool>();
        r.report.keyword_results.push_back(std::move(kr));
    }
    for (const auto& s : array(j, "sentence_scores")) {
        r.report.sentence_results.push_back({string(s, "sentence"), score(number(s, "aggregated"))});
    }
    r.report.overall = score(number(j, "overall"));
    r.report.all_passed = !r.report.keyword_results.empty();
    for (const auto& k : r.report.keyword_results) r.report.all_passed = r.report.all_passed && k.passed;

    const auto& action = field(j, "action");
    const auto type = string(action, "type");
    if (action.contains("reweighted")) {
        for (const auto& p : array(action, "reweighted")) {
            if (!p.is_string()) schema("reweighted entries must be strings");
            r.action.reweighted.push_back(p.get<std::string>());
        }
    }
    if (action.contains("generalized")) {
        for (const auto& g : array(action, "generalized")) r.action.generalized.emplace_back(string(g, "from"), string(g, "to"));
    }
    if (type != "none" && type != "reweight" && type != "generalize") schema(fmt::format("unknown action type '{}'", type));
    if (type != r.action.type()) schema(fmt::format("action type '{}' does not match its contents", type));
    return r;
}

void persist_trace(const RunTrace& trace, const fs::path& out_dir, const PersistOptions& options) {
    try {
        fs::create_directories(out_dir);
        std::string lines;
        for (const auto& r : trace.records) {
            lines += record_to_json(r).dump();
            lines += '\n';
            for (const auto& img : r.image_refs) {
                const auto target = out_dir / img.id;
                fs::create_directories(target.parent_path());
                store_image(img, target, options);
            }
        }
        write_text(out_dir / kTraceFile, lines);
        write_text(out_dir / kConfigFile, config_to_json(trace.config).dump(2) + "\n");
        Json run;
        run["prompt"] = trace.initial_prompt.text();
        run["negative_prompt"] = trace.initial_prompt.negative_text();
        run["outcome"] = std::string(to_string(trace.outcome));
        run["iterations"] = trace.records.size();
        run["final_max_similarity"] = trace.final_max_similarity.value();
        write_text(out_dir / kRunFile, run.dump(2) + "\n");
    } catch (const fs::filesystem_error& e) {
        throw Error(ErrorCode::IoError, e.what());
    }
}

std::vector<IterationRecord> load_records(const fs::path& trace_file) {
    std::ifstream in(trace_file, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingTrace, fmt::format("no trace at {}", trace_file.string()));
    std::vector<IterationRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto j = Json::parse(line, nullptr, false);
        if (j.is_discarded()) schema(fmt::format("{}:{}: not valid JSON", trace_file.string(), line_no));
        try {
            records.push_back(record_from_json(j, trace_file.parent_path()));
        } catch (const Error& e) {
            schema(fmt::format("{}:{}: {}", trace_file.string(), line_no, e.what()));
        }
        if (records.back().iteration != static_cast<int>(records.size()) - 1) {
            schema(fmt::format("{}:{}: iterations are not contiguous from 0", trace_file.string(), line_no));
        }
    }
    if (records.empty()) throw Error(ErrorCode::MissingTrace, fmt::format("{} holds no records", trace_file.string()));
    return records;
}

RunTrace load_trace(const fs::path& run_dir) {
    auto records = load_records(run_dir / kTraceFile);
    RunConfig config;
    try {
        config = config_from_json(parse_document(run_dir / kConfigFile));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::IoError) throw Error(ErrorCode::MissingTrace, e.what());
        schema(e.what());
    }
    Json run;
    try {
        run = parse_document(run_dir / kRunFile);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::IoError) throw Error(ErrorCode::MissingTrace, e.what());
        throw;
    }
    const auto outcome_text = string(run, "outcome");
    Outcome outcome;
    if (outcome_text == to_string(Outcome::Converged)) {
        outcome = Outcome::Converged;
    } else if (outcome_text == to_string(Outcome::IterationCapReached)) {
        outcome = Outcome::IterationCapReached;
    } else {
        schema(fmt::format("unknown outcome '{}'", outcome_text));
    }
    auto prompt = [&] {
        try {
            return validate_prompt(string(run, "prompt"), string(run, "negative_prompt"));
        } catch (const Error& e) {
            if (e.code() == ErrorCode::SchemaMismatch) throw;
            schema(e.what());
        }
    }();
    return RunTrace{config, std::move(prompt), std::move(records), outcome, score(number(run, "final_max_similarity"))};
}

}  // namespace promptloop::trace_io
