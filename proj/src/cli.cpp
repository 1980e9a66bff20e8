#include "promptloop/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "promptloop/image_io.hpp"
#include "promptloop/prompt_dsl.hpp"
#include "promptloop/report.hpp"
#include "promptloop/text_util.hpp"
#include "promptloop/trace_io.hpp"

namespace promptloop::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void invalid(const std::string& why) { throw Error(ErrorCode::ConfigInvalid, why); }

void expect_object(const json& j, const std::string& where) {
    if (!j.is_object()) invalid(fmt::format("{}: expected an object", where));
}

template <typename T>
T get_as(const json& v, const std::string& key, const char* what) {
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        invalid(fmt::format("{}: expected {}", key, what));
    }
}

int get_int(const json& v, const std::string& key) {
    if (!v.is_number_integer()) invalid(fmt::format("{}: expected an integer", key));
    return v.get<int>();
}

double get_real(const json& v, const std::string& key) {
    if (!v.is_number()) invalid(fmt::format("{}: expected a number", key));
    return v.get<double>();
}

std::string get_string(const json& v, const std::string& key) {
    if (!v.is_string()) invalid(fmt::format("{}: expected a string", key));
    return v.get<std::string>();
}

sim::SimWorldConfig parse_sim(const json& j, bool& dim_set) {
    expect_object(j, "sim");
    sim::SimWorldConfig c;
    for (const auto& [key, v] : j.items()) {
        const auto name = "sim." + key;
        if (key == "dim") {
            const int dim = get_int(v, name);
            if (dim < 1) invalid(fmt::format("{}: must be >= 1", name));
            c.dim = static_cast<std::size_t>(dim);
            dim_set = true;
        } else if (key == "seed") {
            if (!v.is_number_unsigned()) invalid(fmt::format("{}: expected a non-negative integer", name));
            c.seed = v.get<std::uint64_t>();
        } else if (key == "inclusion_threshold") {
            c.inclusion_threshold = get_real(v, name);
        } else if (key == "noise_sigma") {
            c.noise_sigma = get_real(v, name);
        } else if (key == "drop_probability") {
            c.drop_probability = get_real(v, name);
        } else if (key == "blocked") {
            for (const auto& b : get_as<std::vector<std::string>>(v, name, "a list of strings")) c.blocked.insert(b);
        } else {
            invalid(fmt::format("unknown config key '{}'", name));
        }
    }
    c.validate();
    return c;
}

http::EndpointConfig parse_endpoint(const json& j, const std::string& where) {
    expect_object(j, where);
    http::EndpointConfig c;
    for (const auto& [key, v] : j.items()) {
        const auto name = where + "." + key;
        if (key == "base_url") {
            c.base_url = get_string(v, name);
        } else if (key == "api_key") {
            c.api_key = get_string(v, name);
        } else if (key == "timeout_ms") {
            c.timeout_ms = get_int(v, name);
        } else if (key == "max_retries") {
            c.max_retries = get_int(v, name);
        } else if (key == "backoff_base_ms") {
            c.backoff_base_ms = get_int(v, name);
        } else {
            invalid(fmt::format("unknown config key '{}'", name));
        }
    }
    c.validate();
    return c;
}

http::ImageSettings parse_image(const json& j) {
    expect_object(j, "image");
    http::ImageSettings s;
    for (const auto& [key, v] : j.items()) {
        const auto name = "image." + key;
        int* target = key == "width" ? &s.width : key == "height" ? &s.height : key == "steps" ? &s.steps : nullptr;
        if (!target) invalid(fmt::format("unknown config key '{}'", name));
        *target = get_int(v, name);
        if (*target < 1) invalid(fmt::format("{}: must be >= 1", name));
    }
    return s;
}

bool is_run_config_key(const std::string& key) {
    static const std::vector<std::string> keys = {"threshold",  "batch_size", "max_iterations",
                                                  "weight_step", "weight_cap", "reweight_attempts_before_generalize",
                                                  "seed",        "aggregation", "strict_threshold"};
    return std::find(keys.begin(), keys.end(), key) != keys.end();
}

std::string error_line(const std::exception& e) {
    if (const auto* be = dynamic_cast<const BackendError*>(&e)) {
        return fmt::format("error: Backend/{}: {}", to_string(be->kind()), be->what());
    }
    if (const auto* pe = dynamic_cast<const Error*>(&e)) return fmt::format("error: {}: {}", to_string(pe->code()), pe->what());
    return fmt::format("error: {}", e.what());
}

struct Backends {
    BackendSet set;
    std::shared_ptr<sim::SimWorld> world;
    std::shared_ptr<http::HttpLog> log;
};

Backends make_backends(const CliConfig& cfg, const fs::path& out_dir) {
    Backends b;
    if (cfg.backend == "sim") {
        b.world = std::make_shared<sim::SimWorld>(cfg.sim);
        b.set = sim::make_sim_backends(b.world);
        return b;
    }
    b.log = std::make_shared<http::HttpLog>();
    auto client = [&](const std::string& role) {
        auto ep = endpoint_for(cfg, role);
        if (ep.api_key) b.log->add_secret(*ep.api_key);
        return http::JsonClient(ep, b.log);
    };
    b.set.extractor = std::make_shared<http::ChatExtractor>(client("extractor"));
    b.set.generator = std::make_shared<http::Txt2ImgGenerator>(client("generator"), out_dir, cfg.image);
    b.set.scorer = std::make_shared<http::HttpScorer>(client("scorer"), cfg.scorer_parallelism);
    b.set.refiner = std::make_shared<http::ChatRefiner>(client("refiner"));
    return b;
}

void write_http_log(const Backends& b, const fs::path& out_dir) {
    if (!b.log) return;
    fs::create_directories(out_dir);
    b.log->write_jsonl(out_dir / "http_log.jsonl");
}

std::vector<std::string> read_keyword_lines(const fs::path& path) {
    std::vector<std::string> out;
    std::istringstream in(read_file(path));
    std::string line;
    while (std::getline(in, line)) {
        const auto t = text::trim(line);
        if (!t.empty()) out.emplace_back(t);
    }
    return out;
}

/// Images for cmd_score: every PNG below a directory, or a JSON latents file
/// {"vocabulary": [...], "latents": [[...], ...]}.
std::vector<ImageRef> load_images(const fs::path& source, std::vector<std::string>& vocabulary) {
    std::vector<ImageRef> refs;
    if (fs::is_directory(source)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(source)) {
            if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (std::size_t i = 0; i < files.size(); ++i) {
            refs.push_back(ImageRef{fs::relative(files[i], source).generic_string(), 0, static_cast<int>(i), files[i]});
        }
    } else {
        const auto doc = json::parse(read_file(source), nullptr, false);
        if (doc.is_discarded() || !doc.is_object() || !doc.contains("latents")) {
            throw Error(ErrorCode::SchemaMismatch, fmt::format("{}: expected a JSON object with 'latents'", source.string()));
        }
        try {
            if (doc.contains("vocabulary")) vocabulary = doc.at("vocabulary").get<std::vector<std::string>>();
            const auto rows = doc.at("latents").get<std::vector<std::vector<double>>>();
            for (std::size_t i = 0; i < rows.size(); ++i) {
                refs.push_back(ImageRef{fmt::format("latent{:02d}", i), 0, static_cast<int>(i), Embedding(rows[i])});
            }
        } catch (const json::exception& e) {
            throw Error(ErrorCode::SchemaMismatch, fmt::format("{}: {}", source.string(), e.what()));
        }
    }
    if (refs.empty()) throw Error(ErrorCode::EmptyBatch, fmt::format("no images found in {}", source.string()));
    return refs;
}

std::string render_table(const report::Table& table, const std::string& format) {
    if (format == "csv") return report::to_csv(table);
    if (format == "term") return report::to_terminal(table);
    return report::to_markdown(table);
}

std::string weight_text(double w) {
    auto s = text::format_trimmed(w, 4);
    if (s.find('.') == std::string::npos) s += ".0";
    return s;
}

void print_ast(std::ostream& out, const std::vector<dsl::Node>& nodes, int depth) {
    const std::string pad(static_cast<std::size_t>(depth) * 2, ' ');
    for (const auto& n : nodes) {
        if (const auto* t = n.text()) {
            out << pad << "text " << json(t->text).dump() << '\n';
        } else {
            const auto& w = *n.weighted();
            out << pad << "weighted " << text::format_trimmed(w.weight, 4) << '\n';
            print_ast(out, w.inner, depth + 1);
        }
    }
}

struct RunArgs {
    std::optional<std::string> prompt;
    std::optional<std::string> negative;
    std::optional<std::string> config_path;
    std::optional<std::string> out;
    std::optional<std::string> backend;
    std::optional<std::uint64_t> seed;
    std::optional<double> threshold;
    std::optional<int> batch;
    std::optional<int> max_iter;
    std::optional<std::string> policy;
};

CliConfig resolve(const RunArgs& a) {
    CliConfig cfg = a.config_path ? load_cli_config(*a.config_path) : CliConfig{};
    if (a.prompt) cfg.prompt = *a.prompt;
    if (a.negative) cfg.negative_prompt = *a.negative;
    if (a.out) cfg.out_dir = *a.out;
    if (a.backend) cfg.backend = *a.backend;
    if (a.seed) cfg.run.seed = *a.seed;
    if (a.threshold) cfg.run.threshold = *a.threshold;
    if (a.batch) cfg.run.batch_size = *a.batch;
    if (a.max_iter) cfg.run.max_iterations = *a.max_iter;
    if (a.policy) cfg.policy = policy_from_string(*a.policy);
    if (cfg.backend != "sim" && cfg.backend != "http") invalid(fmt::format("backend: '{}' is not sim or http", cfg.backend));
    cfg.run.validate();
    return cfg;
}

int cmd_run(const RunArgs& a, std::ostream& out, std::ostream& err) {
    CliConfig cfg;
    try {
        cfg = resolve(a);
        if (!cfg.prompt) invalid("--prompt is required (or 'prompt' in the config file)");
    } catch (const Error& e) {
        err << error_line(e) << '\n';
        return kExitUsage;
    }
    const fs::path out_dir = cfg.out_dir.value_or("promptloop-out");
    Backends backends;
    try {
        const auto prompt = validate_prompt(*cfg.prompt, cfg.negative_prompt);
        backends = make_backends(cfg, out_dir);
        RunOptions options;
        options.policy = cfg.policy;
        RunTrace trace = [&] {
            try {
                return run(prompt, cfg.run, backends.set, options);
            } catch (...) {
                write_http_log(backends, out_dir);
                throw;
            }
        }();
        trace_io::PersistOptions persist;
        if (backends.world) persist.latent_vocabulary = backends.world->vocabulary();
        trace_io::persist_trace(trace, out_dir, persist);
        write_http_log(backends, out_dir);
        const bool converged = trace.outcome == Outcome::Converged;
        out << fmt::format("outcome={} iters={} max_sim={:.4f}\n", converged ? "Converged" : "Cap", trace.records.size(),
                           trace.final_max_similarity.value());
        return converged ? kExitOk : kExitCap;
    } catch (const Error& e) {
        err << error_line(e) << '\n';
        return e.code() == ErrorCode::ConfigInvalid ? kExitUsage : kExitError;
    } catch (const std::exception& e) {
        err << error_line(e) << '\n';
        return kExitError;
    }
}

struct ReportArgs {
    std::vector<std::string> traces;
    std::vector<std::string> labels;
    std::string format = "md";
    std::optional<double> threshold;
};

int cmd_report(const ReportArgs& a, std::ostream& out, std::ostream& err) {
    if (!a.labels.empty() && a.labels.size() != a.traces.size()) {
        err << "error: give one --label per trace\n";
        return kExitUsage;
    }
    try {
        std::vector<report::LabeledReport> runs;
        for (std::size_t i = 0; i < a.traces.size(); ++i) {
            fs::path p = a.traces[i];
            if (fs::is_directory(p)) p /= "trace.jsonl";
            auto records = trace_io::load_records(p);
            auto label = a.labels.empty() ? p.parent_path().filename().string() : a.labels[i];
            if (label.empty()) label = fmt::format("run{}", i + 1);
            runs.push_back({std::move(label), std::move(records.back().report)});
        }
        out << render_table(report::build_table(runs, a.threshold), a.format);
        return kExitOk;
    } catch (const std::exception& e) {
        err << error_line(e) << '\n';
        return kExitError;
    }
}

struct ScoreArgs {
    std::string images;
    std::string keywords;
    std::optional<std::string> prompt;
    std::optional<std::string> config_path;
    std::optional<std::string> backend;
    std::optional<double> threshold;
    std::string format = "md";
    std::string label = "score";
};

int cmd_score(const ScoreArgs& a, std::ostream& out, std::ostream& err) {
    CliConfig cfg;
    KeywordSet keywords;
    try {
        RunArgs ra;
        ra.config_path = a.config_path;
        ra.backend = a.backend;
        ra.threshold = a.threshold;
        cfg = resolve(ra);
        for (const auto& line : read_keyword_lines(a.keywords)) keywords.insert(Keyword(line));
        if (keywords.empty()) invalid(fmt::format("keywords file {} is empty", a.keywords));
    } catch (const Error& e) {
        err << error_line(e) << '\n';
        return e.code() == ErrorCode::ConfigInvalid ? kExitUsage : kExitError;
    }
    const fs::path out_dir = cfg.out_dir.value_or("promptloop-out");
    try {
        std::vector<std::string> vocabulary;
        const auto images = load_images(a.images, vocabulary);
        if (cfg.backend == "sim" && !cfg.sim_dim_set) {
            if (const auto* latent = images.front().latent()) {
                cfg.sim.dim = latent->dim();
            } else if (auto payload = image_io::decode_latent_png(image_io::read_bytes(*images.front().path()))) {
                cfg.sim.dim = payload->latent.dim();
            }
        }
        auto backends = make_backends(cfg, out_dir);
        if (backends.world) backends.world->adopt_vocabulary(vocabulary);
        auto& scorer = *backends.set.scorer;
        const auto image_emb = scorer.embed_image(images);
        const std::string full_text = a.prompt ? *a.prompt : text::join(keywords.phrases(), ", ");
        const auto sentences = a.prompt ? scoring::split_sentences(*a.prompt) : std::vector<std::string>{};
        const auto rep = scoring::evaluate(image_emb, keywords, sentences, full_text, scorer, cfg.run);
        write_http_log(backends, out_dir);
        out << render_table(report::build_table({{a.label, rep}}), a.format);
        return kExitOk;
    } catch (const std::exception& e) {
        err << error_line(e) << '\n';
        return kExitError;
    }
}

int cmd_parse(const std::string& prompt, std::ostream& out, std::ostream& err) {
    try {
        const auto ast = dsl::parse(prompt);
        const auto normalized = dsl::normalize(ast);
        out << "normalized: " << dsl::render(normalized) << '\n';
        out << "ast:\n";
        print_ast(out, normalized.nodes, 1);
        out << "weights:\n";
        for (const auto& p : dsl::weighted_phrases(ast)) out << "  " << p.phrase << '=' << weight_text(p.weight) << '\n';
        return kExitOk;
    } catch (const ParseError& e) {
        err << "error: " << e.what() << '\n';
        err << "  " << prompt << '\n';
        err << "  " << std::string(e.position(), ' ') << "^\n";
        return kExitError;
    }
}

}  // namespace

CliConfig parse_cli_config(const json& j) {
    expect_object(j, "config");
    CliConfig c;
    json run = json::object();
    for (const auto& [key, v] : j.items()) {
        if (is_run_config_key(key)) {
            run[key] = v;
        } else if (key == "policy") {
            c.policy = policy_from_string(get_string(v, key));
        } else if (key == "backend") {
            c.backend = get_string(v, key);
            if (c.backend != "sim" && c.backend != "http") invalid(fmt::format("backend: '{}' is not sim or http", c.backend));
        } else if (key == "out_dir") {
            c.out_dir = get_string(v, key);
        } else if (key == "prompt") {
            c.prompt = get_string(v, key);
        } else if (key == "negative_prompt") {
            c.negative_prompt = get_string(v, key);
        } else if (key == "sim") {
            c.sim = parse_sim(v, c.sim_dim_set);
        } else if (key == "endpoints") {
            expect_object(v, key);
            for (const auto& [role, ep] : v.items()) {
                if (role != "default" && role != "extractor" && role != "generator" && role != "scorer" && role != "refiner") {
                    invalid(fmt::format("unknown config key 'endpoints.{}'", role));
                }
                c.endpoints[role] = parse_endpoint(ep, "endpoints." + role);
            }
        } else if (key == "image") {
            c.image = parse_image(v);
        } else if (key == "scorer_parallelism") {
            c.scorer_parallelism = get_int(v, key);
            if (c.scorer_parallelism < 1) invalid("scorer_parallelism: must be >= 1");
        } else {
            invalid(fmt::format("unknown config key '{}'", key));
        }
    }
    c.run = trace_io::config_from_json(trace_io::Json::parse(run.dump()));
    return c;
}

CliConfig load_cli_config(const fs::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const Error& e) {
        invalid(fmt::format("cannot read config {}", path.string()));
    }
    const auto j = json::parse(text, nullptr, false);
    if (j.is_discarded()) invalid(fmt::format("{} is not valid JSON", path.string()));
    return parse_cli_config(j);
}

http::EndpointConfig endpoint_for(const CliConfig& config, const std::string& role) {
    auto it = config.endpoints.find(role);
    if (it == config.endpoints.end()) it = config.endpoints.find("default");
    if (it == config.endpoints.end()) invalid(fmt::format("endpoints.{}: required for the http backend", role));
    auto ep = it->second;
    if (const char* key = std::getenv(kApiKeyEnv); key != nullptr && *key != '\0') ep.api_key = key;
    return ep;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Iterative prompt refinement for text-to-image generation", "promptloop"};
    app.require_subcommand(1);

    RunArgs ra;
    auto* run_cmd = app.add_subcommand("run", "Run the generate/score/refine loop and persist the trace");
    run_cmd->add_option("--prompt", ra.prompt, "Scene description");
    run_cmd->add_option("--negative", ra.negative, "Negative prompt");
    run_cmd->add_option("--config", ra.config_path, "JSON config file");
    run_cmd->add_option("--out", ra.out, "Output directory");
    run_cmd->add_option("--backend", ra.backend, "sim or http")->check(CLI::IsMember({"sim", "http"}));
    run_cmd->add_option("--seed", ra.seed, "Run seed");
    run_cmd->add_option("--threshold", ra.threshold, "Keyword similarity threshold");
    run_cmd->add_option("--batch", ra.batch, "Images per iteration");
    run_cmd->add_option("--max-iter", ra.max_iter, "Iteration cap");
    run_cmd->add_option("--policy", ra.policy, "reweight_then_generalize, reweight_only or generalize_only");

    ReportArgs rep;
    auto* report_cmd = app.add_subcommand("report", "Render keyword and sentence tables from traces");
    report_cmd->add_option("traces", rep.traces, "Run directories or trace.jsonl files")->required();
    report_cmd->add_option("--label", rep.labels, "Column label per trace");
    report_cmd->add_option("--format", rep.format, "md, csv or term")->check(CLI::IsMember({"md", "csv", "term"}));
    report_cmd->add_option("--threshold", rep.threshold, "Recompute pass/fail against this threshold");

    ScoreArgs sa;
    auto* score_cmd = app.add_subcommand("score", "Score existing images against keywords");
    score_cmd->add_option("--images", sa.images, "PNG directory or latents JSON file")->required();
    score_cmd->add_option("--keywords", sa.keywords, "One phrase per line")->required();
    score_cmd->add_option("--prompt", sa.prompt, "Scene description for sentence scores");
    score_cmd->add_option("--config", sa.config_path, "JSON config file");
    score_cmd->add_option("--backend", sa.backend, "sim or http")->check(CLI::IsMember({"sim", "http"}));
    score_cmd->add_option("--threshold", sa.threshold, "Keyword similarity threshold");
    score_cmd->add_option("--format", sa.format, "md, csv or term")->check(CLI::IsMember({"md", "csv", "term"}));
    score_cmd->add_option("--label", sa.label, "Column label");

    std::string parse_text;
    auto* parse_cmd = app.add_subcommand("parse", "Show how a weighted prompt parses");
    parse_cmd->add_option("prompt", parse_text, "Prompt text")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    if (*run_cmd) return cmd_run(ra, out, err);
    if (*report_cmd) return cmd_report(rep, out, err);
    if (*score_cmd) return cmd_score(sa, out, err);
    return cmd_parse(parse_text, out, err);
}

}  // namespace promptloop::cli
