#include "promptloop/resources.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "promptloop/error.hpp"
#include "promptloop/text_util.hpp"

namespace promptloop {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, fmt::format("cannot read {}", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

StopWords StopWords::parse(std::string_view contents) {
    StopWords out;
    for (auto& line : text::split_any(contents, "\n")) out.words_.insert(text::casefold(line));
    return out;
}

StopWords StopWords::load(const std::filesystem::path& path) { return parse(read_file(path)); }

const StopWords& StopWords::bundled() {
    static const StopWords words = parse(resources::stopwords_en());
    return words;
}

bool StopWords::contains(std::string_view token) const {
    return words_.find(text::casefold(token)) != words_.end();
}

OverrideTable OverrideTable::parse(std::string_view contents) {
    OverrideTable out;
    std::size_t line_no = 0;
    for (auto& line : text::split_any(contents, "\n")) {
        ++line_no;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw Error(ErrorCode::SchemaMismatch, fmt::format("override table line {}: missing TAB", line_no));
        }
        auto from = text::trim(std::string_view(line).substr(0, tab));
        auto to = text::trim(std::string_view(line).substr(tab + 1));
        if (from.empty() || to.empty()) {
            throw Error(ErrorCode::SchemaMismatch, fmt::format("override table line {}: empty column", line_no));
        }
        out.entries_.emplace(text::casefold(from), std::string(to));
    }
    return out;
}

OverrideTable OverrideTable::load(const std::filesystem::path& path) { return parse(read_file(path)); }

const OverrideTable& OverrideTable::bundled() {
    static const OverrideTable table = parse(resources::refiner_overrides());
    return table;
}

const std::string* OverrideTable::lookup(std::string_view phrase) const {
    auto it = entries_.find(text::casefold(text::trim(phrase)));
    return it == entries_.end() ? nullptr : &it->second;
}

std::string fill_template(std::string_view tmpl, std::string_view name, std::string_view value) {
    const std::string needle = fmt::format("{{{}}}", name);
    std::string out(tmpl);
    for (auto pos = out.find(needle); pos != std::string::npos; pos = out.find(needle, pos + value.size())) {
        out.replace(pos, needle.size(), value);
    }
    return out;
}

}  // namespace promptloop
