#include "promptloop/report.hpp"

#include <algorithm>
#include <charconv>
#include <map>

#include <fmt/format.h>

#include "promptloop/text_util.hpp"

namespace promptloop::report {

namespace {

constexpr std::string_view kOverall = "Overall";
constexpr std::string_view kRed = "\x1b[31m";
constexpr std::string_view kBold = "\x1b[1m";
constexpr std::string_view kReset = "\x1b[0m";

std::size_t row_index(std::vector<std::string>& rows, std::string_view name) {
    const auto it = std::find(rows.begin(), rows.end(), name);
    if (it != rows.end()) return static_cast<std::size_t>(it - rows.begin());
    rows.emplace_back(name);
    return rows.size() - 1;
}

/// Runs whose value ties the row maximum; empty unless several values are present.
std::vector<bool> best_in_row(const std::vector<std::optional<double>>& row) {
    std::vector<bool> best(row.size(), false);
    const auto present = std::count_if(row.begin(), row.end(), [](const auto& c) { return c.has_value(); });
    if (present < 2) return best;
    double top = -2.0;
    for (const auto& c : row) {
        if (c) top = std::max(top, *c);
    }
    for (std::size_t i = 0; i < row.size(); ++i) best[i] = row[i] && *row[i] == top;
    return best;
}

std::string md_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (c == '|') out += '\\';
        out += c == '\n' ? ' ' : c;
    }
    return out;
}

double parse_double(const std::string& s) {
    double v = 0.0;
    const auto* end = s.data() + s.size();
    const auto [p, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc{} || p != end) throw Error(ErrorCode::SchemaMismatch, fmt::format("'{}' is not a number", s));
    return v;
}

struct Grid {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    /// Parallel to rows: ANSI prefix per cell, empty for plain.
    std::vector<std::vector<std::string_view>> styles;
};

std::string render_grid(const Grid& g) {
    std::vector<std::size_t> width(g.header.size(), 0);
    for (std::size_t c = 0; c < g.header.size(); ++c) width[c] = g.header[c].size();
    for (const auto& r : g.rows) {
        for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    }
    std::string out;
    for (std::size_t c = 0; c < g.header.size(); ++c) {
        out += c == 0 ? fmt::format("{:<{}}", g.header[c], width[c]) : fmt::format("  {:>{}}", g.header[c], width[c]);
    }
    out += '\n';
    for (std::size_t r = 0; r < g.rows.size(); ++r) {
        for (std::size_t c = 0; c < g.rows[r].size(); ++c) {
            const auto cell =
                c == 0 ? fmt::format("{:<{}}", g.rows[r][c], width[c]) : fmt::format("{:>{}}", g.rows[r][c], width[c]);
            if (c > 0) out += "  ";
            const auto style = g.styles[r][c];
            out += style.empty() ? cell : fmt::format("{}{}{}", style, cell, kReset);
        }
        out += '\n';
    }
    return out;
}

}  // namespace

std::string format_score(double v) { return fmt::format("{:.4f}", v); }

Table build_table(const std::vector<LabeledReport>& runs, std::optional<double> threshold) {
    Table t;
    const auto n = runs.size();
    for (const auto& r : runs) t.run_labels.push_back(r.label);
    std::map<std::string, std::size_t> keyword_rows;
    for (std::size_t run = 0; run < n; ++run) {
        const auto& rep = runs[run].report;
        for (const auto& k : rep.keyword_results) {
            const auto key = text::casefold(k.phrase);
            auto [it, fresh] = keyword_rows.emplace(key, t.keywords.size());
            if (fresh) {
                t.keywords.push_back(k.phrase);
                t.keyword_cells.emplace_back(n);
            }
            const double v = k.aggregated.value();
            t.keyword_cells[it->second][run] = KeywordCell{v, threshold ? v > *threshold : k.passed};
        }
        for (std::size_t s = 0; s < rep.sentence_results.size(); ++s) {
            const auto row = row_index(t.sentence_rows, fmt::format("Sentence {}", s + 1));
            if (t.sentence_cells.size() <= row) t.sentence_cells.emplace_back(n);
            t.sentence_cells[row][run] = rep.sentence_results[s].aggregated.value();
        }
    }
    // Overall always comes last.
    t.sentence_rows.emplace_back(kOverall);
    t.sentence_cells.emplace_back(n);
    for (std::size_t run = 0; run < n; ++run) t.sentence_cells.back()[run] = runs[run].report.overall.value();
    return t;
}

std::string to_markdown(const Table& t) {
    std::string out = "| Keyword |";
    std::string rule = "|---|";
    for (const auto& l : t.run_labels) {
        out += fmt::format(" {} |", md_escape(l));
        rule += "---:|";
    }
    out += "\n" + rule + "\n";
    for (std::size_t r = 0; r < t.keywords.size(); ++r) {
        out += fmt::format("| {} |", md_escape(t.keywords[r]));
        for (const auto& cell : t.keyword_cells[r]) {
            if (!cell) {
                out += " - |";
            } else {
                out += fmt::format(" {}{} |", format_score(cell->aggregated), cell->passed ? "" : "*");
            }
        }
        out += '\n';
    }
    out += "\n| Sentence |";
    for (const auto& l : t.run_labels) out += fmt::format(" {} |", md_escape(l));
    out += "\n" + rule + "\n";
    for (std::size_t r = 0; r < t.sentence_rows.size(); ++r) {
        const auto best = best_in_row(t.sentence_cells[r]);
        out += fmt::format("| {} |", t.sentence_rows[r]);
        for (std::size_t c = 0; c < t.sentence_cells[r].size(); ++c) {
            const auto& cell = t.sentence_cells[r][c];
            if (!cell) {
                out += " - |";
            } else if (best[c]) {
                out += fmt::format(" **{}** |", format_score(*cell));
            } else {
                out += fmt::format(" {} |", format_score(*cell));
            }
        }
        out += '\n';
    }
    return out;
}

std::string csv_quote(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        any = true;
        if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            row.push_back(std::move(field));
            field.clear();
            rows.push_back(std::move(row));
            row.clear();
            any = false;
        } else {
            field += c;
        }
    }
    if (quoted) throw Error(ErrorCode::SchemaMismatch, "unterminated quoted CSV field");
    if (any || !field.empty() || !row.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string to_csv(const Table& t) {
    // Run-major order so that first-seen order on reading matches build_table.
    std::string out = "keyword,run_label,aggregated,passed\r\n";
    for (std::size_t c = 0; c < t.run_labels.size(); ++c) {
        for (std::size_t r = 0; r < t.keywords.size(); ++r) {
            const auto& cell = t.keyword_cells[r][c];
            if (!cell) continue;
            out += fmt::format("{},{},{},{}\r\n", csv_quote(t.keywords[r]), csv_quote(t.run_labels[c]),
                               text::format_exact(cell->aggregated), cell->passed ? "true" : "false");
        }
        for (std::size_t r = 0; r < t.sentence_rows.size(); ++r) {
            const auto& cell = t.sentence_cells[r][c];
            if (!cell) continue;
            out += fmt::format("{},{},{},\r\n", csv_quote(t.sentence_rows[r]), csv_quote(t.run_labels[c]),
                               text::format_exact(*cell));
        }
    }
    return out;
}

Table from_csv(std::string_view csv) {
    const auto rows = parse_csv(csv);
    if (rows.empty() || rows[0] != std::vector<std::string>{"keyword", "run_label", "aggregated", "passed"}) {
        throw Error(ErrorCode::SchemaMismatch, "CSV header must be keyword,run_label,aggregated,passed");
    }
    struct Entry {
        std::string row, label, passed;
        double value;
    };
    std::vector<Entry> entries;
    Table t;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r.size() != 4) throw Error(ErrorCode::SchemaMismatch, fmt::format("CSV line {} has {} fields", i + 1, r.size()));
        if (!r[3].empty() && r[3] != "true" && r[3] != "false") {
            throw Error(ErrorCode::SchemaMismatch, fmt::format("CSV line {}: passed must be true, false or empty", i + 1));
        }
        entries.push_back({r[0], r[1], r[3], parse_double(r[2])});
        row_index(t.run_labels, r[1]);
    }
    const auto n = t.run_labels.size();
    for (const auto& e : entries) {
        const auto run = row_index(t.run_labels, e.label);
        if (e.passed.empty()) {
            const auto row = row_index(t.sentence_rows, e.row);
            if (t.sentence_cells.size() <= row) t.sentence_cells.emplace_back(n);
            t.sentence_cells[row][run] = e.value;
        } else {
            const auto row = row_index(t.keywords, e.row);
            if (t.keyword_cells.size() <= row) t.keyword_cells.emplace_back(n);
            t.keyword_cells[row][run] = KeywordCell{e.value, e.passed == "true"};
        }
    }
    const auto overall = std::find(t.sentence_rows.begin(), t.sentence_rows.end(), kOverall);
    if (overall != t.sentence_rows.end()) {
        const auto i = overall - t.sentence_rows.begin();
        std::rotate(t.sentence_rows.begin() + i, t.sentence_rows.begin() + i + 1, t.sentence_rows.end());
        std::rotate(t.sentence_cells.begin() + i, t.sentence_cells.begin() + i + 1, t.sentence_cells.end());
    }
    return t;
}

std::string to_terminal(const Table& t) {
    Grid keywords;
    keywords.header.push_back("Keyword");
    for (const auto& l : t.run_labels) keywords.header.push_back(l);
    for (std::size_t r = 0; r < t.keywords.size(); ++r) {
        std::vector<std::string> cells{t.keywords[r]};
        std::vector<std::string_view> styles{""};
        for (const auto& cell : t.keyword_cells[r]) {
            cells.push_back(cell ? format_score(cell->aggregated) + (cell->passed ? "" : "*") : "-");
            styles.push_back(cell && !cell->passed ? kRed : "");
        }
        keywords.rows.push_back(std::move(cells));
        keywords.styles.push_back(std::move(styles));
    }
    Grid sentences;
    sentences.header = keywords.header;
    sentences.header[0] = "Sentence";
    for (std::size_t r = 0; r < t.sentence_rows.size(); ++r) {
        const auto best = best_in_row(t.sentence_cells[r]);
        std::vector<std::string> cells{t.sentence_rows[r]};
        std::vector<std::string_view> styles{""};
        for (std::size_t c = 0; c < t.sentence_cells[r].size(); ++c) {
            const auto& cell = t.sentence_cells[r][c];
            cells.push_back(cell ? format_score(*cell) : "-");
            styles.push_back(best[c] ? kBold : "");
        }
        sentences.rows.push_back(std::move(cells));
        sentences.styles.push_back(std::move(styles));
    }
    return render_grid(keywords) + "\n" + render_grid(sentences);
}

}  // namespace promptloop::report
