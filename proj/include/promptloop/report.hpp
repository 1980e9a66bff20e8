#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "promptloop/scoring.hpp"

/// Side-by-side score tables for one or more labeled runs.
namespace promptloop::report {

struct KeywordCell {
    double aggregated = 0.0;
    bool passed = false;
    friend bool operator==(const KeywordCell&, const KeywordCell&) = default;
};

struct Table {
    std::vector<std::string> run_labels;
    /// Keyword rows in first-seen order across runs; cells[row][run].
    std::vector<std::string> keywords;
    std::vector<std::vector<std::optional<KeywordCell>>> keyword_cells;
    /// "Sentence 1" ... "Sentence n", then "Overall"; cells[row][run].
    std::vector<std::string> sentence_rows;
    std::vector<std::vector<std::optional<double>>> sentence_cells;

    friend bool operator==(const Table&, const Table&) = default;
};

struct LabeledReport {
    std::string label;
    SimilarityReport report;
};

/// With `threshold` set, pass/fail is recomputed (strict) instead of taken
/// from the reports.
Table build_table(const std::vector<LabeledReport>& runs, std::optional<double> threshold = std::nullopt);

/// Failing cells carry a trailing "*". In the sentence table the best value of
/// each row is bold when more than one run is shown.
std::string to_markdown(const Table& table);

/// Columns keyword,run_label,aggregated,passed. Sentence-table rows use the row
/// name as keyword and leave passed empty. Values are written exactly.
std::string to_csv(const Table& table);
Table from_csv(std::string_view csv);

/// ANSI-colored plain text: failing cells red, best sentence values bold.
std::string to_terminal(const Table& table);

/// RFC 4180 helpers.
std::string csv_quote(std::string_view field);
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

/// Four fractional digits, as printed in tables.
std::string format_score(double v);

}  // namespace promptloop::report
