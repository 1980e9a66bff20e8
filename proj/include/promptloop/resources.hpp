#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>

namespace promptloop {

/// Data files shipped under data/ and compiled into the library.
namespace resources {
std::string_view stopwords_en();
std::string_view refiner_overrides();
std::string_view extract_instruction();
std::string_view generalize_instruction();
inline constexpr std::string_view kInstructionVersion = "v1";
}  // namespace resources

/// Lower-case single-token stop words; one token per line in the file format.
class StopWords {
public:
    StopWords() = default;
    static StopWords parse(std::string_view contents);
    static StopWords load(const std::filesystem::path& path);
    static const StopWords& bundled();

    [[nodiscard]] bool contains(std::string_view token) const;
    [[nodiscard]] std::size_t size() const noexcept { return words_.size(); }

private:
    std::set<std::string, std::less<>> words_;
};

/// Case-folded phrase -> replacement; two-column TSV in the file format.
class OverrideTable {
public:
    OverrideTable() = default;
    static OverrideTable parse(std::string_view contents);
    static OverrideTable load(const std::filesystem::path& path);
    static const OverrideTable& bundled();

    [[nodiscard]] const std::string* lookup(std::string_view phrase) const;
    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }

private:
    std::map<std::string, std::string, std::less<>> entries_;
};

/// Replaces every "{name}" with `value`.
std::string fill_template(std::string_view tmpl, std::string_view name, std::string_view value);

std::string read_file(const std::filesystem::path& path);

}  // namespace promptloop
