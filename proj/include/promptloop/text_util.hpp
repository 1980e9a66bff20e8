#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace promptloop::text {

std::string_view trim(std::string_view s) noexcept;

/// ASCII case folding. Non-ASCII bytes pass through unchanged.
std::string casefold(std::string_view s);

/// Splits on any byte in `delims`; pieces are trimmed and empty pieces dropped.
std::vector<std::string> split_any(std::string_view s, std::string_view delims);

/// Whitespace tokenization with commas treated as separators.
std::vector<std::string> tokens(std::string_view s);

/// True for C0 controls other than '\n', DEL, and UTF-8 encoded C1 controls.
bool has_forbidden_control(std::string_view s) noexcept;

std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Fixed-point rendering with at most `max_frac` fractional digits, trailing
/// zeros trimmed ("1.1000" -> "1.1", "2.0000" -> "2").
std::string format_trimmed(double value, int max_frac = 4);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_exact(double value);

}  // namespace promptloop::text
