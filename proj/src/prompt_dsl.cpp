#include "promptloop/prompt_dsl.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <optional>

#include <fmt/format.h>

#include "promptloop/text_util.hpp"

namespace promptloop::dsl {

namespace {

constexpr double kUnitTolerance = 1e-12;

struct Frame {
    char opener = 0;           // 0 for the top level
    std::size_t open_pos = 0;  // source offset of the opener
    std::vector<Node> nodes;
    std::optional<std::size_t> colon_pos;  // last ':' in the trailing span
};

void append_char(Frame& frame, char c) {
    if (frame.nodes.empty() || frame.nodes.back().text() == nullptr) frame.nodes.emplace_back(TextSpan{});
    std::get<TextSpan>(frame.nodes.back().value).text.push_back(c);
}

bool starts_like_number(std::string_view s) {
    if (s.empty()) return false;
    const char c = s.front();
    return (c >= '0' && c <= '9') || c == '.' || c == '+' || c == '-';
}

/// Accepts [+-]?digits[.digits] (at least one digit); rejects <= 0.
std::optional<double> parse_weight_literal(std::string_view s) {
    std::size_t i = 0;
    bool negative = false;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) {
        negative = s[i] == '-';
        ++i;
    }
    const std::size_t body = i;
    std::size_t digits = 0;
    bool dot = false;
    for (; i < s.size(); ++i) {
        if (s[i] >= '0' && s[i] <= '9') {
            ++digits;
        } else if (s[i] == '.' && !dot) {
            dot = true;
        } else {
            return std::nullopt;
        }
    }
    if (digits == 0 || negative) return std::nullopt;
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(s.data() + body, s.data() + s.size(), value, std::chars_format::fixed);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    if (!std::isfinite(value) || value <= 0.0) return std::nullopt;
    return value;
}

[[noreturn]] void unbalanced(std::size_t pos) {
    throw ParseError(ErrorCode::UnbalancedDelimiter, pos, fmt::format("UnbalancedDelimiter at byte {}", pos));
}

Weighted close_paren(Frame frame) {
    Weighted out;
    out.weight = kParenWeight;
    if (frame.colon_pos && !frame.nodes.empty() && frame.nodes.back().text() != nullptr) {
        auto& span = std::get<TextSpan>(frame.nodes.back().value).text;
        const auto colon = span.rfind(':');
        const auto literal = text::trim(std::string_view(span).substr(colon + 1));
        if (starts_like_number(literal)) {
            auto weight = parse_weight_literal(literal);
            if (!weight) {
                const auto pos = *frame.colon_pos + 1;
                throw ParseError(ErrorCode::InvalidWeightLiteral, pos,
                                 fmt::format("InvalidWeightLiteral at byte {}: '{}'", pos, literal));
            }
            out.weight = *weight;
            span.erase(colon);
            if (span.empty()) frame.nodes.pop_back();
        }
    }
    out.inner = std::move(frame.nodes);
    return out;
}

void append_text(std::vector<Node>& out, std::string_view s) {
    if (s.empty()) return;
    if (!out.empty() && out.back().text() != nullptr) {
        std::get<TextSpan>(out.back().value).text += s;
    } else {
        out.emplace_back(TextSpan{std::string(s)});
    }
}

std::vector<Node> normalize_nodes(const std::vector<Node>& nodes) {
    std::vector<Node> out;
    for (const auto& node : nodes) {
        if (const auto* span = node.text()) {
            append_text(out, span->text);
            continue;
        }
        const auto& w = *node.weighted();
        auto inner = normalize_nodes(w.inner);
        double weight = w.weight;
        while (inner.size() == 1 && inner.front().weighted() != nullptr) {
            const double product = weight * inner.front().weighted()->weight;
            if (!std::isnormal(product) || product < 0.0) break;
            weight = product;
            auto child = std::move(std::get<Weighted>(inner.front().value).inner);
            inner = std::move(child);
        }
        if (inner.empty()) continue;
        if (std::abs(weight - 1.0) <= kUnitTolerance) {
            for (auto& n : inner) {
                if (const auto* s = n.text()) {
                    append_text(out, s->text);
                } else {
                    out.push_back(std::move(n));
                }
            }
        } else {
            out.emplace_back(Weighted{std::move(inner), weight});
        }
    }
    return out;
}

std::string format_weight(double w) {
    auto s = text::format_trimmed(w, 4);
    if (s == "0" || (s == "1" && w != 1.0)) {
        // Rounding would change the node's meaning; emit the exact value.
        std::array<char, 400> buf{};
        auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), w, std::chars_format::fixed);
        if (ec == std::errc{}) s.assign(buf.data(), ptr);
    }
    return s;
}

void render_nodes(const std::vector<Node>& nodes, std::string& out) {
    for (const auto& node : nodes) {
        if (const auto* span = node.text()) {
            out += escape(span->text);
        } else {
            const auto& w = *node.weighted();
            out += '(';
            render_nodes(w.inner, out);
            out += ':';
            out += format_weight(w.weight);
            out += ')';
        }
    }
}

bool equivalent_nodes(const std::vector<Node>& a, const std::vector<Node>& b, double tol) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto *ta = a[i].text(), *tb = b[i].text();
        if ((ta == nullptr) != (tb == nullptr)) return false;
        if (ta != nullptr) {
            if (ta->text != tb->text) return false;
            continue;
        }
        const auto &wa = *a[i].weighted(), &wb = *b[i].weighted();
        if (std::abs(wa.weight - wb.weight) > tol) return false;
        if (!equivalent_nodes(wa.inner, wb.inner, tol)) return false;
    }
    return true;
}

void flatten(const std::vector<Node>& nodes, double scale, std::vector<std::pair<char, double>>& out) {
    for (const auto& node : nodes) {
        if (const auto* span = node.text()) {
            for (char c : span->text) out.emplace_back(c, scale);
        } else {
            const auto& w = *node.weighted();
            flatten(w.inner, scale * w.weight, out);
        }
    }
}

}  // namespace

Ast parse(std::string_view text) {
    std::vector<Frame> stack(1);
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        switch (c) {
            case '\\':
                if (i + 1 < text.size() && std::string_view("()[]\\").find(text[i + 1]) != std::string_view::npos) {
                    append_char(stack.back(), text[++i]);
                } else {
                    append_char(stack.back(), c);
                }
                break;
            case '(':
            case '[':
                if (stack.size() > kMaxNesting) {
                    throw ParseError(ErrorCode::NestingTooDeep, i,
                                     fmt::format("NestingTooDeep at byte {} (limit {})", i, kMaxNesting));
                }
                stack.push_back(Frame{c, i, {}, std::nullopt});
                break;
            case ')':
            case ']': {
                const char expected = c == ')' ? '(' : '[';
                if (stack.size() < 2 || stack.back().opener != expected) unbalanced(i);
                Frame frame = std::move(stack.back());
                stack.pop_back();
                Weighted w = c == ')' ? close_paren(std::move(frame)) : Weighted{std::move(frame.nodes), kBracketWeight};
                stack.back().nodes.emplace_back(std::move(w));
                stack.back().colon_pos.reset();
                break;
            }
            case ':':
                append_char(stack.back(), c);
                stack.back().colon_pos = i;
                break;
            default:
                append_char(stack.back(), c);
        }
    }
    if (stack.size() > 1) unbalanced(text.size());
    return Ast{std::move(stack.front().nodes)};
}

std::string escape(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        if (c == '(' || c == ')' || c == '[' || c == ']' || c == '\\') out += '\\';
        out += c;
    }
    return out;
}

Ast normalize(const Ast& ast) { return Ast{normalize_nodes(ast.nodes)}; }

std::string render(const Ast& ast) {
    std::string out;
    render_nodes(normalize(ast).nodes, out);
    return out;
}

bool equivalent(const Ast& a, const Ast& b, double weight_tol) {
    return equivalent_nodes(a.nodes, b.nodes, weight_tol);
}

std::vector<std::pair<char, double>> effective_weights(const Ast& ast) {
    std::vector<std::pair<char, double>> out;
    flatten(ast.nodes, 1.0, out);
    return out;
}

std::vector<WeightedPhrase> weighted_phrases(const Ast& ast) {
    std::vector<WeightedPhrase> out;
    for (const auto& node : ast.nodes) {
        if (const auto* span = node.text()) {
            for (auto& piece : text::split_any(span->text, ",")) out.push_back({std::move(piece), 1.0});
            continue;
        }
        std::vector<std::pair<char, double>> chars;
        flatten({node}, 1.0, chars);
        std::string phrase;
        phrase.reserve(chars.size());
        for (const auto& [c, _] : chars) phrase += c;
        const auto trimmed = text::trim(phrase);
        if (trimmed.empty()) continue;
        const auto lead = static_cast<std::size_t>(trimmed.data() - phrase.data());
        out.push_back({std::string(trimmed), chars[lead].second});
    }
    return out;
}

std::string compose_prompt(const KeywordSet& keywords) {
    std::string out;
    bool first = true;
    for (const auto& k : keywords) {
        if (!first) out += ", ";
        first = false;
        if (k.weight() != 1.0 || k.phrase().find(',') != std::string::npos) {
            out += '(';
            out += escape(k.phrase());
            out += ':';
            out += format_weight(k.weight());
            out += ')';
        } else {
            out += escape(k.phrase());
        }
    }
    return out;
}

KeywordSet set_weight(const KeywordSet& keywords, std::string_view phrase, double weight, double weight_cap) {
    if (keywords.find(phrase) == nullptr) {
        throw Error(ErrorCode::UnknownKeyword, fmt::format("unknown keyword '{}'", phrase));
    }
    if (weight > weight_cap) {
        throw Error(ErrorCode::WeightAboveCap, fmt::format("weight {} above cap {}", weight, weight_cap));
    }
    const auto key = text::casefold(text::trim(phrase));
    KeywordSet out;
    for (const auto& k : keywords) out.insert(k.key() == key ? k.with_weight(weight) : k);
    return out;
}

}  // namespace promptloop::dsl
