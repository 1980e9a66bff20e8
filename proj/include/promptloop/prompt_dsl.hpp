#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "promptloop/core_model.hpp"

/// Attention-weight prompt syntax.
///
///   (X)      X weighted by 1.1
///   [X]      X weighted by 1/1.1
///   (X:w)    X weighted by the decimal literal w
///   \( \) \[ \] \\   literal delimiters
///
/// Nesting multiplies. A ':' is only treated as a weight separator when it is
/// the last ':' in the trailing text of a '(' group and what follows it (after
/// trimming) starts like a number; otherwise it is literal text.
namespace promptloop::dsl {

inline constexpr double kParenWeight = 1.1;
inline constexpr double kBracketWeight = 1.0 / 1.1;
inline constexpr std::size_t kMaxNesting = 256;

struct Node;

struct TextSpan {
    std::string text;
    friend bool operator==(const TextSpan&, const TextSpan&) = default;
};

struct Weighted {
    std::vector<Node> inner;
    double weight = 1.0;
    friend bool operator==(const Weighted&, const Weighted&) = default;
};

struct Node {
    std::variant<TextSpan, Weighted> value;

    Node(TextSpan t) : value(std::move(t)) {}  // NOLINT(google-explicit-constructor)
    Node(Weighted w) : value(std::move(w)) {}  // NOLINT(google-explicit-constructor)

    [[nodiscard]] const TextSpan* text() const noexcept { return std::get_if<TextSpan>(&value); }
    [[nodiscard]] const Weighted* weighted() const noexcept { return std::get_if<Weighted>(&value); }

    friend bool operator==(const Node&, const Node&) = default;
};

struct Ast {
    std::vector<Node> nodes;
    friend bool operator==(const Ast&, const Ast&) = default;
};

/// Throws ParseError{UnbalancedDelimiter | InvalidWeightLiteral | NestingTooDeep}.
Ast parse(std::string_view text);

/// Canonical text: the AST is normalized first, every weighted node is written
/// as (X:w) with w at up to 4 fractional digits, and delimiters are escaped.
std::string render(const Ast& ast);

/// Collapses single-child weight chains by multiplying, drops weight-1.0 and
/// empty weighted nodes, and merges adjacent text spans.
Ast normalize(const Ast& ast);

/// Escapes ( ) [ ] and backslash.
std::string escape(std::string_view text);

/// Structural equality with weights compared within `weight_tol`.
bool equivalent(const Ast& a, const Ast& b, double weight_tol);

/// Every byte of visible text paired with the product of its enclosing weights.
std::vector<std::pair<char, double>> effective_weights(const Ast& ast);

/// A phrase recovered from a prompt together with its effective weight.
struct WeightedPhrase {
    std::string phrase;
    double weight = 1.0;
    friend bool operator==(const WeightedPhrase&, const WeightedPhrase&) = default;
};

/// Recovers comma-separated phrases from a parsed prompt. Top-level text is
/// split on commas; every top-level group is one phrase whose weight is the
/// effective weight of its first visible character.
std::vector<WeightedPhrase> weighted_phrases(const Ast& ast);

/// Joins keywords with ", ". Weighted keywords, and keywords whose phrase holds
/// a comma, are written as (phrase:w) so the phrase list can be recovered.
std::string compose_prompt(const KeywordSet& keywords);

/// Throws Error{UnknownKeyword} or Error{WeightAboveCap}.
KeywordSet set_weight(const KeywordSet& keywords, std::string_view phrase, double weight, double weight_cap);

}  // namespace promptloop::dsl
