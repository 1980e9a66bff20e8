#include "doctest.h"

#include <random>

#include "promptloop/prompt_dsl.hpp"
#include "test_support.hpp"

using namespace promptloop;
using namespace promptloop::dsl;

namespace {

Node text(std::string s) { return TextSpan{std::move(s)}; }
Node wrap(std::vector<Node> inner, double w) { return Weighted{std::move(inner), w}; }

ErrorCode parse_error(std::string_view s, std::size_t* pos = nullptr) {
    try {
        parse(s);
    } catch (const ParseError& e) {
        if (pos) *pos = e.position();
        return e.code();
    }
    FAIL("expected a parse error for: " << s);
    return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("parse examples") {
    CHECK(parse("(cars:1.1)") == Ast{{wrap({text("cars")}, 1.1)}});
    CHECK(parse("plain text") == Ast{{text("plain text")}});
    CHECK(parse("((snow))") == Ast{{wrap({wrap({text("snow")}, 1.1)}, 1.1)}});
    CHECK(parse("[fog]") == Ast{{wrap({text("fog")}, 1.0 / 1.1)}});
    CHECK(parse("") == Ast{});
}

TEST_CASE("nested groups multiply") {
    const auto w = effective_weights(parse("((snow))"));
    REQUIRE(w.size() == 4);
    // Oracle: two enclosing groups of 1.1 each.
    for (const auto& [c, weight] : w) CHECK(weight == doctest::Approx(1.1 * 1.1).epsilon(1e-15));
    const auto cancel = effective_weights(parse("([x])"));
    CHECK(std::abs(cancel[0].second - 1.0) < 1e-15);
}

TEST_CASE("colon handling") {
    CHECK(parse("(a:b)") == Ast{{wrap({text("a:b")}, 1.1)}});
    CHECK(parse("(time: 12:30)") == Ast{{wrap({text("time: 12")}, 30.0)}});
    CHECK(parse("a:1") == Ast{{text("a:1")}});
    CHECK(parse("(x: 1.5 )") == Ast{{wrap({text("x")}, 1.5)}});
    CHECK(parse("(a:1:2)") == Ast{{wrap({text("a:1")}, 2.0)}});
}

TEST_CASE("escapes") {
    CHECK(parse(R"(a \(b\) \[c\] \\)") == Ast{{text(R"(a (b) [c] \)")}});
    CHECK(parse(R"(\x)") == Ast{{text(R"(\x)")}});
    CHECK(parse("end\\") == Ast{{text("end\\")}});
}

TEST_CASE("parse errors") {
    std::size_t pos = 0;
    CHECK(parse_error("(a:0)") == ErrorCode::InvalidWeightLiteral);
    CHECK(parse_error("(a:-1)") == ErrorCode::InvalidWeightLiteral);
    CHECK(parse_error("(a:1.2.3)") == ErrorCode::InvalidWeightLiteral);
    CHECK(parse_error("(a:1e5)") == ErrorCode::InvalidWeightLiteral);
    CHECK(parse_error("((a)", &pos) == ErrorCode::UnbalancedDelimiter);
    CHECK(pos == 4);
    CHECK(parse_error("a)", &pos) == ErrorCode::UnbalancedDelimiter);
    CHECK(pos == 1);
    CHECK(parse_error("(a]", &pos) == ErrorCode::UnbalancedDelimiter);
    CHECK(pos == 2);
    CHECK(parse_error(std::string(300, '(')) == ErrorCode::NestingTooDeep);
    try {
        parse("((a)");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()) == "UnbalancedDelimiter at byte 4");
    }
}

TEST_CASE("render examples") {
    CHECK(render(Ast{{wrap({text("cars")}, 1.1)}}) == "(cars:1.1)");
    CHECK(render(Ast{{text("a (b)")}}) == R"(a \(b\))");
    CHECK(render(Ast{{wrap({text("x")}, 1.25)}}) == "(x:1.25)");
    CHECK(render(Ast{{wrap({text("x")}, 2.0)}}) == "(x:2)");
    CHECK(render(Ast{{wrap({text("x")}, 1.0 / 1.1)}}) == "(x:0.9091)");
    CHECK(render(Ast{{wrap({text("x")}, 1.0)}}) == "x");
}

TEST_CASE("normalize examples") {
    const Node t = text("t");
    const auto n = normalize(Ast{{wrap({wrap({t}, 1.1)}, 1.1)}});
    REQUIRE(n.nodes.size() == 1);
    CHECK(n.nodes[0].weighted()->weight == doctest::Approx(1.21).epsilon(1e-15));
    CHECK(normalize(Ast{{wrap({t}, 1.0)}}) == Ast{{t}});
    CHECK(normalize(Ast{{text("a"), text("b")}}) == Ast{{text("ab")}});
    CHECK(normalize(Ast{{text("a"), wrap({}, 2.0), text("b")}}) == Ast{{text("ab")}});
}

TEST_CASE("compose_prompt examples and phrase recovery") {
    KeywordSet ks({Keyword("cars", 1.1), Keyword("neon signs")});
    CHECK(compose_prompt(ks) == "(cars:1.1), neon signs");
    CHECK(compose_prompt(KeywordSet({Keyword("castle")})) == "castle");
    CHECK(compose_prompt(KeywordSet({Keyword("a(b)")})) == R"(a\(b\))");

    KeywordSet mixed({Keyword("cozy, rustic cabin"), Keyword("snow", 1.21), Keyword("a(b)", 1.4641),
                      Keyword("time: 12:30")});
    const auto phrases = weighted_phrases(parse(compose_prompt(mixed)));
    REQUIRE(phrases.size() == mixed.size());
    for (std::size_t i = 0; i < phrases.size(); ++i) {
        CHECK(phrases[i].phrase == mixed[i].phrase());
        CHECK(phrases[i].weight == mixed[i].weight());
    }
}

TEST_CASE("set_weight") {
    KeywordSet ks({Keyword("cars")});
    CHECK(set_weight(ks, "cars", 1.1, 1.5) == KeywordSet({Keyword("cars", 1.1)}));
    CHECK(set_weight(ks, "Cars", 1.1, 1.5) == KeywordSet({Keyword("cars", 1.1)}));
    CHECK_THROWS_WITH_AS(set_weight(ks, "bikes", 1.1, 1.5), doctest::Contains("unknown"), Error);
    try {
        set_weight(ks, "cars", 1.6, 1.5);
        FAIL("expected WeightAboveCap");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::WeightAboveCap);
    }
}

TEST_CASE("property: round trip on generated ASTs") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 2000; ++i) {
        const auto ast = testsupport::random_ast(rng);
        const auto expected = normalize(ast);
        const auto back = parse(render(ast));
        CHECK_MESSAGE(equivalent(back, expected, testsupport::kRenderTolerance), render(ast));
    }
}

TEST_CASE("property: normalize preserves effective weights") {
    std::mt19937_64 rng(8);
    for (int i = 0; i < 2000; ++i) {
        const auto ast = testsupport::random_ast(rng);
        const auto a = effective_weights(ast);
        const auto b = effective_weights(normalize(ast));
        REQUIRE(a.size() == b.size());
        for (std::size_t k = 0; k < a.size(); ++k) {
            CHECK(a[k].first == b[k].first);
            CHECK(std::abs(a[k].second - b[k].second) <= 1e-12 * std::max(1.0, a[k].second));
        }
    }
}

TEST_CASE("property: fuzzed strings parse or fail cleanly, and accepted ones are stable") {
    std::mt19937_64 rng(9);
    for (int i = 0; i < 5000; ++i) {
        const auto s = testsupport::fuzz_string(rng);
        try {
            const auto ast = parse(s);
            const auto again = parse(render(ast));
            CHECK(equivalent(normalize(again), normalize(ast), testsupport::kRenderTolerance));
        } catch (const ParseError& e) {
            CHECK(e.position() <= s.size());
        }
    }
}
