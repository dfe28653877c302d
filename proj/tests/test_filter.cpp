#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fleetlab/filter.hpp"

using namespace fleetlab;

namespace {

// Brute-force reference: a tiny independent AST with its own evaluator,
// rendered to text and fed through the production parser.
struct RefNode {
    enum class Type { cmp, conj, disj } type = Type::cmp;
    int op = 0;  // 0 < ; 1 <= ; 2 > ; 3 >= ; 4 == ; 5 !=
    bool lhs_x = true;
    double lhs = 0;
    bool rhs_x = false;
    double rhs = 0;
    std::unique_ptr<RefNode> a, b;

    bool eval(double v) const {
        switch (type) {
            case Type::conj: return a->eval(v) && b->eval(v);
            case Type::disj: return a->eval(v) || b->eval(v);
            case Type::cmp: {
                double x = lhs_x ? v : lhs;
                double y = rhs_x ? v : rhs;
                if (std::isnan(x) || std::isnan(y)) return false;
                switch (op) {
                    case 0: return x < y;
                    case 1: return x <= y;
                    case 2: return x > y;
                    case 3: return x >= y;
                    case 4: return x == y;
                    default: return x != y;
                }
            }
        }
        return false;
    }

    std::string render() const {
        static const char* ops[] = {"<", "<=", ">", ">=", "==", "!="};
        switch (type) {
            case Type::conj: return "(" + a->render() + " and " + b->render() + ")";
            case Type::disj: return "(" + a->render() + " or " + b->render() + ")";
            case Type::cmp: {
                auto operand = [](bool is_x, double val) {
                    return is_x ? std::string("x") : std::to_string(val);
                };
                return operand(lhs_x, lhs) + " " + ops[op] + " " + operand(rhs_x, rhs);
            }
        }
        return "";
    }
};

std::unique_ptr<RefNode> random_tree(std::mt19937_64& rng, int depth) {
    auto node = std::make_unique<RefNode>();
    if (depth <= 0 || rng() % 3 == 0) {
        node->type = RefNode::Type::cmp;
        node->op = static_cast<int>(rng() % 6);
        node->lhs_x = rng() % 2 == 0;
        node->rhs_x = !node->lhs_x && rng() % 4 == 0;
        auto literal = [&rng] { return static_cast<double>(static_cast<int>(rng() % 2001)) - 1000; };
        if (!node->lhs_x) node->lhs = literal();
        if (!node->rhs_x) node->rhs = literal();
        return node;
    }
    node->type = rng() % 2 ? RefNode::Type::conj : RefNode::Type::disj;
    node->a = random_tree(rng, depth - 1);
    node->b = random_tree(rng, depth - 1);
    return node;
}

}  // namespace

TEST_CASE("threshold filter from the anomaly example") {
    auto f = filter::parse_filter("x > 100");
    CHECK(filter::eval_filter(f, 101) == true);
    CHECK(filter::eval_filter(f, 100) == false);  // strict: "exceeds"
    CHECK(filter::eval_filter(f, 99.5) == false);
}

TEST_CASE("precedence: comparisons bind tighter than and, and tighter than or") {
    auto f = filter::parse_filter("x >= 0 and x <= 1");
    CHECK(filter::eval_filter(f, 0) == true);
    CHECK(filter::eval_filter(f, 1) == true);
    CHECK(filter::eval_filter(f, 1.5) == false);
    CHECK(filter::eval_filter(f, -0.1) == false);

    // or is weaker: (a and b) or c
    auto g = filter::parse_filter("x > 10 and x < 20 or x == 0");
    CHECK(filter::eval_filter(g, 15) == true);
    CHECK(filter::eval_filter(g, 0) == true);
    CHECK(filter::eval_filter(g, 25) == false);

    auto h = filter::parse_filter("x > 10 and (x < 20 or x == 0)");
    CHECK(filter::eval_filter(h, 0) == false);
}

TEST_CASE("unknown identifiers are rejected with an offset") {
    CHECK_THROWS_WITH_AS(filter::parse_filter("y > 1"), doctest::Contains("unknown identifier y"),
                         filter::ParseError);
    try {
        filter::parse_filter("x > 1 and speed < 2");
    } catch (const filter::ParseError& e) {
        CHECK(e.offset == 10);
    }
}

TEST_CASE("syntax errors carry byte offsets") {
    CHECK_THROWS_AS(filter::parse_filter(""), filter::ParseError);
    CHECK_THROWS_AS(filter::parse_filter("x >"), filter::ParseError);
    CHECK_THROWS_AS(filter::parse_filter("x > 1 and"), filter::ParseError);
    CHECK_THROWS_AS(filter::parse_filter("(x > 1"), filter::ParseError);
    CHECK_THROWS_AS(filter::parse_filter("x > 1)"), filter::ParseError);
    CHECK_THROWS_AS(filter::parse_filter("x ~ 1"), filter::ParseError);
}

TEST_CASE("nan input fails every comparison") {
    double nan = std::nan("");
    CHECK(filter::eval_filter(filter::parse_filter("x > 100"), nan) == false);
    CHECK(filter::eval_filter(filter::parse_filter("x < 100"), nan) == false);
    CHECK(filter::eval_filter(filter::parse_filter("x == x"), nan) == false);
    CHECK(filter::eval_filter(filter::parse_filter("x != 0"), nan) == false);
    CHECK(filter::eval_filter(filter::parse_filter("x > 1 or x <= 1"), nan) == false);
}

TEST_CASE("agreement with the brute-force reference on random expressions") {
    std::mt19937_64 rng(20260809);
    for (int trial = 0; trial < 300; ++trial) {
        auto ref = random_tree(rng, 4);
        std::string text = ref->render();
        CAPTURE(text);
        filter::FilterExpr parsed;
        REQUIRE_NOTHROW(parsed = filter::parse_filter(text));
        for (int probe = 0; probe < 25; ++probe) {
            double v = static_cast<double>(static_cast<int>(rng() % 2001)) - 1000;
            CAPTURE(v);
            REQUIRE(filter::eval_filter(parsed, v) == ref->eval(v));
        }
        for (double v : {-1000.0, -1.0, 0.0, 1.0, 1000.0}) {
            REQUIRE(filter::eval_filter(parsed, v) == ref->eval(v));
        }
    }
}
