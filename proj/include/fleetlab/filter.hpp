#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fleetlab::filter {

// Boolean predicate over one sample value bound to the variable x.
// Grammar (precedence low to high): or, and, comparison; parentheses group
// boolean expressions. Comparison operands are x or numeric literals.

enum class Cmp { lt, le, gt, ge, eq, ne };

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
    enum class Type { cmp, conj, disj } type;
    // cmp
    Cmp op = Cmp::lt;
    bool lhs_is_x = false;
    double lhs_value = 0;
    bool rhs_is_x = false;
    double rhs_value = 0;
    // conj / disj
    NodePtr left;
    NodePtr right;
};

struct FilterExpr {
    NodePtr root;
    std::string source;
};

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " at offset " + std::to_string(offset)), offset(offset) {}
    std::size_t offset;
};

FilterExpr parse_filter(std::string_view text);

/// Total for any finite v; every comparison involving NaN is false.
bool eval_filter(const FilterExpr& f, double v);

std::string to_string(const FilterExpr& f);

}  // namespace fleetlab::filter
