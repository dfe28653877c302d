#include "fleetlab/filter.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>

namespace fleetlab::filter {

namespace {

struct Token {
    enum class Type { x, number, cmp, kw_and, kw_or, lparen, rparen, end } type;
    Cmp cmp = Cmp::lt;
    double value = 0;
    std::size_t offset = 0;
};

class Lexer {
public:
    explicit Lexer(std::string_view text) : text_(text) {}

    Token next() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        Token tok;
        tok.offset = pos_;
        if (pos_ >= text_.size()) {
            tok.type = Token::Type::end;
            return tok;
        }
        char c = text_[pos_];
        if (c == '(') {
            ++pos_;
            tok.type = Token::Type::lparen;
            return tok;
        }
        if (c == ')') {
            ++pos_;
            tok.type = Token::Type::rparen;
            return tok;
        }
        if (c == '<' || c == '>' || c == '=' || c == '!') {
            bool has_eq = pos_ + 1 < text_.size() && text_[pos_ + 1] == '=';
            tok.type = Token::Type::cmp;
            switch (c) {
                case '<': tok.cmp = has_eq ? Cmp::le : Cmp::lt; break;
                case '>': tok.cmp = has_eq ? Cmp::ge : Cmp::gt; break;
                case '=':
                    if (!has_eq) throw ParseError("expected '==' ", pos_);
                    tok.cmp = Cmp::eq;
                    break;
                case '!':
                    if (!has_eq) throw ParseError("expected '!='", pos_);
                    tok.cmp = Cmp::ne;
                    break;
            }
            pos_ += has_eq ? 2 : 1;
            return tok;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '+') {
            const char* start = text_.data() + pos_;
            char* end = nullptr;
            double v = std::strtod(start, &end);
            if (end == start || !std::isfinite(v)) throw ParseError("malformed number", pos_);
            pos_ += static_cast<std::size_t>(end - start);
            tok.type = Token::Type::number;
            tok.value = v;
            return tok;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t start = pos_;
            while (pos_ < text_.size() &&
                   (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
                ++pos_;
            std::string_view word = text_.substr(start, pos_ - start);
            if (word == "x") tok.type = Token::Type::x;
            else if (word == "and") tok.type = Token::Type::kw_and;
            else if (word == "or") tok.type = Token::Type::kw_or;
            else throw ParseError("unknown identifier " + std::string(word), start);
            return tok;
        }
        throw ParseError(std::string("unexpected character '") + c + "'", pos_);
    }

private:
    std::string_view text_;
    std::size_t pos_ = 0;
};

class Parser {
public:
    explicit Parser(std::string_view text) : lexer_(text) { advance(); }

    NodePtr parse() {
        NodePtr root = parse_or();
        if (tok_.type != Token::Type::end) throw ParseError("trailing input", tok_.offset);
        return root;
    }

private:
    void advance() { tok_ = lexer_.next(); }

    NodePtr parse_or() {
        NodePtr left = parse_and();
        while (tok_.type == Token::Type::kw_or) {
            advance();
            NodePtr right = parse_and();
            auto node = std::make_shared<Node>();
            node->type = Node::Type::disj;
            node->left = left;
            node->right = right;
            left = node;
        }
        return left;
    }

    NodePtr parse_and() {
        NodePtr left = parse_term();
        while (tok_.type == Token::Type::kw_and) {
            advance();
            NodePtr right = parse_term();
            auto node = std::make_shared<Node>();
            node->type = Node::Type::conj;
            node->left = left;
            node->right = right;
            left = node;
        }
        return left;
    }

    NodePtr parse_term() {
        if (tok_.type == Token::Type::lparen) {
            advance();
            NodePtr inner = parse_or();
            if (tok_.type != Token::Type::rparen) throw ParseError("expected ')'", tok_.offset);
            advance();
            return inner;
        }
        return parse_comparison();
    }

    NodePtr parse_comparison() {
        auto node = std::make_shared<Node>();
        node->type = Node::Type::cmp;
        parse_operand(node->lhs_is_x, node->lhs_value);
        if (tok_.type != Token::Type::cmp)
            throw ParseError("expected comparison operator", tok_.offset);
        node->op = tok_.cmp;
        advance();
        parse_operand(node->rhs_is_x, node->rhs_value);
        return node;
    }

    void parse_operand(bool& is_x, double& value) {
        if (tok_.type == Token::Type::x) {
            is_x = true;
        } else if (tok_.type == Token::Type::number) {
            is_x = false;
            value = tok_.value;
        } else {
            throw ParseError("expected x or a number", tok_.offset);
        }
        advance();
    }

    Lexer lexer_;
    Token tok_;
};

bool eval_node(const Node& n, double v) {
    switch (n.type) {
        case Node::Type::conj:
            return eval_node(*n.left, v) && eval_node(*n.right, v);
        case Node::Type::disj:
            return eval_node(*n.left, v) || eval_node(*n.right, v);
        case Node::Type::cmp: {
            double lhs = n.lhs_is_x ? v : n.lhs_value;
            double rhs = n.rhs_is_x ? v : n.rhs_value;
            if (std::isnan(lhs) || std::isnan(rhs)) return false;
            switch (n.op) {
                case Cmp::lt: return lhs < rhs;
                case Cmp::le: return lhs <= rhs;
                case Cmp::gt: return lhs > rhs;
                case Cmp::ge: return lhs >= rhs;
                case Cmp::eq: return lhs == rhs;
                case Cmp::ne: return lhs != rhs;
            }
        }
    }
    return false;
}

const char* cmp_text(Cmp op) {
    switch (op) {
        case Cmp::lt: return "<";
        case Cmp::le: return "<=";
        case Cmp::gt: return ">";
        case Cmp::ge: return ">=";
        case Cmp::eq: return "==";
        case Cmp::ne: return "!=";
    }
    return "?";
}

void render(const Node& n, std::string& out) {
    switch (n.type) {
        case Node::Type::conj:
        case Node::Type::disj:
            out += "(";
            render(*n.left, out);
            out += n.type == Node::Type::conj ? " and " : " or ";
            render(*n.right, out);
            out += ")";
            break;
        case Node::Type::cmp: {
            auto operand = [&](bool is_x, double v) {
                if (is_x) out += "x";
                else out += std::to_string(v);
            };
            operand(n.lhs_is_x, n.lhs_value);
            out += " ";
            out += cmp_text(n.op);
            out += " ";
            operand(n.rhs_is_x, n.rhs_value);
            break;
        }
    }
}

}  // namespace

FilterExpr parse_filter(std::string_view text) {
    if (text.empty()) throw ParseError("empty filter", 0);
    Parser parser(text);
    return FilterExpr{parser.parse(), std::string(text)};
}

bool eval_filter(const FilterExpr& f, double v) {
    return f.root && eval_node(*f.root, v);
}

std::string to_string(const FilterExpr& f) {
    std::string out;
    if (f.root) render(*f.root, out);
    return out;
}

}  // namespace fleetlab::filter
