#include "fleetlab/script.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <set>

namespace fleetlab::script {

const char* Value::type_name() const {
    switch (data.index()) {
        case 0: return "null";
        case 1: return "number";
        case 2: return "bool";
        case 3: return "string";
        case 4: return "vector";
    }
    return "?";
}

namespace {

// ---------------------------------------------------------------------------
// Lexer

enum class Tok {
    ident, number, string, kw_fn, kw_let, kw_if, kw_else, kw_while, kw_return,
    kw_true, kw_false, kw_null,
    plus, minus, star, slash, percent,
    eq_eq, bang_eq, lt, le, gt, ge, amp_amp, pipe_pipe, bang, assign,
    lparen, rparen, lbrace, rbrace, lbracket, rbracket, comma, semicolon,
    end,
};

struct Token {
    Tok type = Tok::end;
    std::string text;
    double number = 0;
    std::size_t offset = 0;
};

class Lexer {
public:
    explicit Lexer(std::string_view src) : src_(src) {}

    Token next() {
        skip_ws();
        Token t;
        t.offset = pos_;
        if (pos_ >= src_.size()) return t;
        char c = src_[pos_];

        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t start = pos_;
            while (pos_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) ||
                                          src_[pos_] == '_'))
                ++pos_;
            t.text = std::string(src_.substr(start, pos_ - start));
            if (t.text == "fn") t.type = Tok::kw_fn;
            else if (t.text == "let") t.type = Tok::kw_let;
            else if (t.text == "if") t.type = Tok::kw_if;
            else if (t.text == "else") t.type = Tok::kw_else;
            else if (t.text == "while") t.type = Tok::kw_while;
            else if (t.text == "return") t.type = Tok::kw_return;
            else if (t.text == "true") t.type = Tok::kw_true;
            else if (t.text == "false") t.type = Tok::kw_false;
            else if (t.text == "null") t.type = Tok::kw_null;
            else t.type = Tok::ident;
            return t;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) ||
            (c == '.' && pos_ + 1 < src_.size() &&
             std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
            const char* start = src_.data() + pos_;
            char* endp = nullptr;
            t.number = std::strtod(start, &endp);
            if (endp == start || !std::isfinite(t.number))
                throw ParseError("malformed number", pos_);
            pos_ += static_cast<std::size_t>(endp - start);
            t.type = Tok::number;
            return t;
        }
        if (c == '"') {
            ++pos_;
            std::string out;
            while (pos_ < src_.size() && src_[pos_] != '"') {
                char d = src_[pos_];
                if (d == '\\') {
                    if (pos_ + 1 >= src_.size()) throw ParseError("unterminated escape", pos_);
                    char e = src_[pos_ + 1];
                    switch (e) {
                        case 'n': out.push_back('\n'); break;
                        case 't': out.push_back('\t'); break;
                        case '"': out.push_back('"'); break;
                        case '\\': out.push_back('\\'); break;
                        default: throw ParseError("unknown escape", pos_);
                    }
                    pos_ += 2;
                } else {
                    out.push_back(d);
                    ++pos_;
                }
            }
            if (pos_ >= src_.size()) throw ParseError("unterminated string", t.offset);
            ++pos_;
            t.type = Tok::string;
            t.text = std::move(out);
            return t;
        }

        auto two = [&](char second) {
            return pos_ + 1 < src_.size() && src_[pos_ + 1] == second;
        };
        switch (c) {
            case '+': ++pos_; t.type = Tok::plus; return t;
            case '-': ++pos_; t.type = Tok::minus; return t;
            case '*': ++pos_; t.type = Tok::star; return t;
            case '/': ++pos_; t.type = Tok::slash; return t;
            case '%': ++pos_; t.type = Tok::percent; return t;
            case '(': ++pos_; t.type = Tok::lparen; return t;
            case ')': ++pos_; t.type = Tok::rparen; return t;
            case '{': ++pos_; t.type = Tok::lbrace; return t;
            case '}': ++pos_; t.type = Tok::rbrace; return t;
            case '[': ++pos_; t.type = Tok::lbracket; return t;
            case ']': ++pos_; t.type = Tok::rbracket; return t;
            case ',': ++pos_; t.type = Tok::comma; return t;
            case ';': ++pos_; t.type = Tok::semicolon; return t;
            case '=':
                if (two('=')) { pos_ += 2; t.type = Tok::eq_eq; }
                else { ++pos_; t.type = Tok::assign; }
                return t;
            case '!':
                if (two('=')) { pos_ += 2; t.type = Tok::bang_eq; }
                else { ++pos_; t.type = Tok::bang; }
                return t;
            case '<':
                if (two('=')) { pos_ += 2; t.type = Tok::le; }
                else { ++pos_; t.type = Tok::lt; }
                return t;
            case '>':
                if (two('=')) { pos_ += 2; t.type = Tok::ge; }
                else { ++pos_; t.type = Tok::gt; }
                return t;
            case '&':
                if (two('&')) { pos_ += 2; t.type = Tok::amp_amp; return t; }
                break;
            case '|':
                if (two('|')) { pos_ += 2; t.type = Tok::pipe_pipe; return t; }
                break;
        }
        throw ParseError(std::string("unexpected character '") + c + "'", pos_);
    }

private:
    void skip_ws() {
        while (pos_ < src_.size()) {
            char c = src_[pos_];
            if (c == '#') {
                while (pos_ < src_.size() && src_[pos_] != '\n') ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::string_view src_;
    std::size_t pos_ = 0;
};

Op binary_op(Tok t) {
    switch (t) {
        case Tok::plus: return Op::add;
        case Tok::minus: return Op::sub;
        case Tok::star: return Op::mul;
        case Tok::slash: return Op::div;
        case Tok::percent: return Op::mod;
        case Tok::eq_eq: return Op::eq;
        case Tok::bang_eq: return Op::ne;
        case Tok::lt: return Op::lt;
        case Tok::le: return Op::le;
        case Tok::gt: return Op::gt;
        case Tok::ge: return Op::ge;
        case Tok::amp_amp: return Op::logic_and;
        case Tok::pipe_pipe: return Op::logic_or;
        default: return Op::add;
    }
}

// ---------------------------------------------------------------------------
// Parser

class Parser {
public:
    explicit Parser(std::string_view src) : lexer_(src) { advance(); }

    Program parse() {
        Program prog;
        while (tok_.type != Tok::end) {
            expect(Tok::kw_fn, "expected 'fn'");
            Function fn = parse_function();
            if (prog.functions.count(fn.name))
                throw ParseError("duplicate function " + fn.name, tok_.offset);
            prog.functions.emplace(fn.name, std::move(fn));
        }
        return prog;
    }

private:
    void advance() { tok_ = lexer_.next(); }

    void expect(Tok t, const char* what) {
        if (tok_.type != t) throw ParseError(what, tok_.offset);
        advance();
    }

    Function parse_function() {
        Function fn;
        if (tok_.type != Tok::ident) throw ParseError("expected function name", tok_.offset);
        fn.name = tok_.text;
        advance();
        expect(Tok::lparen, "expected '('");
        while (tok_.type != Tok::rparen) {
            if (tok_.type != Tok::ident) throw ParseError("expected parameter name", tok_.offset);
            fn.params.push_back(tok_.text);
            advance();
            if (tok_.type == Tok::comma) advance();
            else if (tok_.type != Tok::rparen) throw ParseError("expected ',' or ')'", tok_.offset);
        }
        advance();
        fn.body = parse_block();
        return fn;
    }

    std::vector<StmtPtr> parse_block() {
        expect(Tok::lbrace, "expected '{'");
        std::vector<StmtPtr> stmts;
        while (tok_.type != Tok::rbrace) {
            if (tok_.type == Tok::end) throw ParseError("unterminated block", tok_.offset);
            stmts.push_back(parse_stmt());
        }
        advance();
        return stmts;
    }

    StmtPtr parse_stmt() {
        auto stmt = std::make_unique<Stmt>();
        stmt->offset = tok_.offset;
        switch (tok_.type) {
            case Tok::kw_let: {
                advance();
                if (tok_.type != Tok::ident) throw ParseError("expected variable name", tok_.offset);
                stmt->type = Stmt::Type::let;
                stmt->target = tok_.text;
                advance();
                expect(Tok::assign, "expected '='");
                stmt->value = parse_expr();
                expect(Tok::semicolon, "expected ';'");
                return stmt;
            }
            case Tok::kw_if: {
                advance();
                expect(Tok::lparen, "expected '('");
                stmt->type = Stmt::Type::if_else;
                stmt->cond = parse_expr();
                expect(Tok::rparen, "expected ')'");
                stmt->body = parse_block();
                if (tok_.type == Tok::kw_else) {
                    advance();
                    if (tok_.type == Tok::kw_if) {
                        stmt->else_body.push_back(parse_stmt());
                    } else {
                        stmt->else_body = parse_block();
                    }
                }
                return stmt;
            }
            case Tok::kw_while: {
                advance();
                expect(Tok::lparen, "expected '('");
                stmt->type = Stmt::Type::while_loop;
                stmt->cond = parse_expr();
                expect(Tok::rparen, "expected ')'");
                stmt->body = parse_block();
                return stmt;
            }
            case Tok::kw_return: {
                advance();
                stmt->type = Stmt::Type::ret;
                if (tok_.type != Tok::semicolon) stmt->value = parse_expr();
                expect(Tok::semicolon, "expected ';'");
                return stmt;
            }
            case Tok::ident: {
                // Could be assignment, indexed assignment, or expression.
                Token saved = tok_;
                advance();
                if (tok_.type == Tok::assign) {
                    advance();
                    stmt->type = Stmt::Type::assign;
                    stmt->target = saved.text;
                    stmt->value = parse_expr();
                    expect(Tok::semicolon, "expected ';'");
                    return stmt;
                }
                if (tok_.type == Tok::lbracket) {
                    advance();
                    ExprPtr idx = parse_expr();
                    expect(Tok::rbracket, "expected ']'");
                    if (tok_.type == Tok::assign) {
                        advance();
                        stmt->type = Stmt::Type::index_assign;
                        stmt->target = saved.text;
                        stmt->index = std::move(idx);
                        stmt->value = parse_expr();
                        expect(Tok::semicolon, "expected ';'");
                        return stmt;
                    }
                    // It was an index expression; resume as expression statement.
                    auto base = std::make_unique<Expr>();
                    base->type = Expr::Type::var;
                    base->text = saved.text;
                    base->offset = saved.offset;
                    auto ix = std::make_unique<Expr>();
                    ix->type = Expr::Type::index;
                    ix->offset = saved.offset;
                    ix->children.push_back(std::move(base));
                    ix->children.push_back(std::move(idx));
                    stmt->type = Stmt::Type::expr;
                    stmt->value = parse_expr_continue(std::move(ix));
                    expect(Tok::semicolon, "expected ';'");
                    return stmt;
                }
                stmt->type = Stmt::Type::expr;
                stmt->value = parse_expr_from_ident(saved);
                expect(Tok::semicolon, "expected ';'");
                return stmt;
            }
            default: {
                stmt->type = Stmt::Type::expr;
                stmt->value = parse_expr();
                expect(Tok::semicolon, "expected ';'");
                return stmt;
            }
        }
    }

    // Expression parsing; precedence from low to high:
    //   || ; && ; == != < <= > >= ; + - ; * / % ; unary ! - ; postfix [] () ; primary
    ExprPtr parse_expr() { return parse_or(); }

    ExprPtr parse_expr_from_ident(const Token& ident) {
        ExprPtr primary = finish_primary_ident(ident);
        return parse_expr_continue(std::move(primary));
    }

    // Continues climbing the precedence ladder with an already-parsed
    // postfix-level expression as the left-hand side.
    ExprPtr parse_expr_continue(ExprPtr lhs) {
        lhs = parse_postfix_ops(std::move(lhs));
        lhs = parse_binary_rhs(std::move(lhs), 1);
        return lhs;
    }

    static int precedence(Tok t) {
        switch (t) {
            case Tok::pipe_pipe: return 1;
            case Tok::amp_amp: return 2;
            case Tok::eq_eq: case Tok::bang_eq: case Tok::lt: case Tok::le:
            case Tok::gt: case Tok::ge: return 3;
            case Tok::plus: case Tok::minus: return 4;
            case Tok::star: case Tok::slash: case Tok::percent: return 5;
            default: return 0;
        }
    }

    ExprPtr parse_or() {
        ExprPtr lhs = parse_unary();
        return parse_binary_rhs(std::move(lhs), 1);
    }

    ExprPtr parse_binary_rhs(ExprPtr lhs, int min_prec) {
        while (true) {
            int prec = precedence(tok_.type);
            if (prec < min_prec || prec == 0) return lhs;
            Tok op = tok_.type;
            std::size_t off = tok_.offset;
            advance();
            ExprPtr rhs = parse_unary();
            while (precedence(tok_.type) > prec) {
                rhs = parse_binary_rhs(std::move(rhs), precedence(tok_.type));
            }
            auto node = std::make_unique<Expr>();
            node->type = Expr::Type::binary;
            node->op = binary_op(op);
            node->offset = off;
            node->children.push_back(std::move(lhs));
            node->children.push_back(std::move(rhs));
            lhs = std::move(node);
        }
    }

    ExprPtr parse_unary() {
        if (tok_.type == Tok::minus || tok_.type == Tok::bang) {
            auto node = std::make_unique<Expr>();
            node->type = Expr::Type::unary;
            node->op = tok_.type == Tok::bang ? Op::logic_not : Op::neg;
            node->offset = tok_.offset;
            advance();
            node->children.push_back(parse_unary());
            return node;
        }
        return parse_postfix();
    }

    ExprPtr parse_postfix() { return parse_postfix_ops(parse_primary()); }

    ExprPtr parse_postfix_ops(ExprPtr base) {
        while (tok_.type == Tok::lbracket) {
            advance();
            ExprPtr idx = parse_expr();
            expect(Tok::rbracket, "expected ']'");
            auto node = std::make_unique<Expr>();
            node->type = Expr::Type::index;
            node->offset = base->offset;
            node->children.push_back(std::move(base));
            node->children.push_back(std::move(idx));
            base = std::move(node);
        }
        return base;
    }

    ExprPtr finish_primary_ident(const Token& ident) {
        auto node = std::make_unique<Expr>();
        node->offset = ident.offset;
        if (tok_.type == Tok::lparen) {
            advance();
            node->type = Expr::Type::call;
            node->text = ident.text;
            while (tok_.type != Tok::rparen) {
                node->children.push_back(parse_expr());
                if (tok_.type == Tok::comma) advance();
                else if (tok_.type != Tok::rparen)
                    throw ParseError("expected ',' or ')'", tok_.offset);
            }
            advance();
        } else {
            node->type = Expr::Type::var;
            node->text = ident.text;
        }
        return node;
    }

    ExprPtr parse_primary() {
        auto node = std::make_unique<Expr>();
        node->offset = tok_.offset;
        switch (tok_.type) {
            case Tok::number:
                node->type = Expr::Type::number;
                node->number = tok_.number;
                advance();
                return node;
            case Tok::string:
                node->type = Expr::Type::string_lit;
                node->text = tok_.text;
                advance();
                return node;
            case Tok::kw_true:
            case Tok::kw_false:
                node->type = Expr::Type::boolean;
                node->boolean = tok_.type == Tok::kw_true;
                advance();
                return node;
            case Tok::kw_null:
                node->type = Expr::Type::null_lit;
                advance();
                return node;
            case Tok::ident: {
                Token saved = tok_;
                advance();
                return finish_primary_ident(saved);
            }
            case Tok::lparen: {
                advance();
                ExprPtr inner = parse_expr();
                expect(Tok::rparen, "expected ')'");
                return inner;
            }
            case Tok::lbracket: {
                advance();
                node->type = Expr::Type::vec_lit;
                while (tok_.type != Tok::rbracket) {
                    node->children.push_back(parse_expr());
                    if (tok_.type == Tok::comma) advance();
                    else if (tok_.type != Tok::rbracket)
                        throw ParseError("expected ',' or ']'", tok_.offset);
                }
                advance();
                return node;
            }
            default:
                throw ParseError("expected expression", tok_.offset);
        }
    }

    Lexer lexer_;
    Token tok_;
};

const std::set<std::string, std::less<>>& restricted_names() {
    static const std::set<std::string, std::less<>> names = {
        // files
        "open", "fopen", "file", "read", "write", "read_file", "write_file", "readfile",
        "writefile", "remove", "unlink", "mkdir", "rmdir", "chmod",
        // network
        "socket", "connect", "bind", "listen", "accept", "send", "recv", "http", "fetch", "url",
        "request",
        // processes
        "exec", "spawn", "system", "shell", "popen", "fork", "kill", "subprocess",
        // environment
        "getenv", "setenv", "environ", "env", "putenv",
        // clock manipulation
        "settime", "set_time", "clock_settime", "adjtime", "settimeofday",
        // module loading
        "import", "include", "require", "load", "eval", "reload", "dlopen", "module",
    };
    return names;
}

}  // namespace

Program parse_program(std::string_view source) {
    Parser parser(source);
    return parser.parse();
}

bool is_restricted_name(std::string_view name) {
    return restricted_names().count(name) > 0;
}

std::vector<std::string> scan_restricted_names(std::string_view source) {
    std::vector<std::string> found;
    std::set<std::string> seen;
    Lexer lexer(source);
    while (true) {
        Token t = lexer.next();  // relies on the source already parsing cleanly
        if (t.type == Tok::end) break;
        if (t.type == Tok::ident && is_restricted_name(t.text) && seen.insert(t.text).second)
            found.push_back(t.text);
    }
    return found;
}

// ---------------------------------------------------------------------------
// Interpreter

struct Interpreter::Scope {
    std::map<std::string, Value> vars;
    Scope* parent = nullptr;

    Value* find(const std::string& name) {
        for (Scope* s = this; s != nullptr; s = s->parent) {
            auto it = s->vars.find(name);
            if (it != s->vars.end()) return &it->second;
        }
        return nullptr;
    }
};

namespace {

struct ReturnSignal {
    Value value;
};

[[noreturn]] void fail(const std::string& msg) {
    throw Fault(FaultKind::runtime, msg);
}

double need_number(const Value& v, const char* what) {
    if (!v.is_number()) fail(std::string(what) + ": expected number, got " + v.type_name());
    return v.number();
}

const Value::Vec& need_vector(const Value& v, const char* what) {
    if (!v.is_vector()) fail(std::string(what) + ": expected vector, got " + v.type_name());
    return v.vec();
}

bool truthy(const Value& v) {
    if (v.is_bool()) return v.boolean();
    if (v.is_number()) return v.number() != 0.0;
    if (v.is_null()) return false;
    fail(std::string("cannot use ") + v.type_name() + " as a condition");
}

Value json_to_value(const nlohmann::json& j) {
    if (j.is_number()) return Value(j.get<double>());
    if (j.is_boolean()) return Value(j.get<bool>());
    if (j.is_string()) return Value(j.get<std::string>());
    if (j.is_null()) return Value();
    if (j.is_array()) {
        Value::Vec v;
        v.reserve(j.size());
        for (const auto& e : j) {
            if (!e.is_number()) fail("parameter lists must be numeric");
            v.push_back(e.get<double>());
        }
        return Value(std::move(v));
    }
    fail("unsupported parameter type");
}

Value arith(Op op, const Value& a, const Value& b) {
    auto scalar = [&](double x, double y) -> double {
        switch (op) {
            case Op::add: return x + y;
            case Op::sub: return x - y;
            case Op::mul: return x * y;
            case Op::div: return x / y;  // IEEE semantics; finiteness is checked on return
            case Op::mod: return std::fmod(x, y);
            default: fail("bad arithmetic operator");
        }
    };
    if (a.is_number() && b.is_number()) return Value(scalar(a.number(), b.number()));
    if (a.is_vector() && b.is_vector()) {
        const auto& va = a.vec();
        const auto& vb = b.vec();
        if (va.size() != vb.size())
            fail("vector length mismatch: " + std::to_string(va.size()) + " vs " +
                 std::to_string(vb.size()));
        Value::Vec out(va.size());
        for (std::size_t i = 0; i < va.size(); ++i) out[i] = scalar(va[i], vb[i]);
        return Value(std::move(out));
    }
    if (a.is_vector() && b.is_number()) {
        Value::Vec out(a.vec());
        for (double& x : out) x = scalar(x, b.number());
        return Value(std::move(out));
    }
    if (a.is_number() && b.is_vector()) {
        Value::Vec out(b.vec());
        for (double& x : out) x = scalar(a.number(), x);
        return Value(std::move(out));
    }
    fail(std::string("cannot apply arithmetic to ") + a.type_name() + " and " + b.type_name());
}

Value compare(Op op, const Value& a, const Value& b) {
    if (op == Op::eq || op == Op::ne) {
        if (a.is_bool() && b.is_bool())
            return Value(op == Op::eq ? a.boolean() == b.boolean() : a.boolean() != b.boolean());
        if (a.is_string() && b.is_string())
            return Value(op == Op::eq ? a.str() == b.str() : a.str() != b.str());
    }
    double x = need_number(a, "comparison");
    double y = need_number(b, "comparison");
    switch (op) {
        case Op::lt: return Value(x < y);
        case Op::le: return Value(x <= y);
        case Op::gt: return Value(x > y);
        case Op::ge: return Value(x >= y);
        case Op::eq: return Value(x == y);
        case Op::ne: return Value(x != y);
        default: fail("bad comparison operator");
    }
}

}  // namespace

Interpreter::Interpreter(const Program& program, nlohmann::json params, Limits limits)
    : program_(program), params_(std::move(params)), limits_(limits) {}

void Interpreter::tick() {
    if (limits_.max_steps != 0 && ++steps_ > limits_.max_steps)
        fail("step limit exceeded");
    if (limits_.max_steps == 0) ++steps_;
}

Value Interpreter::call(const std::string& function, std::vector<Value> args) {
    const Function* fn = program_.find(function);
    if (!fn) fail("no function named " + function);
    if (fn->params.size() != args.size())
        fail(function + " takes " + std::to_string(fn->params.size()) + " argument(s), got " +
             std::to_string(args.size()));
    return call_function(*fn, std::move(args));
}

Value Interpreter::call_function(const Function& fn, std::vector<Value> args) {
    if (++depth_ > limits_.max_call_depth) {
        --depth_;
        fail("call depth limit exceeded");
    }
    Scope scope;
    for (std::size_t i = 0; i < fn.params.size(); ++i) scope.vars[fn.params[i]] = std::move(args[i]);
    Value result;
    try {
        exec_block(fn.body, scope);
    } catch (ReturnSignal& r) {
        result = std::move(r.value);
    } catch (...) {
        --depth_;
        throw;
    }
    --depth_;
    return result;
}

void Interpreter::exec_block(const std::vector<StmtPtr>& stmts, Scope& scope) {
    for (const auto& stmt : stmts) {
        tick();
        switch (stmt->type) {
            case Stmt::Type::let:
                scope.vars[stmt->target] = eval(*stmt->value, scope);
                break;
            case Stmt::Type::assign: {
                Value* slot = scope.find(stmt->target);
                if (!slot) fail("assignment to undefined variable " + stmt->target);
                *slot = eval(*stmt->value, scope);
                break;
            }
            case Stmt::Type::index_assign: {
                Value* slot = scope.find(stmt->target);
                if (!slot) fail("assignment to undefined variable " + stmt->target);
                if (!slot->is_vector()) fail(stmt->target + " is not a vector");
                double idx = need_number(eval(*stmt->index, scope), "index");
                auto& vec = std::get<Value::Vec>(slot->data);
                auto i = static_cast<long long>(idx);
                if (i < 0 || static_cast<std::size_t>(i) >= vec.size())
                    fail("index " + std::to_string(i) + " out of range for length " +
                         std::to_string(vec.size()));
                vec[static_cast<std::size_t>(i)] = need_number(eval(*stmt->value, scope), "element");
                break;
            }
            case Stmt::Type::if_else: {
                Scope inner;
                inner.parent = &scope;
                if (truthy(eval(*stmt->cond, scope))) exec_block(stmt->body, inner);
                else exec_block(stmt->else_body, inner);
                break;
            }
            case Stmt::Type::while_loop: {
                while (truthy(eval(*stmt->cond, scope))) {
                    tick();
                    Scope inner;
                    inner.parent = &scope;
                    exec_block(stmt->body, inner);
                }
                break;
            }
            case Stmt::Type::ret: {
                ReturnSignal sig;
                if (stmt->value) sig.value = eval(*stmt->value, scope);
                throw sig;
            }
            case Stmt::Type::expr:
                eval(*stmt->value, scope);
                break;
        }
    }
}

Value Interpreter::eval(const Expr& e, Scope& scope) {
    tick();
    switch (e.type) {
        case Expr::Type::number: return Value(e.number);
        case Expr::Type::boolean: return Value(e.boolean);
        case Expr::Type::null_lit: return Value();
        case Expr::Type::string_lit: return Value(e.text);
        case Expr::Type::var: {
            if (Value* v = scope.find(e.text)) return *v;
            if (is_restricted_name(e.text))
                throw Fault(FaultKind::capability, "restricted name: " + e.text);
            fail("undefined variable " + e.text);
        }
        case Expr::Type::vec_lit: {
            Value::Vec out;
            out.reserve(e.children.size());
            for (const auto& child : e.children)
                out.push_back(need_number(eval(*child, scope), "vector element"));
            return Value(std::move(out));
        }
        case Expr::Type::unary: {
            Value v = eval(*e.children[0], scope);
            if (e.op == Op::logic_not) return Value(!truthy(v));
            if (v.is_number()) return Value(-v.number());
            if (v.is_vector()) {
                Value::Vec out(v.vec());
                for (double& x : out) x = -x;
                return Value(std::move(out));
            }
            fail(std::string("cannot negate ") + v.type_name());
        }
        case Expr::Type::binary: {
            if (e.op == Op::logic_and)
                return Value(truthy(eval(*e.children[0], scope)) &&
                             truthy(eval(*e.children[1], scope)));
            if (e.op == Op::logic_or)
                return Value(truthy(eval(*e.children[0], scope)) ||
                             truthy(eval(*e.children[1], scope)));
            Value a = eval(*e.children[0], scope);
            Value b = eval(*e.children[1], scope);
            switch (e.op) {
                case Op::add: case Op::sub: case Op::mul: case Op::div: case Op::mod:
                    return arith(e.op, a, b);
                default:
                    return compare(e.op, a, b);
            }
        }
        case Expr::Type::index: {
            Value base = eval(*e.children[0], scope);
            const auto& vec = need_vector(base, "index");
            double idx = need_number(eval(*e.children[1], scope), "index");
            auto i = static_cast<long long>(idx);
            if (i < 0 || static_cast<std::size_t>(i) >= vec.size())
                fail("index " + std::to_string(i) + " out of range for length " +
                     std::to_string(vec.size()));
            return Value(vec[static_cast<std::size_t>(i)]);
        }
        case Expr::Type::call: {
            if (const Function* fn = program_.find(e.text)) {
                if (fn->params.size() != e.children.size())
                    fail(e.text + " takes " + std::to_string(fn->params.size()) +
                         " argument(s), got " + std::to_string(e.children.size()));
                std::vector<Value> args;
                args.reserve(e.children.size());
                for (const auto& child : e.children) args.push_back(eval(*child, scope));
                return call_function(*fn, std::move(args));
            }
            std::vector<Value> args;
            args.reserve(e.children.size());
            for (const auto& child : e.children) args.push_back(eval(*child, scope));
            return call_builtin(e.text, std::move(args));
        }
    }
    fail("bad expression");
}

Value Interpreter::call_builtin(const std::string& name, std::vector<Value> args) {
    auto arity = [&](std::size_t n) {
        if (args.size() != n)
            fail(name + " takes " + std::to_string(n) + " argument(s), got " +
                 std::to_string(args.size()));
    };
    auto unary_math = [&](double (*f)(double)) {
        arity(1);
        if (args[0].is_vector()) {
            Value::Vec out(args[0].vec());
            for (double& x : out) x = f(x);
            return Value(std::move(out));
        }
        return Value(f(need_number(args[0], name.c_str())));
    };

    if (name == "len") {
        arity(1);
        return Value(static_cast<double>(need_vector(args[0], "len").size()));
    }
    if (name == "sum" || name == "mean") {
        arity(1);
        const auto& v = need_vector(args[0], name.c_str());
        if (name == "mean" && v.empty()) fail("mean of empty vector");
        double s = 0;
        for (double x : v) s += x;
        return Value(name == "sum" ? s : s / static_cast<double>(v.size()));
    }
    if (name == "min" || name == "max") {
        bool is_min = name == "min";
        if (args.size() == 1) {
            const auto& v = need_vector(args[0], name.c_str());
            if (v.empty()) fail(name + " of empty vector");
            double best = v[0];
            for (double x : v) best = is_min ? std::min(best, x) : std::max(best, x);
            return Value(best);
        }
        arity(2);
        double a = need_number(args[0], name.c_str());
        double b = need_number(args[1], name.c_str());
        return Value(is_min ? std::min(a, b) : std::max(a, b));
    }
    if (name == "abs") return unary_math([](double x) { return std::fabs(x); });
    if (name == "sqrt") return unary_math([](double x) { return std::sqrt(x); });
    if (name == "exp") return unary_math([](double x) { return std::exp(x); });
    if (name == "log") return unary_math([](double x) { return std::log(x); });
    if (name == "sin") return unary_math([](double x) { return std::sin(x); });
    if (name == "cos") return unary_math([](double x) { return std::cos(x); });
    if (name == "tan") return unary_math([](double x) { return std::tan(x); });
    if (name == "floor") return unary_math([](double x) { return std::floor(x); });
    if (name == "ceil") return unary_math([](double x) { return std::ceil(x); });
    if (name == "round") return unary_math([](double x) { return std::round(x); });
    if (name == "pow") {
        arity(2);
        return Value(std::pow(need_number(args[0], "pow"), need_number(args[1], "pow")));
    }
    if (name == "push") {
        arity(2);
        Value::Vec out = need_vector(args[0], "push");
        if (out.size() >= limits_.max_vector_len) fail("vector length limit exceeded");
        out.push_back(need_number(args[1], "push"));
        return Value(std::move(out));
    }
    if (name == "zeros") {
        arity(1);
        double n = need_number(args[0], "zeros");
        if (n < 0 || n > static_cast<double>(limits_.max_vector_len))
            fail("zeros: bad length " + std::to_string(n));
        return Value(Value::Vec(static_cast<std::size_t>(n), 0.0));
    }
    if (name == "param" || name == "has_param") {
        arity(1);
        if (!args[0].is_string()) fail(name + " takes a parameter name string");
        const std::string& key = args[0].str();
        bool present = params_.contains(key) && !params_[key].is_null();
        if (name == "has_param") return Value(present);
        if (!present) fail("unknown parameter " + key);
        return json_to_value(params_[key]);
    }

    if (is_restricted_name(name))
        throw Fault(FaultKind::capability, "restricted name: " + name);
    fail("no function named " + name);
}

}  // namespace fleetlab::script
