#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace fleetlab::script {

// A deliberately small scripting language for user-deployed computation
// modules. It exposes pure computation only: numbers, booleans, strings,
// numeric vectors, control flow, and a fixed set of math builtins. There is
// no import mechanism and no I/O of any form; well-known capability names
// (open, socket, exec, getenv, ...) are reserved and rejected.
//
// A deployable module defines `fn custom_code(input) { ... }` where input is
// the numeric vector handed in by the platform. Assignment parameters are
// reachable read-only through param(name) / has_param(name).

struct Value {
    using Vec = std::vector<double>;
    std::variant<std::monostate, double, bool, std::string, Vec> data;

    Value() = default;
    Value(double d) : data(d) {}
    Value(bool b) : data(b) {}
    Value(std::string s) : data(std::move(s)) {}
    Value(Vec v) : data(std::move(v)) {}

    bool is_null() const { return std::holds_alternative<std::monostate>(data); }
    bool is_number() const { return std::holds_alternative<double>(data); }
    bool is_bool() const { return std::holds_alternative<bool>(data); }
    bool is_string() const { return std::holds_alternative<std::string>(data); }
    bool is_vector() const { return std::holds_alternative<Vec>(data); }

    double number() const { return std::get<double>(data); }
    bool boolean() const { return std::get<bool>(data); }
    const std::string& str() const { return std::get<std::string>(data); }
    const Vec& vec() const { return std::get<Vec>(data); }

    const char* type_name() const;
    bool operator==(const Value& other) const { return data == other.data; }
};

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " at offset " + std::to_string(offset)), offset(offset) {}
    std::size_t offset;
};

enum class FaultKind { runtime, capability };

class Fault : public std::runtime_error {
public:
    Fault(FaultKind kind, const std::string& what) : std::runtime_error(what), kind(kind) {}
    FaultKind kind;
};

enum class Op {
    add, sub, mul, div, mod,      // arithmetic
    eq, ne, lt, le, gt, ge,       // comparison
    logic_and, logic_or,          // short-circuit
    logic_not, neg,               // unary
};

struct Expr;
struct Stmt;
using ExprPtr = std::unique_ptr<Expr>;
using StmtPtr = std::unique_ptr<Stmt>;

struct Expr {
    enum class Type {
        number, boolean, null_lit, string_lit, var, vec_lit, unary, binary, call, index
    };
    Type type = Type::number;
    double number = 0;
    bool boolean = false;
    std::string text;  // var / call name, string literal
    Op op = Op::add;
    std::vector<ExprPtr> children;
    std::size_t offset = 0;
};

struct Stmt {
    enum class Type { let, assign, index_assign, if_else, while_loop, ret, expr };
    Type type = Type::expr;
    std::string target;
    ExprPtr index;  // index_assign
    ExprPtr value;  // let / assign / index_assign / ret / expr
    ExprPtr cond;   // if / while
    std::vector<StmtPtr> body;
    std::vector<StmtPtr> else_body;
    std::size_t offset = 0;
};

struct Function {
    std::string name;
    std::vector<std::string> params;
    std::vector<StmtPtr> body;
};

struct Program {
    std::map<std::string, Function> functions;

    const Function* find(const std::string& name) const {
        auto it = functions.find(name);
        return it == functions.end() ? nullptr : &it->second;
    }
};

/// Throws ParseError with a byte offset on malformed source.
Program parse_program(std::string_view source);

/// Names in the source that refer to reserved capability facilities
/// (file, network, process, environment, clock, import). Token-level scan,
/// so even dead code is caught.
std::vector<std::string> scan_restricted_names(std::string_view source);
bool is_restricted_name(std::string_view name);

struct Limits {
    std::size_t max_call_depth = 128;
    std::size_t max_vector_len = 1u << 20;
    // 0 means unbounded; execution is then bounded by the sandbox timeout.
    std::uint64_t max_steps = 0;
};

class Interpreter {
public:
    Interpreter(const Program& program, nlohmann::json params, Limits limits = {});

    /// Calls a top-level function. Throws Fault on any runtime error.
    Value call(const std::string& function, std::vector<Value> args);

private:
    struct Scope;
    Value eval(const Expr& e, Scope& scope);
    void exec_block(const std::vector<StmtPtr>& stmts, Scope& scope);
    Value call_function(const Function& fn, std::vector<Value> args);
    Value call_builtin(const std::string& name, std::vector<Value> args);
    void tick();

    const Program& program_;
    nlohmann::json params_;
    Limits limits_;
    std::size_t depth_ = 0;
    std::uint64_t steps_ = 0;
};

}  // namespace fleetlab::script
