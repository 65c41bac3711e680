#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fbsdep::model {

/// Raised when an expression is evaluated outside its domain.
class DomainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised by the parser; carries a 1-based line and column.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, int line, int column)
        : std::runtime_error(what + " (line " + std::to_string(line) + ", column " +
                             std::to_string(column) + ")"),
          line_(line), column_(column) {}
    int line() const noexcept { return line_; }
    int column() const noexcept { return column_; }

private:
    int line_;
    int column_;
};

inline constexpr int max_dim = 8;

enum class VarKind : std::uint8_t { s, x, y, z, ztilde, u, e };

struct Var {
    VarKind kind = VarKind::s;
    int index = 0;
    friend bool operator==(const Var&, const Var&) = default;
    friend auto operator<=>(const Var&, const Var&) = default;
};

namespace var {
inline constexpr Var s{VarKind::s, 0};
inline constexpr Var y{VarKind::y, 0};
inline constexpr Var z{VarKind::z, 0};
inline constexpr Var ztilde{VarKind::ztilde, 0};
inline constexpr Var e{VarKind::e, 0};
inline constexpr Var x(int i = 0) { return {VarKind::x, i}; }
inline constexpr Var u(int i = 0) { return {VarKind::u, i}; }
}  // namespace var

inline constexpr int slot_count = 5 + 2 * max_dim;

inline constexpr int slot_of(Var v) {
    switch (v.kind) {
        case VarKind::s: return 0;
        case VarKind::y: return 1;
        case VarKind::z: return 2;
        case VarKind::ztilde: return 3;
        case VarKind::e: return 4;
        case VarKind::x: return 5 + v.index;
        case VarKind::u: return 5 + max_dim + v.index;
    }
    return 0;
}

inline std::string var_name(Var v) {
    switch (v.kind) {
        case VarKind::s: return "s";
        case VarKind::y: return "y";
        case VarKind::z: return "z";
        case VarKind::ztilde: return "ztilde";
        case VarKind::e: return "e";
        case VarKind::x: return v.index == 0 ? "x" : "x" + std::to_string(v.index + 1);
        case VarKind::u: return v.index == 0 ? "u" : "u" + std::to_string(v.index + 1);
    }
    return "?";
}

/// Values of every variable an expression may reference.
struct Point {
    std::array<double, slot_count> v{};

    double& s() { return v[0]; }
    double& y() { return v[1]; }
    double& z() { return v[2]; }
    double& ztilde() { return v[3]; }
    double& e() { return v[4]; }
    double& x(int i = 0) { return v[5 + i]; }
    double& u(int i = 0) { return v[5 + max_dim + i]; }
    double operator[](Var w) const { return v[slot_of(w)]; }
    double& operator[](Var w) { return v[slot_of(w)]; }
};

enum class Op : std::uint8_t { constant, variable, neg, add, sub, mul, div, pow, exp, ln, min, max, piecewise };
enum class Cmp : std::uint8_t { lt, le, gt, ge };

inline const char* cmp_text(Cmp c) {
    switch (c) {
        case Cmp::lt: return "<";
        case Cmp::le: return "<=";
        case Cmp::gt: return ">";
        case Cmp::ge: return ">=";
    }
    return "?";
}

inline bool compare(Cmp c, double a, double b) {
    switch (c) {
        case Cmp::lt: return a < b;
        case Cmp::le: return a <= b;
        case Cmp::gt: return a > b;
        case Cmp::ge: return a >= b;
    }
    return false;
}

/// Non-strict version of a comparison; used for derivatives so that at
/// lhs == rhs the condition-true branch is selected.
inline Cmp closure(Cmp c) {
    if (c == Cmp::lt) return Cmp::le;
    if (c == Cmp::gt) return Cmp::ge;
    return c;
}

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
    Op op = Op::constant;
    double value = 0.0;
    Var var{};
    Cmp cmp = Cmp::lt;
    // piecewise: {lhs, rhs, when_true, when_false}
    std::vector<NodePtr> kids;
};

namespace detail {

inline double checked(double r, const char* what) {
    if (!std::isfinite(r)) throw DomainError(std::string("non-finite result in ") + what);
    return r;
}

inline double apply_div(double a, double b) {
    if (b == 0.0) throw DomainError("division by zero");
    return checked(a / b, "division");
}

inline double apply_pow(double a, double b) {
    const bool integral = std::nearbyint(b) == b;
    if (a < 0.0 && !integral)
        throw DomainError("negative base " + std::to_string(a) + " with non-integer exponent");
    if (a == 0.0 && b < 0.0) throw DomainError("zero base with negative exponent");
    return checked(std::pow(a, b), "pow");
}

inline double apply_ln(double a) {
    if (!(a > 0.0)) throw DomainError("ln of non-positive argument " + std::to_string(a));
    return std::log(a);
}

inline double apply_exp(double a) { return checked(std::exp(a), "exp"); }

}  // namespace detail

/// Immutable scalar expression tree.
class Expr {
public:
    Expr() : Expr(constant(0.0)) {}

    static Expr constant(double c) {
        auto n = std::make_shared<Node>();
        n->op = Op::constant;
        n->value = c;
        return Expr(std::move(n));
    }
    static Expr variable(Var v) {
        auto n = std::make_shared<Node>();
        n->op = Op::variable;
        n->var = v;
        return Expr(std::move(n));
    }
    static Expr unary(Op op, const Expr& a) {
        auto n = std::make_shared<Node>();
        n->op = op;
        n->kids = {a.node_};
        return Expr(std::move(n));
    }
    static Expr binary(Op op, const Expr& a, const Expr& b) {
        auto n = std::make_shared<Node>();
        n->op = op;
        n->kids = {a.node_, b.node_};
        return Expr(std::move(n));
    }
    static Expr piecewise(const Expr& lhs, Cmp cmp, const Expr& rhs, const Expr& when_true,
                          const Expr& when_false) {
        auto n = std::make_shared<Node>();
        n->op = Op::piecewise;
        n->cmp = cmp;
        n->kids = {lhs.node_, rhs.node_, when_true.node_, when_false.node_};
        return Expr(std::move(n));
    }

    const Node& node() const { return *node_; }
    const NodePtr& ptr() const { return node_; }
    Op op() const { return node_->op; }
    Expr kid(std::size_t i) const { return Expr(node_->kids.at(i)); }
    std::size_t arity() const { return node_->kids.size(); }

    bool is_constant() const { return node_->op == Op::constant; }
    bool is_constant(double c) const { return is_constant() && node_->value == c; }

    double eval(const Point& p) const { return eval_node(*node_, p); }

    std::set<Var> variables() const {
        std::set<Var> out;
        collect(*node_, out);
        return out;
    }
    bool depends_on(VarKind k) const {
        for (const auto& v : variables())
            if (v.kind == k) return true;
        return false;
    }

    std::size_t size() const { return count(*node_); }

    /// True if some piecewise/min/max switch is within tol of its breakpoint at p.
    bool near_breakpoint(const Point& p, double tol) const { return near_bp(*node_, p, tol); }

    std::string str() const {
        std::string out;
        print(*node_, out);
        return out;
    }

    friend bool operator==(const Expr& a, const Expr& b) { return same(*a.node_, *b.node_); }

private:
    explicit Expr(NodePtr n) : node_(std::move(n)) {}

    static double eval_node(const Node& n, const Point& p) {
        switch (n.op) {
            case Op::constant: return n.value;
            case Op::variable: return p[n.var];
            case Op::neg: return -eval_node(*n.kids[0], p);
            case Op::add: return detail::checked(eval_node(*n.kids[0], p) + eval_node(*n.kids[1], p), "+");
            case Op::sub: return detail::checked(eval_node(*n.kids[0], p) - eval_node(*n.kids[1], p), "-");
            case Op::mul: return detail::checked(eval_node(*n.kids[0], p) * eval_node(*n.kids[1], p), "*");
            case Op::div: return detail::apply_div(eval_node(*n.kids[0], p), eval_node(*n.kids[1], p));
            case Op::pow: return detail::apply_pow(eval_node(*n.kids[0], p), eval_node(*n.kids[1], p));
            case Op::exp: return detail::apply_exp(eval_node(*n.kids[0], p));
            case Op::ln: return detail::apply_ln(eval_node(*n.kids[0], p));
            case Op::min: return std::min(eval_node(*n.kids[0], p), eval_node(*n.kids[1], p));
            case Op::max: return std::max(eval_node(*n.kids[0], p), eval_node(*n.kids[1], p));
            case Op::piecewise: {
                const bool c = compare(n.cmp, eval_node(*n.kids[0], p), eval_node(*n.kids[1], p));
                return eval_node(*n.kids[c ? 2 : 3], p);
            }
        }
        return 0.0;
    }

    static void collect(const Node& n, std::set<Var>& out) {
        if (n.op == Op::variable) out.insert(n.var);
        for (const auto& k : n.kids) collect(*k, out);
    }

    static std::size_t count(const Node& n) {
        std::size_t c = 1;
        for (const auto& k : n.kids) c += count(*k);
        return c;
    }

    static bool near_bp(const Node& n, const Point& p, double tol) {
        if (n.op == Op::piecewise || n.op == Op::min || n.op == Op::max) {
            try {
                const double a = eval_node(*n.kids[0], p);
                const double b = eval_node(*n.kids[1], p);
                if (std::abs(a - b) <= tol) return true;
            } catch (const DomainError&) {
            }
        }
        for (const auto& k : n.kids)
            if (near_bp(*k, p, tol)) return true;
        return false;
    }

    static bool same(const Node& a, const Node& b) {
        if (&a == &b) return true;
        if (a.op != b.op || a.kids.size() != b.kids.size()) return false;
        if (a.op == Op::constant && !(a.value == b.value && std::signbit(a.value) == std::signbit(b.value)))
            return false;
        if (a.op == Op::variable && a.var != b.var) return false;
        if (a.op == Op::piecewise && a.cmp != b.cmp) return false;
        for (std::size_t i = 0; i < a.kids.size(); ++i)
            if (!same(*a.kids[i], *b.kids[i])) return false;
        return true;
    }

    static void print_number(double c, std::string& out) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", std::abs(c));
        if (std::signbit(c)) {
            out += "(-";
            out += buf;
            out += ")";
        } else {
            out += buf;
        }
    }

    static void print(const Node& n, std::string& out) {
        auto bin = [&](const char* op) {
            out += "(";
            print(*n.kids[0], out);
            out += op;
            print(*n.kids[1], out);
            out += ")";
        };
        auto call = [&](const char* f) {
            out += f;
            out += "(";
            for (std::size_t i = 0; i < n.kids.size(); ++i) {
                if (i) out += ", ";
                print(*n.kids[i], out);
            }
            out += ")";
        };
        switch (n.op) {
            case Op::constant: print_number(n.value, out); break;
            case Op::variable: out += var_name(n.var); break;
            case Op::neg:
                out += "(-(";
                print(*n.kids[0], out);
                out += "))";
                break;
            case Op::add: bin(" + "); break;
            case Op::sub: bin(" - "); break;
            case Op::mul: bin(" * "); break;
            case Op::div: bin(" / "); break;
            case Op::pow: bin(" ^ "); break;
            case Op::exp: call("exp"); break;
            case Op::ln: call("ln"); break;
            case Op::min: call("min"); break;
            case Op::max: call("max"); break;
            case Op::piecewise:
                out += "piecewise(";
                print(*n.kids[0], out);
                out += " ";
                out += cmp_text(n.cmp);
                out += " ";
                print(*n.kids[1], out);
                out += ", ";
                print(*n.kids[2], out);
                out += ", ";
                print(*n.kids[3], out);
                out += ")";
                break;
        }
    }

    NodePtr node_;
};

using ScalarExpr = Expr;

// Raw constructors: no folding, used by the parser and by tests that need exact trees.
inline Expr operator+(const Expr& a, const Expr& b) { return Expr::binary(Op::add, a, b); }
inline Expr operator-(const Expr& a, const Expr& b) { return Expr::binary(Op::sub, a, b); }
inline Expr operator*(const Expr& a, const Expr& b) { return Expr::binary(Op::mul, a, b); }
inline Expr operator/(const Expr& a, const Expr& b) { return Expr::binary(Op::div, a, b); }
inline Expr operator-(const Expr& a) { return Expr::unary(Op::neg, a); }
inline Expr pow(const Expr& a, const Expr& b) { return Expr::binary(Op::pow, a, b); }
inline Expr exp(const Expr& a) { return Expr::unary(Op::exp, a); }
inline Expr ln(const Expr& a) { return Expr::unary(Op::ln, a); }
inline Expr min(const Expr& a, const Expr& b) { return Expr::binary(Op::min, a, b); }
inline Expr max(const Expr& a, const Expr& b) { return Expr::binary(Op::max, a, b); }
inline Expr lit(double c) { return Expr::constant(c); }
inline Expr ref(Var v) { return Expr::variable(v); }

/// Constructors with light constant folding; used by differentiation.
namespace fold {

inline Expr neg(const Expr& a) {
    if (a.is_constant()) return lit(-a.node().value);
    if (a.op() == Op::neg) return a.kid(0);
    return -a;
}
inline Expr add(const Expr& a, const Expr& b) {
    if (a.is_constant(0.0)) return b;
    if (b.is_constant(0.0)) return a;
    if (a.is_constant() && b.is_constant()) return lit(a.node().value + b.node().value);
    return a + b;
}
inline Expr sub(const Expr& a, const Expr& b) {
    if (b.is_constant(0.0)) return a;
    if (a.is_constant(0.0)) return neg(b);
    if (a.is_constant() && b.is_constant()) return lit(a.node().value - b.node().value);
    return a - b;
}
inline Expr mul(const Expr& a, const Expr& b) {
    if (a.is_constant(0.0) || b.is_constant(0.0)) return lit(0.0);
    if (a.is_constant(1.0)) return b;
    if (b.is_constant(1.0)) return a;
    if (a.is_constant(-1.0)) return neg(b);
    if (b.is_constant(-1.0)) return neg(a);
    if (a.is_constant() && b.is_constant()) return lit(a.node().value * b.node().value);
    return a * b;
}
inline Expr div(const Expr& a, const Expr& b) {
    if (a.is_constant(0.0)) return lit(0.0);
    if (b.is_constant(1.0)) return a;
    return a / b;
}
inline Expr pow(const Expr& a, const Expr& b) {
    if (b.is_constant(1.0)) return a;
    if (b.is_constant(0.0)) return lit(1.0);
    return fbsdep::model::pow(a, b);
}

}  // namespace fold

/// Derivative tree of `f` in `v` (forward-mode chain rule on the tree).
/// At piecewise/min/max breakpoints the condition-true branch is used.
inline Expr derivative(const Expr& f, Var v) {
    switch (f.op()) {
        case Op::constant: return lit(0.0);
        case Op::variable: return lit(f.node().var == v ? 1.0 : 0.0);
        case Op::neg: return fold::neg(derivative(f.kid(0), v));
        case Op::add: return fold::add(derivative(f.kid(0), v), derivative(f.kid(1), v));
        case Op::sub: return fold::sub(derivative(f.kid(0), v), derivative(f.kid(1), v));
        case Op::mul: {
            const Expr a = f.kid(0), b = f.kid(1);
            return fold::add(fold::mul(derivative(a, v), b), fold::mul(a, derivative(b, v)));
        }
        case Op::div: {
            const Expr a = f.kid(0), b = f.kid(1);
            const Expr da = derivative(a, v), db = derivative(b, v);
            return fold::sub(fold::div(da, b), fold::div(fold::mul(a, db), fold::mul(b, b)));
        }
        case Op::pow: {
            const Expr a = f.kid(0), b = f.kid(1);
            const Expr da = derivative(a, v), db = derivative(b, v);
            if (db.is_constant(0.0)) {
                if (da.is_constant(0.0)) return lit(0.0);
                const Expr lowered = b.is_constant() ? lit(b.node().value - 1.0) : fold::sub(b, lit(1.0));
                return fold::mul(fold::mul(b, fold::pow(a, lowered)), da);
            }
            return fold::mul(f, fold::add(fold::mul(db, ln(a)), fold::div(fold::mul(b, da), a)));
        }
        case Op::exp: return fold::mul(f, derivative(f.kid(0), v));
        case Op::ln: return fold::div(derivative(f.kid(0), v), f.kid(0));
        case Op::min:
        case Op::max: {
            const Expr da = derivative(f.kid(0), v), db = derivative(f.kid(1), v);
            if (da == db) return da;
            return Expr::piecewise(f.kid(0), f.op() == Op::min ? Cmp::le : Cmp::ge, f.kid(1), da, db);
        }
        case Op::piecewise: {
            const Expr da = derivative(f.kid(2), v), db = derivative(f.kid(3), v);
            if (da == db) return da;
            return Expr::piecewise(f.kid(0), closure(f.node().cmp), f.kid(1), da, db);
        }
    }
    return lit(0.0);
}

/// First or second derivative; order outside {1, 2} is rejected.
inline Expr differentiate(const Expr& f, Var v, int order) {
    if (order != 1 && order != 2) throw std::invalid_argument("derivative order must be 1 or 2");
    Expr d = derivative(f, v);
    return order == 1 ? d : derivative(d, v);
}

/// Mixed second derivative d^2 f / (da db).
inline Expr differentiate(const Expr& f, Var a, Var b) { return derivative(derivative(f, a), b); }

}  // namespace fbsdep::model
