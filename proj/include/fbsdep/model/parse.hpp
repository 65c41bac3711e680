#pragma once

#include <cctype>
#include <charconv>
#include <optional>
#include <string>
#include <string_view>

#include "fbsdep/model/expr.hpp"

namespace fbsdep::model {

namespace detail {

enum class Tok { number, ident, plus, minus, star, slash, caret, lparen, rparen, comma, lt, le, gt, ge, end };

struct Token {
    Tok kind = Tok::end;
    std::string text;
    double number = 0.0;
    int line = 1;
    int column = 1;
};

class Lexer {
public:
    explicit Lexer(std::string_view src) : src_(src) {}

    Token next() {
        skip_space();
        Token t;
        t.line = line_;
        t.column = col_;
        if (pos_ >= src_.size()) return t;
        const char c = src_[pos_];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return lex_number(t);
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t start = pos_;
            while (pos_ < src_.size() &&
                   (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
                advance();
            t.kind = Tok::ident;
            t.text = std::string(src_.substr(start, pos_ - start));
            return t;
        }
        advance();
        t.text = std::string(1, c);
        switch (c) {
            case '+': t.kind = Tok::plus; break;
            case '-': t.kind = Tok::minus; break;
            case '*': t.kind = Tok::star; break;
            case '/': t.kind = Tok::slash; break;
            case '^': t.kind = Tok::caret; break;
            case '(': t.kind = Tok::lparen; break;
            case ')': t.kind = Tok::rparen; break;
            case ',': t.kind = Tok::comma; break;
            case '<':
            case '>': {
                const bool eq = pos_ < src_.size() && src_[pos_] == '=';
                if (eq) {
                    advance();
                    t.text += '=';
                }
                t.kind = c == '<' ? (eq ? Tok::le : Tok::lt) : (eq ? Tok::ge : Tok::gt);
                break;
            }
            default: throw ParseError(std::string("unexpected character '") + c + "'", t.line, t.column);
        }
        return t;
    }

private:
    void advance() {
        if (src_[pos_] == '\n') {
            ++line_;
            col_ = 1;
        } else {
            ++col_;
        }
        ++pos_;
    }
    void skip_space() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) advance();
    }
    Token lex_number(Token t) {
        std::size_t start = pos_;
        auto digits = [&] {
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
        };
        digits();
        if (pos_ < src_.size() && src_[pos_] == '.') {
            advance();
            digits();
        }
        if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
            std::size_t look = pos_ + 1;
            if (look < src_.size() && (src_[look] == '+' || src_[look] == '-')) ++look;
            if (look < src_.size() && std::isdigit(static_cast<unsigned char>(src_[look]))) {
                while (pos_ < look) advance();
                digits();
            }
        }
        t.kind = Tok::number;
        t.text = std::string(src_.substr(start, pos_ - start));
        auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), t.number);
        if (ec != std::errc() || ptr != t.text.data() + t.text.size())
            throw ParseError("malformed number '" + t.text + "'", t.line, t.column);
        return t;
    }

    std::string_view src_;
    std::size_t pos_ = 0;
    int line_ = 1;
    int col_ = 1;
};

class Parser {
public:
    explicit Parser(std::string_view src) : lex_(src) {
        cur_ = lex_.next();
        ahead_ = lex_.next();
    }

    Expr parse_all() {
        Expr e = sum();
        if (cur_.kind != Tok::end) fail("unexpected '" + cur_.text + "'");
        return e;
    }

private:
    [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, cur_.line, cur_.column); }

    void shift() {
        cur_ = ahead_;
        ahead_ = lex_.next();
    }
    void expect(Tok k, const char* what) {
        if (cur_.kind != k) fail(std::string("expected ") + what + (cur_.kind == Tok::end ? " before end of input" : " near '" + cur_.text + "'"));
        shift();
    }

    Expr sum() {
        Expr lhs = term();
        while (cur_.kind == Tok::plus || cur_.kind == Tok::minus) {
            const bool plus = cur_.kind == Tok::plus;
            shift();
            Expr rhs = term();
            lhs = plus ? lhs + rhs : lhs - rhs;
        }
        return lhs;
    }

    Expr term() {
        Expr lhs = unary();
        while (cur_.kind == Tok::star || cur_.kind == Tok::slash) {
            const bool times = cur_.kind == Tok::star;
            shift();
            Expr rhs = unary();
            lhs = times ? lhs * rhs : lhs / rhs;
        }
        return lhs;
    }

    Expr unary() {
        if (cur_.kind == Tok::minus) {
            shift();
            // "-3" is a negative literal unless a power follows ("-3^2" is -(3^2)).
            if (cur_.kind == Tok::number && ahead_.kind != Tok::caret) {
                const double v = cur_.number;
                shift();
                return lit(-v);
            }
            return -unary();
        }
        if (cur_.kind == Tok::plus) {
            shift();
            return unary();
        }
        return power();
    }

    Expr power() {
        Expr base = primary();
        if (cur_.kind == Tok::caret) {
            shift();
            return pow(base, unary());
        }
        return base;
    }

    Expr primary() {
        if (cur_.kind == Tok::number) {
            const double v = cur_.number;
            shift();
            return lit(v);
        }
        if (cur_.kind == Tok::lparen) {
            shift();
            Expr e = sum();
            expect(Tok::rparen, "')'");
            return e;
        }
        if (cur_.kind == Tok::ident) return identifier();
        if (cur_.kind == Tok::end) fail("unexpected end of input");
        fail("unexpected '" + cur_.text + "'");
    }

    Expr identifier() {
        const Token id = cur_;
        shift();
        if (cur_.kind == Tok::lparen) return call(id);
        if (auto v = lookup(id.text)) return ref(*v);
        throw ParseError("unknown identifier '" + id.text + "'", id.line, id.column);
    }

    static std::optional<Var> lookup(const std::string& name) {
        if (name == "s") return var::s;
        if (name == "y") return var::y;
        if (name == "z") return var::z;
        if (name == "ztilde") return var::ztilde;
        if (name == "e") return var::e;
        if (name == "x") return var::x(0);
        if (name == "u") return var::u(0);
        if (name.size() >= 2 && (name[0] == 'x' || name[0] == 'u')) {
            int idx = 0;
            auto [ptr, ec] = std::from_chars(name.data() + 1, name.data() + name.size(), idx);
            if (ec == std::errc() && ptr == name.data() + name.size() && idx >= 1 && idx <= max_dim &&
                name[1] != '0')
                return name[0] == 'x' ? var::x(idx - 1) : var::u(idx - 1);
        }
        return std::nullopt;
    }

    Expr call(const Token& id) {
        shift();  // '('
        const std::string& f = id.text;
        if (f == "piecewise") {
            Expr lhs = sum();
            Cmp c;
            switch (cur_.kind) {
                case Tok::lt: c = Cmp::lt; break;
                case Tok::le: c = Cmp::le; break;
                case Tok::gt: c = Cmp::gt; break;
                case Tok::ge: c = Cmp::ge; break;
                default: fail("expected comparison in piecewise condition");
            }
            shift();
            Expr rhs = sum();
            expect(Tok::comma, "','");
            Expr a = sum();
            expect(Tok::comma, "','");
            Expr b = sum();
            expect(Tok::rparen, "')'");
            return Expr::piecewise(lhs, c, rhs, a, b);
        }
        if (f == "exp" || f == "ln") {
            Expr a = sum();
            expect(Tok::rparen, "')'");
            return f == "exp" ? exp(a) : ln(a);
        }
        if (f == "min" || f == "max" || f == "pow") {
            Expr a = sum();
            expect(Tok::comma, "','");
            Expr b = sum();
            expect(Tok::rparen, "')'");
            if (f == "pow") return pow(a, b);
            return f == "min" ? min(a, b) : max(a, b);
        }
        throw ParseError("unknown function '" + f + "'", id.line, id.column);
    }

    Lexer lex_;
    Token cur_;
    Token ahead_;
};

}  // namespace detail

/// Parses an expression; throws ParseError with line/column on failure.
inline Expr parse_expr(std::string_view source) { return detail::Parser(source).parse_all(); }

}  // namespace fbsdep::model
