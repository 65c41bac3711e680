#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "fbsdep/model/expr.hpp"

namespace fbsdep::model {

/// Postfix program for repeated evaluation of an Expr. Piecewise branches
/// are evaluated lazily so the untaken branch cannot raise a domain error.
class CompiledExpr {
public:
    CompiledExpr() : CompiledExpr(lit(0.0)) {}

    explicit CompiledExpr(const Expr& e) : source_(e) {
        int depth = 0;
        emit(e.node(), depth);
        if (max_depth_ > kStack) heap_ = true;
    }

    const Expr& source() const { return source_; }
    bool is_constant() const { return code_.size() == 1 && code_[0].op == Code::push_const; }

    double operator()(const Point& p) const {
        if (heap_) {
            std::vector<double> st(static_cast<std::size_t>(max_depth_));
            return run(p, st.data());
        }
        double st[kStack];
        return run(p, st);
    }

private:
    static constexpr int kStack = 64;

    enum class Code : std::uint8_t {
        push_const, push_var, neg, add, sub, mul, div, pow, exp, ln, min, max, lt, le, gt, ge, jump_if_false, jump
    };
    struct Instr {
        Code op;
        std::int32_t arg;
        double value;
    };

    void push(Code c, std::int32_t arg = 0, double v = 0.0) { code_.push_back({c, arg, v}); }

    void grow(int& depth, int by) {
        depth += by;
        max_depth_ = std::max(max_depth_, depth);
    }

    void emit(const Node& n, int& depth) {
        switch (n.op) {
            case Op::constant: push(Code::push_const, 0, n.value); grow(depth, 1); return;
            case Op::variable: push(Code::push_var, slot_of(n.var)); grow(depth, 1); return;
            case Op::neg: emit(*n.kids[0], depth); push(Code::neg); return;
            case Op::exp: emit(*n.kids[0], depth); push(Code::exp); return;
            case Op::ln: emit(*n.kids[0], depth); push(Code::ln); return;
            case Op::add:
            case Op::sub:
            case Op::mul:
            case Op::div:
            case Op::pow:
            case Op::min:
            case Op::max: {
                emit(*n.kids[0], depth);
                emit(*n.kids[1], depth);
                static constexpr Code table[] = {Code::add, Code::sub, Code::mul, Code::div,
                                                 Code::pow, Code::exp, Code::ln,  Code::min, Code::max};
                push(table[static_cast<int>(n.op) - static_cast<int>(Op::add)]);
                grow(depth, -1);
                return;
            }
            case Op::piecewise: {
                emit(*n.kids[0], depth);
                emit(*n.kids[1], depth);
                static constexpr Code cmp[] = {Code::lt, Code::le, Code::gt, Code::ge};
                push(cmp[static_cast<int>(n.cmp)]);
                grow(depth, -1);
                const std::size_t jf = code_.size();
                push(Code::jump_if_false);
                grow(depth, -1);
                emit(*n.kids[2], depth);
                const std::size_t jend = code_.size();
                push(Code::jump);
                grow(depth, -1);
                code_[jf].arg = static_cast<std::int32_t>(code_.size());
                emit(*n.kids[3], depth);
                code_[jend].arg = static_cast<std::int32_t>(code_.size());
                return;
            }
        }
    }

    double run(const Point& p, double* st) const {
        int sp = 0;
        const std::size_t n = code_.size();
        for (std::size_t pc = 0; pc < n; ++pc) {
            const Instr& in = code_[pc];
            switch (in.op) {
                case Code::push_const: st[sp++] = in.value; break;
                case Code::push_var: st[sp++] = p.v[static_cast<std::size_t>(in.arg)]; break;
                case Code::neg: st[sp - 1] = -st[sp - 1]; break;
                case Code::add: --sp; st[sp - 1] = detail::checked(st[sp - 1] + st[sp], "+"); break;
                case Code::sub: --sp; st[sp - 1] = detail::checked(st[sp - 1] - st[sp], "-"); break;
                case Code::mul: --sp; st[sp - 1] = detail::checked(st[sp - 1] * st[sp], "*"); break;
                case Code::div: --sp; st[sp - 1] = detail::apply_div(st[sp - 1], st[sp]); break;
                case Code::pow: --sp; st[sp - 1] = detail::apply_pow(st[sp - 1], st[sp]); break;
                case Code::exp: st[sp - 1] = detail::apply_exp(st[sp - 1]); break;
                case Code::ln: st[sp - 1] = detail::apply_ln(st[sp - 1]); break;
                case Code::min: --sp; st[sp - 1] = std::min(st[sp - 1], st[sp]); break;
                case Code::max: --sp; st[sp - 1] = std::max(st[sp - 1], st[sp]); break;
                case Code::lt: --sp; st[sp - 1] = st[sp - 1] < st[sp] ? 1.0 : 0.0; break;
                case Code::le: --sp; st[sp - 1] = st[sp - 1] <= st[sp] ? 1.0 : 0.0; break;
                case Code::gt: --sp; st[sp - 1] = st[sp - 1] > st[sp] ? 1.0 : 0.0; break;
                case Code::ge: --sp; st[sp - 1] = st[sp - 1] >= st[sp] ? 1.0 : 0.0; break;
                case Code::jump_if_false:
                    --sp;
                    if (st[sp] == 0.0) pc = static_cast<std::size_t>(in.arg) - 1;
                    break;
                case Code::jump: pc = static_cast<std::size_t>(in.arg) - 1; break;
            }
        }
        return st[0];
    }

    Expr source_;
    std::vector<Instr> code_;
    int max_depth_ = 0;
    bool heap_ = false;
};

}  // namespace fbsdep::model
