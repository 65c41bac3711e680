#pragma once

#include <variant>
#include <vector>

#include "fbsdep/model/compiled.hpp"
#include "fbsdep/model/problem.hpp"

namespace fbsdep::pathsim {

using ControlVec = model::ControlSet::Vec;

/// Constant, feedback u(s, x), or tabulated per-step control.
class ControlPolicy {
public:
    struct Constant {
        ControlVec u{};
    };
    struct Feedback {
        std::vector<model::CompiledExpr> u;
    };
    struct Tabulated {
        std::vector<ControlVec> per_step;
    };

    static ControlPolicy constant(std::initializer_list<double> u) {
        ControlVec v{};
        std::size_t i = 0;
        for (double x : u) v[i++] = x;
        return ControlPolicy(Constant{v});
    }
    static ControlPolicy constant(const ControlVec& u) { return ControlPolicy(Constant{u}); }
    static ControlPolicy feedback(const std::vector<model::Expr>& maps) {
        Feedback f;
        for (const auto& e : maps) {
            for (const auto& v : e.variables())
                if (v.kind != model::VarKind::s && v.kind != model::VarKind::x)
                    throw model::ConfigError("feedback control may depend on s and x only");
            f.u.emplace_back(e);
        }
        return ControlPolicy(std::move(f));
    }
    static ControlPolicy tabulated(std::vector<ControlVec> per_step) {
        if (per_step.empty()) throw model::ConfigError("tabulated policy needs at least one step");
        return ControlPolicy(Tabulated{std::move(per_step)});
    }

    /// True if the control does not depend on the state.
    bool deterministic() const { return !std::holds_alternative<Feedback>(rep_); }
    bool is_constant() const { return std::holds_alternative<Constant>(rep_); }

    /// Unprojected control at step k; `state` carries s and x.
    ControlVec raw(int k, const model::Point& state) const {
        if (auto* c = std::get_if<Constant>(&rep_)) return c->u;
        if (auto* t = std::get_if<Tabulated>(&rep_))
            return t->per_step[std::min<std::size_t>(static_cast<std::size_t>(k), t->per_step.size() - 1)];
        const auto& f = std::get<Feedback>(rep_);
        ControlVec v{};
        for (std::size_t j = 0; j < f.u.size(); ++j) v[j] = f.u[j](state);
        return v;
    }

    /// Control projected onto U; `projected` is set when projection moved it.
    ControlVec value(int k, const model::Point& state, const model::ControlSet& U, bool& projected) const {
        ControlVec v = raw(k, state);
        projected = !U.contains(v);
        return projected ? U.project(v) : v;
    }

    std::string describe() const {
        if (auto* c = std::get_if<Constant>(&rep_)) return "constant " + std::to_string(c->u[0]);
        if (std::holds_alternative<Tabulated>(rep_)) return "tabulated";
        std::string s = "feedback";
        for (const auto& e : std::get<Feedback>(rep_).u) s += " " + e.source().str();
        return s;
    }

private:
    explicit ControlPolicy(std::variant<Constant, Feedback, Tabulated> r) : rep_(std::move(r)) {}
    std::variant<Constant, Feedback, Tabulated> rep_;
};

}  // namespace fbsdep::pathsim
