#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "vgat/autodiff.hpp"

namespace vgat {

struct GradientViolation {
    std::string parameter;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double error = 0.0;
};

struct GradientReport {
    bool passed = true;
    std::size_t checked = 0;
    double max_error = 0.0;
    std::vector<GradientViolation> violations;

    std::string summary() const {
        std::ostringstream os;
        os << (passed ? "PASS" : "FAIL") << " checked=" << checked << " max_rel_err=" << max_error;
        for (const auto& v : violations) {
            os << "\n  " << v.parameter << "[" << v.index << "] analytic=" << v.analytic << " numeric=" << v.numeric
               << " err=" << v.error;
        }
        return os.str();
    }
};

// Builds a scalar loss on the given tape from the current parameter values.
using LossBuilder = std::function<Var(Tape&)>;

// Compares backward-pass gradients against central differences with step h for
// every entry of every parameter: |analytic - numeric| / max(1, |numeric|) <= tol.
inline GradientReport check_gradients(const LossBuilder& build, const std::vector<Parameter*>& params, double tol,
                                      double step = 1e-5) {
    for (Parameter* p : params) p->zero_grad();
    {
        Tape tape;
        tape.backward(build(tape));
    }
    auto evaluate = [&build]() {
        Tape tape;
        return build(tape).scalar();
    };

    GradientReport report;
    for (Parameter* p : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + step;
            const double plus = evaluate();
            p->value[i] = saved - step;
            const double minus = evaluate();
            p->value[i] = saved;

            const double numeric = (plus - minus) / (2.0 * step);
            const double analytic = p->grad[i];
            const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
            ++report.checked;
            report.max_error = std::max(report.max_error, err);
            if (!(err <= tol)) {
                report.passed = false;
                report.violations.push_back({p->name, i, analytic, numeric, err});
            }
        }
    }
    return report;
}

}  // namespace vgat
