#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "vgat/dataio.hpp"
#include "vgat/init.hpp"
#include "vgat/ops.hpp"

namespace vgat {

// MLP from the fused CLS vector to one hazard logit per bin.
struct SurvivalHead {
    Parameter w1, b1, w2, b2;

    static SurvivalHead create(std::size_t in_dim, std::size_t hidden, Rng& rng) {
        return {init::fan_in_uniform("head.w1", in_dim, hidden, in_dim, rng), init::constant("head.b1", 1, hidden, 0.0),
                init::fan_in_uniform("head.w2", hidden, kNumBins, hidden, rng),
                init::constant("head.b2", 1, kNumBins, 0.0)};
    }

    std::vector<Parameter*> parameters() { return {&w1, &b1, &w2, &b2}; }
};

inline Var head_logits(Var features, SurvivalHead& head) {
    Tape& t = features.tape();
    const Var h = gelu(add_row(matmul(features, t.parameter(head.w1)), t.parameter(head.b1)));
    return add_row(matmul(h, t.parameter(head.w2)), t.parameter(head.b2));
}

struct HazardProfile {
    std::array<double, kNumBins> hazard{};
    std::array<double, kNumBins> survival{};
    double risk = 0.0;
};

// h(r) = sigmoid(logit_r); S(r) = prod_{u<=r} (1 - h(u)); risk = -sum_r S(r).
inline HazardProfile hazards(std::span<const double> logits) {
    if (logits.size() != kNumBins) {
        throw Error(ErrorKind::dimension, "hazards: expected 4 logits, got " + std::to_string(logits.size()));
    }
    HazardProfile p;
    double s = 1.0;
    for (std::size_t r = 0; r < kNumBins; ++r) {
        p.hazard[r] = sigmoid(logits[r]);
        s *= 1.0 - p.hazard[r];
        p.survival[r] = s;
        p.risk -= s;
    }
    return p;
}

namespace detail {

inline double floored_log(double x) { return std::log(std::max(x, kProbabilityFloor)); }

inline int require_bin(const SurvivalRecord& record) {
    if (!record.bin || *record.bin < 0 || *record.bin >= static_cast<int>(kNumBins)) {
        throw Error(ErrorKind::loss, "no discrete bin assigned for '" + record.sample_id + "'");
    }
    return *record.bin;
}

}  // namespace detail

// Discrete-time survival NLL with S(-1) = 1:
//   censored:   -log S(Y)
//   uncensored: -log S(Y-1) - log h(Y)
inline double nll_loss(const HazardProfile& p, const SurvivalRecord& record) {
    const int y = detail::require_bin(record);
    if (record.censor == 1) return -detail::floored_log(p.survival[y]);
    const double s_prev = y == 0 ? 1.0 : p.survival[y - 1];
    return -detail::floored_log(s_prev) - detail::floored_log(p.hazard[y]);
}

inline Var nll_loss(Var logits, const SurvivalRecord& record) {
    const HazardProfile p = hazards(logits.value().values());
    const double value = nll_loss(p, record);
    const int y = detail::require_bin(record);
    const bool censored = record.censor == 1;
    const std::size_t il = logits.id();
    return logits.tape().record(Matrix(1, 1, value), {logits}, [il, p, y, censored](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        Matrix& d = t.grad(il);
        // d(-log(1 - h_u))/dl_u = h_u ; d(-log h_y)/dl_y = h_y - 1. Floored terms are flat.
        const int last_survival_term = censored ? y : y - 1;
        const double s_last = last_survival_term < 0 ? 1.0 : p.survival[last_survival_term];
        if (s_last > kProbabilityFloor) {
            for (int u = 0; u <= last_survival_term; ++u) d[u] += g * p.hazard[u];
        }
        if (!censored && p.hazard[y] > kProbabilityFloor) d[y] += g * (p.hazard[y] - 1.0);
    });
}

inline Var risk_score(Var logits) {
    const HazardProfile p = hazards(logits.value().values());
    const std::size_t il = logits.id();
    return logits.tape().record(Matrix(1, 1, p.risk), {logits}, [il, p](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        Matrix& d = t.grad(il);
        // dS(r)/dl_u = -S(r) h_u for u <= r, so d(risk)/dl_u = h_u * sum_{r>=u} S(r).
        double tail = 0.0;
        for (std::size_t u = kNumBins; u-- > 0;) {
            tail += p.survival[u];
            d[u] += g * p.hazard[u] * tail;
        }
    });
}

}  // namespace vgat
