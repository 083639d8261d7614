#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "vgat/error.hpp"

namespace vgat {

// ---------------------------------------------------------------------------
// Concordance index (Harrell)
// ---------------------------------------------------------------------------

struct ConcordanceCounts {
    std::uint64_t comparable = 0;
    std::uint64_t concordant_halves = 0;  // 2 per concordant pair, 1 per risk tie

    double index() const { return static_cast<double>(concordant_halves) / (2.0 * static_cast<double>(comparable)); }
};

namespace detail {

inline void require_same_length(std::size_t a, std::size_t b, std::size_t c, const char* what) {
    if (a != b || a != c) throw Error(ErrorKind::dimension, std::string(what) + ": input lengths differ");
}

// Fenwick tree over risk ranks.
class RankCounter {
   public:
    explicit RankCounter(std::size_t n) : tree_(n + 1, 0) {}
    void add(std::size_t rank) {
        for (std::size_t i = rank + 1; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
    }
    // Number of inserted ranks strictly below `rank`.
    std::uint64_t below(std::size_t rank) const {
        std::uint64_t s = 0;
        for (std::size_t i = rank; i > 0; i -= i & (~i + 1)) s += tree_[i];
        return s;
    }

   private:
    std::vector<std::uint64_t> tree_;
};

}  // namespace detail

// Pair (i, j) is comparable when t_i < t_j and i had the event; it is
// concordant when risk_i > risk_j and counts one half when the risks tie.
// Counted in O(n log n) by sweeping times in descending order.
inline ConcordanceCounts concordance_counts(std::span<const double> risks, std::span<const double> times,
                                            std::span<const int> censors) {
    detail::require_same_length(risks.size(), times.size(), censors.size(), "concordance_index");
    const std::size_t n = risks.size();
    std::vector<std::size_t> by_risk(n);
    std::iota(by_risk.begin(), by_risk.end(), 0);
    std::sort(by_risk.begin(), by_risk.end(), [&](std::size_t a, std::size_t b) { return risks[a] < risks[b]; });
    std::vector<std::size_t> rank(n);  // dense rank, equal risks share a rank
    for (std::size_t k = 0, r = 0; k < n; ++k) {
        if (k > 0 && risks[by_risk[k]] != risks[by_risk[k - 1]]) ++r;
        rank[by_risk[k]] = r;
    }

    std::vector<std::size_t> by_time(n);
    std::iota(by_time.begin(), by_time.end(), 0);
    std::sort(by_time.begin(), by_time.end(), [&](std::size_t a, std::size_t b) { return times[a] > times[b]; });

    ConcordanceCounts counts;
    detail::RankCounter later(n);
    std::size_t inserted = 0;
    for (std::size_t k = 0; k < n;) {
        // Group of equal times: none of them is strictly later than another.
        std::size_t end = k;
        while (end < n && times[by_time[end]] == times[by_time[k]]) ++end;
        for (std::size_t m = k; m < end; ++m) {
            const std::size_t i = by_time[m];
            if (censors[i] != 0) continue;
            const std::uint64_t lower = later.below(rank[i]);
            const std::uint64_t lower_or_equal = later.below(rank[i] + 1);
            counts.comparable += inserted;
            counts.concordant_halves += 2 * lower + (lower_or_equal - lower);
        }
        for (std::size_t m = k; m < end; ++m) {
            later.add(rank[by_time[m]]);
            ++inserted;
        }
        k = end;
    }
    return counts;
}

inline double concordance_index(std::span<const double> risks, std::span<const double> times,
                                std::span<const int> censors) {
    const ConcordanceCounts c = concordance_counts(risks, times, censors);
    if (c.comparable == 0) throw Error(ErrorKind::metric, "concordance_index: no comparable pairs");
    return c.index();
}

// ---------------------------------------------------------------------------
// Kaplan-Meier
// ---------------------------------------------------------------------------

// Index 0 is the origin (time 0, survival 1, everyone at risk); every later
// entry is a distinct event time.
struct KmCurve {
    std::vector<double> times;
    std::vector<double> survival;
    std::vector<std::size_t> at_risk;
    std::vector<std::size_t> events;

    // Right-continuous step value at time t.
    double survival_at(double t) const {
        double s = 1.0;
        for (std::size_t k = 1; k < times.size() && times[k] <= t; ++k) s = survival[k];
        return s;
    }
};

inline KmCurve kaplan_meier(std::span<const double> times, std::span<const int> censors) {
    if (times.size() != censors.size()) throw Error(ErrorKind::dimension, "kaplan_meier: input lengths differ");
    if (times.empty()) throw Error(ErrorKind::metric, "kaplan_meier: no patients");
    std::vector<std::size_t> order(times.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

    KmCurve curve;
    curve.times.push_back(0.0);
    curve.survival.push_back(1.0);
    curve.at_risk.push_back(times.size());
    curve.events.push_back(0);
    std::size_t at_risk = times.size();
    double s = 1.0;
    for (std::size_t k = 0; k < order.size();) {
        const double t = times[order[k]];
        std::size_t events = 0, leaving = 0;
        while (k < order.size() && times[order[k]] == t) {
            if (censors[order[k]] == 0) ++events;
            ++leaving;
            ++k;
        }
        if (events > 0) {
            s *= 1.0 - static_cast<double>(events) / static_cast<double>(at_risk);
            curve.times.push_back(t);
            curve.survival.push_back(s);
            curve.at_risk.push_back(at_risk);
            curve.events.push_back(events);
        }
        at_risk -= leaving;
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Chi-square tail and logrank
// ---------------------------------------------------------------------------

// Regularized upper incomplete gamma Q(a, x): series for x < a + 1, Lentz
// continued fraction otherwise, both to relative tolerance 1e-10.
inline double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw Error(ErrorKind::metric, "gamma_q: invalid arguments");
    if (x == 0.0) return 1.0;
    constexpr double kTol = 1e-10;
    constexpr int kMaxIter = 10000;
    const double log_prefix = -x + a * std::log(x) - std::lgamma(a);
    if (x < a + 1.0) {
        double term = 1.0 / a, sum = term;
        for (int n = 1; n < kMaxIter; ++n) {
            term *= x / (a + n);
            sum += term;
            if (std::abs(term) < std::abs(sum) * kTol) break;
        }
        return std::clamp(1.0 - sum * std::exp(log_prefix), 0.0, 1.0);
    }
    constexpr double kTiny = 1e-300;
    double b = x + 1.0 - a, c = 1.0 / kTiny, d = 1.0 / b, h = d;
    for (int i = 1; i < kMaxIter; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < kTiny) d = kTiny;
        c = b + an / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < kTol) break;
    }
    return std::clamp(std::exp(log_prefix) * h, 0.0, 1.0);
}

inline double chi_square_upper_tail(double chi2, double dof = 1.0) { return gamma_q(0.5 * dof, 0.5 * chi2); }

struct SurvivalGroup {
    std::vector<double> times;
    std::vector<int> censors;
};

struct LogrankResult {
    double chi2 = 0.0;
    double p = 1.0;
    double observed_minus_expected = 0.0;
    double variance = 0.0;
};

inline LogrankResult logrank_test(const SurvivalGroup& a, const SurvivalGroup& b) {
    if (a.times.size() != a.censors.size() || b.times.size() != b.censors.size()) {
        throw Error(ErrorKind::dimension, "logrank_test: input lengths differ");
    }
    struct Obs {
        double time;
        bool event;
        bool in_a;
    };
    std::vector<Obs> all;
    for (std::size_t i = 0; i < a.times.size(); ++i) all.push_back({a.times[i], a.censors[i] == 0, true});
    for (std::size_t i = 0; i < b.times.size(); ++i) all.push_back({b.times[i], b.censors[i] == 0, false});
    std::sort(all.begin(), all.end(), [](const Obs& x, const Obs& y) { return x.time < y.time; });

    double n_a = static_cast<double>(a.times.size()), n = static_cast<double>(all.size());
    double o_minus_e = 0.0, var = 0.0;
    std::size_t total_events = 0;
    for (std::size_t k = 0; k < all.size();) {
        const double t = all[k].time;
        double d = 0.0, d_a = 0.0, leave = 0.0, leave_a = 0.0;
        while (k < all.size() && all[k].time == t) {
            if (all[k].event) {
                d += 1.0;
                if (all[k].in_a) d_a += 1.0;
            }
            leave += 1.0;
            if (all[k].in_a) leave_a += 1.0;
            ++k;
        }
        if (d > 0.0) {
            total_events += static_cast<std::size_t>(d);
            o_minus_e += d_a - d * n_a / n;
            if (n > 1.0) var += d * (n_a / n) * (1.0 - n_a / n) * (n - d) / (n - 1.0);
        }
        n -= leave;
        n_a -= leave_a;
    }
    if (total_events == 0) throw Error(ErrorKind::metric, "logrank_test: no events in either group");
    if (!(var > 0.0)) throw Error(ErrorKind::metric, "logrank_test: zero variance");
    LogrankResult r;
    r.observed_minus_expected = o_minus_e;
    r.variance = var;
    r.chi2 = o_minus_e * o_minus_e / var;
    r.p = chi_square_upper_tail(r.chi2);
    return r;
}

// ---------------------------------------------------------------------------
// Median stratification
// ---------------------------------------------------------------------------

struct Stratification {
    std::vector<bool> high;  // per patient
    double median = 0.0;
    bool degenerate = false;  // no patient above the median
};

// Median is the lower central order statistic; risk > median is high risk.
inline Stratification stratify_by_median(std::span<const double> risks) {
    if (risks.size() < 2) throw Error(ErrorKind::metric, "stratify_by_median: need at least 2 patients");
    std::vector<double> sorted(risks.begin(), risks.end());
    std::sort(sorted.begin(), sorted.end());
    Stratification s;
    s.median = sorted[(sorted.size() - 1) / 2];
    s.high.resize(risks.size());
    std::size_t n_high = 0;
    for (std::size_t i = 0; i < risks.size(); ++i) {
        s.high[i] = risks[i] > s.median;
        n_high += s.high[i] ? 1 : 0;
    }
    s.degenerate = n_high == 0;
    return s;
}

}  // namespace vgat
