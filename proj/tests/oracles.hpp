#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance binary. None of these call into the library's algorithms.

#include <cmath>
#include <vector>

#include "vgat/clustering.hpp"

namespace oracle {

// 1-D mixture with unit variances and equal weights at the given means.
inline vgat::GmmModel line_model(const std::vector<double>& means) {
    vgat::GmmModel m;
    m.weights.assign(means.size(), 1.0 / static_cast<double>(means.size()));
    m.means = vgat::Matrix(means.size(), 1);
    m.variances = vgat::Matrix(means.size(), 1, 1.0);
    for (std::size_t c = 0; c < means.size(); ++c) m.means(c, 0) = means[c];
    return m;
}

inline vgat::Matrix column(const std::vector<double>& xs) {
    vgat::Matrix m(xs.size(), 1);
    for (std::size_t i = 0; i < xs.size(); ++i) m(i, 0) = xs[i];
    return m;
}

// Max posterior of a 1-D point under a unit-variance mixture, in long double.
inline double max_posterior(double z, const vgat::GmmModel& m) {
    long double best = 0, total = 0;
    for (std::size_t c = 0; c < m.components(); ++c) {
        const long double diff = z - m.means(c, 0);
        const long double p = m.weights[c] * std::exp(-0.5L * diff * diff);
        total += p;
        best = std::max(best, p);
    }
    return static_cast<double>(best / total);
}

// Posterior of component 0 in a two-component 1-D Gaussian mixture.
inline double two_component_posterior(double x, double pi0, double mu0, double var0, double mu1, double var1) {
    auto density = [](long double x, long double mu, long double var) {
        const long double pi = 3.141592653589793238462643383279502884L;
        return std::exp(-(x - mu) * (x - mu) / (2 * var)) / std::sqrt(2 * pi * var);
    };
    const long double a = pi0 * density(x, mu0, var0), b = (1 - pi0) * density(x, mu1, var1);
    return static_cast<double>(a / (a + b));
}

// O(n^2) Harrell enumeration.
inline double c_index(const std::vector<double>& risk, const std::vector<double>& time, const std::vector<int>& censor) {
    double concordant = 0;
    long comparable = 0;
    for (std::size_t i = 0; i < risk.size(); ++i)
        for (std::size_t j = 0; j < risk.size(); ++j) {
            if (censor[i] != 0 || !(time[i] < time[j])) continue;
            ++comparable;
            if (risk[i] > risk[j]) concordant += 1;
            else if (risk[i] == risk[j]) concordant += 0.5;
        }
    return concordant / static_cast<double>(comparable);
}

}  // namespace oracle
