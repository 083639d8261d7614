#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include "vgat/matrix.hpp"
#include "vgat/rng.hpp"

namespace vgat {

inline constexpr double kVarianceFloor = 1e-6;

struct Centroids {
    Matrix vectors;              // C_h x d
    bool degenerate = false;     // set when all input points coincide
    std::vector<double> objective_history;

    std::size_t count() const noexcept { return vectors.rows(); }
};

struct GmmModel {
    std::vector<double> weights;  // pi, sums to 1
    Matrix means;                 // C_h x d
    Matrix variances;             // C_h x d, diagonal covariances

    std::size_t components() const noexcept { return weights.size(); }
    std::size_t dim() const noexcept { return means.cols(); }
};

struct Responsibilities {
    Matrix gamma;                   // N_p x C_h
    std::vector<std::size_t> label; // argmax class per patch
    std::vector<double> max_posterior;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        s += diff * diff;
    }
    return s;
}

inline std::size_t nearest_centroid(std::span<const double> point, const Matrix& centroids, double* dist = nullptr) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.rows(); ++c) {
        const double dd = squared_distance(point, centroids.row(c));
        if (dd < best_d) {
            best_d = dd;
            best = c;
        }
    }
    if (dist != nullptr) *dist = best_d;
    return best;
}

inline double kmeans_objective(const Matrix& points, const Matrix& centroids) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.rows(); ++i) {
        double dd;
        nearest_centroid(points.row(i), centroids, &dd);
        total += dd;
    }
    return total;
}

// Lloyd iterations from k-means++ seeding. An empty cluster keeps its previous
// centroid so the objective cannot increase.
inline Centroids kmeans(const Matrix& points, std::size_t clusters, std::uint64_t seed, std::size_t max_iters = 100) {
    const std::size_t n = points.rows(), d = points.cols();
    if (clusters < 1) throw Error(ErrorKind::config, "kmeans: need at least one cluster");
    if (n < clusters) {
        throw Error(ErrorKind::dimension, "kmeans: " + std::to_string(n) + " points for " + std::to_string(clusters) +
                                              " clusters");
    }
    Centroids result;
    result.vectors = Matrix(clusters, d);

    bool all_identical = true;
    for (std::size_t i = 1; i < n && all_identical; ++i)
        all_identical = squared_distance(points.row(i), points.row(0)) == 0.0;
    if (all_identical) {
        for (std::size_t c = 0; c < clusters; ++c)
            std::copy_n(points.row(0).begin(), d, result.vectors.row(c).begin());
        result.degenerate = true;
        result.objective_history.push_back(0.0);
        return result;
    }

    Rng rng(seed);
    std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
    std::vector<char> chosen(n, 0);
    std::size_t first = static_cast<std::size_t>(rng.below(n));
    for (std::size_t c = 0; c < clusters; ++c) {
        std::size_t pick = first;
        if (c > 0) {
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) total += chosen[i] ? 0.0 : min_dist[i];
            if (total <= 0.0) {
                // Fewer distinct points than clusters; reuse unchosen points in order.
                pick = 0;
                while (chosen[pick]) ++pick;
            } else {
                double target = rng.uniform() * total, acc = 0.0;
                pick = n;
                for (std::size_t i = 0; i < n; ++i) {
                    if (chosen[i]) continue;
                    acc += min_dist[i];
                    if (acc >= target && min_dist[i] > 0.0) {
                        pick = i;
                        break;
                    }
                }
                if (pick == n) {
                    for (std::size_t i = n; i-- > 0;)
                        if (!chosen[i] && min_dist[i] > 0.0) {
                            pick = i;
                            break;
                        }
                }
            }
        }
        chosen[pick] = 1;
        std::copy_n(points.row(pick).begin(), d, result.vectors.row(c).begin());
        for (std::size_t i = 0; i < n; ++i)
            min_dist[i] = std::min(min_dist[i], squared_distance(points.row(i), points.row(pick)));
    }

    std::vector<std::size_t> assign(n, clusters);
    for (std::size_t iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        double objective = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double dd;
            const std::size_t c = nearest_centroid(points.row(i), result.vectors, &dd);
            objective += dd;
            if (c != assign[i]) {
                assign[i] = c;
                changed = true;
            }
        }
        result.objective_history.push_back(objective);
        if (!changed) break;
        Matrix sums(clusters, d);
        std::vector<std::size_t> counts(clusters, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[assign[i]];
            auto row = sums.row(assign[i]);
            const auto p = points.row(i);
            for (std::size_t j = 0; j < d; ++j) row[j] += p[j];
        }
        for (std::size_t c = 0; c < clusters; ++c) {
            if (counts[c] == 0) continue;
            for (std::size_t j = 0; j < d; ++j)
                result.vectors(c, j) = sums(c, j) / static_cast<double>(counts[c]);
        }
    }
    result.objective_history.push_back(kmeans_objective(points, result.vectors));
    return result;
}

inline std::vector<double> global_variance(const Matrix& points) {
    const std::size_t n = points.rows(), d = points.cols();
    std::vector<double> mean(d, 0.0), var(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += points(i, j);
    for (double& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) var[j] += (points(i, j) - mean[j]) * (points(i, j) - mean[j]);
    for (double& v : var) v = std::max(v / static_cast<double>(n), kVarianceFloor);
    return var;
}

// M-step over the hard K-means assignment: mu = centroids, pi = assignment
// frequencies, Sigma = per-dimension variance of each cluster's points.
inline GmmModel gmm_from_centroids(const Matrix& points, const Centroids& centroids) {
    const std::size_t n = points.rows(), d = points.cols(), C = centroids.count();
    if (centroids.vectors.cols() != d) {
        throw Error(ErrorKind::dimension, "gmm_from_centroids: centroids " + shape_string(centroids.vectors) +
                                              " vs points " + shape_string(points));
    }
    if (n == 0) throw Error(ErrorKind::dimension, "gmm_from_centroids: no points");
    GmmModel model;
    model.means = centroids.vectors;
    model.variances = Matrix(C, d);
    model.weights.assign(C, 0.0);

    std::vector<std::size_t> assign(n);
    std::vector<std::size_t> counts(C, 0);
    Matrix sums(C, d);
    for (std::size_t i = 0; i < n; ++i) {
        assign[i] = nearest_centroid(points.row(i), centroids.vectors);
        ++counts[assign[i]];
        for (std::size_t j = 0; j < d; ++j) sums(assign[i], j) += points(i, j);
    }
    Matrix sq(C, d);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = assign[i];
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = points(i, j) - sums(c, j) / static_cast<double>(counts[c]);
            sq(c, j) += diff * diff;
        }
    }
    const auto fallback = global_variance(points);
    const double weight_floor = 1.0 / (10.0 * static_cast<double>(C));
    double total = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        if (counts[c] == 0) {
            model.weights[c] = weight_floor;
            for (std::size_t j = 0; j < d; ++j) model.variances(c, j) = fallback[j];
        } else {
            model.weights[c] = static_cast<double>(counts[c]) / static_cast<double>(n);
            for (std::size_t j = 0; j < d; ++j)
                model.variances(c, j) = std::max(sq(c, j) / static_cast<double>(counts[c]), kVarianceFloor);
        }
        total += model.weights[c];
    }
    for (double& w : model.weights) w /= total;
    return model;
}

namespace detail {

// log(pi_c) + log N(z; mu_c, diag(Sigma_c)) for every component.
inline void log_joint(std::span<const double> z, const GmmModel& m, std::span<double> out) {
    const std::size_t d = m.dim();
    const double log_2pi = std::log(2.0 * std::numbers::pi);
    for (std::size_t c = 0; c < m.components(); ++c) {
        double acc = std::log(m.weights[c]) - 0.5 * static_cast<double>(d) * log_2pi;
        for (std::size_t j = 0; j < d; ++j) {
            const double var = m.variances(c, j);
            const double diff = z[j] - m.means(c, j);
            acc -= 0.5 * (std::log(var) + diff * diff / var);
        }
        out[c] = acc;
    }
}

inline double log_sum_exp(std::span<const double> v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v) mx = std::max(mx, x);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

inline void check_model(const Matrix& points, const GmmModel& m) {
    if (m.components() == 0 || m.means.rows() != m.components() || !m.variances.same_shape(m.means)) {
        throw Error(ErrorKind::dimension, "malformed GMM");
    }
    if (points.cols() != m.dim()) {
        throw Error(ErrorKind::dimension, "GMM dimension " + std::to_string(m.dim()) + " does not match points " +
                                              shape_string(points));
    }
}

}  // namespace detail

// Observed-data log-likelihood sum_i log sum_c pi_c N(z_i; mu_c, Sigma_c).
inline double gmm_log_likelihood(const Matrix& points, const GmmModel& model) {
    detail::check_model(points, model);
    std::vector<double> lj(model.components());
    double total = 0.0;
    for (std::size_t i = 0; i < points.rows(); ++i) {
        detail::log_joint(points.row(i), model, lj);
        total += detail::log_sum_exp(lj);
    }
    return total;
}

// Posterior gamma(z_i, c), normalized in log space, with per-patch argmax/max.
inline Responsibilities responsibilities(const Matrix& points, const GmmModel& model) {
    detail::check_model(points, model);
    const std::size_t n = points.rows(), C = model.components();
    Responsibilities r{Matrix(n, C), std::vector<std::size_t>(n), std::vector<double>(n)};
    std::vector<double> lj(C);
    for (std::size_t i = 0; i < n; ++i) {
        detail::log_joint(points.row(i), model, lj);
        const double norm = detail::log_sum_exp(lj);
        auto row = r.gamma.row(i);
        std::size_t best = 0;
        for (std::size_t c = 0; c < C; ++c) {
            row[c] = std::exp(lj[c] - norm);
            if (row[c] > row[best]) best = c;
        }
        r.label[i] = best;
        r.max_posterior[i] = row[best];
    }
    return r;
}

struct EmFit {
    GmmModel model;
    std::vector<double> log_likelihood;  // before the first iteration, then after each
};

// Diagonal-covariance EM with the variance floor enforced in every M-step.
inline EmFit em_fit(const Matrix& points, GmmModel model, std::size_t iters) {
    detail::check_model(points, model);
    const std::size_t n = points.rows(), d = points.cols(), C = model.components();
    EmFit fit;
    fit.log_likelihood.push_back(gmm_log_likelihood(points, model));
    for (std::size_t it = 0; it < iters; ++it) {
        const Responsibilities r = responsibilities(points, model);
        std::vector<double> nk(C, 0.0);
        Matrix mean_acc(C, d);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < C; ++c) {
                const double g = r.gamma(i, c);
                nk[c] += g;
                for (std::size_t j = 0; j < d; ++j) mean_acc(c, j) += g * points(i, j);
            }
        GmmModel next = model;
        for (std::size_t c = 0; c < C; ++c) {
            if (nk[c] < 1e-12) continue;  // component vanished; keep its parameters
            for (std::size_t j = 0; j < d; ++j) next.means(c, j) = mean_acc(c, j) / nk[c];
        }
        Matrix var_acc(C, d);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < C; ++c) {
                const double g = r.gamma(i, c);
                for (std::size_t j = 0; j < d; ++j) {
                    const double diff = points(i, j) - next.means(c, j);
                    var_acc(c, j) += g * diff * diff;
                }
            }
        double total = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            if (nk[c] < 1e-12) {
                total += next.weights[c];
                continue;
            }
            next.weights[c] = nk[c] / static_cast<double>(n);
            total += next.weights[c];
            for (std::size_t j = 0; j < d; ++j) next.variances(c, j) = std::max(var_acc(c, j) / nk[c], kVarianceFloor);
        }
        for (double& w : next.weights) w /= total;
        model = std::move(next);
        fit.log_likelihood.push_back(gmm_log_likelihood(points, model));
    }
    fit.model = std::move(model);
    return fit;
}

// Uniform subsample of at most `cap` rows, seeded; order of retained rows preserved.
inline Matrix sample_rows(const Matrix& points, std::size_t cap, std::uint64_t seed) {
    if (points.rows() <= cap) return points;
    std::vector<std::size_t> idx(points.rows());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed);
    rng.shuffle(idx);
    idx.resize(cap);
    std::sort(idx.begin(), idx.end());
    return gather_rows(points, idx);
}

// GMM serialized as one C_h x (1 + 2d) matrix: [pi | mu | Sigma] per row.
inline Matrix pack_gmm(const GmmModel& m) {
    const std::size_t C = m.components(), d = m.dim();
    Matrix packed(C, 1 + 2 * d);
    for (std::size_t c = 0; c < C; ++c) {
        packed(c, 0) = m.weights[c];
        for (std::size_t j = 0; j < d; ++j) {
            packed(c, 1 + j) = m.means(c, j);
            packed(c, 1 + d + j) = m.variances(c, j);
        }
    }
    return packed;
}

inline GmmModel unpack_gmm(const Matrix& packed) {
    if (packed.cols() < 3 || (packed.cols() - 1) % 2 != 0) {
        throw Error(ErrorKind::load, "packed GMM has invalid width " + std::to_string(packed.cols()));
    }
    const std::size_t C = packed.rows(), d = (packed.cols() - 1) / 2;
    GmmModel m{std::vector<double>(C), Matrix(C, d), Matrix(C, d)};
    double total = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        m.weights[c] = packed(c, 0);
        total += m.weights[c];
        for (std::size_t j = 0; j < d; ++j) {
            m.means(c, j) = packed(c, 1 + j);
            m.variances(c, j) = std::max(packed(c, 1 + d + j), kVarianceFloor);
        }
    }
    if (!(total > 0.0)) throw Error(ErrorKind::load, "packed GMM weights do not sum to a positive value");
    for (double& w : m.weights) w /= total;
    return m;
}

}  // namespace vgat
