#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vgat/clustering.hpp"
#include "vgat/dataio.hpp"

namespace vgat {

enum class SelectionStrategy { em, cluster, random, none };

enum class Provenance { rare_cluster, top_max_posterior, top_min_posterior, random_pad, nearest_centroid, all };

inline std::string_view to_string(SelectionStrategy s) {
    switch (s) {
        case SelectionStrategy::em: return "em";
        case SelectionStrategy::cluster: return "cluster";
        case SelectionStrategy::random: return "random";
        case SelectionStrategy::none: return "none";
    }
    return "?";
}

inline SelectionStrategy parse_strategy(std::string_view s) {
    if (s == "em") return SelectionStrategy::em;
    if (s == "cluster") return SelectionStrategy::cluster;
    if (s == "random") return SelectionStrategy::random;
    if (s == "none") return SelectionStrategy::none;
    throw Error(ErrorKind::config, "unknown selection strategy '" + std::string(s) + "'");
}

inline std::string_view to_string(Provenance p) {
    switch (p) {
        case Provenance::rare_cluster: return "rare-cluster";
        case Provenance::top_max_posterior: return "top-max-posterior";
        case Provenance::top_min_posterior: return "top-min-posterior";
        case Provenance::random_pad: return "random-pad";
        case Provenance::nearest_centroid: return "nearest-centroid";
        case Provenance::all: return "all";
    }
    return "?";
}

struct SelectedPatch {
    std::size_t index = 0;
    Provenance provenance = Provenance::random_pad;
    std::size_t cluster = 0;
    double posterior = 0.0;
};

struct SelectionResult {
    std::vector<SelectedPatch> patches;  // ascending by index
    SelectionStrategy strategy = SelectionStrategy::none;

    std::vector<std::size_t> indices() const {
        std::vector<std::size_t> out;
        out.reserve(patches.size());
        for (const auto& p : patches) out.push_back(p.index);
        return out;
    }
    std::size_t size() const noexcept { return patches.size(); }
};

struct EmSelectOptions {
    std::size_t n_select = 256;
    std::uint64_t seed = 0;
    // Per-side K of the top-K branch; default max(1, floor(N_S / (4 C_h))).
    std::optional<std::size_t> top_k;
};

namespace detail {

inline void require_selectable(std::size_t n_select, std::size_t n_patches) {
    if (n_select == 0) throw Error(ErrorKind::selection, "N_S must be positive");
    if (n_select > n_patches) {
        throw Error(ErrorKind::selection, "N_S = " + std::to_string(n_select) + " exceeds bag size " +
                                              std::to_string(n_patches));
    }
}

inline void sort_by_index(SelectionResult& r) {
    std::sort(r.patches.begin(), r.patches.end(),
              [](const SelectedPatch& a, const SelectedPatch& b) { return a.index < b.index; });
}

// Non-overlapping seeded padding from the patches not yet chosen.
inline void random_pad(SelectionResult& r, std::size_t n_patches, std::size_t target, std::uint64_t seed,
                       const Responsibilities* resp) {
    if (r.patches.size() >= target) return;
    std::vector<char> used(n_patches, 0);
    for (const auto& p : r.patches) used[p.index] = 1;
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < n_patches; ++i)
        if (!used[i]) pool.push_back(i);
    Rng rng(seed);
    rng.shuffle(pool);
    const std::size_t need = target - r.patches.size();
    for (std::size_t k = 0; k < need; ++k) {
        SelectedPatch sp{pool[k], Provenance::random_pad, 0, 0.0};
        if (resp != nullptr) {
            sp.cluster = resp->label[pool[k]];
            sp.posterior = resp->max_posterior[pool[k]];
        }
        r.patches.push_back(sp);
    }
}

}  // namespace detail

// Multi-scale TOP-K selection over GMM responsibilities.
//
// Every patch is classified by its max-posterior component. Classes with fewer
// than N_S/32 patches are taken whole; classes with at least N_S/16 patches
// contribute their K highest- and K lowest-posterior members; classes between
// the two thresholds contribute nothing directly. The result is then padded
// with seeded non-overlapping random patches up to N_S. If the deterministic
// picks exceed N_S, the top-K picks closest to the bag's mean max-posterior
// are dropped first; rare-class picks are dropped only when they alone exceed N_S.
inline SelectionResult select_em(const Matrix& bag, const GmmModel& model, const EmSelectOptions& opt) {
    const std::size_t n = bag.rows();
    detail::require_selectable(opt.n_select, n);
    const Responsibilities resp = responsibilities(bag, model);
    const std::size_t C = model.components();
    const double ns = static_cast<double>(opt.n_select);
    const std::size_t k_side =
        opt.top_k.value_or(std::max<std::size_t>(1, opt.n_select / (4 * C)));

    std::vector<std::vector<std::size_t>> members(C);
    for (std::size_t i = 0; i < n; ++i) members[resp.label[i]].push_back(i);

    std::vector<SelectedPatch> rare, topk;
    for (std::size_t c = 0; c < C; ++c) {
        const auto& m = members[c];
        const double count = static_cast<double>(m.size());
        if (m.empty()) continue;
        if (count < ns / 32.0) {
            for (std::size_t i : m) rare.push_back({i, Provenance::rare_cluster, c, resp.max_posterior[i]});
        } else if (count >= ns / 16.0) {
            std::vector<std::size_t> order = m;
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return resp.max_posterior[a] > resp.max_posterior[b];
            });
            const std::size_t take_max = std::min(k_side, order.size());
            for (std::size_t k = 0; k < take_max; ++k)
                topk.push_back({order[k], Provenance::top_max_posterior, c, resp.max_posterior[order[k]]});
            const std::size_t take_min = std::min(k_side, order.size() - take_max);
            for (std::size_t k = 0; k < take_min; ++k) {
                const std::size_t i = order[order.size() - 1 - k];
                topk.push_back({i, Provenance::top_min_posterior, c, resp.max_posterior[i]});
            }
        }
    }

    SelectionResult result;
    result.strategy = SelectionStrategy::em;
    if (rare.size() + topk.size() > opt.n_select) {
        double mean_post = 0.0;
        for (double p : resp.max_posterior) mean_post += p;
        mean_post /= static_cast<double>(n);
        // Keep the top-K picks farthest from the mean posterior; ties keep the lower index.
        std::stable_sort(topk.begin(), topk.end(), [mean_post](const SelectedPatch& a, const SelectedPatch& b) {
            const double da = std::abs(a.posterior - mean_post), db = std::abs(b.posterior - mean_post);
            if (da != db) return da > db;
            return a.index < b.index;
        });
        if (rare.size() >= opt.n_select) {
            // Rarest classes first, then by index.
            std::stable_sort(rare.begin(), rare.end(), [&](const SelectedPatch& a, const SelectedPatch& b) {
                const auto ca = members[a.cluster].size(), cb = members[b.cluster].size();
                if (ca != cb) return ca < cb;
                return a.index < b.index;
            });
            rare.resize(opt.n_select);
            topk.clear();
        } else {
            topk.resize(opt.n_select - rare.size());
        }
    }
    result.patches = rare;
    result.patches.insert(result.patches.end(), topk.begin(), topk.end());
    detail::random_pad(result, n, opt.n_select, opt.seed, &resp);
    detail::sort_by_index(result);
    return result;
}

// Proportional allocation: each nearest-centroid cluster contributes its
// largest-remainder share of N_S, taking the patches closest to its centroid.
inline SelectionResult select_cluster(const Matrix& bag, const Matrix& centroids, std::size_t n_select) {
    const std::size_t n = bag.rows(), C = centroids.rows();
    detail::require_selectable(n_select, n);
    if (centroids.cols() != bag.cols()) {
        throw Error(ErrorKind::dimension, "select_cluster: centroids " + shape_string(centroids) + " vs bag " +
                                              shape_string(bag));
    }
    std::vector<std::size_t> label(n);
    std::vector<double> dist(n);
    std::vector<std::vector<std::size_t>> members(C);
    for (std::size_t i = 0; i < n; ++i) {
        label[i] = nearest_centroid(bag.row(i), centroids, &dist[i]);
        members[label[i]].push_back(i);
    }
    std::vector<std::size_t> alloc(C, 0);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t allocated = 0;
    for (std::size_t c = 0; c < C; ++c) {
        const double quota =
            static_cast<double>(members[c].size()) * static_cast<double>(n_select) / static_cast<double>(n);
        alloc[c] = static_cast<std::size_t>(std::floor(quota));
        allocated += alloc[c];
        remainders.emplace_back(quota - std::floor(quota), c);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; allocated < n_select && k < remainders.size(); ++k) {
        const std::size_t c = remainders[k].second;
        if (alloc[c] < members[c].size()) {
            ++alloc[c];
            ++allocated;
        }
    }

    auto by_distance = [&dist](std::size_t a, std::size_t b) {
        if (dist[a] != dist[b]) return dist[a] < dist[b];
        return a < b;
    };
    SelectionResult result;
    result.strategy = SelectionStrategy::cluster;
    std::vector<char> used(n, 0);
    for (std::size_t c = 0; c < C; ++c) {
        auto order = members[c];
        std::sort(order.begin(), order.end(), by_distance);
        for (std::size_t k = 0; k < alloc[c]; ++k) {
            used[order[k]] = 1;
            result.patches.push_back({order[k], Provenance::nearest_centroid, c, dist[order[k]]});
        }
    }
    if (result.patches.size() < n_select) {
        std::vector<std::size_t> rest;
        for (std::size_t i = 0; i < n; ++i)
            if (!used[i]) rest.push_back(i);
        std::sort(rest.begin(), rest.end(), by_distance);
        for (std::size_t k = 0; result.patches.size() < n_select; ++k)
            result.patches.push_back({rest[k], Provenance::nearest_centroid, label[rest[k]], dist[rest[k]]});
    }
    detail::sort_by_index(result);
    return result;
}

inline SelectionResult select_random(const Matrix& bag, std::size_t n_select, std::uint64_t seed) {
    detail::require_selectable(n_select, bag.rows());
    SelectionResult result;
    result.strategy = SelectionStrategy::random;
    detail::random_pad(result, bag.rows(), n_select, seed, nullptr);
    detail::sort_by_index(result);
    return result;
}

// Strategy "none": every patch is a visual prompt.
inline SelectionResult select_all(const Matrix& bag) {
    SelectionResult result;
    result.strategy = SelectionStrategy::none;
    for (std::size_t i = 0; i < bag.rows(); ++i) result.patches.push_back({i, Provenance::all, 0, 0.0});
    return result;
}

// Tab-separated dump: index, class, posterior, provenance.
inline std::string format_selection(const SelectionResult& r) {
    std::string out = "index\tclass\tposterior\tprovenance\n";
    for (const auto& p : r.patches) {
        out += std::to_string(p.index) + "\t" + std::to_string(p.cluster) + "\t" + detail::format_double(p.posterior) +
               "\t" + std::string(to_string(p.provenance)) + "\n";
    }
    return out;
}

}  // namespace vgat
