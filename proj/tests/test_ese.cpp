#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "oracles.hpp"
#include "vgat/ese.hpp"

using namespace vgat;

namespace {

std::set<std::size_t> with_provenance(const SelectionResult& r, Provenance p) {
    std::set<std::size_t> out;
    for (const auto& s : r.patches)
        if (s.provenance == p) out.insert(s.index);
    return out;
}

void expect_valid(const SelectionResult& r, std::size_t n_select, std::size_t n_patches) {
    ASSERT_EQ(r.size(), n_select);
    std::set<std::size_t> seen;
    for (const auto& p : r.patches) {
        EXPECT_LT(p.index, n_patches);
        EXPECT_TRUE(seen.insert(p.index).second) << "duplicate " << p.index;
    }
}

}  // namespace

TEST(SelectEm, RareClassTakenWhole) {
    // N_S = 96: rare below 3 patches, qualifying from 6. Class 0 has 2 patches.
    std::vector<double> xs{0.1, -0.2};
    for (int i = 0; i < 100; ++i) xs.push_back(20.0 + 0.02 * (i - 50));
    const GmmModel m = oracle::line_model({0.0, 20.0});
    const SelectionResult r = select_em(oracle::column(xs), m, {96, 5, std::nullopt});
    expect_valid(r, 96, xs.size());
    EXPECT_EQ(with_provenance(r, Provenance::rare_cluster), (std::set<std::size_t>{0, 1}));
    // K = max(1, floor(96 / (4 * 2))) = 12 per side.
    EXPECT_EQ(with_provenance(r, Provenance::top_max_posterior).size(), 12u);
    EXPECT_EQ(with_provenance(r, Provenance::top_min_posterior).size(), 12u);
    EXPECT_EQ(with_provenance(r, Provenance::random_pad).size(), 70u);
}

TEST(SelectEm, SingleQualifyingClassWithTwoKEqualsNs) {
    // 40 patches all nearer component 0, close enough to the boundary that posteriors differ in double.
    std::vector<double> xs;
    Rng rng(3);
    for (int i = 0; i < 40; ++i) xs.push_back(2.0 + 1.9 * rng.uniform());
    const GmmModel m = oracle::line_model({0.0, 8.0});
    const SelectionResult r = select_em(oracle::column(xs), m, {16, 1, 8});
    expect_valid(r, 16, 40);

    std::vector<std::size_t> order(40);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return oracle::max_posterior(xs[a], m) > oracle::max_posterior(xs[b], m);
    });
    const std::set<std::size_t> highest(order.begin(), order.begin() + 8);
    const std::set<std::size_t> lowest(order.end() - 8, order.end());
    EXPECT_EQ(with_provenance(r, Provenance::top_max_posterior), highest);
    EXPECT_EQ(with_provenance(r, Provenance::top_min_posterior), lowest);
    EXPECT_TRUE(with_provenance(r, Provenance::random_pad).empty());
}

TEST(SelectEm, MiddleBandOnlyIsPurePadding) {
    // N_S = 64: rare below 2, qualifying from 4; every class holds exactly 3 patches.
    std::vector<double> means, xs;
    for (int c = 0; c < 24; ++c) {
        means.push_back(10.0 * c);
        for (double off : {-0.1, 0.0, 0.1}) xs.push_back(10.0 * c + off);
    }
    const GmmModel m = oracle::line_model(means);
    const std::uint64_t seed = 77;
    const SelectionResult r = select_em(oracle::column(xs), m, {64, seed, std::nullopt});
    expect_valid(r, 64, 72);
    EXPECT_EQ(with_provenance(r, Provenance::random_pad).size(), 64u);

    // Hand trace: nothing is picked deterministically, so the padding pool is
    // every patch in index order, shuffled once with the seed.
    std::vector<std::size_t> pool(72);
    std::iota(pool.begin(), pool.end(), 0);
    Rng rng(seed);
    rng.shuffle(pool);
    const std::set<std::size_t> expect(pool.begin(), pool.begin() + 64);
    const auto idx = r.indices();
    EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()), expect);
    EXPECT_EQ(select_em(oracle::column(xs), m, {64, seed, std::nullopt}).indices(), idx);
    EXPECT_NE(select_em(oracle::column(xs), m, {64, seed + 1, std::nullopt}).indices(), idx);
}

TEST(SelectEm, OverSelectionDropsTopKNearestMeanPosterior) {
    // Two classes of 40 with K = 10 per side ask for 40 picks; N_S = 32 keeps 32.
    std::vector<double> xs;
    Rng rng(4);
    for (int i = 0; i < 40; ++i) xs.push_back(-3.0 + 6.0 * rng.uniform());
    for (int i = 0; i < 40; ++i) xs.push_back(12.0 - 3.0 + 6.0 * rng.uniform());
    const GmmModel m = oracle::line_model({0.0, 6.0, 12.0});
    const SelectionResult r = select_em(oracle::column(xs), m, {32, 2, 10});
    expect_valid(r, 32, 80);
    EXPECT_TRUE(with_provenance(r, Provenance::random_pad).empty());

    // Oracle: rebuild the 40 candidate picks and keep the 32 farthest from the bag's mean posterior.
    std::vector<double> post(80);
    double mean = 0;
    for (std::size_t i = 0; i < 80; ++i) mean += (post[i] = oracle::max_posterior(xs[i], m));
    mean /= 80;
    std::vector<std::size_t> candidates;
    for (int c = 0; c < 2; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < 80; ++i) {
            const bool in_class = c == 0 ? xs[i] < 3.0 : xs[i] > 9.0;
            if (in_class) members.push_back(i);
        }
        std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) { return post[a] > post[b]; });
        candidates.insert(candidates.end(), members.begin(), members.begin() + 10);
        candidates.insert(candidates.end(), members.end() - 10, members.end());
    }
    ASSERT_EQ(candidates.size(), 40u);
    std::sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(post[a] - mean) > std::abs(post[b] - mean);
    });
    const std::set<std::size_t> expect(candidates.begin(), candidates.begin() + 32);
    const auto idx = r.indices();
    EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()), expect);
}

TEST(SelectEm, RarePicksSurviveOverSelection) {
    // N_S = 64 -> rare below 2 patches. 10 singleton classes plus one big class with K = 40.
    std::vector<double> means, xs;
    for (int c = 0; c < 10; ++c) {
        means.push_back(10.0 * c);
        xs.push_back(10.0 * c);
    }
    means.push_back(200.0);
    for (int i = 0; i < 100; ++i) xs.push_back(200.0 + 0.01 * i);
    const SelectionResult r = select_em(oracle::column(xs), oracle::line_model(means), {64, 1, 40});
    expect_valid(r, 64, xs.size());
    const auto rare = with_provenance(r, Provenance::rare_cluster);
    EXPECT_EQ(rare.size(), 10u);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_TRUE(rare.count(i));
}

TEST(SelectEm, NsAboveBagSizeIsSelectionError) {
    try {
        select_em(oracle::column({0, 1, 2}), oracle::line_model({0, 5}), {4, 0, std::nullopt});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::selection);
    }
}

TEST(SelectEm, InvariantsOnRandomBags) {
    Rng rng(9);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t C = 2 + rng.below(8), d = 1 + rng.below(4), n = 20 + rng.below(200);
        GmmModel m;
        m.weights.assign(C, 1.0 / static_cast<double>(C));
        m.means = Matrix(C, d);
        m.variances = Matrix(C, d, 1.0);
        for (double& v : m.means.values()) v = rng.normal(0, 4);
        Matrix bag(n, d);
        for (double& v : bag.values()) v = rng.normal(0, 5);
        const std::size_t ns = 1 + rng.below(n);
        const SelectionResult r = select_em(bag, m, {ns, static_cast<std::uint64_t>(trial), std::nullopt});
        expect_valid(r, ns, n);
        EXPECT_EQ(select_em(bag, m, {ns, static_cast<std::uint64_t>(trial), std::nullopt}).indices(), r.indices());

        // Every patch of a rare class is kept whenever the rare total fits.
        const Responsibilities resp = responsibilities(bag, m);
        std::vector<std::size_t> count(C, 0);
        for (auto l : resp.label) ++count[l];
        std::set<std::size_t> rare;
        for (std::size_t i = 0; i < n; ++i)
            if (static_cast<double>(count[resp.label[i]]) < static_cast<double>(ns) / 32.0) rare.insert(i);
        if (rare.size() <= ns) {
            const auto idx = r.indices();
            const std::set<std::size_t> chosen(idx.begin(), idx.end());
            for (std::size_t i : rare) EXPECT_TRUE(chosen.count(i)) << "trial " << trial << " patch " << i;
        }
    }
}

TEST(SelectCluster, SingleClusterTakesNearest) {
    const Matrix bag = oracle::column({5.0, 0.2, -0.1, 3.0, 0.05, -2.0, 1.0});
    const SelectionResult r = select_cluster(bag, Matrix{{0.0}}, 3);
    expect_valid(r, 3, 7);
    EXPECT_EQ(r.indices(), (std::vector<std::size_t>{1, 2, 4}));
}

TEST(SelectCluster, EqualClustersSplitEvenly) {
    std::vector<double> xs;
    for (int i = 0; i < 10; ++i) xs.push_back(i * 0.1);
    for (int i = 0; i < 10; ++i) xs.push_back(50.0 + i * 0.1);
    const SelectionResult r = select_cluster(oracle::column(xs), Matrix{{0.0}, {50.0}}, 8);
    expect_valid(r, 8, 20);
    EXPECT_EQ(r.indices(), (std::vector<std::size_t>{0, 1, 2, 3, 10, 11, 12, 13}));
}

TEST(SelectCluster, AllocationSumsToNsOverManySeeds) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const std::size_t n = 10 + rng.below(90), C = 1 + rng.below(9);
        Matrix bag(n, 2), centroids(C, 2);
        for (double& v : bag.values()) v = rng.normal(0, 3);
        for (double& v : centroids.values()) v = rng.normal(0, 3);
        const std::size_t ns = 1 + rng.below(n);
        expect_valid(select_cluster(bag, centroids, ns), ns, n);
    }
}

TEST(SelectRandom, SaturationIsIdentitySet) {
    const SelectionResult r = select_random(oracle::column({1, 2, 3, 4, 5}), 5, 9);
    EXPECT_EQ(r.indices(), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(SelectRandom, SeedDeterminesSample) {
    const Matrix bag(1000, 1);
    const auto a = select_random(bag, 100, 1).indices();
    expect_valid(select_random(bag, 100, 1), 100, 1000);
    EXPECT_EQ(select_random(bag, 100, 1).indices(), a);
    EXPECT_NE(select_random(bag, 100, 2).indices(), a);
}

TEST(SelectAll, NoScreeningKeepsEveryPatch) {
    const SelectionResult r = select_all(Matrix(6, 2));
    EXPECT_EQ(r.indices(), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
    EXPECT_EQ(r.strategy, SelectionStrategy::none);
}

TEST(SelectionExport, OneLinePerPatch) {
    const SelectionResult r = select_em(oracle::column({0.0, 0.1, 5.0, 5.2}), oracle::line_model({0, 5}), {2, 0, 1});
    const std::string text = format_selection(r);
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
    EXPECT_EQ(text.rfind("index\tclass\tposterior\tprovenance\n", 0), 0u);
}

TEST(Strategy, NamesRoundTrip) {
    for (auto s : {SelectionStrategy::em, SelectionStrategy::cluster, SelectionStrategy::random,
                   SelectionStrategy::none})
        EXPECT_EQ(parse_strategy(to_string(s)), s);
    try {
        parse_strategy("bogus");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::config);
    }
}
