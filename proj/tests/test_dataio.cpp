#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include "vgat/dataio.hpp"
#include "vgat/metrics.hpp"

using namespace vgat;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("vgat_dataio_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

SyntheticConfig small_config() {
    SyntheticConfig c;
    c.n_patients = 25;
    c.d = 8;
    c.min_patches = 5;
    c.max_patches = 9;
    return c;
}

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error raised";
    return ErrorKind::config;
}

}  // namespace

TEST(MatrixFormat, HeaderBytesAreExact) {
    const Matrix m{{1.0f, -2.5f, 0.0f}, {3.0f, 4.0f, 5.0f}};
    const std::string b = encode_matrix(m);
    ASSERT_EQ(b.size(), 8u + 6 * 4);
    const unsigned char expect[8] = {'V', 'M', 2, 0, 0, 0, 3, 0};
    for (int i = 0; i < 8; ++i) EXPECT_EQ(static_cast<unsigned char>(b[i]), expect[i]) << "byte " << i;
    // -2.5f = 0xC0200000, little-endian.
    EXPECT_EQ(static_cast<unsigned char>(b[12]), 0x00);
    EXPECT_EQ(static_cast<unsigned char>(b[14]), 0x20);
    EXPECT_EQ(static_cast<unsigned char>(b[15]), 0xC0);
}

TEST(MatrixFormat, RoundTripIsBitExactForFloatValues) {
    Rng rng(1);
    Matrix m(7, 5);
    for (double& v : m.values()) v = round_to_float(rng.normal(0, 100));
    EXPECT_EQ(decode_matrix(encode_matrix(m), "mem"), m);
}

TEST(MatrixFormat, CorruptInputsAreLoadErrors) {
    std::string b = encode_matrix(Matrix{{1, 2}});
    EXPECT_EQ(kind_of([&] { decode_matrix(b.substr(0, 5), "x"); }), ErrorKind::load);
    EXPECT_EQ(kind_of([&] { decode_matrix(b.substr(0, b.size() - 1), "x"); }), ErrorKind::load);
    std::string bad = b;
    bad[0] = 'X';
    EXPECT_EQ(kind_of([&] { decode_matrix(bad, "x"); }), ErrorKind::load);
    std::string nan = b;
    const float q = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(nan.data() + 8, &q, 4);
    EXPECT_EQ(kind_of([&] { decode_matrix(nan, "x"); }), ErrorKind::load);
}

TEST(Manifest, FormatParseRoundTrip) {
    CohortManifest m;
    m.entries.push_back({"A", "bags/A.bin", std::string("genomic/A.bin"), 1.25, 0, 3});
    m.entries.push_back({"B", "bags/B.bin", std::nullopt, 0.1, 1, 0});
    const CohortManifest back = parse_manifest(format_manifest(m), "/tmp");
    ASSERT_EQ(back.entries.size(), 2u);
    EXPECT_EQ(back.entries[0].genomic_path.value(), "genomic/A.bin");
    EXPECT_FALSE(back.entries[1].genomic_path.has_value());
    EXPECT_EQ(back.entries[1].time, 0.1);
    EXPECT_EQ(back.entries[1].censor, 1);
    EXPECT_EQ(back.entries[0].fold, 3);
}

TEST(Manifest, RejectsDuplicatesAndBadFields) {
    const std::string head = "sample_id\tbag\tgenomic\ttime\tcensor\tfold\n";
    EXPECT_EQ(kind_of([&] { parse_manifest(head + "A\ta\t-\t1\t0\t0\nA\tb\t-\t1\t0\t0\n", "."); }), ErrorKind::load);
    EXPECT_EQ(kind_of([&] { parse_manifest(head + "A\ta\t-\t0\t0\t0\n", "."); }), ErrorKind::load);
    EXPECT_EQ(kind_of([&] { parse_manifest(head + "A\ta\t-\t1\t2\t0\n", "."); }), ErrorKind::load);
    EXPECT_EQ(kind_of([&] { parse_manifest(head + "A\ta\t-\t1\t0\t5\n", "."); }), ErrorKind::load);
    EXPECT_EQ(kind_of([&] { parse_manifest("id\tbag\n", "."); }), ErrorKind::load);
}

TEST(Cohort, GenerateLoadRoundTripIsBitExact) {
    const fs::path dir = scratch_dir("roundtrip");
    const SyntheticCohort s = generate_synthetic_cohort(small_config(), dir);
    const Cohort loaded = load_cohort(dir / "manifest.tsv");
    ASSERT_EQ(loaded.patients.size(), s.cohort.patients.size());
    EXPECT_EQ(loaded.d, 8u);
    for (std::size_t i = 0; i < loaded.patients.size(); ++i) {
        const Patient &a = loaded.patients[i], &b = s.cohort.patients[i];
        EXPECT_EQ(a.bag.sample_id, b.bag.sample_id);
        EXPECT_EQ(a.bag.features, b.bag.features);
        EXPECT_EQ(a.genomic->embedding, b.genomic->embedding);
        EXPECT_EQ(a.record.time, b.record.time);
        EXPECT_EQ(a.record.censor, b.record.censor);
        EXPECT_EQ(a.fold, b.fold);
    }
    fs::remove_all(dir);
}

TEST(Cohort, SameSeedGivesByteIdenticalFiles) {
    const fs::path a = scratch_dir("det_a"), b = scratch_dir("det_b");
    generate_synthetic_cohort(small_config(), a);
    generate_synthetic_cohort(small_config(), b);
    std::size_t compared = 0;
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const fs::path rel = fs::relative(entry.path(), a);
        EXPECT_EQ(detail::read_file(entry.path()), detail::read_file(b / rel)) << rel;
        ++compared;
    }
    EXPECT_EQ(compared, 1u + 2 * 25);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Cohort, AbsentGenomicFileMarksPatientUnimodal) {
    const fs::path dir = scratch_dir("absent");
    SyntheticCohort s = generate_synthetic_cohort(small_config(), dir);
    s.manifest.entries[3].genomic_path.reset();
    detail::write_file(dir / "manifest.tsv", format_manifest(s.manifest));
    const Cohort c = load_cohort(dir / "manifest.tsv");
    EXPECT_FALSE(c.patients[3].genomic.has_value());
    EXPECT_TRUE(c.patients[4].genomic.has_value());
    fs::remove_all(dir);
}

TEST(Cohort, DimensionMismatchIsLoadErrorNamingEntry) {
    const fs::path dir = scratch_dir("dim");
    SyntheticConfig cfg = small_config();
    cfg.d = 16;
    const SyntheticCohort s = generate_synthetic_cohort(cfg, dir);
    write_matrix(dir / s.manifest.entries[2].bag_path, Matrix(4, 15));
    try {
        load_cohort(dir / "manifest.tsv");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::load);
        EXPECT_NE(std::string(e.what()).find(s.manifest.entries[2].sample_id), std::string::npos);
    }
    fs::remove_all(dir);
}

TEST(Cohort, MissingFileIsLoadError) {
    const fs::path dir = scratch_dir("missing");
    const SyntheticCohort s = generate_synthetic_cohort(small_config(), dir);
    fs::remove(dir / s.manifest.entries[0].bag_path);
    EXPECT_EQ(kind_of([&] { load_cohort(dir / "manifest.tsv"); }), ErrorKind::load);
    fs::remove_all(dir);
}

TEST(Cohort, VisualOnlyLoadNeverOpensGenomicFiles) {
    const fs::path dir = scratch_dir("visual");
    generate_synthetic_cohort(small_config(), dir);
    fs::remove_all(dir / "genomic");
    const Cohort c = load_cohort(dir / "manifest.tsv", {.load_genomic = false});
    EXPECT_EQ(c.patients.size(), 25u);
    EXPECT_EQ(kind_of([&] { load_cohort(dir / "manifest.tsv"); }), ErrorKind::load);
    fs::remove_all(dir);
}

TEST(Bins, QuartileCutsUseLinearInterpolation) {
    std::vector<SurvivalRecord> r;
    for (double t : {4.0, 1.0, 3.0, 2.0}) r.push_back({"x", t, 0, std::nullopt});
    const BinCuts cuts = bin_cut_points(r);
    EXPECT_DOUBLE_EQ(cuts[0], 1.75);
    EXPECT_DOUBLE_EQ(cuts[1], 2.5);
    EXPECT_DOUBLE_EQ(cuts[2], 3.25);
    EXPECT_EQ(bin_for_time(2.5, cuts), 2);
    EXPECT_EQ(bin_for_time(0.01, cuts), 0);
    EXPECT_EQ(bin_for_time(99.0, cuts), 3);
}

TEST(Bins, CensoredTimesDoNotMoveCuts) {
    std::vector<SurvivalRecord> r;
    for (double t : {1.0, 2.0, 3.0, 4.0}) r.push_back({"x", t, 0, std::nullopt});
    const BinCuts base = bin_cut_points(r);
    r.push_back({"c", 100.0, 1, std::nullopt});
    EXPECT_EQ(bin_cut_points(r), base);
    const auto binned = assign_bins(r);
    EXPECT_EQ(binned.back().bin.value(), 3);
}

TEST(Bins, FewerThanFourEventsIsBinningError) {
    std::vector<SurvivalRecord> r{{"a", 1, 0, {}}, {"b", 2, 0, {}}, {"c", 3, 0, {}}, {"d", 4, 1, {}}};
    EXPECT_EQ(kind_of([&] { bin_cut_points(r); }), ErrorKind::binning);
}

TEST(Bins, BalancedWithinOneForDistinctTimes) {
    Rng rng(5);
    for (std::size_t n : {8u, 13u, 40u, 101u}) {
        std::vector<SurvivalRecord> r;
        for (std::size_t i = 0; i < n; ++i) r.push_back({"x", rng.uniform(0.1, 10.0), 0, std::nullopt});
        std::array<int, kNumBins> counts{};
        for (const auto& rec : assign_bins(r)) ++counts[*rec.bin];
        for (int c : counts) EXPECT_LE(std::abs(c - static_cast<double>(n) / 4.0), 1.0) << "n=" << n;
    }
}

TEST(Synthetic, InvalidSizesAreConfigErrors) {
    SyntheticConfig c;
    c.n_patients = 19;
    EXPECT_EQ(kind_of([&] { synthesize_cohort(c); }), ErrorKind::config);
    c = {};
    c.d = 7;
    EXPECT_EQ(kind_of([&] { synthesize_cohort(c); }), ErrorKind::config);
    c = {};
    c.n_latent_clusters = 3;
    EXPECT_EQ(kind_of([&] { synthesize_cohort(c); }), ErrorKind::config);
}

TEST(Synthetic, FoldsPartitionTheCohort) {
    const SyntheticCohort s = synthesize_cohort({});
    std::array<int, kNumFolds> counts{};
    for (const auto& p : s.cohort.patients) ++counts[p.fold];
    for (int c : counts) EXPECT_EQ(c, 40);
}

TEST(Synthetic, PlantedRiskIsConcordantWithTimes) {
    const SyntheticCohort s = synthesize_cohort({});
    std::vector<double> times;
    std::vector<int> censors;
    for (const auto& p : s.cohort.patients) {
        times.push_back(p.record.time);
        censors.push_back(p.record.censor);
    }
    EXPECT_GT(concordance_index(s.truth.planted_risk, times, censors), 0.65);
}

TEST(Synthetic, RoughlyOneFifthOfClustersCarrySignal) {
    const SyntheticCohort s = synthesize_cohort({});
    EXPECT_EQ(s.truth.signal_clusters.size(), 2u);
}

TEST(Synthetic, ZeroNoiseHigherRiskNeverOutlivesInExpectation) {
    SyntheticConfig c;
    c.genomic_noise = 0.0;
    c.n_patients = 30;
    const SyntheticCohort s = synthesize_cohort(c);
    std::vector<std::size_t> order(s.truth.planted_risk.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return s.truth.planted_risk[a] < s.truth.planted_risk[b]; });
    // Common random numbers: every patient sees the same 1000 uniforms.
    std::vector<double> mean_time(order.size(), 0.0);
    for (std::size_t k = 0; k < order.size(); ++k) {
        Rng rng(99);
        for (int draw = 0; draw < 1000; ++draw) mean_time[k] += sample_event_time(s.truth.planted_risk[order[k]], rng);
    }
    for (std::size_t k = 1; k < order.size(); ++k) {
        if (s.truth.planted_risk[order[k]] > s.truth.planted_risk[order[k - 1]]) {
            EXPECT_LT(mean_time[k], mean_time[k - 1]);
        }
    }
}
