#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "vgat/matrix.hpp"
#include "vgat/rng.hpp"

namespace vgat {

namespace fs = std::filesystem;

inline constexpr std::size_t kNumBins = 4;
inline constexpr std::size_t kNumFolds = 5;

struct FeatureBag {
    std::string sample_id;
    Matrix features;  // N_p x d
};

struct GenomicEmbedding {
    std::string sample_id;
    std::vector<double> embedding;
};

struct SurvivalRecord {
    std::string sample_id;
    double time = 0.0;
    int censor = 0;  // 1 = right-censored
    std::optional<int> bin;

    bool event() const noexcept { return censor == 0; }
};

struct ManifestEntry {
    std::string sample_id;
    std::string bag_path;
    std::optional<std::string> genomic_path;
    double time = 0.0;
    int censor = 0;
    int fold = 0;
};

struct CohortManifest {
    std::vector<ManifestEntry> entries;
    std::size_t d = 0;
    fs::path base_dir;  // relative paths resolve against this
};

struct Patient {
    FeatureBag bag;
    std::optional<GenomicEmbedding> genomic;
    SurvivalRecord record;
    int fold = 0;
};

struct Cohort {
    std::vector<Patient> patients;
    std::size_t d = 0;

    std::vector<std::size_t> indices_in_fold(int fold) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < patients.size(); ++i)
            if (patients[i].fold == fold) out.push_back(i);
        return out;
    }
    std::vector<std::size_t> indices_outside_fold(int fold) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < patients.size(); ++i)
            if (patients[i].fold != fold) out.push_back(i);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Binary matrix format
//
//   offset 0  u16  magic 0x4D56 ("VM" as little-endian bytes 'V','M')
//   offset 2  u32  rows
//   offset 6  u16  cols
//   offset 8  f32  rows*cols values, row-major, little-endian
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kMatrixMagic = 0x4D56;

namespace detail {

inline void put_le(std::string& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_le(const unsigned char* p, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_file(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::io, "short write to " + path.string());
}

inline std::string format_double(double v) {
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), end);
}

inline double parse_double(const std::string& s, const std::string& what) {
    double v = 0.0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) {
        throw Error(ErrorKind::load, "cannot parse " + what + " from '" + s + "'");
    }
    return v;
}

inline std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace detail

inline std::string encode_matrix(const Matrix& m) {
    if (m.cols() > 0xFFFF || m.rows() > 0xFFFFFFFFULL) {
        throw Error(ErrorKind::dimension, "matrix " + shape_string(m) + " exceeds binary format limits");
    }
    std::string out;
    out.reserve(8 + 4 * m.size());
    detail::put_le(out, kMatrixMagic, 2);
    detail::put_le(out, m.rows(), 4);
    detail::put_le(out, m.cols(), 2);
    for (double v : m.values()) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, sizeof bits);
        detail::put_le(out, bits, 4);
    }
    return out;
}

inline Matrix decode_matrix(const std::string& bytes, const std::string& origin) {
    if (bytes.size() < 8) throw Error(ErrorKind::load, origin + ": truncated header");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (detail::get_le(p, 2) != kMatrixMagic) throw Error(ErrorKind::load, origin + ": bad magic");
    const std::size_t rows = detail::get_le(p + 2, 4);
    const std::size_t cols = detail::get_le(p + 6, 2);
    if (bytes.size() != 8 + 4 * rows * cols) {
        throw Error(ErrorKind::load, origin + ": payload length does not match " + std::to_string(rows) + "x" +
                                         std::to_string(cols));
    }
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows * cols; ++i) {
        const auto bits = static_cast<std::uint32_t>(detail::get_le(p + 8 + 4 * i, 4));
        float f;
        std::memcpy(&f, &bits, sizeof f);
        if (!std::isfinite(f)) throw Error(ErrorKind::load, origin + ": non-finite value at " + std::to_string(i));
        m[i] = f;
    }
    return m;
}

inline void write_matrix(const fs::path& path, const Matrix& m) { detail::write_file(path, encode_matrix(m)); }

inline Matrix read_matrix(const fs::path& path) { return decode_matrix(detail::read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

inline constexpr const char* kManifestHeader = "sample_id\tbag\tgenomic\ttime\tcensor\tfold";

inline std::string format_manifest(const CohortManifest& manifest) {
    std::string out = std::string(kManifestHeader) + "\n";
    for (const auto& e : manifest.entries) {
        out += e.sample_id + "\t" + e.bag_path + "\t" + e.genomic_path.value_or("-") + "\t" +
               detail::format_double(e.time) + "\t" + std::to_string(e.censor) + "\t" + std::to_string(e.fold) +
               "\n";
    }
    return out;
}

inline CohortManifest parse_manifest(const std::string& text, const fs::path& base_dir) {
    CohortManifest manifest;
    manifest.base_dir = base_dir;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::load, "manifest is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kManifestHeader) throw Error(ErrorKind::load, "manifest header mismatch: '" + line + "'");
    std::set<std::string> seen;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto cols = detail::split(line, '\t');
        if (cols.size() != 6) {
            throw Error(ErrorKind::load, "manifest line " + std::to_string(line_no) + ": expected 6 columns");
        }
        ManifestEntry e;
        e.sample_id = cols[0];
        if (!seen.insert(e.sample_id).second) {
            throw Error(ErrorKind::load, "duplicate sample_id '" + e.sample_id + "'");
        }
        e.bag_path = cols[1];
        if (cols[2] != "-") e.genomic_path = cols[2];
        e.time = detail::parse_double(cols[3], "time for " + e.sample_id);
        if (!(e.time > 0.0)) throw Error(ErrorKind::load, "non-positive time for '" + e.sample_id + "'");
        if (cols[4] != "0" && cols[4] != "1") throw Error(ErrorKind::load, "censor must be 0 or 1 for " + e.sample_id);
        e.censor = cols[4] == "1" ? 1 : 0;
        const double fold = detail::parse_double(cols[5], "fold for " + e.sample_id);
        if (fold < 0 || fold >= static_cast<double>(kNumFolds) || fold != std::floor(fold)) {
            throw Error(ErrorKind::load, "fold out of range for '" + e.sample_id + "'");
        }
        e.fold = static_cast<int>(fold);
        manifest.entries.push_back(std::move(e));
    }
    return manifest;
}

inline CohortManifest read_manifest(const fs::path& path) {
    return parse_manifest(detail::read_file(path), path.parent_path());
}

struct LoadOptions {
    // Inference never needs genomic files; when false they are not opened.
    bool load_genomic = true;
};

inline Cohort load_cohort(const CohortManifest& manifest, LoadOptions options = {}) {
    Cohort cohort;
    std::optional<std::size_t> d;
    auto check_dim = [&d](std::size_t got, const std::string& what) {
        if (!d) d = got;
        if (*d != got) {
            throw Error(ErrorKind::load, what + " has dimension " + std::to_string(got) + ", cohort has " +
                                             std::to_string(*d));
        }
    };
    for (const auto& e : manifest.entries) {
        Patient p;
        const fs::path bag_path = manifest.base_dir / e.bag_path;
        if (!fs::exists(bag_path)) throw Error(ErrorKind::load, "missing bag file for '" + e.sample_id + "': " + bag_path.string());
        p.bag = {e.sample_id, read_matrix(bag_path)};
        if (p.bag.features.rows() == 0) throw Error(ErrorKind::load, "empty bag for '" + e.sample_id + "'");
        check_dim(p.bag.features.cols(), "bag of '" + e.sample_id + "'");
        if (options.load_genomic && e.genomic_path) {
            const fs::path gpath = manifest.base_dir / *e.genomic_path;
            if (!fs::exists(gpath)) {
                throw Error(ErrorKind::load, "missing genomic file for '" + e.sample_id + "': " + gpath.string());
            }
            const Matrix g = read_matrix(gpath);
            if (g.rows() != 1) throw Error(ErrorKind::load, "genomic file of '" + e.sample_id + "' must be 1 x d");
            check_dim(g.cols(), "genomic embedding of '" + e.sample_id + "'");
            p.genomic = GenomicEmbedding{e.sample_id, {g.values().begin(), g.values().end()}};
        }
        p.record = {e.sample_id, e.time, e.censor, std::nullopt};
        p.fold = e.fold;
        cohort.patients.push_back(std::move(p));
    }
    if (manifest.d != 0 && d && *d != manifest.d) {
        throw Error(ErrorKind::load, "cohort dimension " + std::to_string(*d) + " differs from declared " +
                                         std::to_string(manifest.d));
    }
    cohort.d = d.value_or(manifest.d);
    return cohort;
}

inline Cohort load_cohort(const fs::path& manifest_path, LoadOptions options = {}) {
    return load_cohort(read_manifest(manifest_path), options);
}

// ---------------------------------------------------------------------------
// Discrete-time bins
// ---------------------------------------------------------------------------

// Percentile by linear interpolation between order statistics (position p*(n-1)).
inline double percentile_linear(std::vector<double> values, double p) {
    std::sort(values.begin(), values.end());
    const double pos = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

using BinCuts = std::array<double, kNumBins - 1>;

inline BinCuts bin_cut_points(const std::vector<SurvivalRecord>& records) {
    std::vector<double> uncensored;
    for (const auto& r : records)
        if (r.event()) uncensored.push_back(r.time);
    if (uncensored.size() < kNumBins) {
        throw Error(ErrorKind::binning, "need at least 4 uncensored patients, got " + std::to_string(uncensored.size()));
    }
    return {percentile_linear(uncensored, 0.25), percentile_linear(uncensored, 0.5),
            percentile_linear(uncensored, 0.75)};
}

// Bin r such that time lies in [t_r, t_{r+1}), with t_0 = 0 and t_4 = +inf.
inline int bin_for_time(double time, const BinCuts& cuts) {
    int bin = 0;
    for (double c : cuts)
        if (time >= c) ++bin;
    return bin;
}

inline std::vector<SurvivalRecord> assign_bins(std::vector<SurvivalRecord> records) {
    const BinCuts cuts = bin_cut_points(records);
    for (auto& r : records) r.bin = bin_for_time(r.time, cuts);
    return records;
}

// ---------------------------------------------------------------------------
// Synthetic cohorts
// ---------------------------------------------------------------------------

struct SyntheticConfig {
    std::uint64_t seed = 7;
    std::size_t n_patients = 200;
    std::size_t d = 32;
    std::size_t min_patches = 48;
    std::size_t max_patches = 96;
    std::size_t n_latent_clusters = 10;
    double cluster_spread = 2.0;     // std of latent cluster means
    double patch_noise = 1.0;        // within-cluster std
    double max_signal_fraction = 0.4;
    double genomic_noise = 0.3;
    double genomic_scale = 4.0;
    double risk_scale = 15.0;        // weight on total signal occupancy
    double genomic_risk_weight = 0.5;
    double censor_horizon = 3.0;     // administrative censor time ~ U(0, horizon)
};

// Ground truth kept alongside the written files.
struct SyntheticTruth {
    Matrix cluster_means;                    // K x d
    std::vector<std::size_t> signal_clusters;
    std::vector<double> planted_risk;        // per patient
    std::vector<std::vector<int>> patch_clusters;
};

struct SyntheticCohort {
    CohortManifest manifest;
    Cohort cohort;
    SyntheticTruth truth;
};

inline double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

// Event time from a proportional-hazards exponential model with unit baseline.
inline double sample_event_time(double risk, Rng& rng) { return -std::log(rng.uniform()) / std::exp(risk); }

inline void validate(const SyntheticConfig& c) {
    if (c.n_patients < 20) throw Error(ErrorKind::config, "n_patients must be >= 20");
    if (c.d < 8) throw Error(ErrorKind::config, "d must be >= 8");
    if (c.n_latent_clusters < 4) throw Error(ErrorKind::config, "n_latent_clusters must be >= 4");
    if (c.min_patches < 1 || c.max_patches < c.min_patches) {
        throw Error(ErrorKind::config, "patch range must satisfy 1 <= min <= max");
    }
    if (c.max_signal_fraction <= 0.0 || c.max_signal_fraction >= 1.0) {
        throw Error(ErrorKind::config, "max_signal_fraction must lie in (0, 1)");
    }
}

// Builds the cohort in memory: patches come from a Gaussian mixture in which
// about 20% of the latent clusters carry signal; the genomic embedding is a
// noisy linear image of the patient's signal-cluster occupancy; event times
// follow a hazard increasing in a planted risk built from both.
inline SyntheticCohort synthesize_cohort(const SyntheticConfig& c) {
    validate(c);
    Rng rng(c.seed);
    const std::size_t K = c.n_latent_clusters;
    const std::size_t n_signal = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.2 * K)));

    SyntheticCohort out;
    out.truth.cluster_means = Matrix(K, c.d);
    for (double& v : out.truth.cluster_means.values()) v = rng.normal(0.0, c.cluster_spread);
    for (std::size_t k = 0; k < n_signal; ++k) out.truth.signal_clusters.push_back(k);

    Matrix mixing(c.d, n_signal);
    for (double& v : mixing.values()) v = rng.normal();
    std::vector<double> risk_direction(c.d);
    double norm = 0.0;
    for (double& v : risk_direction) {
        v = rng.normal();
        norm += v * v;
    }
    for (double& v : risk_direction) v /= std::sqrt(norm);
    // Signal clusters differ in how strongly they raise risk.
    std::vector<double> cluster_weight(n_signal);
    for (std::size_t k = 0; k < n_signal; ++k)
        cluster_weight[k] = c.risk_scale * (0.5 + static_cast<double>(k + 1) / static_cast<double>(n_signal));

    struct Draft {
        Matrix features;
        std::vector<double> genomic;
        std::vector<int> clusters;
        double risk;
    };
    std::vector<Draft> drafts;
    for (std::size_t p = 0; p < c.n_patients; ++p) {
        const std::size_t n_patches =
            c.min_patches + static_cast<std::size_t>(rng.below(c.max_patches - c.min_patches + 1));
        const double u = rng.uniform();
        const double signal_fraction = c.max_signal_fraction * u;
        auto dirichlet = [&rng](std::size_t n) {
            std::vector<double> w(n);
            double total = 0.0;
            for (double& x : w) {
                x = -std::log(rng.uniform());
                total += x;
            }
            for (double& x : w) x /= total;
            return w;
        };
        const auto signal_mix = dirichlet(n_signal);
        const auto background_mix = dirichlet(K - n_signal);
        auto pick = [&rng](const std::vector<double>& w) {
            double u = rng.uniform(), acc = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) {
                acc += w[i];
                if (u < acc) return i;
            }
            return w.size() - 1;
        };

        Draft draft{Matrix(n_patches, c.d), std::vector<double>(c.d), {}, 0.0};
        std::vector<double> occupancy(n_signal, 0.0);
        for (std::size_t i = 0; i < n_patches; ++i) {
            std::size_t k;
            if (rng.uniform() < signal_fraction) {
                k = pick(signal_mix);
                occupancy[k] += 1.0 / static_cast<double>(n_patches);
            } else {
                k = n_signal + pick(background_mix);
            }
            draft.clusters.push_back(static_cast<int>(k));
            for (std::size_t j = 0; j < c.d; ++j) {
                draft.features(i, j) =
                    round_to_float(out.truth.cluster_means(k, j) + rng.normal(0.0, c.patch_noise));
            }
        }
        double genomic_risk = 0.0;
        for (std::size_t j = 0; j < c.d; ++j) {
            double g = 0.0;
            for (std::size_t k = 0; k < n_signal; ++k) g += mixing(j, k) * occupancy[k];
            g = c.genomic_scale * g + rng.normal(0.0, c.genomic_noise);
            draft.genomic[j] = round_to_float(g);
            genomic_risk += risk_direction[j] * draft.genomic[j];
        }
        double occupancy_risk = 0.0;
        for (std::size_t k = 0; k < n_signal; ++k) occupancy_risk += cluster_weight[k] * occupancy[k];
        draft.risk = occupancy_risk + c.genomic_risk_weight * genomic_risk;
        drafts.push_back(std::move(draft));
    }

    double mean_risk = 0.0;
    for (const auto& dr : drafts) mean_risk += dr.risk;
    mean_risk /= static_cast<double>(drafts.size());

    std::vector<int> folds(c.n_patients);
    for (std::size_t i = 0; i < c.n_patients; ++i) folds[i] = static_cast<int>(i % kNumFolds);
    rng.shuffle(folds);

    out.manifest.d = c.d;
    for (std::size_t p = 0; p < c.n_patients; ++p) {
        auto& dr = drafts[p];
        const double centered = dr.risk - mean_risk;
        const double event_time = sample_event_time(centered, rng);
        const double censor_time = rng.uniform(0.0, c.censor_horizon);
        const bool censored = censor_time < event_time;
        double t = round_to_float(censored ? censor_time : event_time);
        if (!(t > 0.0)) t = std::numeric_limits<float>::min();

        char id[32];
        std::snprintf(id, sizeof id, "P%04zu", p);
        ManifestEntry e{id, std::string("bags/") + id + ".bin", std::string("genomic/") + id + ".bin", t,
                        censored ? 1 : 0, folds[p]};
        Patient patient;
        patient.bag = {id, std::move(dr.features)};
        patient.genomic = GenomicEmbedding{id, std::move(dr.genomic)};
        patient.record = {id, t, e.censor, std::nullopt};
        patient.fold = e.fold;
        out.truth.planted_risk.push_back(centered);
        out.truth.patch_clusters.push_back(std::move(dr.clusters));
        out.manifest.entries.push_back(std::move(e));
        out.cohort.patients.push_back(std::move(patient));
    }
    out.cohort.d = c.d;
    return out;
}

// Writes manifest.tsv, bags/*.bin and genomic/*.bin under `dir`.
inline CohortManifest write_cohort(const SyntheticCohort& synthetic, const fs::path& dir) {
    fs::create_directories(dir / "bags");
    fs::create_directories(dir / "genomic");
    CohortManifest manifest = synthetic.manifest;
    manifest.base_dir = dir;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        const auto& e = manifest.entries[i];
        const Patient& p = synthetic.cohort.patients[i];
        write_matrix(dir / e.bag_path, p.bag.features);
        if (e.genomic_path && p.genomic) write_matrix(dir / *e.genomic_path, Matrix::row_vector(p.genomic->embedding));
    }
    detail::write_file(dir / "manifest.tsv", format_manifest(manifest));
    return manifest;
}

inline SyntheticCohort generate_synthetic_cohort(const SyntheticConfig& config, const fs::path& dir) {
    SyntheticCohort s = synthesize_cohort(config);
    s.manifest = write_cohort(s, dir);
    return s;
}

}  // namespace vgat
