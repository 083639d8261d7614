#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vgat/clustering.hpp"
#include "vgat/dataio.hpp"
#include "vgat/ese.hpp"
#include "vgat/metrics.hpp"
#include "vgat/model.hpp"
#include "vgat/optim.hpp"

namespace vgat {

struct TrainConfig {
    double learning_rate = 2e-4;
    double weight_decay = 1e-5;
    std::size_t epochs = 30;  // desk-scale default; 100 at full scale
    double lambda_kl = 1.0;
    std::size_t n_select = 256;  // N_S
    std::size_t n_tokens = 16;   // N_L
    std::size_t clusters = 16;   // C_h
    SelectionStrategy strategy = SelectionStrategy::em;
    ReconstructionLossKind loss = ReconstructionLossKind::kl;
    std::uint64_t seed = 0;
    std::size_t folds = kNumFolds;
    bool use_vga = true;
    std::size_t em_iters = 10;
    std::size_t kmeans_iters = 100;
    std::size_t gmm_sample_cap = 50000;
    std::size_t accumulate = 1;
    bool standardize_genomic = false;
    std::optional<std::size_t> top_k;
};

inline nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::json j;
    j["learning_rate"] = c.learning_rate;
    j["weight_decay"] = c.weight_decay;
    j["epochs"] = c.epochs;
    j["lambda_kl"] = c.lambda_kl;
    j["n_select"] = c.n_select;
    j["n_tokens"] = c.n_tokens;
    j["clusters"] = c.clusters;
    j["strategy"] = std::string(to_string(c.strategy));
    j["loss"] = std::string(to_string(c.loss));
    j["seed"] = c.seed;
    j["folds"] = c.folds;
    j["use_vga"] = c.use_vga;
    j["em_iters"] = c.em_iters;
    j["kmeans_iters"] = c.kmeans_iters;
    j["gmm_sample_cap"] = c.gmm_sample_cap;
    j["accumulate"] = c.accumulate;
    j["standardize_genomic"] = c.standardize_genomic;
    j["top_k"] = c.top_k ? nlohmann::json(*c.top_k) : nlohmann::json(nullptr);
    return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    try {
        TrainConfig c;
        c.learning_rate = j.at("learning_rate").get<double>();
        c.weight_decay = j.at("weight_decay").get<double>();
        c.epochs = j.at("epochs").get<std::size_t>();
        c.lambda_kl = j.at("lambda_kl").get<double>();
        c.n_select = j.at("n_select").get<std::size_t>();
        c.n_tokens = j.at("n_tokens").get<std::size_t>();
        c.clusters = j.at("clusters").get<std::size_t>();
        c.strategy = parse_strategy(j.at("strategy").get<std::string>());
        c.loss = parse_loss_kind(j.at("loss").get<std::string>());
        c.seed = j.at("seed").get<std::uint64_t>();
        c.folds = j.at("folds").get<std::size_t>();
        c.use_vga = j.at("use_vga").get<bool>();
        c.em_iters = j.at("em_iters").get<std::size_t>();
        c.kmeans_iters = j.at("kmeans_iters").get<std::size_t>();
        c.gmm_sample_cap = j.at("gmm_sample_cap").get<std::size_t>();
        c.accumulate = j.at("accumulate").get<std::size_t>();
        c.standardize_genomic = j.at("standardize_genomic").get<bool>();
        if (!j.at("top_k").is_null()) c.top_k = j.at("top_k").get<std::size_t>();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::config, std::string("malformed train config: ") + e.what());
    }
}

inline void validate(const TrainConfig& c) {
    auto positive = [](bool ok, const char* what) {
        if (!ok) throw Error(ErrorKind::config, std::string(what) + " must be positive");
    };
    positive(c.learning_rate > 0.0, "learning_rate");
    positive(c.weight_decay >= 0.0, "weight_decay");
    positive(c.lambda_kl >= 0.0, "lambda_kl");
    positive(c.n_select > 0, "n_select");
    positive(c.n_tokens > 0, "n_tokens");
    positive(c.clusters > 0, "clusters");
    positive(c.accumulate > 0, "accumulate");
    if (c.folds != kNumFolds) throw Error(ErrorKind::config, "fold count must be 5");
}

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t config_hash(const TrainConfig& c) { return fnv1a(to_json(c).dump()); }

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline ModelConfig model_config_for(const TrainConfig& c, std::size_t d) {
    ModelConfig m;
    m.d = d;
    m.n_tokens = c.n_tokens;
    m.use_vga = c.use_vga;
    return m;
}

// Everything a fold derives from its training split besides the network.
struct FoldArtifacts {
    Matrix centroids;                 // empty when the strategy needs no clustering
    std::optional<GmmModel> gmm;
    BinCuts cuts{};
    std::vector<double> genomic_mean;  // empty unless standardization is on
    std::vector<double> genomic_scale;
    std::vector<std::string> training_samples;  // provenance of the GMM fit and bins
};

struct ModelCheckpoint {
    TrainConfig config;
    int fold = 0;
    VgatModel model;
    FoldArtifacts artifacts;
    std::uint64_t hash = 0;  // config hash
};

// ---------------------------------------------------------------------------
// Checkpoint serialization
//
//   "VGATCKPT" | u32 version | u64 meta length | meta JSON |
//   u32 tensor count | per tensor: u32 name length, name, u32 rows, u32 cols, f64[] LE
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_le(out, bits, 8);
}

class ByteReader {
   public:
    ByteReader(const std::string& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}
    std::uint64_t u(int width) {
        need(static_cast<std::size_t>(width));
        const auto v = get_le(reinterpret_cast<const unsigned char*>(bytes_.data()) + pos_, width);
        pos_ += static_cast<std::size_t>(width);
        return v;
    }
    double f64() {
        const std::uint64_t bits = u(8);
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

   private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw Error(ErrorKind::checkpoint, origin_ + ": truncated");
    }
    const std::string& bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::pair<std::string, const Matrix*>> checkpoint_tensors(ModelCheckpoint& ck,
                                                                            std::vector<Matrix>& scratch) {
    std::vector<std::pair<std::string, const Matrix*>> out;
    for (Parameter* p : ck.model.parameters()) out.emplace_back(p->name, &p->value);
    scratch.clear();
    scratch.reserve(5);
    scratch.push_back(Matrix(1, kNumBins - 1, std::vector<double>(ck.artifacts.cuts.begin(), ck.artifacts.cuts.end())));
    out.emplace_back("fold.bin_cuts", &scratch.back());
    if (!ck.artifacts.centroids.empty()) out.emplace_back("fold.centroids", &ck.artifacts.centroids);
    if (ck.artifacts.gmm) {
        scratch.push_back(pack_gmm(*ck.artifacts.gmm));
        out.emplace_back("fold.gmm", &scratch.back());
    }
    if (!ck.artifacts.genomic_mean.empty()) {
        scratch.push_back(Matrix::row_vector(ck.artifacts.genomic_mean));
        out.emplace_back("fold.genomic_mean", &scratch.back());
        scratch.push_back(Matrix::row_vector(ck.artifacts.genomic_scale));
        out.emplace_back("fold.genomic_scale", &scratch.back());
    }
    return out;
}

inline std::string serialize_checkpoint(ModelCheckpoint& ck) {
    nlohmann::json meta;
    meta["config"] = to_json(ck.config);
    meta["config_hash"] = hex64(ck.hash);
    meta["fold"] = ck.fold;
    meta["d"] = ck.model.config.d;
    meta["training_samples"] = ck.artifacts.training_samples;
    const std::string meta_text = meta.dump();

    std::string out = "VGATCKPT";
    detail::put_le(out, kCheckpointVersion, 4);
    detail::put_le(out, meta_text.size(), 8);
    out += meta_text;
    std::vector<Matrix> scratch;
    const auto tensors = checkpoint_tensors(ck, scratch);
    detail::put_le(out, tensors.size(), 4);
    for (const auto& [name, m] : tensors) {
        detail::put_le(out, name.size(), 4);
        out += name;
        detail::put_le(out, m->rows(), 4);
        detail::put_le(out, m->cols(), 4);
        for (double v : m->values()) detail::put_f64(out, v);
    }
    return out;
}

inline ModelCheckpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint") {
    detail::ByteReader in(bytes, origin);
    if (in.str(8) != "VGATCKPT") throw Error(ErrorKind::checkpoint, origin + ": bad magic");
    if (in.u(4) != kCheckpointVersion) throw Error(ErrorKind::checkpoint, origin + ": unsupported version");
    const std::size_t meta_len = in.u(8);
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(in.str(meta_len));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::checkpoint, origin + ": bad metadata: " + e.what());
    }
    ModelCheckpoint ck;
    ck.config = train_config_from_json(meta.at("config"));
    ck.hash = config_hash(ck.config);
    if (hex64(ck.hash) != meta.at("config_hash").get<std::string>()) {
        throw Error(ErrorKind::checkpoint, origin + ": config hash mismatch");
    }
    ck.fold = meta.at("fold").get<int>();
    ck.artifacts.training_samples = meta.at("training_samples").get<std::vector<std::string>>();
    ck.model = VgatModel::create(model_config_for(ck.config, meta.at("d").get<std::size_t>()), 0);

    std::map<std::string, Matrix> tensors;
    const std::size_t count = in.u(4);
    for (std::size_t k = 0; k < count; ++k) {
        const std::string name = in.str(in.u(4));
        const std::size_t rows = in.u(4), cols = in.u(4);
        Matrix m(rows, cols);
        for (double& v : m.values()) v = in.f64();
        tensors.emplace(name, std::move(m));
    }
    if (!in.done()) throw Error(ErrorKind::checkpoint, origin + ": trailing bytes");
    auto take = [&](const std::string& name) -> Matrix {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw Error(ErrorKind::checkpoint, origin + ": missing tensor " + name);
        return it->second;
    };
    for (Parameter* p : ck.model.parameters()) {
        Matrix m = take(p->name);
        if (!m.same_shape(p->value)) {
            throw Error(ErrorKind::checkpoint, origin + ": tensor " + p->name + " has shape " + shape_string(m) +
                                                   ", expected " + shape_string(p->value));
        }
        p->value = std::move(m);
        p->zero_grad();
    }
    const Matrix cuts = take("fold.bin_cuts");
    std::copy_n(cuts.data(), kNumBins - 1, ck.artifacts.cuts.begin());
    if (tensors.count("fold.centroids")) ck.artifacts.centroids = take("fold.centroids");
    if (tensors.count("fold.gmm")) ck.artifacts.gmm = unpack_gmm(take("fold.gmm"));
    if (tensors.count("fold.genomic_mean")) {
        const Matrix mean = take("fold.genomic_mean"), sc = take("fold.genomic_scale");
        ck.artifacts.genomic_mean.assign(mean.values().begin(), mean.values().end());
        ck.artifacts.genomic_scale.assign(sc.values().begin(), sc.values().end());
    }
    return ck;
}

inline void save_checkpoint(ModelCheckpoint& ck, const fs::path& path) {
    detail::write_file(path, serialize_checkpoint(ck));
}

inline ModelCheckpoint load_checkpoint(const fs::path& path) {
    return deserialize_checkpoint(detail::read_file(path), path.string());
}

inline std::uint64_t checkpoint_digest(ModelCheckpoint& ck) { return fnv1a(serialize_checkpoint(ck)); }

inline void require_compatible(const ModelCheckpoint& ck, const TrainConfig& expected) {
    if (ck.hash != config_hash(expected)) {
        throw Error(ErrorKind::checkpoint, "checkpoint config hash " + hex64(ck.hash) + " does not match " +
                                               hex64(config_hash(expected)));
    }
}

// ---------------------------------------------------------------------------
// Fold preparation
// ---------------------------------------------------------------------------

inline bool strategy_needs_clustering(SelectionStrategy s) {
    return s == SelectionStrategy::em || s == SelectionStrategy::cluster;
}

// K-means + GMM (+ optional EM refinement) on training patches only.
inline void fit_selection_model(const Cohort& cohort, const std::vector<std::size_t>& train, const TrainConfig& cfg,
                                std::uint64_t seed, FoldArtifacts& out) {
    std::size_t total = 0;
    for (std::size_t i : train) total += cohort.patients[i].bag.features.rows();
    Matrix stacked(total, cohort.d);
    std::size_t at = 0;
    for (std::size_t i : train) {
        const Matrix& f = cohort.patients[i].bag.features;
        std::copy_n(f.data(), f.size(), stacked.data() + at * cohort.d);
        at += f.rows();
    }
    const Matrix sample = sample_rows(stacked, cfg.gmm_sample_cap, mix_seed(seed, 11));
    const Centroids centroids = kmeans(sample, cfg.clusters, mix_seed(seed, 12), cfg.kmeans_iters);
    out.centroids = centroids.vectors;
    out.gmm = em_fit(sample, gmm_from_centroids(sample, centroids), cfg.em_iters).model;
}

inline FoldArtifacts prepare_fold(const Cohort& cohort, int fold, const TrainConfig& cfg) {
    const auto train = cohort.indices_outside_fold(fold);
    FoldArtifacts a;
    std::vector<SurvivalRecord> records;
    for (std::size_t i : train) {
        a.training_samples.push_back(cohort.patients[i].bag.sample_id);
        records.push_back(cohort.patients[i].record);
    }
    a.cuts = bin_cut_points(records);
    if (cfg.use_vga && strategy_needs_clustering(cfg.strategy)) {
        fit_selection_model(cohort, train, cfg, mix_seed(cfg.seed, 100 + static_cast<std::uint64_t>(fold)), a);
    }
    if (cfg.standardize_genomic) {
        a.genomic_mean.assign(cohort.d, 0.0);
        a.genomic_scale.assign(cohort.d, 0.0);
        std::size_t n = 0;
        for (std::size_t i : train) {
            if (!cohort.patients[i].genomic) continue;
            ++n;
            for (std::size_t j = 0; j < cohort.d; ++j) a.genomic_mean[j] += cohort.patients[i].genomic->embedding[j];
        }
        if (n == 0) throw Error(ErrorKind::config, "standardize_genomic: no genomic embeddings in training split");
        for (double& m : a.genomic_mean) m /= static_cast<double>(n);
        for (std::size_t i : train) {
            if (!cohort.patients[i].genomic) continue;
            for (std::size_t j = 0; j < cohort.d; ++j) {
                const double diff = cohort.patients[i].genomic->embedding[j] - a.genomic_mean[j];
                a.genomic_scale[j] += diff * diff;
            }
        }
        for (double& s : a.genomic_scale) s = std::sqrt(std::max(s / static_cast<double>(n), 1e-12));
    }
    return a;
}

inline std::uint64_t selection_seed(const TrainConfig& cfg, const std::string& sample_id) {
    return mix_seed(cfg.seed, fnv1a(sample_id));
}

inline SelectionResult select_prompts(const Matrix& bag, const std::string& sample_id, const TrainConfig& cfg,
                                      const FoldArtifacts& a) {
    const std::uint64_t seed = selection_seed(cfg, sample_id);
    switch (cfg.strategy) {
        case SelectionStrategy::em:
            if (!a.gmm) throw Error(ErrorKind::selection, "em selection requires a fitted GMM");
            return select_em(bag, *a.gmm, {cfg.n_select, seed, cfg.top_k});
        case SelectionStrategy::cluster:
            if (a.centroids.empty()) throw Error(ErrorKind::selection, "cluster selection requires centroids");
            return select_cluster(bag, a.centroids, cfg.n_select);
        case SelectionStrategy::random: return select_random(bag, cfg.n_select, seed);
        case SelectionStrategy::none: return select_all(bag);
    }
    throw Error(ErrorKind::selection, "unhandled strategy");
}

inline std::vector<double> genomic_target(const GenomicEmbedding& g, const FoldArtifacts& a) {
    std::vector<double> out = g.embedding;
    if (!a.genomic_mean.empty()) {
        for (std::size_t j = 0; j < out.size(); ++j) out[j] = (out[j] - a.genomic_mean[j]) / a.genomic_scale[j];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forward for one bag
// ---------------------------------------------------------------------------

enum class ForwardMode { train_with_genomic, inference_visual_only };

struct RiskOutput {
    double risk = 0.0;
    HazardProfile profile;
    Matrix reconstructed;        // E_R tokens (empty without VGA)
    Matrix vga_attention;        // N_L x N_S (empty without VGA)
    std::vector<double> cls_attention;  // last pathology layer, CLS row over patches
    SelectionResult selection;
    std::optional<double> reconstruction_loss;  // train mode with a genomic embedding only
};

// Selection -> VGA -> encoders -> head -> hazards. Both modes run the same
// computation; the mode only decides whether the reconstruction loss is reported.
inline RiskOutput forward_risk(const FeatureBag& bag, ModelCheckpoint& ck, ForwardMode mode,
                               const GenomicEmbedding* genomic = nullptr) {
    if (bag.features.cols() != ck.model.config.d) {
        throw Error(ErrorKind::dimension, "bag '" + bag.sample_id + "' has d = " + std::to_string(bag.features.cols()) +
                                              ", checkpoint expects " + std::to_string(ck.model.config.d));
    }
    RiskOutput out;
    Matrix prompts(0, bag.features.cols());
    if (ck.model.config.use_vga) {
        out.selection = select_prompts(bag.features, bag.sample_id, ck.config, ck.artifacts);
        prompts = gather_rows(bag.features, out.selection.indices());
    }
    Tape tape;
    const ForwardPass fp = forward(tape, ck.model, bag.features, prompts);
    out.profile = hazards(fp.logits.value().values());
    out.risk = out.profile.risk;
    if (fp.reconstructed) {
        out.reconstructed = fp.reconstructed->value();
        out.vga_attention = fp.vga_attention->value();
        if (mode == ForwardMode::train_with_genomic && genomic != nullptr) {
            const auto target = genomic_target(*genomic, ck.artifacts);
            out.reconstruction_loss = reconstruction_loss(*fp.reconstructed, target, ck.config.loss).scalar();
        }
    }
    const auto cls_row = fp.pathology_attention.value().row(0);
    out.cls_attention.assign(cls_row.begin() + 1, cls_row.end());
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainResult {
    ModelCheckpoint checkpoint;
    std::vector<double> history;  // mean total loss per epoch
};

namespace detail {

inline std::string non_finite_parameters(VgatModel& model) {
    std::string names;
    for (Parameter* p : model.parameters()) {
        if (!p->value.all_finite() || !p->grad.all_finite()) names += (names.empty() ? "" : ", ") + p->name;
    }
    return names.empty() ? "none" : names;
}

}  // namespace detail

inline TrainResult train_fold(const Cohort& cohort, int fold, const TrainConfig& cfg) {
    validate(cfg);
    if (fold < 0 || fold >= static_cast<int>(cfg.folds)) throw Error(ErrorKind::config, "fold out of range");
    const auto train = cohort.indices_outside_fold(fold);

    TrainResult result;
    ModelCheckpoint& ck = result.checkpoint;
    ck.config = cfg;
    ck.fold = fold;
    ck.hash = config_hash(cfg);
    ck.artifacts = prepare_fold(cohort, fold, cfg);
    ck.model = VgatModel::create(model_config_for(cfg, cohort.d), mix_seed(cfg.seed, 200 + static_cast<std::uint64_t>(fold)));

    struct Sample {
        const Patient* patient;
        Matrix prompts;
        SurvivalRecord record;
        std::optional<std::vector<double>> target;
    };
    std::vector<Sample> samples;
    for (std::size_t i : train) {
        const Patient& p = cohort.patients[i];
        Sample s{&p, {}, p.record, std::nullopt};
        s.record.bin = bin_for_time(p.record.time, ck.artifacts.cuts);
        if (cfg.use_vga) {
            const SelectionResult sel = select_prompts(p.bag.features, p.bag.sample_id, cfg, ck.artifacts);
            s.prompts = gather_rows(p.bag.features, sel.indices());
            if (p.genomic) s.target = genomic_target(*p.genomic, ck.artifacts);
        } else {
            s.prompts = Matrix(0, cohort.d);
        }
        samples.push_back(std::move(s));
    }

    AdamW optimizer(ck.model.parameters(), cfg.learning_rate, cfg.weight_decay);
    ck.model.zero_grad();
    std::vector<std::size_t> order(samples.size());
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(mix_seed(cfg.seed, 1000 + 100 * static_cast<std::uint64_t>(fold) + e));
        rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t pending = 0;
        for (std::size_t k = 0; k < order.size(); ++k) {
            const Sample& s = samples[order[k]];
            Tape tape;
            const ForwardPass fp = forward(tape, ck.model, s.patient->bag.features, s.prompts);
            std::optional<std::span<const double>> target;
            if (s.target) target = std::span<const double>(*s.target);
            const LossTerms loss = training_loss(fp, s.record, target, cfg.lambda_kl, cfg.loss);
            const double value = loss.total.scalar();
            if (!std::isfinite(value)) {
                throw Error(ErrorKind::divergence, "loss is non-finite at epoch " + std::to_string(e) + ", sample '" +
                                                       s.patient->bag.sample_id + "'; non-finite parameters: " +
                                                       detail::non_finite_parameters(ck.model));
            }
            epoch_loss += value;
            tape.backward(loss.total);
            if (++pending == cfg.accumulate || k + 1 == order.size()) {
                optimizer.step(1.0 / static_cast<double>(pending));
                pending = 0;
            }
        }
        result.history.push_back(epoch_loss / static_cast<double>(std::max<std::size_t>(1, order.size())));
    }
    return result;
}

// Untrained network with the same fold artifacts, for null-model baselines.
inline ModelCheckpoint untrained_checkpoint(const Cohort& cohort, int fold, const TrainConfig& cfg) {
    TrainConfig zero = cfg;
    zero.epochs = 0;
    return train_fold(cohort, fold, zero).checkpoint;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct RiskRow {
    std::string sample_id;
    double risk = 0.0;
    int bin = 0;
    int censor = 0;
    double time = 0.0;
};

struct EvalResult {
    double c_index = 0.0;
    std::vector<RiskRow> rows;
};

// Visual-only inference on the fold's test split; genomic data is never read.
inline EvalResult evaluate_fold(const Cohort& cohort, ModelCheckpoint& ck) {
    if (cohort.d != ck.model.config.d) {
        throw Error(ErrorKind::checkpoint, "cohort d = " + std::to_string(cohort.d) + " but checkpoint d = " +
                                               std::to_string(ck.model.config.d));
    }
    EvalResult r;
    std::vector<double> risks, times;
    std::vector<int> censors;
    for (std::size_t i : cohort.indices_in_fold(ck.fold)) {
        const Patient& p = cohort.patients[i];
        const RiskOutput out = forward_risk(p.bag, ck, ForwardMode::inference_visual_only);
        r.rows.push_back({p.bag.sample_id, out.risk, bin_for_time(p.record.time, ck.artifacts.cuts), p.record.censor,
                          p.record.time});
        risks.push_back(out.risk);
        times.push_back(p.record.time);
        censors.push_back(p.record.censor);
    }
    r.c_index = concordance_index(risks, times, censors);
    return r;
}

inline std::string format_risk_table(const std::vector<RiskRow>& rows) {
    std::string out = "sample_id\trisk\tbin\tcensor\ttime\n";
    for (const auto& row : rows) {
        out += row.sample_id + "\t" + detail::format_double(row.risk) + "\t" + std::to_string(row.bin) + "\t" +
               std::to_string(row.censor) + "\t" + detail::format_double(row.time) + "\n";
    }
    return out;
}

inline std::vector<RiskRow> parse_risk_table(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    if (line.rfind("sample_id\trisk", 0) != 0) throw Error(ErrorKind::load, "risk table header mismatch");
    std::vector<RiskRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cols = detail::split(line, '\t');
        if (cols.size() != 5) throw Error(ErrorKind::load, "risk table row needs 5 columns");
        rows.push_back({cols[0], detail::parse_double(cols[1], "risk"),
                        static_cast<int>(detail::parse_double(cols[2], "bin")),
                        static_cast<int>(detail::parse_double(cols[3], "censor")),
                        detail::parse_double(cols[4], "time")});
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Cross-validation and ablation
// ---------------------------------------------------------------------------

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

inline MeanStd mean_std(std::span<const double> v) {
    MeanStd m;
    if (v.empty()) return m;
    for (double x : v) m.mean += x;
    m.mean /= static_cast<double>(v.size());
    for (double x : v) m.std += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(m.std / static_cast<double>(v.size()));
    return m;
}

inline std::string format_mean_std(const MeanStd& m) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f ± %.3f", m.mean, m.std);
    return buf;
}

struct CrossValidation {
    std::vector<double> fold_c_index;
    std::vector<std::uint64_t> checkpoint_digests;
    MeanStd summary;
};

inline CrossValidation cross_validate(const Cohort& cohort, const TrainConfig& cfg) {
    CrossValidation cv;
    for (int f = 0; f < static_cast<int>(cfg.folds); ++f) {
        TrainResult tr = train_fold(cohort, f, cfg);
        cv.fold_c_index.push_back(evaluate_fold(cohort, tr.checkpoint).c_index);
        cv.checkpoint_digests.push_back(checkpoint_digest(tr.checkpoint));
    }
    cv.summary = mean_std(cv.fold_c_index);
    return cv;
}

struct NamedConfig {
    std::string name;
    TrainConfig config;
};

struct AblationRow {
    std::string name;
    MeanStd summary;                 // over every (seed, fold) C-index
    std::vector<double> seed_means;  // 5-fold mean per seed
    std::vector<double> values;      // every fold C-index, seed-major
};

// Module ablation: pathology only, VGA over every patch, and the full model
// with EM-screened prompts.
inline std::vector<NamedConfig> modules_grid(const TrainConfig& base) {
    TrainConfig neither = base, vga_only = base, full = base;
    neither.use_vga = false;
    neither.strategy = SelectionStrategy::none;
    neither.lambda_kl = 0.0;
    vga_only.strategy = SelectionStrategy::none;
    full.strategy = SelectionStrategy::em;
    return {{"wsi_only", neither}, {"vga", vga_only}, {"ese+vga", full}};
}

// Every config sees the same folds (from the manifest) and the same seed list.
inline std::vector<AblationRow> run_ablation(const Cohort& cohort, const std::vector<NamedConfig>& grid,
                                             const std::vector<std::uint64_t>& seeds) {
    std::vector<AblationRow> rows;
    for (const auto& entry : grid) {
        AblationRow row;
        row.name = entry.name;
        for (std::uint64_t seed : seeds) {
            TrainConfig cfg = entry.config;
            cfg.seed = seed;
            const CrossValidation cv = cross_validate(cohort, cfg);
            row.seed_means.push_back(cv.summary.mean);
            row.values.insert(row.values.end(), cv.fold_c_index.begin(), cv.fold_c_index.end());
        }
        row.summary = mean_std(row.values);
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string format_ablation_text(const std::vector<AblationRow>& rows) {
    std::size_t width = 6;
    for (const auto& r : rows) width = std::max(width, r.name.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(width)) << "config" << "  c-index (mean ± std)\n";
    for (const auto& r : rows) {
        os << std::left << std::setw(static_cast<int>(width)) << r.name << "  " << format_mean_std(r.summary) << "\n";
    }
    return os.str();
}

inline std::string format_ablation_tsv(const std::vector<AblationRow>& rows) {
    std::string out = "config\tmean\tstd\tn\tvalues\n";
    for (const auto& r : rows) {
        std::string values;
        for (double v : r.values) values += (values.empty() ? "" : ",") + detail::format_double(v);
        out += r.name + "\t" + detail::format_double(r.summary.mean) + "\t" + detail::format_double(r.summary.std) +
               "\t" + std::to_string(r.values.size()) + "\t" + values + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

struct StratificationReport {
    Stratification strata;
    KmCurve high, low;
    LogrankResult logrank;
};

// Median split of a risk table, KM per group and the logrank test between them.
inline StratificationReport stratify_risk_table(const std::vector<RiskRow>& rows) {
    std::vector<double> risks;
    for (const auto& r : rows) risks.push_back(r.risk);
    StratificationReport rep;
    rep.strata = stratify_by_median(risks);
    if (rep.strata.degenerate) throw Error(ErrorKind::metric, "all risks equal; no high-risk group");
    SurvivalGroup high, low;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        SurvivalGroup& g = rep.strata.high[i] ? high : low;
        g.times.push_back(rows[i].time);
        g.censors.push_back(rows[i].censor);
    }
    rep.high = kaplan_meier(high.times, high.censors);
    rep.low = kaplan_meier(low.times, low.censors);
    rep.logrank = logrank_test(high, low);
    return rep;
}

inline std::string format_stratification(const StratificationReport& rep) {
    std::string out = "# median_risk\t" + detail::format_double(rep.strata.median) + "\n";
    out += "# logrank_chi2\t" + detail::format_double(rep.logrank.chi2) + "\n";
    out += "# logrank_p\t" + detail::format_double(rep.logrank.p) + "\n";
    out += "group\ttime\tsurvival\tat_risk\tevents\n";
    auto emit = [&out](const char* name, const KmCurve& c) {
        for (std::size_t k = 0; k < c.times.size(); ++k) {
            out += std::string(name) + "\t" + detail::format_double(c.times[k]) + "\t" +
                   detail::format_double(c.survival[k]) + "\t" + std::to_string(c.at_risk[k]) + "\t" +
                   std::to_string(c.events[k]) + "\n";
        }
    };
    emit("high", rep.high);
    emit("low", rep.low);
    return out;
}

// Per-patch attention as rows: source, token, patch index (into the full bag), weight.
// "vga" rows come from the cross-attention map, "cls" rows from the last pathology layer.
inline std::string format_attention(const RiskOutput& out) {
    std::string text = "source\ttoken\tpatch\tweight\n";
    const auto idx = out.selection.indices();
    for (std::size_t t = 0; t < out.vga_attention.rows(); ++t)
        for (std::size_t s = 0; s < out.vga_attention.cols(); ++s)
            text += "vga\t" + std::to_string(t) + "\t" + std::to_string(idx[s]) + "\t" +
                    detail::format_double(out.vga_attention(t, s)) + "\n";
    for (std::size_t p = 0; p < out.cls_attention.size(); ++p)
        text += "cls\t0\t" + std::to_string(p) + "\t" + detail::format_double(out.cls_attention[p]) + "\n";
    return text;
}

}  // namespace vgat
