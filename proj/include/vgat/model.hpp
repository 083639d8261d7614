#pragma once

#include <optional>
#include <span>
#include <vector>

#include "vgat/encoders.hpp"
#include "vgat/survival.hpp"
#include "vgat/vga.hpp"

namespace vgat {

struct ModelConfig {
    std::size_t d = 32;
    std::size_t n_tokens = 16;     // N_L
    std::size_t vga_hidden = 0;    // 0 selects 2d
    std::size_t head_hidden = 0;   // 0 selects 2d
    bool use_vga = true;           // false: WSI-only model, head sees the pathology CLS alone

    std::size_t resolved_vga_hidden() const { return vga_hidden == 0 ? 2 * d : vga_hidden; }
    std::size_t resolved_head_hidden() const { return head_hidden == 0 ? 2 * d : head_hidden; }
    std::size_t head_input() const { return use_vga ? 2 * d : d; }
};

// All trainable state: VGA, both encoders and the survival head.
struct VgatModel {
    ModelConfig config;
    VgaParams vga;
    PathologyEncoder pathology;
    GenomicEncoder genomic;
    SurvivalHead head;

    static VgatModel create(const ModelConfig& config, std::uint64_t seed) {
        Rng rng(seed);
        VgatModel m{config, VgaParams::create(config.d, config.n_tokens, config.resolved_vga_hidden(), rng),
                    PathologyEncoder::create(config.d, rng), GenomicEncoder::create(config.d, rng),
                    SurvivalHead::create(config.head_input(), config.resolved_head_hidden(), rng)};
        return m;
    }

    // Pointers into this object; invalidated if the model is moved.
    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out;
        if (config.use_vga) {
            for (auto* p : vga.parameters()) out.push_back(p);
        }
        for (auto* p : pathology.parameters()) out.push_back(p);
        if (config.use_vga) {
            for (auto* p : genomic.parameters()) out.push_back(p);
        }
        for (auto* p : head.parameters()) out.push_back(p);
        return out;
    }

    void zero_grad() {
        for (auto* p : parameters()) p->zero_grad();
    }
};

struct ForwardPass {
    Var logits;
    std::optional<Var> reconstructed;   // E_R tokens
    std::optional<Var> vga_attention;   // N_L x N_S
    Var pathology_attention;            // last pathology layer
};

// bag: all patches (pathology encoder input); prompts: selected patches (VGA input).
// The real genomic embedding never enters this path.
inline ForwardPass forward(Tape& tape, VgatModel& model, const Matrix& bag, const Matrix& prompts) {
    if (bag.cols() != model.config.d || prompts.cols() != model.config.d) {
        throw Error(ErrorKind::dimension, "forward: feature width " + std::to_string(bag.cols()) +
                                              " does not match model d = " + std::to_string(model.config.d));
    }
    ForwardPass out;
    const EncoderOutput path = encode_pathology(tape.constant(bag), model.pathology);
    out.pathology_attention = path.final_attention;
    Var fused = path.cls;
    if (model.config.use_vga) {
        const CoattentionOutput co = coattention(tape.constant(prompts), model.vga);
        out.reconstructed = co.reconstructed;
        out.vga_attention = co.attention;
        const EncoderOutput gen = encode_genomic(co.reconstructed, model.genomic);
        fused = concat_cols(path.cls, gen.cls);
    }
    out.logits = head_logits(fused, model.head);
    return out;
}

struct LossTerms {
    Var total;
    double nll = 0.0;
    double reconstruction = 0.0;
};

// L = L_NLL + lambda * L_rec; the reconstruction term is present only when the
// model has a VGA branch, a genomic embedding is supplied and lambda > 0.
inline LossTerms training_loss(const ForwardPass& fp, const SurvivalRecord& record,
                               std::optional<std::span<const double>> genomic, double lambda,
                               ReconstructionLossKind kind) {
    LossTerms terms;
    terms.total = nll_loss(fp.logits, record);
    terms.nll = terms.total.scalar();
    if (fp.reconstructed && genomic && lambda > 0.0) {
        const Var rec = reconstruction_loss(*fp.reconstructed, *genomic, kind);
        terms.reconstruction = rec.scalar();
        terms.total = add(terms.total, scale(rec, lambda));
    }
    return terms;
}

}  // namespace vgat
