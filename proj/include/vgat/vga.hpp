#pragma once

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vgat/init.hpp"
#include "vgat/ops.hpp"

namespace vgat {

enum class ReconstructionLossKind { kl, mse, l1, cosine };

inline std::string_view to_string(ReconstructionLossKind k) {
    switch (k) {
        case ReconstructionLossKind::kl: return "kl";
        case ReconstructionLossKind::mse: return "mse";
        case ReconstructionLossKind::l1: return "l1";
        case ReconstructionLossKind::cosine: return "cosine";
    }
    return "?";
}

inline ReconstructionLossKind parse_loss_kind(std::string_view s) {
    if (s == "kl") return ReconstructionLossKind::kl;
    if (s == "mse") return ReconstructionLossKind::mse;
    if (s == "l1") return ReconstructionLossKind::l1;
    if (s == "cosine") return ReconstructionLossKind::cosine;
    throw Error(ErrorKind::config, "unknown reconstruction loss '" + std::string(s) + "'");
}

// Learnable query tokens cross-attending over the visual prompts, followed by
// GELU and a residual two-layer MLP.
struct VgaParams {
    Parameter tokens;  // N_L x d
    Parameter w_q, w_k, w_v;
    Parameter mlp_w1, mlp_b1, mlp_w2, mlp_b2;

    static VgaParams create(std::size_t d, std::size_t n_tokens, std::size_t hidden, Rng& rng) {
        constexpr double kStd = 0.02;
        return {init::normal("vga.tokens", n_tokens, d, kStd, rng),
                init::normal("vga.w_q", d, d, kStd, rng),
                init::normal("vga.w_k", d, d, kStd, rng),
                init::normal("vga.w_v", d, d, kStd, rng),
                init::normal("vga.mlp_w1", d, hidden, kStd, rng),
                init::constant("vga.mlp_b1", 1, hidden, 0.0),
                init::normal("vga.mlp_w2", hidden, d, kStd, rng),
                init::constant("vga.mlp_b2", 1, d, 0.0)};
    }

    std::vector<Parameter*> parameters() {
        return {&tokens, &w_q, &w_k, &w_v, &mlp_w1, &mlp_b1, &mlp_w2, &mlp_b2};
    }

    std::size_t dim() const { return w_q.value.rows(); }
};

struct CoattentionOutput {
    Var reconstructed;  // E_R tokens, N_L x d
    Var attention;      // A, N_L x N_S
    Var attended;       // GELU(A W_V E_S), before the residual MLP
};

inline CoattentionOutput coattention(Var prompts, VgaParams& p) {
    Tape& t = prompts.tape();
    const std::size_t d = p.dim();
    if (prompts.cols() != d) {
        throw Error(ErrorKind::dimension, "coattention: prompts " + shape_string(prompts.value()) +
                                              " do not match d = " + std::to_string(d));
    }
    const Var tokens = t.parameter(p.tokens);
    const Var q = matmul(tokens, t.parameter(p.w_q));
    const Var k = matmul(prompts, t.parameter(p.w_k));
    const Var v = matmul(prompts, t.parameter(p.w_v));
    const Var attention = softmax_rows(scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d))));
    const Var attended = gelu(matmul(attention, v));
    const Var hidden = gelu(add_row(matmul(attended, t.parameter(p.mlp_w1)), t.parameter(p.mlp_b1)));
    const Var mlp = add_row(matmul(hidden, t.parameter(p.mlp_w2)), t.parameter(p.mlp_b2));
    return {add(attended, mlp), attention, attended};
}

// Pools the reconstructed tokens by their mean and compares against E_G. For
// KL both vectors are mapped to distributions by a softmax over features.
inline Var reconstruction_loss(Var reconstructed, std::span<const double> genomic, ReconstructionLossKind kind) {
    if (reconstructed.cols() != genomic.size()) {
        throw Error(ErrorKind::dimension, "reconstruction_loss: tokens have width " +
                                              std::to_string(reconstructed.cols()) + ", genomic embedding has " +
                                              std::to_string(genomic.size()));
    }
    const Var pooled = mean_rows(reconstructed);
    const Matrix target = Matrix::row_vector(genomic);
    switch (kind) {
        case ReconstructionLossKind::kl: return kl_divergence(softmax_rows(pooled), softmax_rows(target));
        case ReconstructionLossKind::mse: return mse_loss(pooled, target);
        case ReconstructionLossKind::l1: return l1_loss(pooled, target);
        case ReconstructionLossKind::cosine: return cosine_loss(pooled, target);
    }
    throw Error(ErrorKind::config, "unhandled reconstruction loss");
}

inline double reconstruction_loss(const Matrix& reconstructed, std::span<const double> genomic,
                                  ReconstructionLossKind kind) {
    Tape t;
    return reconstruction_loss(t.constant(reconstructed), genomic, kind).scalar();
}

}  // namespace vgat
