#pragma once

#include <string>
#include <vector>

#include "vgat/gradcheck.hpp"
#include "vgat/model.hpp"

namespace vgat {

inline constexpr double kOpGradTolerance = 1e-4;
inline constexpr double kModelGradTolerance = 1e-3;

struct GradCase {
    std::string name;
    GradientReport report;
};

namespace detail {

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double sd = 1.0) {
    Matrix m(r, c);
    for (double& v : m.values()) v = rng.normal(0.0, sd);
    return m;
}

inline std::vector<double> random_vector(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

}  // namespace detail

// Finite-difference checks for each differentiable component and for the
// combined training loss on a two-patient micro-batch.
inline std::vector<GradCase> run_gradient_suite(std::uint64_t seed = 1) {
    constexpr std::size_t d = 8, n_tokens = 3, n_patches = 10, n_select = 4;
    Rng rng(seed);
    std::vector<GradCase> cases;

    {
        VgaParams vga = VgaParams::create(d, n_tokens, 2 * d, rng);
        // Larger weights than the default init keep the attention map far from uniform.
        for (auto* p : vga.parameters())
            for (double& v : p->value.values()) v *= 10.0;
        Parameter prompts("prompts", detail::random_matrix(n_select, d, rng));
        const Matrix w = detail::random_matrix(n_tokens, d, rng);
        auto params = vga.parameters();
        params.push_back(&prompts);
        cases.push_back({"coattention", check_gradients(
                                            [&](Tape& t) {
                                                return weighted_sum(coattention(t.parameter(prompts), vga).reconstructed, w);
                                            },
                                            params, kOpGradTolerance)});
    }
    {
        Parameter x("x", detail::random_matrix(5, d, rng, 2.0));
        Parameter gain("gain", detail::random_matrix(1, d, rng));
        Parameter bias("bias", detail::random_matrix(1, d, rng));
        const Matrix w = detail::random_matrix(5, d, rng);
        cases.push_back({"layer_norm", check_gradients(
                                           [&](Tape& t) {
                                               return weighted_sum(
                                                   layer_norm(t.parameter(x), t.parameter(gain), t.parameter(bias)), w);
                                           },
                                           {&x, &gain, &bias}, kOpGradTolerance)});
    }
    {
        PpegKernels k = PpegKernels::create("ppeg", d, rng);
        Parameter x("x", detail::random_matrix(n_patches + 1, d, rng));
        const Matrix w = detail::random_matrix(n_patches + 1, d, rng);
        std::vector<Parameter*> params{&k.k7, &k.k5, &k.k3, &x};
        cases.push_back({"ppeg", check_gradients(
                                     [&](Tape& t) { return weighted_sum(ppeg(t.parameter(x), k), w); }, params,
                                     kOpGradTolerance)});
    }
    {
        PathologyEncoder enc = PathologyEncoder::create(d, rng);
        for (double& v : enc.cls.value.values()) v = rng.normal();
        const Matrix bag = detail::random_matrix(n_patches, d, rng);
        const Matrix w = detail::random_matrix(1, d, rng);
        cases.push_back({"pathology_encoder", check_gradients(
                                                  [&](Tape& t) {
                                                      return weighted_sum(encode_pathology(t.constant(bag), enc).cls, w);
                                                  },
                                                  enc.parameters(), kOpGradTolerance)});
    }
    {
        GenomicEncoder enc = GenomicEncoder::create(d, rng);
        for (double& v : enc.cls.value.values()) v = rng.normal();
        const Matrix tokens = detail::random_matrix(n_tokens, d, rng);
        const Matrix w = detail::random_matrix(1, d, rng);
        cases.push_back({"genomic_encoder", check_gradients(
                                                [&](Tape& t) {
                                                    return weighted_sum(encode_genomic(t.constant(tokens), enc).cls, w);
                                                },
                                                enc.parameters(), kOpGradTolerance)});
    }
    {
        SurvivalHead head = SurvivalHead::create(2 * d, 2 * d, rng);
        Parameter x("x", detail::random_matrix(1, 2 * d, rng));
        auto params = head.parameters();
        params.push_back(&x);
        const SurvivalRecord event{"a", 1.0, 0, 1};
        const SurvivalRecord censored{"b", 1.0, 1, 2};
        cases.push_back({"survival_head", check_gradients(
                                              [&](Tape& t) {
                                                  const Var logits = head_logits(t.parameter(x), head);
                                                  return add(add(nll_loss(logits, event), nll_loss(logits, censored)),
                                                             risk_score(logits));
                                              },
                                              params, kOpGradTolerance)});
    }
    {
        ModelConfig cfg;
        cfg.d = d;
        cfg.n_tokens = n_tokens;
        VgatModel model = VgatModel::create(cfg, seed + 1);
        struct Mini {
            Matrix bag, prompts;
            std::vector<double> genomic;
            SurvivalRecord record;
        };
        std::vector<Mini> batch;
        for (int i = 0; i < 2; ++i) {
            Mini m{detail::random_matrix(n_patches, d, rng), {}, detail::random_vector(d, rng),
                   SurvivalRecord{"m" + std::to_string(i), 1.0, i, i + 1}};
            m.prompts = gather_rows(m.bag, std::vector<std::size_t>{0, 3, 5, 8});
            batch.push_back(std::move(m));
        }
        cases.push_back({"full_model_loss", check_gradients(
                                                [&](Tape& t) {
                                                    Var total;
                                                    for (std::size_t i = 0; i < batch.size(); ++i) {
                                                        const ForwardPass fp =
                                                            forward(t, model, batch[i].bag, batch[i].prompts);
                                                        const LossTerms l = training_loss(
                                                            fp, batch[i].record,
                                                            std::span<const double>(batch[i].genomic), 1.0,
                                                            ReconstructionLossKind::kl);
                                                        total = i == 0 ? l.total : add(total, l.total);
                                                    }
                                                    return total;
                                                },
                                                model.parameters(), kModelGradTolerance)});
    }
    return cases;
}

}  // namespace vgat
