#include <gtest/gtest.h>

#include <cmath>

#include "vgat/gradcheck.hpp"
#include "vgat/gradsuite.hpp"
#include "vgat/ops.hpp"
#include "vgat/optim.hpp"

using namespace vgat;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Matrix m(r, c);
    for (double& v : m.values()) v = rng.normal();
    return m;
}

}  // namespace

TEST(Matrix, IdentityTimesMatrix) {
    const Matrix eye{{1, 0}, {0, 1}};
    const Matrix b{{3, 4}, {5, 6}};
    EXPECT_EQ(matmul(eye, b), b);
}

TEST(Matrix, RowTimesColumnIsDot) {
    const Matrix c = matmul(Matrix{{1, 2}}, Matrix{{3}, {4}});
    ASSERT_EQ(c.rows(), 1u);
    ASSERT_EQ(c.cols(), 1u);
    EXPECT_EQ(c(0, 0), 11.0);
}

TEST(Matrix, ShapeMismatchNamesBothShapes) {
    try {
        matmul(Matrix(2, 3), Matrix(2, 3));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::dimension);
        EXPECT_NE(std::string(e.what()).find("2x3"), std::string::npos);
    }
}

TEST(Matrix, RandomProductMatchesEntrySums) {
    Rng rng(3);
    const Matrix a = random_matrix(3, 4, rng), b = random_matrix(4, 2, rng);
    const Matrix c = matmul(a, b);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            long double s = 0;
            for (std::size_t k = 0; k < 4; ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
            EXPECT_NEAR(c(i, j), static_cast<double>(s), 1e-14);
        }
}

TEST(Matrix, TransposedKernelsAgreeWithExplicitTranspose) {
    Rng rng(4);
    const Matrix a = random_matrix(5, 3, rng), b = random_matrix(7, 3, rng), c = random_matrix(5, 7, rng);
    Matrix nt(5, 7);
    kernel::gemm_nt(a.data(), b.data(), nt.data(), 5, 3, 7);
    const Matrix ref = matmul(a, transpose(b));
    for (std::size_t i = 0; i < nt.size(); ++i) EXPECT_NEAR(nt[i], ref[i], 1e-13);
    Matrix tn(3, 7);
    kernel::gemm_tn(a.data(), c.data(), tn.data(), 5, 3, 7);
    const Matrix ref2 = matmul(transpose(a), c);
    for (std::size_t i = 0; i < tn.size(); ++i) EXPECT_NEAR(tn[i], ref2[i], 1e-13);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
    Rng rng(5);
    Parameter a("a", random_matrix(3, 4, rng)), b("b", random_matrix(4, 2, rng));
    const Matrix w = random_matrix(3, 2, rng);
    const auto report = check_gradients(
        [&](Tape& t) { return weighted_sum(matmul(t.parameter(a), t.parameter(b)), w); }, {&a, &b}, 1e-6);
    EXPECT_TRUE(report.passed) << report.summary();
    EXPECT_EQ(report.checked, 20u);
}

TEST(Softmax, UniformRow) {
    const Matrix s = softmax_rows(Matrix{{0, 0, 0}});
    for (double v : s.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
    const Matrix s = softmax_rows(Matrix{{1000, 0}});
    EXPECT_TRUE(s.all_finite());
    EXPECT_NEAR(s(0, 0), 1.0, 1e-15);
    EXPECT_NEAR(s(0, 1), 0.0, 1e-15);
}

TEST(Softmax, MatchesExtendedPrecisionFormula) {
    const Matrix s = softmax_rows(Matrix{{1, 2, 3}});
    const long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(s(0, i), static_cast<double>(std::exp(i + 1.0L) / z), 1e-15);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        Matrix x = random_matrix(4, 6, rng);
        const Matrix s = softmax_rows(x);
        for (double& v : x.values()) v += 17.25;
        const Matrix shifted = softmax_rows(x);
        for (std::size_t r = 0; r < 4; ++r) {
            double sum = 0.0;
            for (double v : s.row(r)) sum += v;
            EXPECT_NEAR(sum, 1.0, 1e-12);
        }
        for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], shifted[i], 1e-9);
    }
}

TEST(Gelu, CenterAndAsymptotes) {
    EXPECT_EQ(gelu(0.0), 0.0);
    EXPECT_NEAR(gelu(30.0), 30.0, 1e-12);
    EXPECT_NEAR(gelu(-30.0), 0.0, 1e-12);
}

TEST(Gelu, OneEqualsStandardNormalCdf) {
    // Phi(1) to 22 digits.
    EXPECT_NEAR(gelu(1.0), 0.8413447460685429485852, 1e-15);
}

TEST(Gelu, DerivativeMatchesDifferenceQuotient) {
    for (double x : {-3.0, -0.7, 0.0, 0.4, 2.5}) {
        const double h = 1e-6;
        EXPECT_NEAR(gelu_derivative(x), (gelu(x + h) - gelu(x - h)) / (2 * h), 1e-8);
    }
}

TEST(LayerNorm, ConstantRowGoesToZero) {
    Tape t;
    const Var y = layer_norm(t.constant(Matrix{{2, 2, 2, 2}}), t.constant(Matrix{{1, 1, 1, 1}}),
                             t.constant(Matrix(1, 4)));
    for (double v : y.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, TwoElementClosedForm) {
    Tape t;
    const Matrix gain{{2.0, 0.5}}, bias{{0.1, -0.3}};
    const Var y = layer_norm(t.constant(Matrix{{1, 3}}), t.constant(gain), t.constant(bias));
    const double s = 1.0 / std::sqrt(1.0 + 1e-5);
    EXPECT_NEAR(y.value()(0, 0), -1.0 * s * 2.0 + 0.1, 1e-15);
    EXPECT_NEAR(y.value()(0, 1), 1.0 * s * 0.5 - 0.3, 1e-15);
}

TEST(LayerNorm, RowsHaveZeroMean) {
    Rng rng(8);
    Tape t;
    const Var y = layer_norm(t.constant(random_matrix(6, 9, rng)), t.constant(Matrix(1, 9, 1.0)),
                             t.constant(Matrix(1, 9)));
    for (std::size_t r = 0; r < 6; ++r) {
        double m = 0.0;
        for (double v : y.value().row(r)) m += v;
        EXPECT_LE(std::abs(m / 9.0), 1e-9);
    }
}

TEST(KlDivergence, IdenticalIsZero) {
    const std::vector<double> r{0.5, 0.5};
    EXPECT_EQ(kl_divergence(r, r), 0.0);
}

TEST(KlDivergence, PointMassAgainstUniformIsLog2) {
    EXPECT_NEAR(kl_divergence(std::vector<double>{1, 0}, std::vector<double>{0.5, 0.5}), std::log(2.0), 1e-15);
}

TEST(KlDivergence, IsAsymmetric) {
    const std::vector<double> r{0.9, 0.1}, g{0.5, 0.5};
    const double rg = 0.9 * std::log(0.9 / 0.5) + 0.1 * std::log(0.1 / 0.5);
    const double gr = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
    EXPECT_NEAR(kl_divergence(r, g), rg, 1e-15);
    EXPECT_NEAR(kl_divergence(g, r), gr, 1e-15);
    EXPECT_GT(std::abs(kl_divergence(r, g) - kl_divergence(g, r)), 0.1);
}

TEST(KlDivergence, LengthMismatchIsDimensionError) {
    try {
        kl_divergence(std::vector<double>{1.0}, std::vector<double>{0.5, 0.5});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::dimension);
    }
}

TEST(KlDivergence, GibbsInequalityOnRandomSimplex) {
    Rng rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> r(5), g(5);
        double sr = 0, sg = 0;
        for (int i = 0; i < 5; ++i) {
            r[i] = -std::log(rng.uniform());
            g[i] = -std::log(rng.uniform());
            sr += r[i];
            sg += g[i];
        }
        for (int i = 0; i < 5; ++i) {
            r[i] /= sr;
            g[i] /= sg;
        }
        EXPECT_GE(kl_divergence(r, g), 0.0);
        EXPECT_NEAR(kl_divergence(r, r), 0.0, 1e-15);
    }
}

TEST(GradCheck, LinearLayerWithMse) {
    Rng rng(10);
    Parameter w("w", random_matrix(4, 3, rng)), b("b", random_matrix(1, 3, rng));
    const Matrix x = random_matrix(5, 4, rng), target = random_matrix(5, 3, rng);
    const auto report = check_gradients(
        [&](Tape& t) { return mse_loss(add_row(matmul(t.constant(x), t.parameter(w)), t.parameter(b)), target); },
        {&w, &b}, 1e-4);
    EXPECT_TRUE(report.passed) << report.summary();
}

TEST(GradCheck, SignFlippedBackwardIsReported) {
    Rng rng(11);
    Parameter w("w", random_matrix(2, 2, rng));
    auto broken_square_sum = [](Var x) {
        const std::size_t ix = x.id();
        double s = 0.0;
        for (double v : x.value().values()) s += v * v;
        return x.tape().record(Matrix(1, 1, s), {x}, [ix](Tape& t, std::size_t self) {
            const double g = t.grad(self)[0];
            const Matrix xv = t.value(ix);
            Matrix& d = t.grad(ix);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g * 2.0 * xv[i];  // wrong sign
        });
    };
    const auto report = check_gradients([&](Tape& t) { return broken_square_sum(t.parameter(w)); }, {&w}, 1e-4);
    EXPECT_FALSE(report.passed);
    ASSERT_FALSE(report.violations.empty());
    EXPECT_EQ(report.violations.front().parameter, "w");
}

TEST(GradCheck, EveryOpOnRandomShapes) {
    Rng rng(12);
    for (int trial = 0; trial < 3; ++trial) {
        const std::size_t r = 2 + rng.below(4), c = 2 + rng.below(4);
        Parameter x("x", random_matrix(r, c, rng)), y("y", random_matrix(r, c, rng));
        Parameter bias("bias", random_matrix(1, c, rng)), k("k", random_matrix(c, 9, rng));
        const Matrix w = random_matrix(r, c, rng), w1 = random_matrix(1, c, rng), target = random_matrix(r, c, rng);
        const std::vector<std::pair<const char*, LossBuilder>> cases{
            {"add", [&](Tape& t) { return weighted_sum(add(t.parameter(x), t.parameter(y)), w); }},
            {"add_row", [&](Tape& t) { return weighted_sum(add_row(t.parameter(x), t.parameter(bias)), w); }},
            {"scale", [&](Tape& t) { return weighted_sum(scale(t.parameter(x), -1.7), w); }},
            {"gelu", [&](Tape& t) { return weighted_sum(gelu(t.parameter(x)), w); }},
            {"softmax", [&](Tape& t) { return weighted_sum(softmax_rows(t.parameter(x)), w); }},
            {"matmul_nt", [&](Tape& t) { return weighted_sum(matmul_nt(t.parameter(x), t.parameter(y)),
                                                             Matrix(r, r, 0.3)); }},
            {"concat_rows", [&](Tape& t) {
                 return weighted_sum(slice_rows(concat_rows({t.parameter(x), t.parameter(y)}), 1, r), w);
             }},
            {"concat_cols", [&](Tape& t) {
                 return mean_rows(weighted_sum(concat_cols(t.parameter(x), t.parameter(y)), Matrix(r, 2 * c, 0.2)));
             }},
            {"gather_rows", [&](Tape& t) {
                 return weighted_sum(gather_rows(t.parameter(x), std::vector<std::size_t>{0, r - 1, 0}),
                                     Matrix(3, c, 0.4));
             }},
            {"mean_rows", [&](Tape& t) { return weighted_sum(mean_rows(t.parameter(x)), w1); }},
            {"depthwise_conv", [&](Tape& t) {
                 const Var grid = gather_rows(t.parameter(y), std::vector<std::size_t>{0, 1, r - 1, 1});
                 return weighted_sum(depthwise_conv_grid(grid, t.parameter(k), 2), Matrix(4, c, 0.5));
             }},
            {"mse", [&](Tape& t) { return mse_loss(t.parameter(x), target); }},
            {"l1", [&](Tape& t) { return l1_loss(t.parameter(x), target); }},
            {"cosine", [&](Tape& t) { return cosine_loss(mean_rows(t.parameter(x)), w1); }},
            {"kl", [&](Tape& t) {
                 return kl_divergence(softmax_rows(mean_rows(t.parameter(x))), softmax_rows(w1));
             }},
        };
        for (const auto& [name, build] : cases) {
            const auto report = check_gradients(build, {&x, &y, &bias, &k}, 1e-4);
            EXPECT_TRUE(report.passed) << name << ": " << report.summary();
        }
    }
}

TEST(GradCheck, ComponentSuitePasses) {
    for (const auto& c : run_gradient_suite(3)) EXPECT_TRUE(c.report.passed) << c.name << ": " << c.report.summary();
}

TEST(Tape, ConstantsReceiveNoGradientClosure) {
    Tape t;
    const Var a = t.constant(Matrix{{1, 2}});
    const Var b = scale(a, 2.0);
    EXPECT_FALSE(t.requires_grad(b.id()));
}

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
    Rng c(43);
    EXPECT_NE(Rng(42).next_u64(), c.next_u64());
}

TEST(Rng, BelowIsInRangeAndUniformIsOpen) {
    Rng r(1);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 70000; ++i) {
        const auto v = r.below(7);
        ASSERT_LT(v, 7u);
        ++counts[v];
        const double u = r.uniform();
        ASSERT_GT(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
    for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(AdamW, FirstStepMovesByLearningRateAgainstGradientSign) {
    Parameter p("p", Matrix{{1.0, -2.0}});
    AdamW opt({&p}, 0.1, 0.0);
    p.grad = Matrix{{3.0, -0.5}};
    opt.step();
    EXPECT_NEAR(p.value(0, 0), 0.9, 1e-7);
    EXPECT_NEAR(p.value(0, 1), -1.9, 1e-7);
    EXPECT_EQ(p.grad(0, 0), 0.0);
}

TEST(AdamW, DecayIsDecoupledFromGradient) {
    Parameter p("p", Matrix{{2.0}});
    AdamW opt({&p}, 0.1, 0.5);
    opt.step();  // zero gradient: only the decay acts
    EXPECT_NEAR(p.value(0, 0), 2.0 * (1.0 - 0.1 * 0.5), 1e-15);
}
