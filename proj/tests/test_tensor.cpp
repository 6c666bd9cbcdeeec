#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "synlm/rng.hpp"
#include "synlm/tensor.hpp"
#include "synlm/testing/oracles.hpp"

using namespace synlm;
using TD = Tensor<double>;
using TapeD = Tape<double>;
using VarD = Var<double>;

namespace {

TD random_tensor(Rng& rng, std::size_t r, std::size_t c, double sd = 1.0) {
    TD t(r, c);
    for (auto& v : t.values()) v = rng.normal() * sd;
    return t;
}

// sum_ij W_ij * x_ij, a linear probe that turns any output into a scalar.
VarD probe(TapeD& tape, VarD x, const TD& W) {
    const TD& X = tape.value(x);
    TD out(1, 1);
    for (std::size_t i = 0; i < X.size(); ++i) out[0] += X[i] * W[i];
    return tape.push(std::move(out), tape.requires_grad(x), [x, W](TapeD& t, std::size_t self) {
        const double g = t.grad(self)[0];
        TD& dx = t.grad(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * W[i];
    });
}

using Build = std::function<VarD(TapeD&, const std::vector<VarD>&)>;

// Max relative error between tape gradients and central differences.
double gradcheck(std::vector<TD> inputs, const Build& build, double h = 1e-5) {
    TapeD tape;
    std::vector<VarD> vars;
    for (const auto& x : inputs) vars.push_back(tape.input(x));
    VarD out = build(tape, vars);
    tape.backward(out);
    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const TD analytic = tape.has_grad(vars[i].id) ? tape.grad(vars[i]) : TD(inputs[i].rows(), inputs[i].cols());
        for (std::size_t k = 0; k < inputs[i].size(); ++k) {
            auto eval = [&](double delta) {
                auto in = inputs;
                in[i][k] += delta;
                TapeD t;
                std::vector<VarD> vs;
                for (const auto& x : in) vs.push_back(t.constant(x));
                return t.value(build(t, vs))[0];
            };
            const double numeric = (eval(h) - eval(-h)) / (2 * h);
            worst = std::max(worst, oracles::relative_error(analytic[k], numeric, oracles::kGradCheckFloor));
        }
    }
    return worst;
}

}  // namespace

TEST(Tensor, MatmulExamples) {
    TapeD tape;
    TD I = TD::from_rows({{1, 0}, {0, 1}});
    TD A = TD::from_rows({{1, 2}, {3, 4}});
    EXPECT_EQ(tape.value(matmul(tape, tape.constant(I), tape.constant(A))), A);
    TD ones = TD::from_rows({{1}, {1}});
    EXPECT_EQ(tape.value(matmul(tape, tape.constant(A), tape.constant(ones))), TD::from_rows({{3}, {7}}));
    try {
        matmul(tape, tape.constant(ones), tape.constant(ones));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::ShapeMismatch);
    }
}

TEST(Tensor, MatmulGradients) {
    Rng rng(1);
    for (bool ta : {false, true}) {
        for (bool tb : {false, true}) {
            TD a = ta ? random_tensor(rng, 4, 3) : random_tensor(rng, 3, 4);
            TD b = tb ? random_tensor(rng, 2, 4) : random_tensor(rng, 4, 2);
            TD w = random_tensor(rng, 3, 2);
            double err = gradcheck({a, b}, [&](TapeD& t, const std::vector<VarD>& v) {
                return probe(t, matmul(t, v[0], v[1], ta, tb), w);
            });
            EXPECT_LE(err, 1e-6) << ta << tb;
        }
    }
}

TEST(Tensor, MaskedSoftmaxExamples) {
    TD zeros(2, 2);
    TD p = masked_softmax_value<double>(zeros, nullptr);
    for (double v : p.values()) EXPECT_EQ(v, 0.5);

    const double ninf = -std::numeric_limits<double>::infinity();
    TD S = TD::from_rows({{0.3, 1.0}, {-2.0, 0.5}, {1.5, 0.1}});
    TD M = TD::from_rows({{0, 0}, {ninf, 0}, {0, ninf}});
    TD P = masked_softmax_value(S, &M);
    EXPECT_EQ(P(1, 0), 0.0);
    EXPECT_EQ(P(2, 1), 0.0);
    EXPECT_NEAR(P(0, 0), 1.0 / (1.0 + std::exp(1.2)), 1e-15);

    TD all = TD::from_rows({{ninf, 0}, {ninf, 0}});
    try {
        masked_softmax_value(TD(2, 2), &all);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::AllMaskedColumn);
    }
}

TEST(Tensor, MaskedSoftmaxColumnsSumToOne) {
    Rng rng(2);
    const double ninf = -std::numeric_limits<double>::infinity();
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(8);
        TD S = random_tensor(rng, n, n, 5.0);
        TD M(n, n);
        for (std::size_t c = 0; c < n; ++c) {
            for (std::size_t r = 0; r < n; ++r) M(r, c) = (r != c && rng.uniform() < 0.5) ? ninf : 0.0;
        }
        TD P = masked_softmax_value(S, &M);
        for (std::size_t c = 0; c < n; ++c) {
            double sum = 0;
            for (std::size_t r = 0; r < n; ++r) {
                if (M(r, c) == ninf) {
                    ASSERT_EQ(P(r, c), 0.0);
                }
                ASSERT_TRUE(std::isfinite(P(r, c)));
                sum += P(r, c);
            }
            ASSERT_NEAR(sum, 1.0, 1e-6);
        }
    }
}

TEST(Tensor, MaskedSoftmaxGradient) {
    Rng rng(3);
    const double ninf = -std::numeric_limits<double>::infinity();
    TD S = random_tensor(rng, 4, 4);
    TD M(4, 4);
    for (std::size_t q = 0; q < 4; ++q) {
        for (std::size_t j = q + 1; j < 4; ++j) M(j, q) = ninf;
    }
    TD w = random_tensor(rng, 4, 4);
    double err = gradcheck({S}, [&](TapeD& t, const std::vector<VarD>& v) { return probe(t, masked_softmax(t, v[0], &M), w); });
    EXPECT_LE(err, 1e-6);
}

TEST(Tensor, LayernormExamples) {
    TapeD tape;
    auto g = tape.constant(TD::row({1, 1}));
    auto b = tape.constant(TD::row({0, 0}));
    TD c = tape.value(layernorm(tape, tape.constant(TD::row({3, 3})), g, b));
    EXPECT_EQ(c, TD::row({0, 0}));
    TD y = tape.value(layernorm(tape, tape.constant(TD::row({1, -1})), g, b, 0.0));
    EXPECT_NEAR(y[0], 1.0, 1e-15);
    EXPECT_NEAR(y[1], -1.0, 1e-15);
}

TEST(Tensor, LayernormGradient) {
    Rng rng(4);
    TD x = random_tensor(rng, 3, 5), g = random_tensor(rng, 1, 5), b = random_tensor(rng, 1, 5), w = random_tensor(rng, 3, 5);
    double err = gradcheck({x, g, b}, [&](TapeD& t, const std::vector<VarD>& v) { return probe(t, layernorm(t, v[0], v[1], v[2]), w); });
    EXPECT_LE(err, 1e-6);
}

TEST(Tensor, CrossEntropyExamples) {
    TapeD tape;
    EXPECT_NEAR(tape.value(cross_entropy(tape, tape.constant(TD::row({0, 0})), 0))[0], std::log(2.0), 1e-15);
    const double big = tape.value(cross_entropy(tape, tape.constant(TD::row({1000, 0})), 0))[0];
    EXPECT_TRUE(std::isfinite(big));
    EXPECT_NEAR(big, 0.0, 1e-12);
    try {
        cross_entropy(tape, tape.constant(TD::row({0, 0})), 2);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::BadTarget);
    }
}

TEST(Tensor, CrossEntropyGradientIsSoftmaxMinusOnehot) {
    TapeD tape;
    auto x = tape.input(TD::row({0.5, -1.0, 2.0}));
    tape.backward(cross_entropy(tape, x, 1));
    const double z = std::exp(0.5) + std::exp(-1.0) + std::exp(2.0);
    EXPECT_NEAR(tape.grad(x)[0], std::exp(0.5) / z, 1e-15);
    EXPECT_NEAR(tape.grad(x)[1], std::exp(-1.0) / z - 1.0, 1e-15);
    EXPECT_NEAR(tape.grad(x)[2], std::exp(2.0) / z, 1e-15);
}

TEST(Tensor, CrossEntropyIgnoresNegativeTargets) {
    TapeD tape;
    auto x = tape.input(TD::from_rows({{0, 0}, {5, -5}}));
    auto l = cross_entropy(tape, x, std::vector<int>{0, -1});
    EXPECT_NEAR(tape.value(l)[0], std::log(2.0), 1e-15);
    tape.backward(l);
    EXPECT_EQ(tape.grad(x)(1, 0), 0.0);
}

TEST(Tensor, ElementwiseAndStructuralGradients) {
    Rng rng(5);
    TD a = random_tensor(rng, 3, 4), b = random_tensor(rng, 3, 4), r = random_tensor(rng, 1, 4);
    TD w34 = random_tensor(rng, 3, 4), w43 = random_tensor(rng, 4, 3), w64 = random_tensor(rng, 6, 4);
    TD w38 = random_tensor(rng, 3, 8), w32 = random_tensor(rng, 3, 2);
    EXPECT_LE(gradcheck({a, b}, [&](TapeD& t, const std::vector<VarD>& v) { return probe(t, add(t, v[0], v[1]), w34); }), 1e-6);
    EXPECT_LE(gradcheck({a, r}, [&](TapeD& t, const std::vector<VarD>& v) { return probe(t, add_row(t, v[0], v[1]), w34); }), 1e-6);
    EXPECT_LE(gradcheck({a}, [&](TapeD& t, const std::vector<VarD>& v) { return probe(t, scale(t, v[0], 0.7), w34); }), 1e-6);
    EXPECT_LE(gradcheck({a}, [&](TapeD& t, const std::vector<VarD>& v) { return probe(t, transpose(t, v[0]), w43); }), 1e-6);
    EXPECT_LE(gradcheck({a}, [&](TapeD& t, const std::vector<VarD>& v) { return probe(t, gelu(t, v[0]), w34); }), 1e-6);
    EXPECT_LE(gradcheck({a}, [&](TapeD& t, const std::vector<VarD>& v) { return probe(t, slice_cols(t, v[0], 1, 2), w32); }), 1e-6);
    EXPECT_LE(gradcheck({a, b}, [&](TapeD& t, const std::vector<VarD>& v) { return probe(t, concat_cols(t, {v[0], v[1]}), w38); }), 1e-6);
    EXPECT_LE(gradcheck({a, b}, [&](TapeD& t, const std::vector<VarD>& v) { return probe(t, concat_rows(t, {v[0], v[1]}), w64); }), 1e-6);
    TD table = random_tensor(rng, 5, 4);
    EXPECT_LE(gradcheck({table}, [&](TapeD& t, const std::vector<VarD>& v) {
                  return probe(t, embedding_lookup(t, v[0], {4, 1, 4, 0, 2, 1}), w64);
              }),
              1e-6);
    TD logits = random_tensor(rng, 3, 4);
    EXPECT_LE(gradcheck({logits}, [&](TapeD& t, const std::vector<VarD>& v) { return cross_entropy(t, v[0], std::vector<int>{3, 0, 2}); }),
              1e-6);
}

TEST(Tensor, EmbeddingLookupRejectsBadIds) {
    TapeD tape;
    auto table = tape.constant(TD(3, 2));
    try {
        embedding_lookup(tape, table, {3});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::BadTarget);
    }
}

TEST(Tensor, DropoutIsSeededAndInverted) {
    Rng rng(6);
    TD x = random_tensor(rng, 20, 20);
    TapeD t1, t2;
    CounterRng key{42};
    TD y1 = t1.value(dropout(t1, t1.constant(x), 0.3, key, 7));
    TD y2 = t2.value(dropout(t2, t2.constant(x), 0.3, key, 7));
    EXPECT_EQ(y1, y2);
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (y1[i] == 0.0) {
            ++dropped;
        } else {
            EXPECT_NEAR(y1[i], x[i] / 0.7, 1e-12);
        }
    }
    EXPECT_GT(dropped, 80u);
    EXPECT_LT(dropped, 160u);
    TapeD t3;
    auto in = t3.constant(x);
    EXPECT_EQ(dropout(t3, in, 0.0, key, 7).id, in.id);
    TD w = random_tensor(rng, 20, 20);
    EXPECT_LE(gradcheck({x}, [&](TapeD& t, const std::vector<VarD>& v) { return probe(t, dropout(t, v[0], 0.3, key, 7), w); }), 1e-4);
}

TEST(Tensor, BackwardNeedsScalar) {
    TapeD tape;
    auto x = tape.input(TD(2, 2));
    try {
        tape.backward(x);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::ShapeMismatch);
    }
}

TEST(Tensor, ParameterGradientsAccumulate) {
    Parameter<double> p{"w", TD::row({1.0, 2.0}), TD(1, 2), true};
    for (int i = 0; i < 2; ++i) {
        TapeD tape;
        auto v = tape.parameter(p);
        tape.backward(cross_entropy(tape, v, 0));
    }
    const double s0 = std::exp(1.0) / (std::exp(1.0) + std::exp(2.0));
    EXPECT_NEAR(p.grad[0], 2 * (s0 - 1), 1e-15);
    EXPECT_NEAR(p.grad[1], 2 * (1 - s0), 1e-15);
}
