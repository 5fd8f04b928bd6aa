#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "../support/gradcheck.hpp"
#include "slopestrike/autodiff.hpp"
#include "slopestrike/error.hpp"

using namespace slopestrike;
using ad::Tensor;

namespace {

/// Direct convolution sum, written without im2col.
std::vector<double> conv_oracle(const std::vector<double>& x, const std::vector<double>& k, std::size_t dilation) {
    std::vector<double> out(x.size(), 0.0);
    for (std::size_t t = 0; t < x.size(); ++t) {
        for (std::size_t j = 0; j < k.size(); ++j) {
            // causal: output t sees x[t - (K-1-j)*dilation]
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) -
                                       static_cast<std::ptrdiff_t>((k.size() - 1 - j) * dilation);
            if (src >= 0) {
                out[t] += k[j] * x[static_cast<std::size_t>(src)];
            }
        }
    }
    return out;
}

} // namespace

TEST(AutodiffForward, AddElementwise) {
    auto r = ad::add(Tensor::vector({1, 2}), Tensor::vector({3, 4}));
    EXPECT_EQ(r.to_vector(), (std::vector<double>{4, 6}));
}

TEST(AutodiffForward, MaxPoolPairs) {
    auto r = ad::maxpool1d(Tensor::vector({1, 3, 2, 5}), 2, 2);
    EXPECT_EQ(r.to_vector(), (std::vector<double>{3, 5}));
}

TEST(AutodiffForward, CausalDilatedConvMatchesDirectSum) {
    auto x = Tensor::from({1, 1, 4}, {1, 0, 0, 0});
    auto w = Tensor::from({1, 1, 2}, {1, 2});
    auto y = ad::conv1d(x, w, Tensor(), {1, 2, true});
    auto expected = conv_oracle({1, 0, 0, 0}, {1, 2}, 2);
    ASSERT_EQ(y.numel(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
        EXPECT_DOUBLE_EQ(y[i], expected[i]);
    }
    // Impulse response: first nonzero output sits at the impulse position.
    EXPECT_DOUBLE_EQ(y[0], 2.0);

    std::mt19937_64 rng(7);
    auto xs = oracle::random_tensor({1, 1, 17}, rng, -1, 1, false);
    auto ks = oracle::random_tensor({1, 1, 3}, rng, -1, 1, false);
    auto ys = ad::conv1d(xs, ks, Tensor(), {1, 3, true});
    auto oracle = conv_oracle(xs.to_vector(), ks.to_vector(), 3);
    for (std::size_t i = 0; i < oracle.size(); ++i) {
        EXPECT_NEAR(ys[i], oracle[i], 1e-14);
    }
}

TEST(AutodiffForward, ShapeMismatchNamesOperation) {
    try {
        ad::add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2}));
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("add"), std::string::npos);
        EXPECT_NE(msg.find("[2,3]"), std::string::npos);
        EXPECT_NE(msg.find("[3,2]"), std::string::npos);
    }
    EXPECT_THROW(ad::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST(AutodiffForward, DomainErrors) {
    EXPECT_THROW(ad::log(Tensor::vector({1.0, 0.0})), DomainError);
    EXPECT_THROW(ad::div(Tensor::vector({1.0}), Tensor::vector({0.0})), DomainError);
    EXPECT_THROW(ad::sqrt(Tensor::vector({-1.0})), DomainError);
}

TEST(AutodiffBackward, SumOfSquares) {
    auto x = Tensor::vector({1, 2, 3}, true);
    ad::sum(x * x).backward();
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{2, 4, 6}));
}

TEST(AutodiffBackward, ExpClosedForm) {
    auto m = Tensor::scalar(0.5, true);
    ad::exp(m * -2.0).backward();
    EXPECT_NEAR(m.grad()[0], -2.0 * std::exp(-1.0), 1e-15);
    EXPECT_NEAR(m.grad()[0], -0.7357589, 1e-7);
}

TEST(AutodiffBackward, TwoLayerMlpMatchesFiniteDifferences) {
    std::mt19937_64 rng(11);
    auto x = oracle::random_tensor({4, 6}, rng);
    auto w1 = oracle::random_tensor({6, 8}, rng);
    auto b1 = oracle::random_tensor({8}, rng);
    auto w2 = oracle::random_tensor({8, 1}, rng);
    auto b2 = oracle::random_tensor({1}, rng);
    std::vector<Tensor> leaves{x, w1, b1, w2, b2};
    auto f = [&] { return ad::sum(ad::affine(ad::tanh(ad::affine(x, w1, b1)), w2, b2)); };
    EXPECT_LT(oracle::max_gradient_error(f, leaves), 1e-4);
}

TEST(AutodiffBackward, RandomGraphsMatchFiniteDifferences) {
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        auto g = oracle::make_random_graph(rng);
        worst = std::max(worst, oracle::max_gradient_error(g, g.leaves));
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(AutodiffBackward, Linearity) {
    std::mt19937_64 rng(5);
    auto x = oracle::random_tensor({5}, rng);
    auto f = [&] { return ad::sum(ad::tanh(x)); };
    auto g = [&] { return ad::sum(ad::exp(x * 0.5)); };
    const double a = 2.5;
    const double b = -0.75;
    auto gf = ad::grad(f(), {x})[0];
    auto gg = ad::grad(g(), {x})[0];
    auto gc = ad::grad(f() * a + g() * b, {x})[0];
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_NEAR(gc[i], a * gf[i] + b * gg[i], 1e-10);
    }
}

TEST(AutodiffBackward, SignAndClampContributeZeroGradient) {
    auto x = Tensor::vector({0.5, -1.5, 2.0, 3.0}, true);
    auto lo = Tensor::vector({0.0, 0.0, 0.0, 0.0});
    auto hi = Tensor::vector({1.0, 1.0, 1.0, 3.0});
    // sign branch contributes nothing; clamp passes only in-bounds entries (boundary inside)
    auto y = ad::sum(ad::sign(x) * 10.0 + ad::clamp(x, lo, hi) * 2.0);
    y.backward();
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{2, 0, 0, 2}));

    auto z = Tensor::vector({-2.0, 0.0, 2.0}, true);
    ad::sum(ad::clamp(z, -1.0, 1.0)).backward();
    EXPECT_EQ(std::vector<double>(z.grad().begin(), z.grad().end()), (std::vector<double>{0, 1, 0}));
}

TEST(AutodiffBackward, MaxPoolRoutesToFirstArgmax) {
    auto x = Tensor::vector({1, 4, 4, 2, 7, 7}, true);
    auto pooled = ad::maxpool1d(x, 2);
    auto weights = Tensor::vector({1.5, -2.0, 3.0});
    ad::sum(pooled * weights).backward();
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 1.5, -2.0, 0, 3.0, 0}));
    double deposited = 0.0;
    for (double g : x.grad()) {
        deposited += g;
    }
    EXPECT_DOUBLE_EQ(deposited, 1.5 - 2.0 + 3.0);
}

TEST(AutodiffBackward, NoGradLeafNeverAccumulates) {
    auto x = Tensor::vector({1, 2}, true);
    auto c = Tensor::vector({3, 4});
    ad::sum(x * c).backward();
    EXPECT_FALSE(c.has_grad());
    EXPECT_TRUE(x.has_grad());
}

TEST(AutodiffBackward, ContractErrors) {
    auto x = Tensor::vector({1, 2}, true);
    EXPECT_THROW((x * 2.0).backward(), ContractError);
    auto root = ad::sum(x * x);
    root.backward();
    EXPECT_THROW(root.backward(), UnsupportedError);
    EXPECT_THROW(ad::sum(Tensor::vector({1, 2})).backward(), ContractError);
}

TEST(AutodiffBackward, NoGradGuardSkipsRecording) {
    auto x = Tensor::vector({1, 2}, true);
    Tensor y;
    {
        ad::NoGradGuard guard;
        y = x * 3.0;
    }
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE((x * 3.0).requires_grad());
}

TEST(AutodiffSecondOrder, LinearCriticPenaltyGradient) {
    auto w = Tensor::scalar(3.0, true);
    auto x = Tensor::scalar(0.7, true);
    auto penalty = [](const Tensor& g) { return ad::pow(ad::add_scalar(ad::sqrt(ad::sum(g * g)), -1.0), 2.0); };
    Tensor value;
    auto grads = ad::grad_of_grad(w * x, x, penalty, {w}, &value);
    EXPECT_DOUBLE_EQ(value.item(), 4.0);     // (w - 1)^2
    EXPECT_DOUBLE_EQ(grads[0].item(), 4.0);  // 2 (w - 1)
}

TEST(AutodiffSecondOrder, PenaltyVanishesAtUnitGradient) {
    auto w = Tensor::scalar(1.0, true);
    auto x = Tensor::scalar(-0.3, true);
    auto penalty = [](const Tensor& g) { return ad::pow(ad::add_scalar(ad::sqrt(ad::sum(g * g)), -1.0), 2.0); };
    Tensor value;
    auto grads = ad::grad_of_grad(w * x, x, penalty, {w}, &value);
    EXPECT_DOUBLE_EQ(value.item(), 0.0);
    EXPECT_DOUBLE_EQ(grads[0].item(), 0.0);
}

TEST(AutodiffSecondOrder, TanhCriticMatchesFiniteDifferences) {
    auto w = Tensor::scalar(1.0, true);
    auto x = Tensor::scalar(0.5, true);
    auto penalty_of = [&](const Tensor& g) { return ad::pow(ad::add_scalar(ad::sqrt(ad::sum(g * g)), -1.0), 2.0); };
    auto grads = ad::grad_of_grad(ad::tanh(w * x), x, penalty_of, {w});
    // Independent oracle: closed form of d/dx tanh(wx) = w (1 - tanh^2(wx)).
    auto penalty_value = [](double wv) {
        const double t = std::tanh(wv * 0.5);
        const double g = wv * (1.0 - t * t);
        return (std::abs(g) - 1.0) * (std::abs(g) - 1.0);
    };
    const double h = 1e-5;
    const double numeric = (penalty_value(1.0 + h) - penalty_value(1.0 - h)) / (2.0 * h);
    EXPECT_LT(oracle::rel_error(grads[0].item(), numeric), 1e-4);
}

TEST(AutodiffSecondOrder, MlpCriticPenaltyMatchesFiniteDifferences) {
    std::mt19937_64 rng(99);
    auto x = oracle::random_tensor({3, 5}, rng);
    auto w1 = oracle::random_tensor({5, 6}, rng);
    auto b1 = oracle::random_tensor({6}, rng);
    auto w2 = oracle::random_tensor({6, 1}, rng);
    auto b2 = oracle::random_tensor({1}, rng);
    auto critic = [&](const Tensor& in) { return ad::affine(ad::tanh(ad::affine(in, w1, b1)), w2, b2); };
    auto penalty = [](const Tensor& g) {
        auto norms = ad::sqrt(ad::sum(g * g, 1));
        return ad::mean(ad::pow(ad::add_scalar(norms, -1.0), 2.0));
    };
    std::vector<Tensor> params{w1, b1, w2, b2};
    auto grads = ad::grad_of_grad(ad::sum(critic(x)), x, penalty, params);
    auto objective = [&] {
        // Reference penalty using the first-order engine only, evaluated under
        // NoGrad by the oracle: gradient of sum(critic) wrt x in closed form.
        auto h = ad::tanh(ad::affine(x, w1, b1));
        auto dh = (1.0 - h * h) * ad::expand(ad::reshape(ad::transpose(w2), {1, 6}), {3, 6});
        auto gx = ad::matmul(dh, ad::transpose(w1));
        return penalty(gx);
    };
    auto numeric = oracle::numeric_gradients(objective, params);
    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        for (std::size_t i = 0; i < numeric[k].size(); ++i) {
            worst = std::max(worst, oracle::rel_error(grads[k][i], numeric[k][i]));
        }
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(AutodiffSecondOrder, UnsupportedOpIsNamed) {
    auto x = Tensor::from({1, 1, 4}, {1, 2, 3, 4}, true);
    auto w = Tensor::from({1, 1, 2}, {0.5, -0.5}, true);
    auto root = ad::sum(ad::tanh(ad::conv1d(x, w, Tensor(), {})));
    try {
        ad::grad(root, {x}, true);
        FAIL() << "expected UnsupportedError";
    } catch (const UnsupportedError& e) {
        EXPECT_NE(std::string(e.what()).find("conv1d"), std::string::npos);
    }
    auto xin = Tensor::vector({1, 2, 3, 4}, true);
    auto pooled = ad::sum(ad::maxpool1d(xin, 2));
    EXPECT_THROW(ad::grad(pooled, {xin}, true), UnsupportedError);
}
