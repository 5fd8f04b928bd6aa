#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "slopestrike/agan.hpp"
#include "slopestrike/error.hpp"

using namespace slopestrike;
using namespace slopestrike::agan;

namespace {

GanConfig small_config() {
    GanConfig g;
    g.batch_size = 8;
    g.samples_per_epoch = 16;
    g.critic_iters = 2;
    g.adv_scale_schedule = {0.3, 0.35};
    g.epochs_per_block = {2, 1};
    g.gen_channels = {8, 8};
    g.gen_kernels = {3, 3};
    g.gen_dilations = {1, 2};
    g.critic_hidden = {16, 8};
    g.seed = 5;
    return g;
}

const forecaster::Nhits& tiny_forecaster() {
    static const forecaster::Nhits model = [] {
        forecaster::NhitsConfig c;
        c.hidden_size = 8;
        c.epochs = 1;
        c.windows_per_epoch = 64;
        c.val_windows = 16;
        c.seed = 1;
        return forecaster::train(dataio::synth_gbm(2, 200, 50.0, 0.0005, 0.01, 3),
                                 dataio::synth_gbm(1, 150, 50.0, 0.0005, 0.01, 4), c)
            .best;
    }();
    return model;
}

dataio::PriceSeries stock(std::size_t n = 400) {
    return dataio::synth_gbm(1, 400, 50.0, 0.0005, 0.01, 8, "A")[0].head(n);
}

} // namespace

TEST(Intervals, ForcedWindowAndBounds) {
    const auto s = stock(100);
    const auto iv = sample_intervals(s, 5, 1);
    ASSERT_EQ(iv.size(), 5u);
    for (const auto& x : iv) {
        EXPECT_EQ(x.log_returns, iv[0].log_returns);
        EXPECT_EQ(x.log_returns.size(), 99u);
        EXPECT_EQ(x.start, 0u);
        EXPECT_EQ(x.p0, s.adjprc[0]);
        EXPECT_EQ(x.dates.size(), 100u);
        EXPECT_EQ(x.condition, x.log_returns);
    }
    const auto lo = *std::min_element(iv[0].log_returns.begin(), iv[0].log_returns.end());
    const auto hi = *std::max_element(iv[0].log_returns.begin(), iv[0].log_returns.end());
    EXPECT_EQ(lo, 0.0);
    EXPECT_EQ(hi, 1.0);
    EXPECT_THROW(sample_intervals(stock(99), 1, 1), ContractError);
}

TEST(Intervals, ScaleRoundTrip) {
    const ScaleBounds b{-0.07, 0.05};
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-0.1, 0.1);
    for (int i = 0; i < 1000; ++i) {
        const double r = u(rng);
        EXPECT_NEAR(b.unscale(b.scale(r)), r, 1e-12);
    }
    EXPECT_EQ(b.scale(b.lo), 0.0);
    EXPECT_EQ(b.scale(b.hi), 1.0);
}

TEST(Prices, ClosedForms) {
    EXPECT_EQ(to_prices(std::vector<double>(99, 0.0), 7.0), std::vector<double>(100, 7.0));
    const auto p = to_prices({std::log(2.0)}, 3.0);
    ASSERT_EQ(p.size(), 2u);
    EXPECT_NEAR(p[1], 6.0, 1e-12);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 0.02);
    std::vector<double> r(99);
    for (auto& v : r) {
        v = g(rng);
    }
    const auto q = to_prices(r, 40.0);
    for (std::size_t t = 1; t < q.size(); ++t) {
        EXPECT_NEAR(std::log(q[t] / q[t - 1]), r[t - 1], 1e-12);
    }
    const auto qt = to_prices(Tensor::from({1, 99}, r), {40.0});
    for (std::size_t t = 0; t < q.size(); ++t) {
        EXPECT_NEAR(qt[t], q[t], 1e-12 * q[t]);
    }
    EXPECT_THROW(to_prices({800.0}, 1.0), DomainError);
    EXPECT_THROW(to_prices(Tensor::from({1, 1}, {800.0}), {1.0}), DomainError);
    EXPECT_THROW(to_prices({0.0}, 0.0), ContractError);
}

TEST(GradientPenalty, LinearCriticClosedForm) {
    const std::size_t len = 6;
    const auto w = Tensor::vector({0.3, -0.2, 0.5, 0.1, 0.0, 0.4}, true);
    const auto critic = [&](const Tensor& x) { return ad::reshape(ad::matmul(x, ad::reshape(w, {len, 1})), {x.dim(0)}); };
    const auto real = Tensor::from({2, len}, std::vector<double>(12, 1.0));
    const auto fake = Tensor::from({2, len}, std::vector<double>(12, -2.0));
    const Tensor gp = gradient_penalty(critic, real, fake, {0.25, 0.9});
    double norm2 = 0.0;
    for (double v : w.values()) {
        norm2 += v * v;
    }
    const double expect = std::pow(std::sqrt(norm2) - 1.0, 2.0);
    EXPECT_NEAR(gp.item(), expect, 1e-10);
    // d gp / d w = 2 (|w| - 1) w / |w|
    const auto g = ad::grad(gp, {w})[0];
    for (std::size_t i = 0; i < len; ++i) {
        EXPECT_NEAR(g[i], 2.0 * (std::sqrt(norm2) - 1.0) * w[i] / std::sqrt(norm2), 1e-10);
    }
}

TEST(GradientPenalty, CriticSecondOrderMatchesFiniteDifferences) {
    auto cfg = small_config();
    cfg.interval_length = 5;
    std::mt19937_64 rng(4);
    Critic critic(cfg, rng);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> a(15), b(15), c(15);
    for (std::size_t i = 0; i < 15; ++i) {
        a[i] = g(rng);
        b[i] = g(rng);
        c[i] = g(rng);
    }
    const auto real = Tensor::from({3, 5}, a);
    const auto fake = Tensor::from({3, 5}, b);
    const auto cond = Tensor::from({3, 5}, c);
    const std::vector<double> u{0.2, 0.5, 0.7};
    const auto eval = [&] {
        return gradient_penalty([&](const Tensor& x) { return critic(x, cond); }, real, fake, u);
    };
    const Tensor gp = eval();
    EXPECT_GE(gp.item(), 0.0);
    std::vector<Tensor> params;
    for (const auto& [name, p] : critic.parameters()) {
        params.push_back(p);
    }
    const auto grads = ad::grad(gp, params);
    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor p = params[k];
        for (std::size_t i = 0; i < p.numel(); i += 7) {
            const double orig = p[i];
            const double h = 1e-6;
            p.mutable_values()[i] = orig + h;
            const double up = eval().item();
            p.mutable_values()[i] = orig - h;
            const double dn = eval().item();
            p.mutable_values()[i] = orig;
            const double fd = (up - dn) / (2 * h);
            worst = std::max(worst, std::abs(fd - grads[k][i]) / std::max(1e-3, std::abs(fd)));
        }
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(Wgan, LinearToyGeneratorDriftsTowardReal) {
    // alpha = 0, lambda = 0: plain Wasserstein updates on 1-D data.
    std::mt19937_64 rng(6);
    std::normal_distribution<double> real_dist(3.0, 0.5), noise(0.0, 1.0);
    auto a = Tensor::scalar(1.0, true);
    auto b = Tensor::scalar(0.0, true);
    auto w = Tensor::scalar(0.1, true);
    const nn::ParameterList gen{{"a", a}, {"b", b}};
    const nn::ParameterList crit{{"w", w}};
    nn::Adam opt_g(0.02, 0.0, 0.9), opt_c(0.02, 0.0, 0.9);
    const auto batch = [&](std::normal_distribution<double>& d) {
        std::vector<double> v(64);
        for (auto& x : v) {
            x = d(rng);
        }
        return Tensor::vector(v);
    };
    for (int step = 0; step < 200; ++step) {
        Tensor fake;
        {
            ad::NoGradGuard guard;
            fake = batch(noise) * a + b;
        }
        Tensor lc = ad::mean(fake * w) - ad::mean(batch(real_dist) * w);
        nn::zero_grad(crit);
        lc.backward();
        opt_c.step(crit);
        const auto wc = std::clamp(w[0], -1.0, 1.0);
        w.mutable_values()[0] = wc;
        Tensor lg = -ad::mean((batch(noise) * a + b) * w);
        nn::zero_grad(gen);
        lg.backward();
        opt_g.step(gen);
    }
    EXPECT_LT(std::abs(b[0] - 3.0), 1.0);
}

TEST(Agan, TrainsWithFrozenForecaster) {
    const auto& fm = tiny_forecaster();
    const auto before = nn::flatten_values(fm.parameters());
    std::vector<bool> flags;
    for (const auto& [n, p] : fm.parameters()) {
        flags.push_back(p.requires_grad());
    }
    auto r = train_agan(stock(), fm, small_config());
    EXPECT_EQ(nn::flatten_values(fm.parameters()), before);
    for (std::size_t i = 0; i < flags.size(); ++i) {
        EXPECT_EQ(fm.parameters()[i].second.requires_grad(), flags[i]);
    }
    ASSERT_EQ(r.log.size(), 3u);
    EXPECT_EQ(r.log[2].block, 1u);
    EXPECT_EQ(r.log[2].alpha, 0.35);
    for (const auto& e : r.log) {
        EXPECT_TRUE(std::isfinite(e.critic_loss));
        EXPECT_GE(e.gradient_penalty, 0.0);
        EXPECT_GT(e.adversarial_loss, 0.0);
    }
    const auto csv = format_gan_log(r.log);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);

    auto again = train_agan(stock(), fm, small_config());
    EXPECT_EQ(nn::flatten_values(again.bundle.generator.parameters()),
              nn::flatten_values(r.bundle.generator.parameters()));
}

TEST(Agan, GenerateContractsAndPersistence) {
    auto r = train_agan(stock(), tiny_forecaster(), [] {
        auto c = small_config();
        c.adv_scale_schedule = {0.0};
        c.epochs_per_block = {1};
        return c;
    }());
    const auto conds = sample_intervals(stock(), 10, 3, 99, r.bundle.bounds);
    const auto a = generate(r.bundle, conds, 11);
    const auto b = generate(r.bundle, conds, 11);
    EXPECT_EQ(a, b);
    ASSERT_EQ(a.size(), 10u);
    for (const auto& x : a) {
        ASSERT_EQ(x.size(), 99u);
        for (double v : x) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
    EXPECT_NE(generate(r.bundle, conds, 12), a);
    const auto back = GanBundle::from_checkpoint(
        dataio::decode_checkpoint(dataio::encode_checkpoint(r.bundle.to_checkpoint())));
    EXPECT_EQ(generate(back, conds, 11), a);
    EXPECT_EQ(back.bounds.lo, r.bundle.bounds.lo);

    auto bad = conds;
    bad[3].condition.pop_back();
    EXPECT_THROW(generate(r.bundle, bad, 1), ContractError);
    const auto csv = format_intervals(a);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "interval_id,day,scaled_log_return");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 991);
}

TEST(Agan, ConfigValidation) {
    auto c = small_config();
    c.epochs_per_block = {1};
    EXPECT_THROW(c.validate(), ContractError);
    c = small_config();
    c.gp_apply_prob = 1.5;
    EXPECT_THROW(c.validate(), ContractError);
    c = small_config();
    EXPECT_EQ(GanConfig::from_json(c.to_json()).to_json(), c.to_json());
}
