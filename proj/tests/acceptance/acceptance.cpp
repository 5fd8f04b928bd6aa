// Prints one PASS/FAIL line per acceptance criterion; exits non-zero on any FAIL.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "../support/gradcheck.hpp"
#include "slopestrike/agan.hpp"
#include "slopestrike/attacks.hpp"
#include "slopestrike/cli.hpp"
#include "slopestrike/dataio.hpp"
#include "slopestrike/defense.hpp"
#include "slopestrike/forecaster.hpp"
#include "slopestrike/metrics.hpp"

using namespace slopestrike;
using ad::Tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- shared desk fixture ------------------------------------------------------------------------

constexpr double kDrift = 0.0005;
constexpr double kVol = 0.01;

struct Desk {
    forecaster::Nhits model;
    std::vector<dataio::PriceSeries> test;
    // filled by criterion 3, reused by criterion 9
    std::vector<dataio::PriceSeries> adversarial;
};

Desk& desk() {
    static Desk d = [] {
        Desk out;
        forecaster::NhitsConfig c;
        c.epochs = 30;
        c.lr = 1e-2;
        const auto train = dataio::synth_gbm(16, 700, 50.0, kDrift, kVol, 1, "TR");
        const auto val = dataio::synth_gbm(4, 400, 50.0, kDrift, kVol, 2, "VA");
        out.model = forecaster::train(train, val, c).best;
        out.test = dataio::synth_gbm(20, 300, 50.0, kDrift, kVol, 3, "TE");
        return out;
    }();
    return d;
}

attacks::AttackResult attack(const dataio::PriceSeries& s, attacks::Method m, double eps_pct, std::size_t iter,
                             int dir = 1) {
    attacks::AttackConfig c;
    c.method = m;
    c.eps_pct = eps_pct;
    c.iter = iter;
    c.target_dir = dir;
    return attacks::run_attack(s, desk().model, c);
}

// ---- 1 ----------------------------------------------------------------------------------------

Outcome autodiff_correctness() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        auto g = oracle::make_random_graph(rng);
        worst = std::max(worst, oracle::max_gradient_error(g, g.leaves));
    }

    agan::GanConfig cfg;
    std::mt19937_64 crng(7);
    agan::Critic critic(cfg, crng);
    const std::size_t len = cfg.interval_length;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto rnd = [&](std::size_t n) {
        std::vector<double> v(n);
        for (auto& x : v) {
            x = unit(crng);
        }
        return v;
    };
    const auto real = Tensor::from({4, len}, rnd(4 * len));
    const auto fake = Tensor::from({4, len}, rnd(4 * len));
    const auto cond = Tensor::from({4, len}, rnd(4 * len));
    const std::vector<double> u{0.1, 0.4, 0.6, 0.9};
    const auto gp = [&] {
        return agan::gradient_penalty([&](const Tensor& x) { return critic(x, cond); }, real, fake, u);
    };
    std::vector<Tensor> params;
    for (const auto& [name, p] : critic.parameters()) {
        params.push_back(p);
    }
    const auto grads = ad::grad(gp(), params);
    double worst_gp = 0.0;
    std::size_t checked = 0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor p = params[k];
        for (std::size_t i = k % 13; i < p.numel(); i += 41) {
            const double orig = p[i];
            const double h = 1e-6;
            p.mutable_values()[i] = orig + h;
            const double up = gp().item();
            p.mutable_values()[i] = orig - h;
            const double dn = gp().item();
            p.mutable_values()[i] = orig;
            worst_gp = std::max(worst_gp, oracle::rel_error(grads[k][i], (up - dn) / (2 * h)));
            ++checked;
        }
    }
    const double t = seconds_since(t0);
    return {worst < 1e-4 && worst_gp < 1e-4 && t < 60.0,
            fmt::format("random graphs max rel err {:.2e}; GP second order max rel err {:.2e} over {} critic "
                        "coordinates; {:.1f}s",
                        worst, worst_gp, checked, t)};
}

// ---- 2 ----------------------------------------------------------------------------------------

Outcome eps_ball() {
    using attacks::Method;
    const std::vector<Method> methods = {Method::FGSM, Method::BIM, Method::MIFGSM, Method::SIM,
                                         Method::TIM,  Method::GSA, Method::LSSA};
    std::size_t runs = 0, violations = 0;
    double worst = -1e300;
    for (const auto& s : desk().test) {
        for (auto m : methods) {
            for (double e : {0.5, 2.0, 4.0}) {
                const auto r = attack(s, m, e, 5);
                double dev = 0.0;
                for (std::size_t i = 0; i < s.size(); ++i) {
                    dev = std::max(dev, std::abs(r.x_adv.adjprc[i] - s.adjprc[i]));
                }
                worst = std::max(worst, dev - r.eps_abs);
                violations += dev > r.eps_abs + 1e-9;
                ++runs;
            }
        }
    }
    return {violations == 0,
            fmt::format("{} runs (7 methods x 20 series x 3 budgets), {} violations, max(dev - eps) = {:.3e}", runs,
                        violations, worst)};
}

// ---- 3 ----------------------------------------------------------------------------------------

Outcome slope_efficacy() {
    using attacks::Method;
    const auto t0 = std::chrono::steady_clock::now();
    auto& d = desk();
    const double n = static_cast<double>(d.test.size());
    double normal_gen = 0, normal_ls = 0;
    std::map<std::pair<Method, int>, double> after;
    for (const auto& s : d.test) {
        for (auto m : {Method::GSA, Method::LSSA}) {
            for (int dir : {1, -1}) {
                const auto r = attack(s, m, 2.0, 20, dir);
                after[{m, dir}] += (m == Method::GSA ? r.after.gen_slope : r.after.ls_slope) / n;
                if (m == Method::GSA && dir == 1) {
                    normal_gen += r.before.gen_slope / n;
                    normal_ls += r.before.ls_slope / n;
                }
                if (dir == 1) {
                    auto adv = r.x_adv;
                    adv.ticker += m == Method::GSA ? "_gsa" : "_lssa";
                    d.adversarial.push_back(std::move(adv));
                }
            }
        }
    }
    const double fg = after[{Method::GSA, 1}] / normal_gen;
    const double fl = after[{Method::LSSA, 1}] / normal_ls;
    const bool down = after[{Method::GSA, -1}] < normal_gen && after[{Method::LSSA, -1}] < normal_ls;
    const double t = seconds_since(t0);
    return {normal_gen > 0 && normal_ls > 0 && fg >= 1.5 && fg <= 3.5 && fl >= 1.5 && fl <= 3.5 && down && t < 900,
            fmt::format("normal gen {:.4g} ls {:.4g}; GSA up {:.4g} (x{:.2f}), LSSA up {:.4g} (x{:.2f}); GSA down "
                        "{:.4g}, LSSA down {:.4g}; {:.0f}s",
                        normal_gen, normal_ls, after[{Method::GSA, 1}], fg, after[{Method::LSSA, 1}], fl,
                        after[{Method::GSA, -1}], after[{Method::LSSA, -1}], t)};
}

// ---- 4 ----------------------------------------------------------------------------------------

Outcome budget_monotonicity() {
    using attacks::Method;
    const std::vector<double> eps = {0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0};
    constexpr std::size_t kSeries = 10;
    std::size_t worst_inv = 0, offenders = 0;
    std::string means;
    for (auto m : {Method::GSA, Method::LSSA}) {
        std::vector<double> mean(eps.size(), 0.0);
        for (std::size_t i = 0; i < kSeries; ++i) {
            std::vector<double> slope;
            for (std::size_t k = 0; k < eps.size(); ++k) {
                const auto r = attack(desk().test[i], m, eps[k], 20);
                slope.push_back(m == Method::GSA ? r.after.gen_slope : r.after.ls_slope);
                mean[k] += slope.back() / kSeries;
            }
            std::size_t inv = 0;
            for (std::size_t k = 1; k < slope.size(); ++k) {
                inv += slope[k] < slope[k - 1];
            }
            worst_inv = std::max(worst_inv, inv);
            offenders += inv > 1;
        }
        means += fmt::format(" {} means:", attacks::to_string(m));
        for (double v : mean) {
            means += fmt::format(" {:.4f}", v);
        }
        means += ";";
    }
    return {offenders == 0, fmt::format("{} series x 8 budgets, worst inversions per series {}, series over limit {};{}",
                                        kSeries, worst_inv, offenders, means)};
}

// ---- 5 ----------------------------------------------------------------------------------------

Outcome gsa_structure() {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(40.0, 2.0);
    std::vector<double> v(20);
    for (auto& x : v) {
        x = g(rng);
    }
    bool ok = true;
    std::size_t zeros = 0;
    for (int t : {1, -1}) {
        const auto path = Tensor::vector(v, true);
        const auto obj = ad::sum(attacks::slope_loss(attacks::general_slope(path), t, 5.0, 2.0));
        const auto grad = ad::grad(obj, {path})[0];
        for (std::size_t i = 1; i + 1 < 20; ++i) {
            ok = ok && grad[i] == 0.0;
            zeros += grad[i] == 0.0;
        }
        ok = ok && grad[0] != 0.0 && grad[19] == -grad[0];
        const auto lib = attacks::slope_objective_gradient(v, attacks::Method::GSA, t, 5.0, 2.0);
        for (std::size_t i = 1; i + 1 < 20; ++i) {
            ok = ok && lib[i] == 0.0;
        }
    }
    return {ok, fmt::format("{} of 36 interior gradient entries exactly zero; endpoints equal and opposite", zeros)};
}

// ---- 6 ----------------------------------------------------------------------------------------

double mmd_oracle(const metrics::Sample& a, const metrics::Sample& b) {
    metrics::Sample p = a;
    p.insert(p.end(), b.begin(), b.end());
    const auto dist2 = [](const std::vector<double>& x, const std::vector<double>& y) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            s += (x[i] - y[i]) * (x[i] - y[i]);
        }
        return s;
    };
    std::vector<double> d;
    for (std::size_t i = 0; i < p.size(); ++i) {
        for (std::size_t j = i + 1; j < p.size(); ++j) {
            d.push_back(std::sqrt(dist2(p[i], p[j])));
        }
    }
    std::sort(d.begin(), d.end());
    const double med = d.size() % 2 ? d[d.size() / 2] : 0.5 * (d[d.size() / 2 - 1] + d[d.size() / 2]);
    const double gamma = 1.0 / (2.0 * med * med);
    const auto mean_k = [&](const metrics::Sample& x, const metrics::Sample& y) {
        double s = 0.0;
        for (const auto& xi : x) {
            for (const auto& yj : y) {
                s += std::exp(-gamma * dist2(xi, yj));
            }
        }
        return s / static_cast<double>(x.size() * y.size());
    };
    return std::max(0.0, mean_k(a, a) + mean_k(b, b) - 2.0 * mean_k(a, b));
}

double quantile_oracle(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Outcome oracle_equivalence() {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> g(0.0, 1.0);
    double ls_err = 0, mmd_err = 0, metric_err = 0;
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> y(20 + 17 * trial);
        for (auto& v : y) {
            v = 30.0 + 0.1 * trial * static_cast<double>(&v - y.data()) + g(rng);
        }
        // ordinary least squares via centered sums
        const double n = static_cast<double>(y.size());
        double xm = (n - 1) / 2.0, ym = 0;
        for (double v : y) {
            ym += v / n;
        }
        double sxy = 0, sxx = 0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            sxy += (static_cast<double>(i) - xm) * (y[i] - ym);
            sxx += (static_cast<double>(i) - xm) * (static_cast<double>(i) - xm);
        }
        ls_err = std::max(ls_err, std::abs(attacks::ls_slope(y) - sxy / sxx));

        metrics::Sample a(12 + trial, std::vector<double>(6)), b(10, std::vector<double>(6));
        for (auto& r : a) {
            for (auto& v : r) {
                v = g(rng);
            }
        }
        for (auto& r : b) {
            for (auto& v : r) {
                v = g(rng) + 0.2 * trial;
            }
        }
        mmd_err = std::max(mmd_err, std::abs(metrics::mmd(a, b) - mmd_oracle(a, b)));

        std::vector<double> truth(50), pred(50);
        for (std::size_t i = 0; i < 50; ++i) {
            truth[i] = 20.0 + std::abs(g(rng)) * 5;
            pred[i] = truth[i] + g(rng);
        }
        const auto em = metrics::error_metrics(pred, truth);
        double mae = 0, mse = 0, mape = 0;
        for (std::size_t i = 0; i < 50; ++i) {
            mae += std::abs(pred[i] - truth[i]) / 50.0;
            mse += std::pow(pred[i] - truth[i], 2) / 50.0;
            mape += std::abs((pred[i] - truth[i]) / truth[i]) / 50.0;
        }
        metric_err = std::max({metric_err, std::abs(em.mae - mae), std::abs(em.rmse - std::sqrt(mse)),
                               std::abs(em.mape - mape)});

        const auto mo = metrics::moments(truth);
        double mu = 0;
        for (double v : truth) {
            mu += v / 50.0;
        }
        double c2 = 0, c3 = 0, c4 = 0;
        for (double v : truth) {
            c2 += std::pow(v - mu, 2) / 50.0;
            c3 += std::pow(v - mu, 3) / 50.0;
            c4 += std::pow(v - mu, 4) / 50.0;
        }
        metric_err = std::max({metric_err, std::abs(mo.mu - mu), std::abs(mo.sigma - std::sqrt(c2)),
                               std::abs(mo.iqr - (quantile_oracle(truth, 0.75) - quantile_oracle(truth, 0.25))),
                               std::abs(mo.skew - c3 / std::pow(c2, 1.5)), std::abs(mo.kurtosis - c4 / (c2 * c2))});

        std::bernoulli_distribution coin(0.3 + 0.04 * trial);
        std::vector<int> l(40), p(40);
        double tp = 0, tn = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < 40; ++i) {
            l[i] = coin(rng);
            p[i] = coin(rng) ? l[i] : 1 - l[i];
            (l[i] ? (p[i] ? tp : fn) : (p[i] ? fp : tn)) += 1;
        }
        const auto cr = metrics::confusion(l, p);
        const double po = (tp + tn) / 40.0;
        const double pe = ((tp + fn) * (tp + fp) + (tn + fp) * (tn + fn)) / 1600.0;
        metric_err = std::max({metric_err, std::abs(cr.accuracy - 100.0 * po),
                               std::abs(cr.specificity - 100.0 * tn / (tn + fp)),
                               std::abs(cr.kappa - 100.0 * (po - pe) / (1.0 - pe))});
    }
    return {ls_err < 1e-10 && mmd_err < 1e-10 && metric_err < 1e-12,
            fmt::format("ls_slope err {:.1e}, mmd err {:.1e}, error/moment/confusion err {:.1e}", ls_err, mmd_err,
                        metric_err)};
}

// ---- 7 ----------------------------------------------------------------------------------------

Outcome forecaster_sanity() {
    double mape = 0;
    std::size_t n = 0;
    bool counts_ok = true;
    for (const auto& s : desk().test) {
        const auto rf = forecaster::rolling_forecast(desk().model, s);
        const auto h = desk().model.config().horizon;
        const auto days = rf.averaged.numel();
        const auto windows = days - h + 1;
        for (std::size_t d = 0; d < days; ++d) {
            mape += std::abs(rf.averaged[d] - s.adjprc[rf.first_day + d]) / s.adjprc[rf.first_day + d];
            ++n;
            // windows w = 0..W-1 cover days w..w+H-1
            std::size_t overlaps = 0;
            for (std::size_t w = 0; w < windows; ++w) {
                overlaps += d >= w && d < w + h;
            }
            counts_ok = counts_ok && rf.counts[d] == overlaps;
        }
    }
    mape /= static_cast<double>(n);

    std::mt19937_64 rng(8);
    std::normal_distribution<double> g(0.0, 3.0);
    std::vector<double> pv(4 * 20), tv(4 * 20);
    for (std::size_t i = 0; i < pv.size(); ++i) {
        pv[i] = g(rng);
        tv[i] = g(rng);
    }
    const double q = forecaster::quantile_loss(Tensor::from({4, 1, 20}, pv), Tensor::from({4, 20}, tv), {0.5}).item();
    double l1 = 0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        l1 += std::abs(pv[i] - tv[i]);
    }
    l1 *= 1.0 / static_cast<double>(pv.size());  // same reduction convention as ad::mean
    return {mape < 0.15 && q == 0.5 * l1 && counts_ok,
            fmt::format("held-out MAPE {:.2f}% over {} days; q=0.5 loss {} vs 0.5*L1 {}; overlap counts {}",
                        100 * mape, n, q, 0.5 * l1, counts_ok ? "match" : "MISMATCH")};
}

// ---- 8 ----------------------------------------------------------------------------------------

Outcome gan_smoke() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& model = desk().model;
    std::vector<std::vector<double>> before;
    std::vector<bool> flags;
    for (const auto& [name, p] : model.parameters()) {
        before.push_back(p.to_vector());
        flags.push_back(p.requires_grad());
    }
    const auto stock = dataio::synth_gbm(1, 1000, 50.0, kDrift, kVol, 7, "A")[0];
    agan::GanConfig c;
    c.samples_per_epoch = 64;
    c.epochs_per_block = {5, 5, 5, 5, 5};
    c.seed = 3;
    const auto r = agan::train_agan(stock, model, c);

    bool finite = true;
    for (const auto& e : r.log) {
        finite = finite && std::isfinite(e.critic_loss) && std::isfinite(e.gradient_penalty) &&
                 std::isfinite(e.generator_loss) && std::isfinite(e.adversarial_loss);
    }
    bool frozen = true;
    std::size_t k = 0;
    for (const auto& [name, p] : model.parameters()) {
        frozen = frozen && p.to_vector() == before[k] && p.requires_grad() == flags[k];
        ++k;
    }

    constexpr std::size_t kN = 200;
    const auto conds = agan::sample_intervals(stock, kN, 99, c.interval_length, r.bundle.bounds);
    const auto gen = agan::generate(r.bundle, conds, 5);
    const auto& b = r.bundle.bounds;
    std::vector<double> p0, gv, rv;
    std::vector<std::vector<dataio::Date>> dates;
    metrics::Sample gs, rs;
    for (std::size_t i = 0; i < kN; ++i) {
        p0.push_back(conds[i].p0);
        dates.push_back(conds[i].dates);
        gs.emplace_back();
        rs.emplace_back();
        for (double x : gen[i]) {
            gv.push_back(b.unscale(x));
            gs.back().push_back(gv.back());
            finite = finite && std::isfinite(x);
        }
        for (double x : conds[i].condition) {
            rv.push_back(b.unscale(x));
            rs.back().push_back(rv.back());
        }
    }
    double sg = 0, sr = 0;
    {
        ad::NoGradGuard guard;
        const auto a = agan::forecast_ls_slopes(model, agan::to_prices(Tensor::from({kN, c.interval_length}, gv), p0),
                                                dates);
        const auto o = agan::forecast_ls_slopes(model, agan::to_prices(Tensor::from({kN, c.interval_length}, rv), p0),
                                                dates);
        for (std::size_t i = 0; i < kN; ++i) {
            sg += a[i] / kN;
            sr += o[i] / kN;
        }
    }
    const double mmd = metrics::mmd(rs, gs);

    // scaling identities
    double round = 0;
    const auto lr = agan::log_returns(stock.adjprc);
    for (double x : lr) {
        round = std::max(round, std::abs(b.unscale(b.scale(x)) - x));
    }
    const auto prices = agan::to_prices(lr, stock.adjprc[0]);
    for (std::size_t i = 0; i < stock.size(); ++i) {
        round = std::max(round, std::abs(prices[i] - stock.adjprc[i]) / stock.adjprc[i]);
    }
    const double t = seconds_since(t0);
    return {finite && frozen && sg - sr > 0 && std::isfinite(mmd) && mmd >= 0 && round < 1e-12,
            fmt::format("{} epochs, losses finite: {}; forecaster frozen: {}; forecast LS slope generated {:.4g} vs "
                        "real {:.4g} (shift {:+.4g}); MMD {:.4g}; scaling round trip {:.1e}; {:.0f}s",
                        r.log.size(), finite, frozen, sg, sr, sg - sr, mmd, round, t)};
}

// ---- 9 ----------------------------------------------------------------------------------------

std::vector<double> noisy_walk(std::mt19937_64& rng, double drift) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> v(300);
    double p = 100.0;
    for (auto& x : v) {
        p += drift + 0.5 * g(rng);
        x = p;
    }
    return v;
}

Outcome defense_checks(std::string& info) {
    defense::DiscriminatorConfig c;
    c.lr = 3e-3;
    c.epochs = 15;
    c.seed = 4;
    std::mt19937_64 rng(10);
    std::vector<std::vector<double>> real, ramp, real_test, ramp_test;
    for (int i = 0; i < 60; ++i) {
        real.push_back(noisy_walk(rng, 0.0));
        ramp.push_back(noisy_walk(rng, 0.5));
    }
    for (int i = 0; i < 40; ++i) {
        real_test.push_back(noisy_walk(rng, 0.0));
        ramp_test.push_back(noisy_walk(rng, 0.5));
    }
    const auto toy = defense::evaluate_discriminator(defense::train_discriminator(real, ramp, c).model, real_test,
                                                     ramp_test);

    // desk data: real test series vs their GSA/LSSA (up, 2%) versions, 70/30 split per class
    const auto& d = desk();
    std::vector<std::vector<double>> dr, da, dr_t, da_t;
    for (std::size_t i = 0; i < d.test.size(); ++i) {
        (i % 10 < 7 ? dr : dr_t).push_back(d.test[i].adjprc);
    }
    for (std::size_t i = 0; i < d.adversarial.size(); ++i) {
        (i % 10 < 7 ? da : da_t).push_back(d.adversarial[i].adjprc);
    }
    defense::DiscriminatorConfig dc;
    dc.seed = 4;
    const auto desk_rep = defense::evaluate_discriminator(defense::train_discriminator(dr, da, dc).model, dr_t, da_t);
    info = fmt::format("INFO criterion 9 (desk GSA/LSSA, {} real + {} attacked held out): accuracy {:.2f}, specificity "
                       "{:.2f}, kappa {:.2f}; reference stealth figures accuracy 52.08, specificity 27.78",
                       dr_t.size(), da_t.size(), desk_rep.accuracy, desk_rep.specificity, desk_rep.kappa);

    const fs::path root = fs::temp_directory_path() / ("slopestrike-accept-manifest-" + std::to_string(::getpid()));
    fs::remove_all(root);
    for (std::size_t i = 0; i < 20; ++i) {
        dataio::write_file(root / (i % 4 == 0 ? "weights" : ".") / fmt::format("f{:02}.bin", i),
                           fmt::format("payload {}\n{}", i, std::string(i * 53 + 1, static_cast<char>('a' + i))));
    }
    const auto m = defense::build_manifest(root);
    std::size_t detected = 0, trials = 0;
    for (const auto& e : m.entries) {
        const auto p = root / e.path;
        const auto original = dataio::read_file(p);
        auto flipped = original;
        flipped[flipped.size() / 2] ^= 0x20;
        dataio::write_file(p, flipped);
        auto v = defense::verify_manifest(root, m);
        detected += v.modified == std::vector<std::string>{e.path};
        fs::remove(p);
        v = defense::verify_manifest(root, m);
        detected += v.removed == std::vector<std::string>{e.path};
        dataio::write_file(p, original);
        dataio::write_file(root / "weights" / "injected.bin", "x");
        v = defense::verify_manifest(root, m);
        detected += v.added == std::vector<std::string>{"weights/injected.bin"};
        fs::remove(root / "weights" / "injected.bin");
        trials += 3;
    }
    const bool pristine = defense::verify_manifest(root, m).ok();
    fs::remove_all(root);
    return {toy.accuracy >= 90.0 && detected == trials && pristine && m.entries.size() == 20,
            fmt::format("toy held-out accuracy {:.1f}%; manifest detected {}/{} single-file tampers over {} files, "
                        "pristine tree verifies: {}",
                        toy.accuracy, detected, trials, m.entries.size(), pristine)};
}

// ---- 10 ---------------------------------------------------------------------------------------

std::map<std::string, std::string> tree(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) {
            out[fs::relative(e.path(), dir).generic_string()] = dataio::read_file(e.path());
        }
    }
    return out;
}

int run_cli(const fs::path& cwd_root, std::vector<std::string> args, std::string* stdout_text = nullptr) {
    for (auto& a : args) {
        if (a.starts_with("@/")) {
            a = (cwd_root / a.substr(2)).string();
        }
    }
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    if (stdout_text != nullptr) {
        *stdout_text = out.str();
    }
    if (code != 0) {
        throw std::runtime_error(fmt::format("command failed ({}): {}", code, err.str()));
    }
    return code;
}

Outcome determinism() {
    const fs::path base = fs::temp_directory_path() / ("slopestrike-accept-cli-" + std::to_string(::getpid()));
    fs::remove_all(base);
    std::vector<std::map<std::string, std::string>> trees;
    std::vector<std::string> manifests;
    const std::vector<std::vector<std::string>> pipeline = {
        {"--seed", "9", "synth", "--n-series", "10", "--days", "360", "--out", "@/synth"},
        {"--seed", "9", "train", "--data", "@/synth/prices.csv", "--out", "@/train", "--min-length", "300",
         "--epochs", "2", "--hidden", "16", "--windows-per-epoch", "64", "--val-windows", "32", "--lr", "1e-2"},
        {"--seed", "9", "attack", "--model", "@/train/model.ckpt", "--data", "@/synth/prices.csv", "--out", "@/attack",
         "--methods", "fgsm,bim,mifgsm,sim,tim,gsa,lssa,cw,cw_gsa,cw_lssa", "--eps", "0,2", "--iter", "2",
         "--cw-iter", "3", "--max-series", "2", "--jobs", "2"},
        {"--seed", "9", "defend", "train", "--real", "@/synth/prices.csv", "--attacked", "@/attack/adversarial.csv",
         "--epochs", "2", "--out", "@/defend"},
        {"--seed", "9", "defend", "classify", "--model", "@/defend/discriminator.ckpt", "--real",
         "@/synth/prices.csv", "--attacked", "@/attack/adversarial.csv", "--out", "@/classify"},
        {"--seed", "9", "gan", "train", "--data", "@/synth/prices.csv", "--forecaster", "@/train/model.ckpt", "--out",
         "@/gan", "--epochs-per-block", "1", "--alphas", "0.25,0.3", "--samples-per-epoch", "16", "--batch-size", "8",
         "--critic-iters", "2"},
        {"--seed", "9", "gan", "generate", "--bundle", "@/gan/gan.ckpt", "--data", "@/synth/prices.csv",
         "--forecaster", "@/train/model.ckpt", "--n", "20", "--out", "@/generate"},
        {"--seed", "9", "eval", "--real", "@/generate/conditions.csv", "--generated", "@/generate/generated.csv",
         "--bundle", "@/gan/gan.ckpt", "--classifications", "@/classify/classifications.csv", "--out", "@/eval"},
    };
    for (int rep = 0; rep < 2; ++rep) {
        const auto root = base / fmt::format("run{}", rep);
        for (const auto& cmd : pipeline) {
            run_cli(root, cmd);
        }
        // train's run manifest embeds the output path, so hash the model files only
        std::string manifest;
        fs::create_directories(root / "release");
        for (const char* f : {"model.ckpt", "training_log.csv", "train_state.ckpt"}) {
            fs::copy_file(root / "train" / f, root / "release" / f);
        }
        run_cli(root, {"defend", "build-manifest", "@/release"}, &manifest);
        manifests.push_back(manifest);
        auto t = tree(root);
        // run manifests record the output directory; normalize it
        for (auto& [path, text] : t) {
            if (path.ends_with("run_manifest.json")) {
                for (auto pos = text.find(root.string()); pos != std::string::npos; pos = text.find(root.string())) {
                    text.replace(pos, root.string().size(), "<root>");
                }
            }
        }
        trees.push_back(std::move(t));
    }
    std::vector<std::string> differing;
    for (const auto& [path, text] : trees[0]) {
        if (!trees[1].contains(path) || trees[1].at(path) != text) {
            differing.push_back(path);
        }
    }
    differing.resize(std::min<std::size_t>(differing.size(), 5));
    const bool same = trees[0] == trees[1] && manifests[0] == manifests[1];
    if (manifests[0] != manifests[1]) {
        differing.push_back("<build-manifest stdout>");
    }
    fs::remove_all(base);
    std::string diff;
    for (const auto& d : differing) {
        diff += " " + d;
    }
    return {same, fmt::format("{} commands run twice, {} output files compared, {}{}", pipeline.size() + 1,
                              trees[0].size(), same ? "all byte-identical" : "differ:", diff)};
}

} // namespace

int main(int argc, char** argv) {
    std::cout << std::unitbuf;
    // optional arguments select criteria by number
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        only.insert(std::atoi(argv[i]));
    }
    bool all = true;
    const auto report = [&](int n, const std::function<Outcome()>& f) {
        if (!only.empty() && !only.contains(n)) {
            return;
        }
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        all = all && o.pass;
        std::cout << fmt::format("{} criterion {}: {}\n", o.pass ? "PASS" : "FAIL", n, o.detail);
    };
    std::string info;
    report(1, autodiff_correctness);
    report(2, eps_ball);
    report(3, slope_efficacy);
    report(4, budget_monotonicity);
    report(5, gsa_structure);
    report(6, oracle_equivalence);
    report(7, forecaster_sanity);
    report(8, gan_smoke);
    report(9, [&] { return defense_checks(info); });
    report(10, determinism);
    if (!info.empty()) {
        std::cout << info << "\n";
    }
    return all ? 0 : 1;
}
