#pragma once

// Test-only finite-difference oracle. Independent of the reverse-mode engine:
// it only ever evaluates forward passes with gradient recording disabled.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "slopestrike/autodiff.hpp"

namespace slopestrike::oracle {

/// |a - n| / max(1, |a|, |n|): relative for large entries, absolute near zero.
inline double rel_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

/// Central differences of a scalar function of `leaves` with step h.
inline std::vector<std::vector<double>> numeric_gradients(const std::function<ad::Tensor()>& f,
                                                          std::vector<ad::Tensor>& leaves, double h = 1e-5) {
    ad::NoGradGuard guard;
    std::vector<std::vector<double>> out;
    for (auto& leaf : leaves) {
        auto values = leaf.mutable_values();
        std::vector<double> g(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double orig = values[i];
            values[i] = orig + h;
            const double up = f().item();
            values[i] = orig - h;
            const double down = f().item();
            values[i] = orig;
            g[i] = (up - down) / (2.0 * h);
        }
        out.push_back(std::move(g));
    }
    return out;
}

/// Max relative error between reverse-mode and central-difference gradients.
inline double max_gradient_error(const std::function<ad::Tensor()>& f, std::vector<ad::Tensor>& leaves,
                                 double h = 1e-5) {
    for (auto& leaf : leaves) {
        leaf.zero_grad();
    }
    f().backward();
    auto numeric = numeric_gradients(f, leaves, h);
    double worst = 0.0;
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        auto analytic = leaves[k].grad();
        for (std::size_t i = 0; i < numeric[k].size(); ++i) {
            const double a = analytic.empty() ? 0.0 : analytic[i];
            worst = std::max(worst, rel_error(a, numeric[k][i]));
        }
    }
    return worst;
}

inline ad::Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                                bool requires_grad = true) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(ad::numel(shape));
    for (auto& x : v) {
        x = dist(rng);
    }
    return ad::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// A randomly composed differentiable program over a fixed set of leaves.
struct RandomGraph {
    std::vector<ad::Tensor> leaves;
    std::vector<int> stages;
    std::vector<ad::Tensor> params;  // per-stage parameter (may be undefined)
    std::vector<ad::Tensor> biases;  // per-stage second parameter (affine only)
    std::vector<std::vector<std::size_t>> index_sets;

    ad::Tensor operator()() const {
        using namespace ad;
        Tensor t = leaves[0];
        for (std::size_t s = 0; s < stages.size(); ++s) {
            const auto& p = params[s];
            const auto r = t.dim(0);
            const auto c = t.dim(1);
            switch (stages[s]) {
            case 0: t = tanh(t); break;
            case 1: t = sigmoid(t); break;
            case 2: t = t * p; break;
            case 3: t = affine(t, p, biases[s]); break;
            case 4: t = div(t, add_scalar(pow(t, 2.0), 1.0)); break;
            case 5: t = log(add_scalar(mul(t, t), 1.0)); break;
            case 6: t = exp(scale(t, 0.3)); break;
            case 7: t = sqrt(add_scalar(mul(t, t), 1.0)); break;
            case 8: t = leaky_relu(t, 0.1); break;
            case 9: t = maxpool1d(t, 2); break;
            case 10: t = concat({slice(t, 1, 0, 1), t}, 1); break;
            case 11: {
                auto x3 = reshape(t, {1, r, c});
                t = reshape(conv1d(x3, p, Tensor(), {1, 2, true}), {p.dim(0), c});
                break;
            }
            case 12: t = sub(t, expand(mean(t, 1, true), t.shape())); break;
            case 13: t = matmul(transpose(t), p); break;
            case 14: t = gather(t, index_sets[s], {r, c}); break;
            case 15: t = add(t, p); break;  // trailing-dim broadcast of a [c] vector
            case 16: t = abs(add_scalar(t, 3.0)); break;
            default: break;
            }
        }
        return sum(mul(t, t));
    }
};

inline RandomGraph make_random_graph(std::mt19937_64& rng) {
    using namespace ad;
    RandomGraph g;
    std::uniform_int_distribution<std::size_t> dimd(2, 5);
    std::size_t r = dimd(rng);
    std::size_t c = 2 * dimd(rng);
    g.leaves.push_back(random_tensor({r, c}, rng));
    std::uniform_int_distribution<int> stage_d(0, 16);
    std::uniform_int_distribution<int> len_d(2, 5);
    const int n = len_d(rng);
    for (int s = 0; s < n; ++s) {
        int st = stage_d(rng);
        if (st == 9 && c < 4) {
            st = 0;
        }
        Tensor p;
        Tensor b;
        std::vector<std::size_t> idx;
        switch (st) {
        case 2: p = random_tensor({r, c}, rng); break;
        case 3: {
            const std::size_t c2 = dimd(rng);
            p = random_tensor({c, c2}, rng);
            b = random_tensor({c2}, rng);
            c = c2;
            break;
        }
        case 9: c /= 2; break;
        case 10: c += 1; break;
        case 11: {
            const std::size_t r2 = dimd(rng);
            p = random_tensor({r2, r, 2}, rng);
            r = r2;
            break;
        }
        case 13: {
            const std::size_t c2 = dimd(rng);
            p = random_tensor({r, c2}, rng);
            r = c;
            c = c2;
            break;
        }
        case 14: {
            std::uniform_int_distribution<std::size_t> id(0, r * c - 1);
            idx.resize(r * c);
            for (auto& i : idx) {
                i = id(rng);
            }
            break;
        }
        case 15: p = random_tensor({c}, rng); break;
        default: break;
        }
        if (p.defined()) {
            g.leaves.push_back(p);
        }
        if (b.defined()) {
            g.leaves.push_back(b);
        }
        g.stages.push_back(st);
        g.params.push_back(p);
        g.biases.push_back(b);
        g.index_sets.push_back(std::move(idx));
    }
    return g;
}

} // namespace slopestrike::oracle
