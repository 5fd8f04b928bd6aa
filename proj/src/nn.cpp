#include "slopestrike/nn.hpp"

#include <cmath>

#include "slopestrike/error.hpp"

namespace slopestrike::nn {

Tensor uniform_init(ad::Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in == 0 ? 1 : fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> values(ad::numel(shape));
    for (auto& v : values) {
        v = dist(rng);
    }
    return Tensor::from(std::move(shape), std::move(values), true);
}

Linear::Linear(std::size_t in, std::size_t out, std::mt19937_64& rng)
    : weight(uniform_init({in, out}, in, rng)), bias(uniform_init({out}, in, rng)) {}

void Linear::append_parameters(const std::string& prefix, ParameterList& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

Conv1d::Conv1d(std::size_t in, std::size_t out, std::size_t kernel, ad::Conv1dOptions opts, std::mt19937_64& rng)
    : weight(uniform_init({out, in, kernel}, in * kernel, rng)),
      bias(uniform_init({out}, in * kernel, rng)),
      options(opts) {}

void Conv1d::append_parameters(const std::string& prefix, ParameterList& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

void set_requires_grad(const ParameterList& params, bool flag) {
    for (const auto& [name, p] : params) {
        Tensor t = p;
        t.set_requires_grad(flag);
    }
}

void zero_grad(const ParameterList& params) {
    for (const auto& [name, p] : params) {
        Tensor t = p;
        t.zero_grad();
    }
}

std::vector<double> flatten_values(const ParameterList& params) {
    std::vector<double> out;
    for (const auto& [name, p] : params) {
        auto v = p.values();
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

void copy_values(const ParameterList& src, const ParameterList& dst) {
    if (src.size() != dst.size()) {
        throw DimensionError("copy_values: parameter count mismatch");
    }
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i].second.shape() != dst[i].second.shape()) {
            throw DimensionError("copy_values: shape mismatch for " + dst[i].first);
        }
        Tensor t = dst[i].second;
        auto from = src[i].second.values();
        std::copy(from.begin(), from.end(), t.mutable_values().begin());
    }
}

void Sgd::step(const ParameterList& params) const {
    for (const auto& [name, p] : params) {
        Tensor t = p;
        if (!t.has_grad()) {
            continue;
        }
        auto g = t.grad();
        auto w = t.mutable_values();
        for (std::size_t i = 0; i < w.size(); ++i) {
            w[i] -= lr_ * (g[i] + weight_decay_ * w[i]);
        }
    }
}

void Adam::step(const ParameterList& params) {
    if (m_.empty()) {
        for (const auto& [name, p] : params) {
            m_.emplace_back(p.numel(), 0.0);
            v_.emplace_back(p.numel(), 0.0);
        }
    }
    if (m_.size() != params.size()) {
        throw ContractError("Adam::step: parameter list changed between steps");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor t = params[k].second;
        if (!t.has_grad()) {
            continue;
        }
        auto g = t.grad();
        auto w = t.mutable_values();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double mhat = bc1 > 0.0 ? m[i] / bc1 : m[i];
            const double vhat = v[i] / bc2;
            w[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * w[i]);
        }
    }
}

} // namespace slopestrike::nn
