#pragma once

// Minimal layer and optimizer building blocks on top of the autodiff tensors.

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "slopestrike/autodiff.hpp"

namespace slopestrike::nn {

using ad::Tensor;

/// Named parameter list, in a stable order (checkpoint layout depends on it).
using ParameterList = std::vector<std::pair<std::string, Tensor>>;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
Tensor uniform_init(ad::Shape shape, std::size_t fan_in, std::mt19937_64& rng);

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    Linear() = default;
    Linear(std::size_t in, std::size_t out, std::mt19937_64& rng);

    Tensor operator()(const Tensor& x) const { return ad::affine(x, weight, bias); }
    void append_parameters(const std::string& prefix, ParameterList& out) const;
};

struct Conv1d {
    Tensor weight;  // [out, in, kernel]
    Tensor bias;    // [out]
    ad::Conv1dOptions options;

    Conv1d() = default;
    Conv1d(std::size_t in, std::size_t out, std::size_t kernel, ad::Conv1dOptions opts, std::mt19937_64& rng);

    Tensor operator()(const Tensor& x) const { return ad::conv1d(x, weight, bias, options); }
    void append_parameters(const std::string& prefix, ParameterList& out) const;
};

void set_requires_grad(const ParameterList& params, bool flag);
void zero_grad(const ParameterList& params);
/// Flattened copy of every parameter value, in list order.
std::vector<double> flatten_values(const ParameterList& params);
/// Copies values (shapes must already match) from `src` into `dst`.
void copy_values(const ParameterList& src, const ParameterList& dst);

/// Plain minibatch gradient descent with decoupled weight decay:
/// w <- w - lr * (grad + weight_decay * w)
class Sgd {
public:
    Sgd(double lr, double weight_decay) : lr_(lr), weight_decay_(weight_decay) {}
    void step(const ParameterList& params) const;

private:
    double lr_;
    double weight_decay_;
};

/// Adam with decoupled weight decay (AdamW).
class Adam {
public:
    Adam(double lr, double beta1, double beta2, double weight_decay = 0.0, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps) {}

    void step(const ParameterList& params);
    std::int64_t steps() const { return t_; }

private:
    double lr_;
    double beta1_;
    double beta2_;
    double weight_decay_;
    double eps_;
    std::int64_t t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

} // namespace slopestrike::nn
