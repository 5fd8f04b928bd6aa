#pragma once

// Conditional WGAN-GP over 99-day log-return intervals whose generator is also
// pushed by a frozen forecaster through the least-squares slope objective.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "slopestrike/autodiff.hpp"
#include "slopestrike/dataio.hpp"
#include "slopestrike/forecaster.hpp"
#include "slopestrike/nn.hpp"

namespace slopestrike::agan {

using ad::Tensor;

struct GanConfig {
    std::size_t interval_length = 99;
    std::size_t batch_size = 32;
    std::size_t samples_per_epoch = 512;
    std::size_t critic_iters = 5;
    double lambda_gp = 1.0;
    double gp_apply_prob = 0.6;
    double lr_g = 1e-4;
    double lr_c = 1e-4;
    std::vector<double> adv_scale_schedule = {0.25, 0.25, 0.3, 0.35, 0.35};
    std::vector<std::size_t> epochs_per_block = {50, 50, 50, 50, 50};
    double c = 5.0;
    double d = 2.0;
    std::vector<std::size_t> gen_channels = {64, 128, 64, 32};
    std::vector<std::size_t> gen_kernels = {3, 5, 5, 3};
    std::vector<std::size_t> gen_dilations = {1, 2, 4, 8};
    std::vector<std::size_t> critic_hidden = {64, 32};
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static GanConfig from_json(const nlohmann::json& j);
};

struct ScaleBounds {
    double lo = 0.0;
    double hi = 1.0;

    double scale(double r) const { return (r - lo) / (hi - lo); }
    double unscale(double x) const { return lo + x * (hi - lo); }
};

/// Min and max of every log return in the series.
ScaleBounds fit_bounds(const dataio::PriceSeries& series);

std::vector<double> log_returns(const std::vector<double>& prices);

struct ScaledInterval {
    std::vector<double> log_returns;  // scaled into [0,1] by `bounds`
    ScaleBounds bounds;
    std::vector<double> condition;  // the real scaled interval
    double p0 = 0.0;
    std::vector<dataio::Date> dates;  // interval_length + 1 price dates
    std::size_t start = 0;
};

/// `n` uniformly drawn windows of `length` log returns. Bounds default to the
/// whole series.
std::vector<ScaledInterval> sample_intervals(const dataio::PriceSeries& series, std::size_t n, std::uint64_t seed,
                                             std::size_t length = 99,
                                             std::optional<ScaleBounds> bounds = std::nullopt);

/// p_0 = p0, p_t = p0 * exp(r_1 + ... + r_t).
std::vector<double> to_prices(const std::vector<double>& log_returns, double p0);
/// Batched: returns [B, L] and p0 [B] -> prices [B, L + 1].
Tensor to_prices(const Tensor& log_returns, const std::vector<double>& p0);

/// Causal dilated conv stack over (noise, condition) channels, sigmoid output.
class Generator {
public:
    Generator() = default;
    Generator(const GanConfig& config, std::mt19937_64& rng);
    /// noise, condition [B, L] -> scaled returns [B, L]
    Tensor operator()(const Tensor& noise, const Tensor& condition) const;
    const nn::ParameterList& parameters() const { return params_; }

private:
    std::vector<nn::Conv1d> convs_;
    nn::Conv1d out_;
    nn::ParameterList params_;
};

/// tanh MLP over the flattened (interval, condition) pair. Every op it uses
/// supports second-order differentiation.
class Critic {
public:
    Critic() = default;
    Critic(const GanConfig& config, std::mt19937_64& rng);
    /// x, condition [B, L] -> scores [B]
    Tensor operator()(const Tensor& x, const Tensor& condition) const;
    const nn::ParameterList& parameters() const { return params_; }

private:
    std::vector<nn::Linear> layers_;
    nn::ParameterList params_;
};

/// mean_b (||d critic(x_hat_b) / d x_hat_b|| - 1)^2 with x_hat = u*real + (1-u)*fake,
/// built with history so it can be differentiated with respect to the critic.
Tensor gradient_penalty(const std::function<Tensor(const Tensor&)>& critic, const Tensor& real, const Tensor& fake,
                        const std::vector<double>& u);

/// Median forecast path following each price row, [B, H]. The forecaster sees
/// the last encoder_length prices of every row.
Tensor forecast_median_paths(const forecaster::Nhits& model, const Tensor& prices,
                             const std::vector<std::vector<dataio::Date>>& dates);

/// Least-squares slope of the frozen forecaster's median path for each
/// generated interval, [B].
Tensor forecast_ls_slopes(const forecaster::Nhits& model, const Tensor& prices,
                          const std::vector<std::vector<dataio::Date>>& dates);

struct GanEpochLog {
    std::size_t block = 0;
    std::size_t epoch = 0;
    double alpha = 0.0;
    double critic_loss = 0.0;
    double gradient_penalty = 0.0;
    double generator_loss = 0.0;
    double adversarial_loss = 0.0;
};

struct GanBundle {
    GanConfig config;
    ScaleBounds bounds;
    Generator generator;
    Critic critic;

    dataio::Checkpoint to_checkpoint() const;
    static GanBundle from_checkpoint(const dataio::Checkpoint& checkpoint);
};

struct GanTrainResult {
    GanBundle bundle;
    std::vector<GanEpochLog> log;
};

/// Forecaster parameters are left untouched.
GanTrainResult train_agan(const dataio::PriceSeries& real, const forecaster::Nhits& model, const GanConfig& config);

std::vector<std::vector<double>> generate(const GanBundle& bundle, const std::vector<ScaledInterval>& conditions,
                                          std::uint64_t seed);

std::string format_gan_log(const std::vector<GanEpochLog>& log);
/// `interval_id,day,scaled_log_return`
std::string format_intervals(const std::vector<std::vector<double>>& intervals);

} // namespace slopestrike::agan
