#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "slopestrike/autodiff.hpp"
#include "slopestrike/dataio.hpp"
#include "slopestrike/features.hpp"
#include "slopestrike/nn.hpp"

namespace slopestrike::forecaster {

using ad::Tensor;

struct NhitsConfig {
    std::size_t encoder_length = 100;
    std::size_t horizon = 20;
    std::vector<std::size_t> pool_kernels = {4, 2, 1};
    std::vector<std::size_t> downsample_ratios = {4, 2, 1};
    std::size_t blocks_per_stack = 1;
    std::size_t hidden_size = 64;
    std::size_t mlp_layers = 2;
    std::vector<double> quantiles = {0.01, 0.05, 0.1, 0.5, 0.95, 0.99, 0.999};
    bool use_exogenous = true;

    double lr = 1e-3;
    double weight_decay = 1e-4;
    std::size_t batch_size = 64;
    std::size_t epochs = 100;
    std::size_t windows_per_epoch = 1024;
    std::size_t val_windows = 256;
    std::size_t early_stop_patience = 15;
    std::uint64_t seed = 0;

    std::size_t n_stacks() const { return pool_kernels.size(); }
    std::size_t n_quantiles() const { return quantiles.size(); }
    /// Index of the 0.5 quantile on the sorted axis.
    std::size_t median_index() const;
    void validate() const;

    nlohmann::json to_json() const;
    static NhitsConfig from_json(const nlohmann::json& j);
};

/// Windows cut from one feature matrix. `prices` [B, L]; `exog` [B, 16, L]
/// (raw channels 1..11 followed by the weekday one-hot).
struct WindowBatch {
    Tensor prices;
    Tensor exog;
    std::size_t size() const { return prices.dim(0); }
};

WindowBatch make_windows(const features::FeatureMatrix& f, const std::vector<std::size_t>& starts,
                         std::size_t length);

struct ForecastOutput {
    /// [B, horizon, Q], quantile axis sorted ascending, price units.
    Tensor quantile_paths;
    /// [B, horizon], sorted quantile column median_index().
    Tensor median_path;
};

class Nhits {
public:
    Nhits() = default;
    Nhits(NhitsConfig config, std::uint64_t seed);

    const NhitsConfig& config() const { return config_; }
    const nn::ParameterList& parameters() const { return params_; }

    /// Unsorted quantile forecasts in window-normalized units, [B, Q, H].
    /// Also returns the per-window mean and scale (std + 1e-8), each [B].
    struct Normalized {
        Tensor forecast;
        Tensor mean;
        Tensor scale;
        /// Residual after every block, [B, L]; residuals[0] is the normalized input.
        std::vector<Tensor> residuals;
    };
    Normalized forward_normalized(const WindowBatch& batch) const;

    ForecastOutput forward(const WindowBatch& batch) const;

    dataio::Checkpoint to_checkpoint() const;
    static Nhits from_checkpoint(const dataio::Checkpoint& checkpoint);

    /// Zeroes the last layer of every block (used in tests).
    void zero_output_layers();

private:
    struct Block {
        std::vector<nn::Linear> hidden;
        nn::Linear out;
        std::size_t pool = 1;
        std::size_t backcast_coeffs = 0;
        std::size_t forecast_coeffs = 0;
        Tensor backcast_interp;  // [backcast_coeffs, L]
        Tensor forecast_interp;  // [forecast_coeffs, H]
    };

    void build(std::mt19937_64& rng);
    void collect_parameters();

    NhitsConfig config_;
    std::vector<Block> blocks_;
    nn::ParameterList params_;
};

/// Linear interpolation matrix from `coeffs` knots to `length` points; knots
/// sit at the ends of the target range (identity when coeffs == length).
Tensor interpolation_matrix(std::size_t coeffs, std::size_t length);

/// Mean pinball loss. `pred` [B, Q, H] (unsorted quantile axis), `truth` [B, H].
Tensor quantile_loss(const Tensor& pred, const Tensor& truth, const std::vector<double>& quantiles);

/// Sorts the quantile axis of [B, Q, H] and moves it last: [B, H, Q].
Tensor sort_quantiles(const Tensor& pred);

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainState {
    std::size_t next_epoch = 0;
    double best_val = 0.0;
    std::size_t bad_epochs = 0;
    std::size_t best_epoch = 0;
    std::vector<EpochLog> log;
};

struct TrainOptions {
    /// Written after every epoch; lets a later run resume.
    std::optional<std::filesystem::path> state_path;
    /// Stop after this many epochs in this call (for resume tests); 0 = no limit.
    std::size_t max_epochs_this_call = 0;
    std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
    Nhits best;
    Nhits current;
    TrainState state;
    bool early_stopped = false;
};

/// Minibatch gradient descent with decoupled weight decay on the quantile loss
/// in normalized units, early stopping on validation loss.
TrainResult train(const std::vector<dataio::PriceSeries>& train_series,
                  const std::vector<dataio::PriceSeries>& val_series, const NhitsConfig& config,
                  const TrainOptions& options = {});

/// Continues from a state file written by `train`.
TrainResult resume(const std::vector<dataio::PriceSeries>& train_series,
                   const std::vector<dataio::PriceSeries>& val_series, const std::filesystem::path& state_path,
                   const TrainOptions& options = {});

std::string format_training_log(const std::vector<EpochLog>& log);

struct RollingForecast {
    /// Mean of every median-path prediction covering each day, [T - L].
    Tensor averaged;
    std::size_t first_day = 0;
    std::vector<std::size_t> counts;
    /// Per-window median paths, [W, H].
    Tensor windows;
};

/// Slides the encoder window by one day over the whole series (windows whose
/// horizon fits inside the series) and averages overlapping predictions.
RollingForecast rolling_forecast(const Nhits& model, const Tensor& adjprc, const std::vector<dataio::Date>& dates);
RollingForecast rolling_forecast(const Nhits& model, const dataio::PriceSeries& series);

} // namespace slopestrike::forecaster
