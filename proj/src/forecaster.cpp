#include "slopestrike/forecaster.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>

#include "slopestrike/error.hpp"

namespace slopestrike::forecaster {

namespace {

constexpr double kScaleEps = 1e-8;
constexpr std::size_t kExog = features::kContinuousChannels - 1 + features::kWeekdays;

// Exogenous rows (feature channel c maps to row c - 1).
bool is_price_level(std::size_t row) {
    const std::size_t c = row + 1;
    return c == features::kMean5 || c == features::kMean10 || c == features::kMean20 || c == features::kEma5 ||
           c == features::kEma10 || c == features::kEma20;
}

bool is_price_scaled(std::size_t row) {
    const std::size_t c = row + 1;
    return is_price_level(row) || c == features::kStd5 || c == features::kStd10 || c == features::kStd20;
}

Tensor row_mask(std::size_t length, bool (*pred)(std::size_t)) {
    std::vector<double> m(kExog * length, 0.0);
    for (std::size_t r = 0; r < features::kContinuousChannels - 1; ++r) {
        if (pred(r)) {
            std::fill(m.begin() + static_cast<std::ptrdiff_t>(r * length),
                      m.begin() + static_cast<std::ptrdiff_t>((r + 1) * length), 1.0);
        }
    }
    return Tensor::from({kExog, length}, std::move(m));
}

Tensor broadcast_rows(const Tensor& per_batch, const ad::Shape& shape) {
    ad::Shape s(shape.size(), 1);
    s[0] = per_batch.numel();
    return ad::expand(ad::reshape(per_batch, s), shape);
}

double loss_value(const Tensor& t, const char* what, std::size_t epoch) {
    const double v = t.item();
    if (!std::isfinite(v)) {
        throw NumericalError(fmt::format("training diverged: {} loss is {} at epoch {}", what, v, epoch));
    }
    return v;
}

} // namespace

// ---- config -----------------------------------------------------------------------

std::size_t NhitsConfig::median_index() const {
    for (std::size_t i = 0; i < quantiles.size(); ++i) {
        if (quantiles[i] == 0.5) {
            return i;
        }
    }
    throw ContractError("NhitsConfig: quantile list lacks 0.5");
}

void NhitsConfig::validate() const {
    if (encoder_length == 0 || horizon == 0) {
        throw ContractError("NhitsConfig: encoder_length and horizon must be positive");
    }
    if (pool_kernels.empty() || pool_kernels.size() != downsample_ratios.size()) {
        throw ContractError("NhitsConfig: pool_kernels and downsample_ratios must be non-empty and equal length");
    }
    for (std::size_t i = 0; i < pool_kernels.size(); ++i) {
        if (pool_kernels[i] < 1 || encoder_length % pool_kernels[i] != 0) {
            throw ContractError(fmt::format("NhitsConfig: pool kernel {} must divide encoder_length {}",
                                            pool_kernels[i], encoder_length));
        }
        if (downsample_ratios[i] < 1 || horizon % downsample_ratios[i] != 0) {
            throw ContractError(fmt::format("NhitsConfig: horizon {} not divisible by downsample ratio {}", horizon,
                                            downsample_ratios[i]));
        }
    }
    if (quantiles.empty()) {
        throw ContractError("NhitsConfig: no quantiles");
    }
    for (std::size_t i = 0; i < quantiles.size(); ++i) {
        if (!(quantiles[i] > 0.0 && quantiles[i] < 1.0) || (i > 0 && !(quantiles[i] > quantiles[i - 1]))) {
            throw ContractError("NhitsConfig: quantiles must be strictly increasing in (0,1)");
        }
    }
    (void)median_index();
    if (blocks_per_stack < 1 || hidden_size < 1 || mlp_layers < 1 || batch_size < 1) {
        throw ContractError("NhitsConfig: sizes must be positive");
    }
}

nlohmann::json NhitsConfig::to_json() const {
    return {{"encoder_length", encoder_length},
            {"horizon", horizon},
            {"pool_kernels", pool_kernels},
            {"downsample_ratios", downsample_ratios},
            {"blocks_per_stack", blocks_per_stack},
            {"hidden_size", hidden_size},
            {"mlp_layers", mlp_layers},
            {"quantiles", quantiles},
            {"use_exogenous", use_exogenous},
            {"lr", lr},
            {"weight_decay", weight_decay},
            {"batch_size", batch_size},
            {"epochs", epochs},
            {"windows_per_epoch", windows_per_epoch},
            {"val_windows", val_windows},
            {"early_stop_patience", early_stop_patience},
            {"seed", seed}};
}

NhitsConfig NhitsConfig::from_json(const nlohmann::json& j) {
    NhitsConfig c;
    c.encoder_length = j.at("encoder_length");
    c.horizon = j.at("horizon");
    c.pool_kernels = j.at("pool_kernels").get<std::vector<std::size_t>>();
    c.downsample_ratios = j.at("downsample_ratios").get<std::vector<std::size_t>>();
    c.blocks_per_stack = j.at("blocks_per_stack");
    c.hidden_size = j.at("hidden_size");
    c.mlp_layers = j.at("mlp_layers");
    c.quantiles = j.at("quantiles").get<std::vector<double>>();
    c.use_exogenous = j.at("use_exogenous");
    c.lr = j.at("lr");
    c.weight_decay = j.at("weight_decay");
    c.batch_size = j.at("batch_size");
    c.epochs = j.at("epochs");
    c.windows_per_epoch = j.at("windows_per_epoch");
    c.val_windows = j.at("val_windows");
    c.early_stop_patience = j.at("early_stop_patience");
    c.seed = j.at("seed");
    c.validate();
    return c;
}

// ---- windows --------------------------------------------------------------------------

WindowBatch make_windows(const features::FeatureMatrix& f, const std::vector<std::size_t>& starts,
                         std::size_t length) {
    const auto n = f.length();
    const auto b = starts.size();
    constexpr auto C = features::kContinuousChannels;
    if (b == 0) {
        throw ContractError("make_windows: no window starts");
    }
    for (auto s : starts) {
        if (s + length > n) {
            throw ContractError(fmt::format("make_windows: window [{}, {}) exceeds series length {}", s, s + length, n));
        }
    }
    std::vector<std::size_t> pidx(b * length);
    std::vector<std::size_t> eidx(b * (C - 1) * length);
    std::vector<double> onehot(b * features::kWeekdays * length, 0.0);
    for (std::size_t k = 0; k < b; ++k) {
        for (std::size_t i = 0; i < length; ++i) {
            const auto t = starts[k] + i;
            pidx[k * length + i] = t * C;
            for (std::size_t c = 1; c < C; ++c) {
                eidx[(k * (C - 1) + (c - 1)) * length + i] = t * C + c;
            }
            const auto d = static_cast<std::size_t>(f.day_of_week[t]);
            onehot[(k * features::kWeekdays + d) * length + i] = 1.0;
        }
    }
    WindowBatch out;
    out.prices = ad::gather(f.continuous, std::move(pidx), {b, length});
    out.exog = ad::concat({ad::gather(f.continuous, std::move(eidx), {b, C - 1, length}),
                           Tensor::from({b, features::kWeekdays, length}, std::move(onehot))},
                          1);
    return out;
}

// ---- model -----------------------------------------------------------------------------

Tensor interpolation_matrix(std::size_t coeffs, std::size_t length) {
    if (coeffs == 0 || length == 0) {
        throw ContractError("interpolation_matrix: sizes must be positive");
    }
    std::vector<double> m(coeffs * length, 0.0);
    if (coeffs == length) {
        for (std::size_t i = 0; i < coeffs; ++i) {
            m[i * length + i] = 1.0;
        }
    } else if (coeffs == 1) {
        std::fill(m.begin(), m.end(), 1.0);
    } else {
        const double step = static_cast<double>(coeffs - 1) / static_cast<double>(length - 1);
        for (std::size_t t = 0; t < length; ++t) {
            const double pos = static_cast<double>(t) * step;
            auto lo = static_cast<std::size_t>(std::floor(pos));
            lo = std::min(lo, coeffs - 2);
            const double frac = pos - static_cast<double>(lo);
            m[lo * length + t] += 1.0 - frac;
            m[(lo + 1) * length + t] += frac;
        }
    }
    return Tensor::from({coeffs, length}, std::move(m));
}

Nhits::Nhits(NhitsConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(seed);
    build(rng);
}

void Nhits::build(std::mt19937_64& rng) {
    const auto L = config_.encoder_length;
    const auto H = config_.horizon;
    const auto Q = config_.n_quantiles();
    blocks_.clear();
    for (std::size_t s = 0; s < config_.n_stacks(); ++s) {
        for (std::size_t k = 0; k < config_.blocks_per_stack; ++k) {
            Block blk;
            blk.pool = config_.pool_kernels[s];
            const auto r = config_.downsample_ratios[s];
            blk.backcast_coeffs = std::max<std::size_t>(L / r, 1);
            blk.forecast_coeffs = std::max<std::size_t>(H / r, 1);
            std::size_t in = L / blk.pool;
            if (s == 0 && k == 0 && config_.use_exogenous) {
                in += kExog * (L / blk.pool);
            }
            for (std::size_t layer = 0; layer < config_.mlp_layers; ++layer) {
                blk.hidden.emplace_back(layer == 0 ? in : config_.hidden_size, config_.hidden_size, rng);
            }
            blk.out = nn::Linear(config_.hidden_size, blk.backcast_coeffs + Q * blk.forecast_coeffs, rng);
            blk.backcast_interp = interpolation_matrix(blk.backcast_coeffs, L);
            blk.forecast_interp = interpolation_matrix(blk.forecast_coeffs, H);
            blocks_.push_back(std::move(blk));
        }
    }
    collect_parameters();
}

void Nhits::collect_parameters() {
    params_.clear();
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        const auto prefix = fmt::format("block{}", b);
        for (std::size_t l = 0; l < blocks_[b].hidden.size(); ++l) {
            blocks_[b].hidden[l].append_parameters(fmt::format("{}.hidden{}", prefix, l), params_);
        }
        blocks_[b].out.append_parameters(prefix + ".out", params_);
    }
}

void Nhits::zero_output_layers() {
    for (auto& blk : blocks_) {
        std::fill(blk.out.weight.mutable_values().begin(), blk.out.weight.mutable_values().end(), 0.0);
        std::fill(blk.out.bias.mutable_values().begin(), blk.out.bias.mutable_values().end(), 0.0);
    }
}

Nhits::Normalized Nhits::forward_normalized(const WindowBatch& batch) const {
    const auto L = config_.encoder_length;
    const auto H = config_.horizon;
    const auto Q = config_.n_quantiles();
    if (batch.prices.rank() != 2 || batch.prices.dim(1) != L) {
        throw ContractError(fmt::format("Nhits: expected windows of length {}, got shape {}", L,
                                        ad::to_string(batch.prices.shape())));
    }
    const auto B = batch.prices.dim(0);
    Normalized out;
    out.mean = ad::mean(batch.prices, 1);
    const Tensor centered = batch.prices - broadcast_rows(out.mean, {B, L});
    out.scale = ad::sqrt(ad::mean(ad::pow(centered, 2.0), 1)) + kScaleEps;
    Tensor x = centered / broadcast_rows(out.scale, {B, L});
    out.residuals.push_back(x);

    Tensor exog_flat;
    if (config_.use_exogenous) {
        if (batch.exog.shape() != ad::Shape{B, kExog, L}) {
            throw DimensionError(fmt::format("Nhits: exogenous input must be [{}, {}, {}], got {}", B, kExog, L,
                                             ad::to_string(batch.exog.shape())));
        }
        // Pool first: a per-window affine map with positive scale commutes with max.
        const auto p0 = blocks_.front().pool;
        const auto Lp = L / p0;
        static thread_local std::size_t cached_len = 0;
        static thread_local Tensor level_mask;
        static thread_local Tensor scaled_mask;
        static thread_local Tensor unscaled;
        if (cached_len != Lp) {
            level_mask = row_mask(Lp, is_price_level);
            scaled_mask = row_mask(Lp, is_price_scaled);
            unscaled = 1.0 - scaled_mask;
            cached_len = Lp;
        }
        const Tensor pooled = ad::maxpool1d(batch.exog, p0);
        const ad::Shape es{B, kExog, Lp};
        const Tensor shift = broadcast_rows(out.mean, es) * level_mask;
        const Tensor denom = broadcast_rows(out.scale, es) * scaled_mask + unscaled;
        const Tensor e = (pooled - shift) / denom;
        exog_flat = ad::reshape(e, {B, kExog * Lp});
    }

    Tensor forecast;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        const auto& blk = blocks_[b];
        Tensor h = ad::reshape(ad::maxpool1d(ad::reshape(x, {B, 1, L}), blk.pool), {B, L / blk.pool});
        if (b == 0 && exog_flat.defined()) {
            h = ad::concat({h, exog_flat}, 1);
        }
        for (const auto& layer : blk.hidden) {
            h = ad::relu(layer(h));
        }
        const Tensor theta = blk.out(h);
        const Tensor back = ad::matmul(ad::slice(theta, 1, 0, blk.backcast_coeffs), blk.backcast_interp);
        const Tensor fc_coeffs =
            ad::reshape(ad::slice(theta, 1, blk.backcast_coeffs, blk.backcast_coeffs + Q * blk.forecast_coeffs),
                        {B * Q, blk.forecast_coeffs});
        const Tensor fc = ad::reshape(ad::matmul(fc_coeffs, blk.forecast_interp), {B, Q, H});
        x = x - back;
        out.residuals.push_back(x);
        forecast = forecast.defined() ? forecast + fc : fc;
    }
    out.forecast = forecast;
    return out;
}

ForecastOutput Nhits::forward(const WindowBatch& batch) const {
    const auto n = forward_normalized(batch);
    const auto B = batch.size();
    const ad::Shape s{B, config_.n_quantiles(), config_.horizon};
    const Tensor denorm = n.forecast * broadcast_rows(n.scale, s) + broadcast_rows(n.mean, s);
    ForecastOutput out;
    out.quantile_paths = sort_quantiles(denorm);
    const auto H = config_.horizon;
    const auto Q = config_.n_quantiles();
    std::vector<std::size_t> idx(B * H);
    const auto mi = config_.median_index();
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < H; ++h) {
            idx[b * H + h] = (b * H + h) * Q + mi;
        }
    }
    out.median_path = ad::gather(out.quantile_paths, std::move(idx), {B, H});
    return out;
}

Tensor sort_quantiles(const Tensor& pred) {
    if (pred.rank() != 3) {
        throw DimensionError("sort_quantiles: expected [B, Q, H], got " + ad::to_string(pred.shape()));
    }
    const auto B = pred.dim(0);
    const auto Q = pred.dim(1);
    const auto H = pred.dim(2);
    const auto v = pred.values();
    std::vector<std::size_t> idx(B * H * Q);
    std::vector<std::size_t> order(Q);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < H; ++h) {
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
                return v[(b * Q + i) * H + h] < v[(b * Q + j) * H + h];
            });
            for (std::size_t k = 0; k < Q; ++k) {
                idx[(b * H + h) * Q + k] = (b * Q + order[k]) * H + h;
            }
        }
    }
    return ad::gather(pred, std::move(idx), {B, H, Q});
}

Tensor quantile_loss(const Tensor& pred, const Tensor& truth, const std::vector<double>& quantiles) {
    if (pred.rank() != 3 || truth.rank() != 2 || pred.dim(0) != truth.dim(0) || pred.dim(2) != truth.dim(1) ||
        pred.dim(1) != quantiles.size()) {
        throw DimensionError(fmt::format("quantile_loss: pred {} incompatible with truth {} and {} quantiles",
                                         ad::to_string(pred.shape()), ad::to_string(truth.shape()), quantiles.size()));
    }
    const auto B = pred.dim(0);
    const auto Q = pred.dim(1);
    const auto H = pred.dim(2);
    std::vector<double> q(Q * H);
    for (std::size_t i = 0; i < Q; ++i) {
        std::fill(q.begin() + static_cast<std::ptrdiff_t>(i * H), q.begin() + static_cast<std::ptrdiff_t>((i + 1) * H),
                  quantiles[i]);
    }
    const Tensor qt = Tensor::from({Q, H}, std::move(q));
    const Tensor y = ad::expand(ad::reshape(truth, {B, 1, H}), {B, Q, H});
    const Tensor diff = y - pred;
    return ad::mean(qt * ad::relu(diff) + (1.0 - qt) * ad::relu(-diff));
}

// ---- persistence ---------------------------------------------------------------------------

dataio::Checkpoint Nhits::to_checkpoint() const {
    dataio::Checkpoint c;
    c.architecture = {{"model", "nhits"}, {"config", config_.to_json()}};
    for (const auto& [name, p] : params_) {
        auto v = p.values();
        c.arrays.push_back({name, p.shape(), {v.begin(), v.end()}});
    }
    return c;
}

Nhits Nhits::from_checkpoint(const dataio::Checkpoint& checkpoint) {
    if (checkpoint.architecture.value("model", "") != "nhits") {
        throw ContractError("checkpoint does not hold an nhits model");
    }
    Nhits m(NhitsConfig::from_json(checkpoint.architecture.at("config")), 0);
    for (const auto& [name, p] : m.params_) {
        const auto& a = checkpoint.get(name);
        if (a.shape != p.shape()) {
            throw DimensionError(fmt::format("checkpoint array '{}' has shape {}, model expects {}", name,
                                             ad::to_string(a.shape), ad::to_string(p.shape())));
        }
        Tensor t = p;
        std::copy(a.values.begin(), a.values.end(), t.mutable_values().begin());
    }
    return m;
}

// ---- training ----------------------------------------------------------------------------------

namespace {

struct Prepared {
    std::vector<features::FeatureMatrix> feats;
    std::vector<std::pair<std::size_t, std::size_t>> windows;  // (series, start)
};

Prepared prepare(const std::vector<dataio::PriceSeries>& series, const NhitsConfig& config) {
    ad::NoGradGuard guard;
    Prepared p;
    const auto span = config.encoder_length + config.horizon;
    for (std::size_t i = 0; i < series.size(); ++i) {
        if (series[i].size() < span) {
            throw ContractError(fmt::format("train: series '{}' has {} days, need at least {}", series[i].ticker,
                                            series[i].size(), span));
        }
        p.feats.push_back(features::compute_features(series[i]));
        for (std::size_t s = 0; s + span <= series[i].size(); ++s) {
            p.windows.emplace_back(i, s);
        }
    }
    return p;
}

/// Numeric batch assembly across series (no gradient needed during training).
std::pair<WindowBatch, Tensor> assemble(const Prepared& data, const std::vector<dataio::PriceSeries>& series,
                                        const std::vector<std::pair<std::size_t, std::size_t>>& picks,
                                        const NhitsConfig& config) {
    const auto L = config.encoder_length;
    const auto H = config.horizon;
    const auto B = picks.size();
    constexpr auto C = features::kContinuousChannels;
    std::vector<double> prices(B * L);
    std::vector<double> exog(B * kExog * L, 0.0);
    std::vector<double> truth(B * H);
    for (std::size_t k = 0; k < B; ++k) {
        const auto [si, s] = picks[k];
        const auto& f = data.feats[si];
        const auto v = f.continuous.values();
        for (std::size_t i = 0; i < L; ++i) {
            const auto t = s + i;
            prices[k * L + i] = v[t * C];
            for (std::size_t c = 1; c < C; ++c) {
                exog[(k * kExog + c - 1) * L + i] = v[t * C + c];
            }
            exog[(k * kExog + C - 1 + static_cast<std::size_t>(f.day_of_week[t])) * L + i] = 1.0;
        }
        for (std::size_t h = 0; h < H; ++h) {
            truth[k * H + h] = series[si].adjprc[s + L + h];
        }
    }
    WindowBatch wb{Tensor::from({B, L}, std::move(prices)), Tensor::from({B, kExog, L}, std::move(exog))};
    return {std::move(wb), Tensor::from({B, H}, std::move(truth))};
}

Tensor batch_loss(const Nhits& model, const WindowBatch& wb, const Tensor& truth) {
    const auto n = model.forward_normalized(wb);
    const auto B = wb.size();
    const auto H = model.config().horizon;
    // Targets in the window's normalized units (constants).
    std::vector<double> yn(B * H);
    const auto mv = n.mean.values();
    const auto sv = n.scale.values();
    const auto tv = truth.values();
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < H; ++h) {
            yn[b * H + h] = (tv[b * H + h] - mv[b]) / sv[b];
        }
    }
    return quantile_loss(n.forecast, Tensor::from({B, H}, std::move(yn)), model.config().quantiles);
}

std::vector<std::pair<std::size_t, std::size_t>> validation_picks(const Prepared& val, std::size_t limit) {
    const auto& all = val.windows;
    if (limit == 0 || all.size() <= limit) {
        return all;
    }
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < limit; ++i) {
        out.push_back(all[i * all.size() / limit]);
    }
    return out;
}

nlohmann::json state_to_json(const TrainState& s) {
    auto log = nlohmann::json::array();
    for (const auto& e : s.log) {
        log.push_back({e.epoch, e.train_loss, e.val_loss});
    }
    return {{"next_epoch", s.next_epoch},
            {"best_val", s.best_val},
            {"bad_epochs", s.bad_epochs},
            {"best_epoch", s.best_epoch},
            {"log", log}};
}

TrainState state_from_json(const nlohmann::json& j) {
    TrainState s;
    s.next_epoch = j.at("next_epoch");
    s.best_val = j.at("best_val");
    s.bad_epochs = j.at("bad_epochs");
    s.best_epoch = j.at("best_epoch");
    for (const auto& e : j.at("log")) {
        s.log.push_back({e.at(0).get<std::size_t>(), e.at(1).get<double>(), e.at(2).get<double>()});
    }
    return s;
}

void save_state(const std::filesystem::path& path, const Nhits& current, const Nhits& best, const TrainState& s) {
    dataio::Checkpoint c;
    c.architecture = {{"model", "nhits-training"}, {"config", current.config().to_json()}, {"state", state_to_json(s)}};
    for (const auto& [prefix, model] : {std::pair<std::string, const Nhits*>{"current.", &current}, {"best.", &best}}) {
        for (const auto& [name, p] : model->parameters()) {
            auto v = p.values();
            c.arrays.push_back({prefix + name, p.shape(), {v.begin(), v.end()}});
        }
    }
    dataio::save_checkpoint(c, path);
}

TrainResult run_training(const std::vector<dataio::PriceSeries>& train_series,
                         const std::vector<dataio::PriceSeries>& val_series, TrainResult r, bool early_stopped,
                         const TrainOptions& options) {
    const auto& config = r.current.config();
    if (train_series.empty() || val_series.empty()) {
        throw ContractError("train: both training and validation series are required");
    }
    const auto train_data = prepare(train_series, config);
    const auto val_data = prepare(val_series, config);
    const auto val_picks = validation_picks(val_data, config.val_windows);
    const nn::Sgd opt(config.lr, config.weight_decay);
    auto& state = r.state;
    std::size_t ran = 0;
    while (!early_stopped && state.next_epoch < config.epochs) {
        if (options.max_epochs_this_call != 0 && ran == options.max_epochs_this_call) {
            break;
        }
        const auto epoch = state.next_epoch;
        std::mt19937_64 rng(config.seed * 1000003ULL + epoch);
        std::uniform_int_distribution<std::size_t> pick(0, train_data.windows.size() - 1);
        double total = 0.0;
        std::size_t seen = 0;
        for (std::size_t done = 0; done < config.windows_per_epoch; done += config.batch_size) {
            const auto n = std::min(config.batch_size, config.windows_per_epoch - done);
            std::vector<std::pair<std::size_t, std::size_t>> picks(n);
            for (auto& p : picks) {
                p = train_data.windows[pick(rng)];
            }
            const auto [wb, truth] = assemble(train_data, train_series, picks, config);
            nn::zero_grad(r.current.parameters());
            const Tensor loss = batch_loss(r.current, wb, truth);
            total += loss_value(loss, "training", epoch) * static_cast<double>(n);
            seen += n;
            loss.backward();
            opt.step(r.current.parameters());
        }
        double val_total = 0.0;
        {
            ad::NoGradGuard guard;
            for (std::size_t i = 0; i < val_picks.size(); i += config.batch_size) {
                const auto end = std::min(val_picks.size(), i + config.batch_size);
                std::vector<std::pair<std::size_t, std::size_t>> picks(val_picks.begin() + static_cast<std::ptrdiff_t>(i),
                                                                       val_picks.begin() + static_cast<std::ptrdiff_t>(end));
                const auto [wb, truth] = assemble(val_data, val_series, picks, config);
                val_total += loss_value(batch_loss(r.current, wb, truth), "validation", epoch) *
                             static_cast<double>(end - i);
            }
        }
        const EpochLog entry{epoch, total / static_cast<double>(seen), val_total / static_cast<double>(val_picks.size())};
        state.log.push_back(entry);
        if (epoch == 0 || entry.val_loss < state.best_val) {
            state.best_val = entry.val_loss;
            state.best_epoch = epoch;
            state.bad_epochs = 0;
            nn::copy_values(r.current.parameters(), r.best.parameters());
        } else {
            ++state.bad_epochs;
        }
        state.next_epoch = epoch + 1;
        ++ran;
        if (options.on_epoch) {
            options.on_epoch(entry);
        }
        if (options.state_path) {
            save_state(*options.state_path, r.current, r.best, state);
        }
        if (state.bad_epochs >= config.early_stop_patience) {
            early_stopped = true;
        }
    }
    r.early_stopped = early_stopped;
    return r;
}

} // namespace

TrainResult train(const std::vector<dataio::PriceSeries>& train_series,
                  const std::vector<dataio::PriceSeries>& val_series, const NhitsConfig& config,
                  const TrainOptions& options) {
    config.validate();
    TrainResult r{Nhits(config, config.seed), Nhits(config, config.seed), {}, false};
    nn::copy_values(r.best.parameters(), r.current.parameters());
    return run_training(train_series, val_series, std::move(r), false, options);
}

TrainResult resume(const std::vector<dataio::PriceSeries>& train_series,
                   const std::vector<dataio::PriceSeries>& val_series, const std::filesystem::path& state_path,
                   const TrainOptions& options) {
    const auto c = dataio::load_checkpoint(state_path);
    if (c.architecture.value("model", "") != "nhits-training") {
        throw ContractError("resume: '" + state_path.string() + "' is not a training state file");
    }
    const auto config = NhitsConfig::from_json(c.architecture.at("config"));
    TrainResult r{Nhits(config, 0), Nhits(config, 0), state_from_json(c.architecture.at("state")), false};
    for (const auto& [prefix, model] : {std::pair<std::string, Nhits*>{"current.", &r.current}, {"best.", &r.best}}) {
        for (const auto& [name, p] : model->parameters()) {
            const auto& a = c.get(prefix + name);
            Tensor t = p;
            std::copy(a.values.begin(), a.values.end(), t.mutable_values().begin());
        }
    }
    const bool stopped = r.state.bad_epochs >= config.early_stop_patience;
    return run_training(train_series, val_series, std::move(r), stopped, options);
}

std::string format_training_log(const std::vector<EpochLog>& log) {
    std::string out = "epoch,train_loss,val_loss\n";
    for (const auto& e : log) {
        out += fmt::format("{},{},{}\n", e.epoch, dataio::format_double(e.train_loss), dataio::format_double(e.val_loss));
    }
    return out;
}

// ---- rolling inference --------------------------------------------------------------------------

RollingForecast rolling_forecast(const Nhits& model, const Tensor& adjprc, const std::vector<dataio::Date>& dates) {
    const auto& cfg = model.config();
    const auto L = cfg.encoder_length;
    const auto H = cfg.horizon;
    const auto T = adjprc.numel();
    if (T < L + H) {
        throw ContractError(fmt::format("rolling_forecast: series of {} days is shorter than {}", T, L + H));
    }
    const auto f = features::compute_features(adjprc, dates);
    const auto W = T - L - H + 1;
    std::vector<std::size_t> starts(W);
    std::iota(starts.begin(), starts.end(), 0);
    const auto out = model.forward(make_windows(f, starts, L));
    RollingForecast r;
    r.first_day = L;
    r.windows = out.median_path;
    r.counts.assign(T - L, 0);
    std::vector<std::size_t> idx(W * H);
    for (std::size_t w = 0; w < W; ++w) {
        for (std::size_t h = 0; h < H; ++h) {
            idx[w * H + h] = w + h;
            ++r.counts[w + h];
        }
    }
    std::vector<double> inv(T - L);
    for (std::size_t d = 0; d < T - L; ++d) {
        inv[d] = 1.0 / static_cast<double>(r.counts[d]);
    }
    r.averaged = ad::scatter_add(out.median_path, std::move(idx), {T - L}) * Tensor::vector(std::move(inv));
    return r;
}

RollingForecast rolling_forecast(const Nhits& model, const dataio::PriceSeries& series) {
    return rolling_forecast(model, Tensor::vector(series.adjprc), series.dates);
}

} // namespace slopestrike::forecaster
