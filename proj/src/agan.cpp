#include "slopestrike/agan.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "slopestrike/attacks.hpp"
#include "slopestrike/error.hpp"
#include "slopestrike/features.hpp"

namespace slopestrike::agan {

// ---- config ------------------------------------------------------------------------------------

void GanConfig::validate() const {
    if (interval_length < 2 || batch_size == 0 || samples_per_epoch == 0 || critic_iters == 0) {
        throw ContractError("interval_length >= 2, batch_size, samples_per_epoch and critic_iters > 0 required");
    }
    if (adv_scale_schedule.size() != epochs_per_block.size() || adv_scale_schedule.empty()) {
        throw ContractError(fmt::format("alpha schedule ({}) and epochs_per_block ({}) must be non-empty and equal length",
                                        adv_scale_schedule.size(), epochs_per_block.size()));
    }
    for (double a : adv_scale_schedule) {
        if (!(a >= 0.0)) {
            throw ContractError(fmt::format("alpha values must be non-negative, got {}", a));
        }
    }
    if (!(gp_apply_prob >= 0.0 && gp_apply_prob <= 1.0)) {
        throw ContractError(fmt::format("gp_apply_prob must lie in [0,1], got {}", gp_apply_prob));
    }
    if (!(lambda_gp >= 0.0) || !(lr_g >= 0.0) || !(lr_c >= 0.0)) {
        throw ContractError("lambda_gp and learning rates must be non-negative");
    }
    if (gen_channels.empty() || gen_channels.size() != gen_kernels.size() ||
        gen_channels.size() != gen_dilations.size()) {
        throw ContractError("generator channels, kernels and dilations must have equal non-zero length");
    }
    if (critic_hidden.empty()) {
        throw ContractError("critic needs at least one hidden layer");
    }
}

nlohmann::json GanConfig::to_json() const {
    return {{"interval_length", interval_length},
            {"batch_size", batch_size},
            {"samples_per_epoch", samples_per_epoch},
            {"critic_iters", critic_iters},
            {"lambda_gp", lambda_gp},
            {"gp_apply_prob", gp_apply_prob},
            {"lr_g", lr_g},
            {"lr_c", lr_c},
            {"adv_scale_schedule", adv_scale_schedule},
            {"epochs_per_block", epochs_per_block},
            {"c", c},
            {"d", d},
            {"gen_channels", gen_channels},
            {"gen_kernels", gen_kernels},
            {"gen_dilations", gen_dilations},
            {"critic_hidden", critic_hidden},
            {"seed", seed}};
}

GanConfig GanConfig::from_json(const nlohmann::json& j) {
    GanConfig g;
    g.interval_length = j.at("interval_length").get<std::size_t>();
    g.batch_size = j.at("batch_size").get<std::size_t>();
    g.samples_per_epoch = j.at("samples_per_epoch").get<std::size_t>();
    g.critic_iters = j.at("critic_iters").get<std::size_t>();
    g.lambda_gp = j.at("lambda_gp").get<double>();
    g.gp_apply_prob = j.at("gp_apply_prob").get<double>();
    g.lr_g = j.at("lr_g").get<double>();
    g.lr_c = j.at("lr_c").get<double>();
    g.adv_scale_schedule = j.at("adv_scale_schedule").get<std::vector<double>>();
    g.epochs_per_block = j.at("epochs_per_block").get<std::vector<std::size_t>>();
    g.c = j.at("c").get<double>();
    g.d = j.at("d").get<double>();
    g.gen_channels = j.at("gen_channels").get<std::vector<std::size_t>>();
    g.gen_kernels = j.at("gen_kernels").get<std::vector<std::size_t>>();
    g.gen_dilations = j.at("gen_dilations").get<std::vector<std::size_t>>();
    g.critic_hidden = j.at("critic_hidden").get<std::vector<std::size_t>>();
    g.seed = j.at("seed").get<std::uint64_t>();
    g.validate();
    return g;
}

// ---- data --------------------------------------------------------------------------------------

std::vector<double> log_returns(const std::vector<double>& prices) {
    std::vector<double> r;
    for (std::size_t i = 1; i < prices.size(); ++i) {
        if (!(prices[i] > 0.0) || !(prices[i - 1] > 0.0)) {
            throw DomainError(fmt::format("log return needs positive prices (index {})", i));
        }
        r.push_back(std::log(prices[i] / prices[i - 1]));
    }
    return r;
}

ScaleBounds fit_bounds(const dataio::PriceSeries& series) {
    const auto r = log_returns(series.adjprc);
    if (r.empty()) {
        throw ContractError(fmt::format("{}: need at least two prices to fit scale bounds", series.ticker));
    }
    const auto [lo, hi] = std::minmax_element(r.begin(), r.end());
    if (!(*hi > *lo)) {
        throw DomainError(fmt::format("{}: log returns are constant, min-max scaling undefined", series.ticker));
    }
    return {*lo, *hi};
}

std::vector<ScaledInterval> sample_intervals(const dataio::PriceSeries& series, std::size_t n, std::uint64_t seed,
                                             std::size_t length, std::optional<ScaleBounds> bounds) {
    if (length == 0 || series.size() < length + 1) {
        throw ContractError(fmt::format("{}: {} prices cannot hold a {}-day log-return interval", series.ticker,
                                        series.size(), length));
    }
    const ScaleBounds b = bounds ? *bounds : fit_bounds(series);
    const auto r = log_returns(series.adjprc);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, series.size() - length - 1);
    std::vector<ScaledInterval> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto s = pick(rng);
        ScaledInterval iv;
        iv.bounds = b;
        iv.start = s;
        iv.p0 = series.adjprc[s];
        iv.dates.assign(series.dates.begin() + static_cast<std::ptrdiff_t>(s),
                        series.dates.begin() + static_cast<std::ptrdiff_t>(s + length + 1));
        for (std::size_t i = 0; i < length; ++i) {
            iv.log_returns.push_back(b.scale(r[s + i]));
        }
        iv.condition = iv.log_returns;
        out.push_back(std::move(iv));
    }
    return out;
}

std::vector<double> to_prices(const std::vector<double>& log_returns, double p0) {
    if (!(p0 > 0.0) || !std::isfinite(p0)) {
        throw ContractError(fmt::format("initial price must be positive, got {}", p0));
    }
    const double limit = std::log(std::numeric_limits<double>::max()) - std::log(p0);
    std::vector<double> p{p0};
    double acc = 0.0;
    for (std::size_t i = 0; i < log_returns.size(); ++i) {
        acc += log_returns[i];
        if (!(acc < limit)) {
            throw DomainError(fmt::format("cumulative log return {} at day {} overflows the price", acc, i + 1));
        }
        p.push_back(p0 * std::exp(acc));
    }
    return p;
}

Tensor to_prices(const Tensor& log_returns, const std::vector<double>& p0) {
    if (log_returns.rank() != 2 || log_returns.dim(0) != p0.size()) {
        throw DimensionError(fmt::format("to_prices: expected [{}, L], got {}", p0.size(),
                                         ad::to_string(log_returns.shape())));
    }
    const auto b = log_returns.dim(0);
    const auto len = log_returns.dim(1);
    std::vector<double> upper(len * len, 0.0);
    for (std::size_t i = 0; i < len; ++i) {
        for (std::size_t j = i; j < len; ++j) {
            upper[i * len + j] = 1.0;
        }
    }
    const Tensor cum = ad::matmul(log_returns, Tensor::from({len, len}, std::move(upper)));
    std::vector<double> base(b * len);
    for (std::size_t r = 0; r < b; ++r) {
        if (!(p0[r] > 0.0)) {
            throw ContractError(fmt::format("initial price must be positive, got {}", p0[r]));
        }
        std::fill_n(base.begin() + static_cast<std::ptrdiff_t>(r * len), len, p0[r]);
    }
    const Tensor rest = ad::exp(cum) * Tensor::from({b, len}, std::move(base));
    for (double v : rest.values()) {
        if (!std::isfinite(v)) {
            throw DomainError("to_prices: cumulative log return overflows the price");
        }
    }
    return ad::concat({Tensor::from({b, 1}, p0), rest}, 1);
}

// ---- models ------------------------------------------------------------------------------------

Generator::Generator(const GanConfig& config, std::mt19937_64& rng) {
    std::size_t in = 2;
    for (std::size_t i = 0; i < config.gen_channels.size(); ++i) {
        ad::Conv1dOptions o;
        o.causal = true;
        o.dilation = config.gen_dilations[i];
        convs_.emplace_back(in, config.gen_channels[i], config.gen_kernels[i], o, rng);
        convs_.back().append_parameters(fmt::format("tcn{}", i), params_);
        in = config.gen_channels[i];
    }
    out_ = nn::Conv1d(in, 1, 1, {}, rng);
    out_.append_parameters("out", params_);
}

Tensor Generator::operator()(const Tensor& noise, const Tensor& condition) const {
    if (noise.shape() != condition.shape() || noise.rank() != 2) {
        throw DimensionError(fmt::format("generator: noise {} and condition {} must both be [B, L]",
                                         ad::to_string(noise.shape()), ad::to_string(condition.shape())));
    }
    const auto b = noise.dim(0);
    const auto len = noise.dim(1);
    Tensor h = ad::concat({ad::reshape(noise, {b, 1, len}), ad::reshape(condition, {b, 1, len})}, 1);
    for (const auto& conv : convs_) {
        h = ad::relu(conv(h));
    }
    return ad::reshape(ad::sigmoid(out_(h)), {b, len});
}

Critic::Critic(const GanConfig& config, std::mt19937_64& rng) {
    std::size_t in = 2 * config.interval_length;
    for (std::size_t i = 0; i < config.critic_hidden.size(); ++i) {
        layers_.emplace_back(in, config.critic_hidden[i], rng);
        in = config.critic_hidden[i];
    }
    layers_.emplace_back(in, 1, rng);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        layers_[i].append_parameters(fmt::format("fc{}", i), params_);
    }
}

Tensor Critic::operator()(const Tensor& x, const Tensor& condition) const {
    if (x.shape() != condition.shape() || x.rank() != 2) {
        throw DimensionError(fmt::format("critic: x {} and condition {} must both be [B, L]",
                                         ad::to_string(x.shape()), ad::to_string(condition.shape())));
    }
    Tensor h = ad::concat({x, condition}, 1);
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
        h = ad::tanh(layers_[i](h));
    }
    return ad::reshape(layers_.back()(h), {x.dim(0)});
}

Tensor gradient_penalty(const std::function<Tensor(const Tensor&)>& critic, const Tensor& real, const Tensor& fake,
                        const std::vector<double>& u) {
    if (real.shape() != fake.shape() || real.rank() != 2 || u.size() != real.dim(0)) {
        throw DimensionError("gradient_penalty: real/fake must be [B, L] with one coefficient per row");
    }
    const auto b = real.dim(0);
    const auto len = real.dim(1);
    auto rv = real.values();
    auto fv = fake.values();
    std::vector<double> mix(b * len);
    for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t t = 0; t < len; ++t) {
            const auto i = r * len + t;
            mix[i] = u[r] * rv[i] + (1.0 - u[r]) * fv[i];
        }
    }
    const Tensor x_hat = Tensor::from({b, len}, std::move(mix), true);
    const Tensor g = ad::grad(ad::sum(critic(x_hat)), {x_hat}, true)[0];
    const Tensor norm = ad::sqrt(ad::sum(g * g, 1));
    return ad::mean(ad::pow(norm - 1.0, 2.0));
}

Tensor forecast_median_paths(const forecaster::Nhits& model, const Tensor& prices,
                             const std::vector<std::vector<dataio::Date>>& dates) {
    const auto& cfg = model.config();
    if (prices.rank() != 2 || prices.dim(0) != dates.size() || prices.dim(1) < cfg.encoder_length) {
        throw DimensionError(fmt::format("forecast_ls_slopes: prices {} need {} rows of >= {} days",
                                         ad::to_string(prices.shape()), dates.size(), cfg.encoder_length));
    }
    const auto b = prices.dim(0);
    const auto len = prices.dim(1);
    std::vector<Tensor> px;
    std::vector<Tensor> ex;
    for (std::size_t r = 0; r < b; ++r) {
        const auto f = features::compute_features(ad::reshape(ad::slice(prices, 0, r, r + 1), {len}), dates[r]);
        auto w = forecaster::make_windows(f, {len - cfg.encoder_length}, cfg.encoder_length);
        px.push_back(w.prices);
        ex.push_back(w.exog);
    }
    return model.forward({ad::concat(px, 0), ad::concat(ex, 0)}).median_path;
}

Tensor forecast_ls_slopes(const forecaster::Nhits& model, const Tensor& prices,
                          const std::vector<std::vector<dataio::Date>>& dates) {
    const Tensor path = forecast_median_paths(model, prices, dates);
    const auto b = path.dim(0);
    const auto h = path.dim(1);
    const double xbar = (static_cast<double>(h) - 1.0) / 2.0;
    std::vector<double> w(h);
    double sxx = 0.0;
    for (std::size_t i = 0; i < h; ++i) {
        w[i] = static_cast<double>(i) - xbar;
        sxx += w[i] * w[i];
    }
    for (auto& v : w) {
        v /= sxx;
    }
    return ad::reshape(ad::matmul(path, Tensor::from({h, 1}, std::move(w))), {b});
}

// ---- bundle ------------------------------------------------------------------------------------

namespace {

void dump(const nn::ParameterList& params, const std::string& prefix, dataio::Checkpoint& c) {
    for (const auto& [name, p] : params) {
        auto v = p.values();
        c.arrays.push_back({prefix + name, p.shape(), {v.begin(), v.end()}});
    }
}

void restore(const nn::ParameterList& params, const std::string& prefix, const dataio::Checkpoint& c) {
    for (const auto& [name, p] : params) {
        const auto& a = c.get(prefix + name);
        if (a.shape != p.shape()) {
            throw DimensionError(fmt::format("checkpoint array '{}' has shape {}, model expects {}", prefix + name,
                                             ad::to_string(a.shape), ad::to_string(p.shape())));
        }
        Tensor t = p;
        std::copy(a.values.begin(), a.values.end(), t.mutable_values().begin());
    }
}

void check_finite(double v, const char* what, std::size_t block, std::size_t epoch) {
    if (!std::isfinite(v)) {
        throw NumericalError(fmt::format("{} is {} in block {} epoch {}", what, v, block, epoch));
    }
}

Tensor rows_tensor(const std::vector<ScaledInterval>& items, std::size_t begin, std::size_t end, std::size_t len,
                   bool condition) {
    std::vector<double> v;
    v.reserve((end - begin) * len);
    for (std::size_t k = begin; k < end; ++k) {
        const auto& src = condition ? items[k].condition : items[k].log_returns;
        if (src.size() != len) {
            throw ContractError(fmt::format("interval {} has length {}, expected {}", k, src.size(), len));
        }
        v.insert(v.end(), src.begin(), src.end());
    }
    return Tensor::from({end - begin, len}, std::move(v));
}

Tensor normal_tensor(std::size_t rows, std::size_t len, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> v(rows * len);
    for (auto& x : v) {
        x = g(rng);
    }
    return Tensor::from({rows, len}, std::move(v));
}

/// Clears requires_grad on the forecaster for the lifetime of the guard.
class Freeze {
public:
    explicit Freeze(const nn::ParameterList& params) : params_(params) {
        for (const auto& [name, p] : params_) {
            flags_.push_back(p.requires_grad());
        }
        nn::set_requires_grad(params_, false);
    }
    ~Freeze() {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor t = params_[i].second;
            t.set_requires_grad(flags_[i]);
        }
    }
    Freeze(const Freeze&) = delete;
    Freeze& operator=(const Freeze&) = delete;

private:
    const nn::ParameterList& params_;
    std::vector<bool> flags_;
};

} // namespace

dataio::Checkpoint GanBundle::to_checkpoint() const {
    dataio::Checkpoint c;
    c.architecture = {{"model", "agan"}, {"config", config.to_json()}, {"bounds", {bounds.lo, bounds.hi}}};
    dump(generator.parameters(), "generator.", c);
    dump(critic.parameters(), "critic.", c);
    return c;
}

GanBundle GanBundle::from_checkpoint(const dataio::Checkpoint& checkpoint) {
    if (checkpoint.architecture.value("model", "") != "agan") {
        throw ContractError("checkpoint does not hold an agan bundle");
    }
    GanBundle b;
    b.config = GanConfig::from_json(checkpoint.architecture.at("config"));
    const auto bounds = checkpoint.architecture.at("bounds").get<std::vector<double>>();
    if (bounds.size() != 2 || !(bounds[1] > bounds[0])) {
        throw CorruptionError("agan checkpoint has invalid scale bounds");
    }
    b.bounds = {bounds[0], bounds[1]};
    std::mt19937_64 rng(0);
    b.generator = Generator(b.config, rng);
    b.critic = Critic(b.config, rng);
    restore(b.generator.parameters(), "generator.", checkpoint);
    restore(b.critic.parameters(), "critic.", checkpoint);
    return b;
}

// ---- training ----------------------------------------------------------------------------------

GanTrainResult train_agan(const dataio::PriceSeries& real, const forecaster::Nhits& model, const GanConfig& config) {
    config.validate();
    const auto len = config.interval_length;
    if (model.config().encoder_length > len + 1) {
        throw ContractError(fmt::format("forecaster encoder length {} exceeds the {} prices of an interval",
                                        model.config().encoder_length, len + 1));
    }
    GanTrainResult result;
    auto& bundle = result.bundle;
    bundle.config = config;
    bundle.bounds = fit_bounds(real);
    {
        std::mt19937_64 init(config.seed);
        bundle.generator = Generator(config, init);
        bundle.critic = Critic(config, init);
    }
    const auto& gp = bundle.generator.parameters();
    const auto& cp = bundle.critic.parameters();
    Freeze freeze(model.parameters());
    const double span = bundle.bounds.hi - bundle.bounds.lo;

    std::size_t global_epoch = 0;
    for (std::size_t block = 0; block < config.adv_scale_schedule.size(); ++block) {
        const double alpha = config.adv_scale_schedule[block];
        // Each block restarts the optimisers from the previous block's weights.
        nn::Adam opt_g(config.lr_g, 0.0, 0.9);
        nn::Adam opt_c(config.lr_c, 0.0, 0.9);
        for (std::size_t epoch = 0; epoch < config.epochs_per_block[block]; ++epoch, ++global_epoch) {
            std::mt19937_64 rng(config.seed * 1000003ULL + global_epoch);
            const auto samples = sample_intervals(real, config.samples_per_epoch, rng(), len, bundle.bounds);
            GanEpochLog log{block, epoch, alpha, 0.0, 0.0, 0.0, 0.0};
            std::size_t n_c = 0;
            std::size_t n_gp = 0;
            std::size_t n_g = 0;
            for (std::size_t b0 = 0; b0 < samples.size(); b0 += config.batch_size) {
                const auto b1 = std::min(samples.size(), b0 + config.batch_size);
                const auto rows = b1 - b0;
                const Tensor cond = rows_tensor(samples, b0, b1, len, true);
                const Tensor real_x = rows_tensor(samples, b0, b1, len, false);

                for (std::size_t k = 0; k < config.critic_iters; ++k) {
                    Tensor fake;
                    {
                        ad::NoGradGuard guard;
                        fake = bundle.generator(normal_tensor(rows, len, rng), cond);
                    }
                    Tensor loss_c = ad::mean(bundle.critic(fake, cond)) - ad::mean(bundle.critic(real_x, cond));
                    if (std::bernoulli_distribution(config.gp_apply_prob)(rng)) {
                        std::uniform_real_distribution<double> unif(0.0, 1.0);
                        std::vector<double> u(rows);
                        for (auto& v : u) {
                            v = unif(rng);
                        }
                        const Tensor pen = gradient_penalty(
                            [&](const Tensor& x) { return bundle.critic(x, cond); }, real_x, fake, u);
                        log.gradient_penalty += pen.item();
                        ++n_gp;
                        loss_c = loss_c + pen * config.lambda_gp;
                    }
                    check_finite(loss_c.item(), "critic loss", block, epoch);
                    nn::zero_grad(cp);
                    loss_c.backward();
                    opt_c.step(cp);
                    log.critic_loss += loss_c.item();
                    ++n_c;
                }

                const Tensor gen = bundle.generator(normal_tensor(rows, len, rng), cond);
                Tensor loss_g = -ad::mean(bundle.critic(gen, cond));
                if (alpha > 0.0) {
                    std::vector<double> p0;
                    std::vector<std::vector<dataio::Date>> dates;
                    for (std::size_t k = b0; k < b1; ++k) {
                        p0.push_back(samples[k].p0);
                        dates.push_back(samples[k].dates);
                    }
                    Tensor slopes;
                    try {
                        slopes = forecast_ls_slopes(model, to_prices(gen * span + bundle.bounds.lo, p0), dates);
                    } catch (const Error& e) {
                        throw NumericalError(
                            fmt::format("forecaster pass failed in block {} epoch {}: {}", block, epoch, e.what()));
                    }
                    const Tensor adv = ad::mean(attacks::slope_loss(slopes, 1, config.c, config.d));
                    check_finite(adv.item(), "adversarial loss", block, epoch);
                    log.adversarial_loss += adv.item();
                    loss_g = loss_g + adv * alpha;
                }
                check_finite(loss_g.item(), "generator loss", block, epoch);
                nn::zero_grad(gp);
                loss_g.backward();
                opt_g.step(gp);
                log.generator_loss += loss_g.item();
                ++n_g;
            }
            log.critic_loss /= static_cast<double>(std::max<std::size_t>(n_c, 1));
            log.gradient_penalty /= static_cast<double>(std::max<std::size_t>(n_gp, 1));
            log.generator_loss /= static_cast<double>(std::max<std::size_t>(n_g, 1));
            log.adversarial_loss /= static_cast<double>(std::max<std::size_t>(n_g, 1));
            result.log.push_back(log);
        }
    }
    return result;
}

std::vector<std::vector<double>> generate(const GanBundle& bundle, const std::vector<ScaledInterval>& conditions,
                                          std::uint64_t seed) {
    const auto len = bundle.config.interval_length;
    for (std::size_t k = 0; k < conditions.size(); ++k) {
        if (conditions[k].condition.size() != len) {
            throw ContractError(fmt::format("condition {} has length {}, generator expects {}", k,
                                            conditions[k].condition.size(), len));
        }
    }
    ad::NoGradGuard guard;
    std::mt19937_64 rng(seed);
    const Tensor noise = normal_tensor(conditions.size(), len, rng);
    std::vector<std::vector<double>> out;
    constexpr std::size_t kChunk = 256;
    for (std::size_t b0 = 0; b0 < conditions.size(); b0 += kChunk) {
        const auto b1 = std::min(conditions.size(), b0 + kChunk);
        const Tensor y = bundle.generator(ad::slice(noise, 0, b0, b1), rows_tensor(conditions, b0, b1, len, true));
        auto v = y.values();
        for (std::size_t r = 0; r < b1 - b0; ++r) {
            out.emplace_back(v.begin() + static_cast<std::ptrdiff_t>(r * len),
                             v.begin() + static_cast<std::ptrdiff_t>((r + 1) * len));
        }
    }
    return out;
}

std::string format_gan_log(const std::vector<GanEpochLog>& log) {
    std::string out = "block,epoch,alpha,critic_loss,gradient_penalty,generator_loss,adversarial_loss\n";
    for (const auto& e : log) {
        out += fmt::format("{},{},{},{},{},{},{}\n", e.block, e.epoch, dataio::format_double(e.alpha),
                           dataio::format_double(e.critic_loss), dataio::format_double(e.gradient_penalty),
                           dataio::format_double(e.generator_loss), dataio::format_double(e.adversarial_loss));
    }
    return out;
}

std::string format_intervals(const std::vector<std::vector<double>>& intervals) {
    std::string out = "interval_id,day,scaled_log_return\n";
    for (std::size_t i = 0; i < intervals.size(); ++i) {
        for (std::size_t t = 0; t < intervals[i].size(); ++t) {
            out += fmt::format("{},{},{}\n", i, t, dataio::format_double(intervals[i][t]));
        }
    }
    return out;
}

} // namespace slopestrike::agan
