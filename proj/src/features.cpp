#include "slopestrike/features.hpp"

#include <cmath>

#include "slopestrike/error.hpp"

namespace slopestrike::features {

namespace {

void check_series(const Tensor& p, const char* who) {
    if (p.rank() != 1) {
        throw DimensionError(std::string(who) + ": expected a 1-D price tensor, got " + ad::to_string(p.shape()));
    }
}

/// p shifted right by k with zero fill: out[t] = p[t-k] (0 for t < k).
Tensor shifted(const Tensor& p, std::size_t k) {
    const auto n = p.numel();
    if (k == 0) {
        return p;
    }
    if (k >= n) {
        return Tensor::zeros({n});
    }
    return ad::concat({Tensor::zeros({k}), ad::slice(p, 0, 0, n - k)}, 0);
}

std::vector<double> window_counts(std::size_t n, std::size_t w) {
    std::vector<double> c(n);
    for (std::size_t t = 0; t < n; ++t) {
        c[t] = static_cast<double>(std::min(w, t + 1));
    }
    return c;
}

Tensor mask_from(std::size_t n, std::size_t k) {
    std::vector<double> m(n, 0.0);
    for (std::size_t t = k; t < n; ++t) {
        m[t] = 1.0;
    }
    return Tensor::vector(std::move(m));
}

constexpr std::size_t kEmaBlock = 64;

} // namespace

Tensor rolling_mean(const Tensor& p, std::size_t window) {
    check_series(p, "rolling_mean");
    const auto n = p.numel();
    Tensor acc = p;
    for (std::size_t k = 1; k < window; ++k) {
        acc = acc + shifted(p, k);
    }
    auto counts = window_counts(n, window);
    for (auto& c : counts) {
        c = 1.0 / c;
    }
    return acc * Tensor::vector(std::move(counts));
}

Tensor rolling_std(const Tensor& p, std::size_t window) {
    check_series(p, "rolling_std");
    const auto n = p.numel();
    const Tensor m = rolling_mean(p, window);
    Tensor acc = ad::pow(p - m, 2.0);
    for (std::size_t k = 1; k < window && k < n; ++k) {
        acc = acc + ad::pow(shifted(p, k) - m, 2.0) * mask_from(n, k);
    }
    auto counts = window_counts(n, window);
    for (auto& c : counts) {
        c = 1.0 / c;
    }
    return ad::sqrt(acc * Tensor::vector(std::move(counts)));
}

Tensor log_return(const Tensor& p) {
    check_series(p, "log_return");
    const auto n = p.numel();
    const Tensor lp = ad::log(p);
    if (n < 2) {
        return Tensor::zeros({n});
    }
    return ad::concat({Tensor::zeros({1}), ad::slice(lp, 0, 1, n) - ad::slice(lp, 0, 0, n - 1)}, 0);
}

Tensor rate_of_change(const Tensor& p, std::size_t lag) {
    check_series(p, "rate_of_change");
    const auto n = p.numel();
    if (n <= lag) {
        return Tensor::zeros({n});
    }
    const Tensor prev = ad::slice(p, 0, 0, n - lag);
    const Tensor roc = (ad::slice(p, 0, lag, n) - prev) / prev;
    return ad::concat({Tensor::zeros({lag}), roc}, 0);
}

Tensor ema(const Tensor& p, std::size_t window) {
    check_series(p, "ema");
    const auto n = p.numel();
    const double beta = 2.0 / (static_cast<double>(window) + 1.0);
    const double keep = 1.0 - beta;
    // Blocked recurrence: inside a block e = M p_block + decay * e_prev.
    // e_{-1} = p_0 reproduces e_0 = p_0.
    std::vector<Tensor> parts;
    Tensor prev = ad::slice(p, 0, 0, 1);
    for (std::size_t start = 0; start < n; start += kEmaBlock) {
        const auto len = std::min(kEmaBlock, n - start);
        std::vector<double> m(len * len, 0.0);
        std::vector<double> decay(len);
        for (std::size_t j = 0; j < len; ++j) {
            for (std::size_t i = 0; i <= j; ++i) {
                m[j * len + i] = beta * std::pow(keep, static_cast<double>(j - i));
            }
            decay[j] = std::pow(keep, static_cast<double>(j + 1));
        }
        const Tensor block = ad::reshape(ad::slice(p, 0, start, start + len), {len, 1});
        const Tensor e = ad::reshape(ad::matmul(Tensor::from({len, len}, std::move(m)), block), {len}) +
                         Tensor::vector(std::move(decay)) * prev;
        parts.push_back(e);
        prev = ad::slice(e, 0, len - 1, len);
    }
    return parts.size() == 1 ? parts[0] : ad::concat(parts, 0);
}

FeatureMatrix compute_features(const Tensor& adjprc, const std::vector<dataio::Date>& dates) {
    check_series(adjprc, "compute_features");
    const auto n = adjprc.numel();
    if (n < kMinLength) {
        throw ContractError("compute_features: need at least " + std::to_string(kMinLength) + " days, got " +
                            std::to_string(n));
    }
    if (dates.size() != n) {
        throw DimensionError("compute_features: " + std::to_string(dates.size()) + " dates for " + std::to_string(n) +
                             " prices");
    }
    const auto v = adjprc.values();
    for (std::size_t t = 0; t < n; ++t) {
        if (!(v[t] > 0.0)) {
            throw DomainError("compute_features: non-positive price " + std::to_string(v[t]) + " at day " +
                              std::to_string(t));
        }
    }
    std::vector<Tensor> cols = {adjprc,
                                rolling_mean(adjprc, 5),
                                rolling_mean(adjprc, 10),
                                rolling_mean(adjprc, 20),
                                rolling_std(adjprc, 5),
                                rolling_std(adjprc, 10),
                                rolling_std(adjprc, 20),
                                log_return(adjprc),
                                rate_of_change(adjprc, 5),
                                ema(adjprc, 5),
                                ema(adjprc, 10),
                                ema(adjprc, 20)};
    for (auto& c : cols) {
        c = ad::reshape(c, {n, 1});
    }
    FeatureMatrix out;
    out.continuous = ad::concat(cols, 1);
    out.day_of_week.reserve(n);
    for (const auto& d : dates) {
        out.day_of_week.push_back(std::min(d.weekday(), 4));
    }
    return out;
}

FeatureMatrix compute_features(const dataio::PriceSeries& series) {
    return compute_features(Tensor::vector(series.adjprc), series.dates);
}

Tensor FeatureMatrix::one_hot() const {
    const auto n = length();
    std::vector<double> v(n * kWeekdays, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        v[t * kWeekdays + static_cast<std::size_t>(day_of_week[t])] = 1.0;
    }
    return Tensor::from({n, kWeekdays}, std::move(v));
}

Tensor FeatureMatrix::full() const { return ad::concat({continuous, one_hot()}, 1); }

Tensor FeatureMatrix::channel(std::size_t c) const {
    if (c >= kContinuousChannels) {
        throw ContractError("FeatureMatrix::channel: index " + std::to_string(c) + " out of range");
    }
    return ad::reshape(ad::slice(continuous, 1, c, c + 1), {length()});
}

} // namespace slopestrike::features
