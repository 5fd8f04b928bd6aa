#pragma once

#include <array>
#include <string_view>
#include <vector>

#include "slopestrike/autodiff.hpp"
#include "slopestrike/dataio.hpp"

namespace slopestrike::features {

using ad::Tensor;

inline constexpr std::size_t kContinuousChannels = 12;
inline constexpr std::size_t kWeekdays = 5;
inline constexpr std::size_t kChannels = kContinuousChannels + kWeekdays;
inline constexpr std::size_t kMinLength = 21;

enum Channel : std::size_t {
    kAdjprc = 0,
    kMean5,
    kMean10,
    kMean20,
    kStd5,
    kStd10,
    kStd20,
    kLogReturn,
    kRoc5,
    kEma5,
    kEma10,
    kEma20,
};

inline constexpr std::array<std::string_view, kContinuousChannels> kChannelNames = {
    "adjprc", "rolling_mean_5", "rolling_mean_10", "rolling_mean_20", "rolling_std_5", "rolling_std_10",
    "rolling_std_20", "log_return", "roc_5", "ema_5", "ema_10", "ema_20"};

struct FeatureMatrix {
    /// [T, 12], differentiable w.r.t. the price tensor.
    Tensor continuous;
    /// Monday = 0 ... Friday = 4 (weekend dates map to 4).
    std::vector<int> day_of_week;

    std::size_t length() const { return day_of_week.size(); }
    /// [T, 5] constant one-hot.
    Tensor one_hot() const;
    /// [T, 17]: continuous channels followed by the one-hot.
    Tensor full() const;
    Tensor channel(std::size_t c) const;
};

/// Rolling windows are left-truncated during warm-up (window = min(w, t+1)),
/// rolling std uses the population denominator, log_return_0 = 0, roc_5 is 0
/// for t < 5 and ema starts at e_0 = p_0.
FeatureMatrix compute_features(const Tensor& adjprc, const std::vector<dataio::Date>& dates);

/// Convenience for constant inputs.
FeatureMatrix compute_features(const dataio::PriceSeries& series);

Tensor rolling_mean(const Tensor& p, std::size_t window);
Tensor rolling_std(const Tensor& p, std::size_t window);
Tensor log_return(const Tensor& p);
Tensor rate_of_change(const Tensor& p, std::size_t lag);
Tensor ema(const Tensor& p, std::size_t window);

} // namespace slopestrike::features
