#pragma once

#include <cstddef>
#include <vector>

namespace slopestrike::metrics {

struct ErrorMetrics {
    double mae = 0.0;
    double rmse = 0.0;
    /// Fraction, not percent.
    double mape = 0.0;
};

ErrorMetrics error_metrics(const std::vector<double>& pred, const std::vector<double>& truth);

struct MomentReport {
    double mu = 0.0;
    double sigma = 0.0;
    double iqr = 0.0;
    double skew = 0.0;
    /// Raw (not excess) kurtosis.
    double kurtosis = 0.0;
    double mmd = 0.0;
};

/// Mean, population std, IQR (linear interpolation), skew m3/m2^1.5 and raw
/// kurtosis m4/m2^2. `mmd` is left at 0.
MomentReport moments(const std::vector<double>& sample);

/// Linear interpolation between order statistics, q in [0,1].
double quantile(std::vector<double> sample, double q);

using Sample = std::vector<std::vector<double>>;

/// Biased MMD^2 with RBF kernel exp(-gamma |x-y|^2), gamma = 1/(2 median^2)
/// over all pooled pairwise Euclidean distances; clamped at 0. The result does
/// not depend on argument order or on the order of vectors inside a sample.
double mmd(const Sample& a, const Sample& b);
double median_heuristic_gamma(const Sample& a, const Sample& b);

struct ConfusionReport {
    std::size_t tp = 0;
    std::size_t tn = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    /// Percentages.
    double accuracy = 0.0;
    double specificity = 0.0;
    double kappa = 0.0;
};

/// Labels and predictions are 0/1; 1 is the positive (adversarial) class.
ConfusionReport confusion(const std::vector<int>& labels, const std::vector<int>& predictions);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

} // namespace slopestrike::metrics
