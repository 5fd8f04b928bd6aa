#include "slopestrike/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "slopestrike/error.hpp"

namespace slopestrike::metrics {

ErrorMetrics error_metrics(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size()) {
        throw DimensionError("error_metrics: " + std::to_string(pred.size()) + " predictions for " +
                             std::to_string(truth.size()) + " targets");
    }
    if (pred.empty()) {
        throw ContractError("error_metrics: empty input");
    }
    double abs_sum = 0.0;
    double sq_sum = 0.0;
    double pct_sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (truth[i] == 0.0) {
            throw DomainError("error_metrics: MAPE undefined, truth is zero at index " + std::to_string(i));
        }
        const double e = pred[i] - truth[i];
        abs_sum += std::abs(e);
        sq_sum += e * e;
        pct_sum += std::abs(e / truth[i]);
    }
    const auto n = static_cast<double>(pred.size());
    return {abs_sum / n, std::sqrt(sq_sum / n), pct_sum / n};
}

double quantile(std::vector<double> sample, double q) {
    if (sample.empty()) {
        throw ContractError("quantile: empty sample");
    }
    if (q < 0.0 || q > 1.0) {
        throw ContractError("quantile: q outside [0,1]");
    }
    std::sort(sample.begin(), sample.end());
    const double pos = q * static_cast<double>(sample.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sample.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sample[lo] + frac * (sample[hi] - sample[lo]);
}

MomentReport moments(const std::vector<double>& sample) {
    if (sample.size() < 4) {
        throw ContractError("moments: need at least 4 values, got " + std::to_string(sample.size()));
    }
    const auto n = static_cast<double>(sample.size());
    double mu = 0.0;
    for (double x : sample) {
        mu += x;
    }
    mu /= n;
    double m2 = 0.0;
    double m3 = 0.0;
    double m4 = 0.0;
    for (double x : sample) {
        const double d = x - mu;
        const double d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if (m2 == 0.0) {
        throw DomainError("moments: zero variance, skew and kurtosis undefined");
    }
    MomentReport r;
    r.mu = mu;
    r.sigma = std::sqrt(m2);
    r.iqr = quantile(sample, 0.75) - quantile(sample, 0.25);
    r.skew = m3 / std::pow(m2, 1.5);
    r.kurtosis = m4 / (m2 * m2);
    return r;
}

namespace {

double sq_dist(const std::vector<double>& x, const std::vector<double>& y) {
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double d = x[k] - y[k];
        s += d * d;
    }
    return s;
}

void check_sample(const Sample& s, std::size_t dim, const char* name) {
    if (s.size() < 2) {
        throw ContractError(std::string("mmd: sample ") + name + " needs at least 2 vectors");
    }
    for (const auto& v : s) {
        if (v.size() != dim) {
            throw DimensionError("mmd: vectors of dimension " + std::to_string(v.size()) + " and " +
                                 std::to_string(dim));
        }
    }
}

/// Canonical ordering so sums are independent of the caller's ordering.
std::pair<Sample, Sample> canonical(const Sample& a, const Sample& b) {
    Sample x = a;
    Sample y = b;
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    if (y < x) {
        std::swap(x, y);
    }
    return {std::move(x), std::move(y)};
}

double gamma_of(const Sample& x, const Sample& y) {
    Sample pooled = x;
    pooled.insert(pooled.end(), y.begin(), y.end());
    std::vector<double> d;
    d.reserve(pooled.size() * (pooled.size() - 1) / 2);
    for (std::size_t i = 0; i < pooled.size(); ++i) {
        for (std::size_t j = i + 1; j < pooled.size(); ++j) {
            d.push_back(std::sqrt(sq_dist(pooled[i], pooled[j])));
        }
    }
    const auto mid = d.size() / 2;
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
    double med = d[mid];
    if (d.size() % 2 == 0) {
        med = 0.5 * (med + *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid)));
    }
    if (!(med > 0.0)) {
        throw DomainError("mmd: median pairwise distance is 0, bandwidth undefined");
    }
    return 1.0 / (2.0 * med * med);
}

double mean_kernel(const Sample& x, const Sample& y, double gamma) {
    double s = 0.0;
    for (const auto& u : x) {
        for (const auto& v : y) {
            s += std::exp(-gamma * sq_dist(u, v));
        }
    }
    return s / (static_cast<double>(x.size()) * static_cast<double>(y.size()));
}

} // namespace

double median_heuristic_gamma(const Sample& a, const Sample& b) {
    if (a.empty()) {
        throw ContractError("mmd: empty sample");
    }
    check_sample(a, a.front().size(), "a");
    check_sample(b, a.front().size(), "b");
    const auto [x, y] = canonical(a, b);
    return gamma_of(x, y);
}

double mmd(const Sample& a, const Sample& b) {
    const double gamma = median_heuristic_gamma(a, b);
    const auto [x, y] = canonical(a, b);
    const double v = mean_kernel(x, x, gamma) + mean_kernel(y, y, gamma) - 2.0 * mean_kernel(x, y, gamma);
    return std::max(v, 0.0);
}

ConfusionReport confusion(const std::vector<int>& labels, const std::vector<int>& predictions) {
    if (labels.size() != predictions.size()) {
        throw DimensionError("confusion: label and prediction counts differ");
    }
    if (labels.empty()) {
        throw ContractError("confusion: empty input");
    }
    ConfusionReport r;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if ((labels[i] != 0 && labels[i] != 1) || (predictions[i] != 0 && predictions[i] != 1)) {
            throw ContractError("confusion: labels and predictions must be 0 or 1");
        }
        if (labels[i] == 1) {
            (predictions[i] == 1 ? r.tp : r.fn)++;
        } else {
            (predictions[i] == 1 ? r.fp : r.tn)++;
        }
    }
    const auto n = static_cast<double>(labels.size());
    const double po = static_cast<double>(r.tp + r.tn) / n;
    const double pe = (static_cast<double>(r.tp + r.fp) * static_cast<double>(r.tp + r.fn) +
                       static_cast<double>(r.fn + r.tn) * static_cast<double>(r.fp + r.tn)) /
                      (n * n);
    r.accuracy = 100.0 * po;
    r.specificity = r.tn + r.fp == 0 ? 0.0 : 100.0 * static_cast<double>(r.tn) / static_cast<double>(r.tn + r.fp);
    if (pe == 1.0) {
        r.kappa = po == 1.0 ? 100.0 : 0.0;
    } else {
        r.kappa = 100.0 * (po - pe) / (1.0 - pe);
    }
    return r;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty()) {
        throw DimensionError("cosine_similarity: vectors must be non-empty and equal length");
    }
    double ab = 0.0;
    double aa = 0.0;
    double bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) {
        throw DomainError("cosine_similarity: zero vector");
    }
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

} // namespace slopestrike::metrics
