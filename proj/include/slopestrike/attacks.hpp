#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "slopestrike/autodiff.hpp"
#include "slopestrike/dataio.hpp"
#include "slopestrike/forecaster.hpp"
#include "slopestrike/metrics.hpp"

namespace slopestrike::attacks {

using ad::Tensor;

enum class Method { FGSM, BIM, MIFGSM, SIM, TIM, CW, GSA, LSSA, CW_GSA, CW_LSSA };

std::string_view to_string(Method m);
/// Case-insensitive; accepts "mi-fgsm"/"mifgsm", "cw-gsa"/"cw_gsa"...
Method parse_method(std::string_view name);
std::vector<Method> all_methods();

struct AttackConfig {
    Method method = Method::GSA;
    double eps_pct = 2.0;
    std::size_t iter = 30;
    /// Slope direction for GSA/LSSA/C&W-slope, shift direction for TIM and the
    /// C&W L1 target.
    int target_dir = 1;
    double c = 5.0;
    double d = 2.0;
    double mu = 0.35;
    /// TIM / C&W target margin; defaults to eps_abs.
    std::optional<double> gamma;
    double lambda_cw = 1.0;
    std::size_t cw_iter = 200;
    /// C&W step size as a fraction of median(adjprc).
    double cw_step = 0.01;
    /// Overrides the step size 1.5 * eps / iter.
    std::optional<double> alpha;
    /// Attacks run on the first `window` days.
    std::size_t window = 300;
    std::uint64_t seed = 0;

    void validate() const;
};

double eps_abs(const std::vector<double>& adjprc, double eps_pct);
double step_size(double eps, std::size_t iter);

double general_slope(const std::vector<double>& path);
double ls_slope(const std::vector<double>& path);
Tensor general_slope(const Tensor& path);
Tensor ls_slope(const Tensor& path);
double slope_loss(double m, int t, double c, double d);
Tensor slope_loss(const Tensor& m, int t, double c, double d);

struct Evaluation {
    metrics::ErrorMetrics errors;
    double gen_slope = 0.0;
    double ls_slope = 0.0;
    double mean_prediction = 0.0;
    /// Rolling averaged median path (days 100.. of the attack window).
    std::vector<double> prediction;
};

/// Forecasts `prices` and scores the rolling path against `truth` (same days).
Evaluation evaluate(const forecaster::Nhits& model, const std::vector<double>& prices,
                    const std::vector<dataio::Date>& dates, const std::vector<double>& truth);

struct TracePoint {
    std::size_t iter = 0;
    double loss = 0.0;
    double slope = 0.0;
};

struct AttackResult {
    dataio::PriceSeries original;
    dataio::PriceSeries x_adv;
    double eps_abs = 0.0;
    double alpha = 0.0;
    std::vector<TracePoint> trace;
    Evaluation before;
    Evaluation after;
    /// ||x_adv - adjprc||_2 (the C&W noise norm).
    double eta_norm = 0.0;
};

AttackResult run_attack(const dataio::PriceSeries& series, const forecaster::Nhits& model, const AttackConfig& config);

std::string format_trace(const std::vector<TracePoint>& trace);

/// Gradient of the slope objective with respect to the prediction path
/// (numeric), for structural checks.
std::vector<double> slope_objective_gradient(const std::vector<double>& path, Method method, int t, double c,
                                             double d);

} // namespace slopestrike::attacks
