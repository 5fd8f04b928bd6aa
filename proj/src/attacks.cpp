#include "slopestrike/attacks.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fmt/format.h>

#include "slopestrike/error.hpp"

namespace slopestrike::attacks {

namespace {

constexpr std::pair<Method, std::string_view> kNames[] = {
    {Method::FGSM, "fgsm"}, {Method::BIM, "bim"},   {Method::MIFGSM, "mifgsm"}, {Method::SIM, "sim"},
    {Method::TIM, "tim"},   {Method::CW, "cw"},     {Method::GSA, "gsa"},       {Method::LSSA, "lssa"},
    {Method::CW_GSA, "cw_gsa"}, {Method::CW_LSSA, "cw_lssa"}};

bool is_cw(Method m) { return m == Method::CW || m == Method::CW_GSA || m == Method::CW_LSSA; }
bool is_slope(Method m) { return m == Method::GSA || m == Method::LSSA || m == Method::CW_GSA || m == Method::CW_LSSA; }
bool uses_ls(Method m) { return m == Method::LSSA || m == Method::CW_LSSA; }

std::vector<double> sub_range(const std::vector<double>& v, std::size_t from) { return {v.begin() + static_cast<std::ptrdiff_t>(from), v.end()}; }

double check_finite(double v, std::size_t iteration) {
    if (!std::isfinite(v)) {
        throw NumericalError(fmt::format("attack loss is {} at iteration {}", v, iteration));
    }
    return v;
}

struct Objective {
    Tensor loss;
    double slope = 0.0;
};

} // namespace

std::string_view to_string(Method m) {
    for (const auto& [k, v] : kNames) {
        if (k == m) {
            return v;
        }
    }
    return "unknown";
}

Method parse_method(std::string_view name) {
    std::string n;
    for (char ch : name) {
        if (ch == '-') {
            ch = '_';
        }
        n.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
    if (n == "mi_fgsm") {
        n = "mifgsm";
    }
    for (const auto& [k, v] : kNames) {
        if (v == n) {
            return k;
        }
    }
    std::string valid;
    for (const auto& [k, v] : kNames) {
        valid += (valid.empty() ? "" : ", ") + std::string(v);
    }
    throw ContractError("unknown attack method '" + std::string(name) + "' (valid: " + valid + ")");
}

std::vector<Method> all_methods() {
    std::vector<Method> out;
    for (const auto& [k, v] : kNames) {
        out.push_back(k);
    }
    return out;
}

void AttackConfig::validate() const {
    if (!(eps_pct >= 0.0)) {
        throw ContractError("attack: eps_pct must be >= 0");
    }
    if (iter < 1) {
        throw ContractError("attack: iter must be >= 1");
    }
    if (target_dir < -1 || target_dir > 1) {
        throw ContractError("attack: target direction must be -1, 0 or 1");
    }
    if (!(mu >= 0.0 && mu < 1.0)) {
        throw ContractError("attack: mu must lie in [0, 1)");
    }
    if (window < 120) {
        throw ContractError("attack: window must be >= 120 days");
    }
}

double eps_abs(const std::vector<double>& adjprc, double eps_pct) {
    if (eps_pct < 0.0) {
        throw ContractError("eps_abs: eps_pct must be >= 0");
    }
    return dataio::median(adjprc) * eps_pct / 100.0;
}

double step_size(double eps, std::size_t iter) { return 1.5 * eps / static_cast<double>(iter); }

double general_slope(const std::vector<double>& path) {
    if (path.size() < 2) {
        throw ContractError("general_slope: need at least 2 points");
    }
    return (path.back() - path.front()) / static_cast<double>(path.size() - 1);
}

double ls_slope(const std::vector<double>& path) {
    if (path.size() < 2) {
        throw ContractError("ls_slope: need at least 2 points");
    }
    const auto n = static_cast<double>(path.size());
    const double xbar = (n - 1.0) / 2.0;
    double ybar = 0.0;
    for (double y : path) {
        ybar += y;
    }
    ybar /= n;
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < path.size(); ++i) {
        const double dx = static_cast<double>(i) - xbar;
        sxy += dx * (path[i] - ybar);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

Tensor general_slope(const Tensor& path) {
    const auto n = path.numel();
    if (path.rank() != 1 || n < 2) {
        throw ContractError("general_slope: need a 1-D path of at least 2 points");
    }
    return ad::sum(ad::slice(path, 0, n - 1, n) - ad::slice(path, 0, 0, 1)) / static_cast<double>(n - 1);
}

Tensor ls_slope(const Tensor& path) {
    const auto n = path.numel();
    if (path.rank() != 1 || n < 2) {
        throw ContractError("ls_slope: need a 1-D path of at least 2 points");
    }
    const double xbar = (static_cast<double>(n) - 1.0) / 2.0;
    std::vector<double> w(n);
    double sxx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = static_cast<double>(i) - xbar;
        sxx += w[i] * w[i];
    }
    for (auto& v : w) {
        v /= sxx;
    }
    return ad::sum(path * Tensor::vector(std::move(w)));
}

double slope_loss(double m, int t, double c, double d) {
    return t == 0 ? c * m * m : c * std::exp(-static_cast<double>(t) * d * m);
}

Tensor slope_loss(const Tensor& m, int t, double c, double d) {
    if (t == 0) {
        return ad::pow(m, 2.0) * c;
    }
    return ad::exp(m * (-static_cast<double>(t) * d)) * c;
}

std::vector<double> slope_objective_gradient(const std::vector<double>& path, Method method, int t, double c,
                                             double d) {
    const auto p = Tensor::vector(path, true);
    const Tensor m = uses_ls(method) ? ls_slope(p) : general_slope(p);
    const auto g = ad::grad(slope_loss(m, t, c, d), {p});
    return g[0].to_vector();
}

Evaluation evaluate(const forecaster::Nhits& model, const std::vector<double>& prices,
                    const std::vector<dataio::Date>& dates, const std::vector<double>& truth) {
    ad::NoGradGuard guard;
    const auto r = forecaster::rolling_forecast(model, Tensor::vector(prices), dates);
    Evaluation e;
    e.prediction = r.averaged.to_vector();
    const auto t = sub_range(truth, r.first_day);
    e.errors = metrics::error_metrics(e.prediction, t);
    e.gen_slope = general_slope(e.prediction);
    e.ls_slope = ls_slope(e.prediction);
    double s = 0.0;
    for (double v : e.prediction) {
        s += v;
    }
    e.mean_prediction = s / static_cast<double>(e.prediction.size());
    return e;
}

std::string format_trace(const std::vector<TracePoint>& trace) {
    std::string out = "iter,loss,slope\n";
    for (const auto& p : trace) {
        out += fmt::format("{},{},{}\n", p.iter, dataio::format_double(p.loss), dataio::format_double(p.slope));
    }
    return out;
}

AttackResult run_attack(const dataio::PriceSeries& series, const forecaster::Nhits& model, const AttackConfig& config) {
    config.validate();
    series.validate();
    const auto span = model.config().encoder_length + model.config().horizon;
    if (series.size() < span) {
        throw ContractError(fmt::format("attack: series '{}' has {} days, need at least {}", series.ticker,
                                        series.size(), span));
    }
    AttackResult res;
    res.original = series.head(std::min(series.size(), config.window));
    const auto& adj = res.original.adjprc;
    const auto& dates = res.original.dates;
    const auto T = adj.size();
    const auto first = model.config().encoder_length;
    const auto method = config.method;
    res.eps_abs = eps_abs(adj, config.eps_pct);
    const double eps = res.eps_abs;
    const double gamma = config.gamma.value_or(eps);
    const std::size_t iters = method == Method::FGSM ? 1 : config.iter;
    res.alpha = config.alpha.value_or(method == Method::FGSM ? eps : step_size(eps, iters));
    res.before = evaluate(model, adj, dates, adj);

    const Tensor truth = Tensor::vector(sub_range(adj, first));
    std::vector<double> target = sub_range(adj, first);
    if (method == Method::TIM) {
        for (auto& v : target) {
            v += static_cast<double>(config.target_dir) * gamma;
        }
    } else if (method == Method::CW) {
        // Targeted below the original series.
        for (auto& v : target) {
            v -= gamma;
        }
    }
    const Tensor target_t = Tensor::vector(target);

    auto objective = [&](const Tensor& x) {
        const Tensor pred = forecaster::rolling_forecast(model, x, dates).averaged;
        Objective o;
        if (is_slope(method)) {
            const Tensor m = uses_ls(method) ? ls_slope(pred) : general_slope(pred);
            o.slope = m.item();
            o.loss = slope_loss(m, config.target_dir, config.c, config.d);
        } else {
            const Tensor& ref = (method == Method::TIM || method == Method::CW) ? target_t : truth;
            o.loss = ad::mean(ad::abs(pred - ref));
            o.slope = general_slope(pred.to_vector());
        }
        return o;
    };

    std::vector<double> x = adj;
    if (is_cw(method)) {
        const double step = config.cw_step * dataio::median(adj);
        const double floor_price = 1e-6 * dataio::median(adj);
        const Tensor base = Tensor::vector(adj);
        std::vector<double> eta(T, 0.0);
        for (std::size_t k = 0; k < config.cw_iter; ++k) {
            const Tensor eta_t = Tensor::vector(eta, true);
            const Objective o = objective(base + eta_t);
            const Tensor total = ad::sqrt(ad::sum(ad::pow(eta_t, 2.0))) + o.loss * config.lambda_cw;
            res.trace.push_back({k, check_finite(total.item(), k), o.slope});
            const auto g = ad::grad(total, {eta_t})[0].to_vector();
            for (std::size_t i = 0; i < T; ++i) {
                eta[i] -= step * g[i];
                eta[i] = std::max(eta[i], floor_price - adj[i]);
            }
        }
        for (std::size_t i = 0; i < T; ++i) {
            x[i] = adj[i] + eta[i];
        }
    } else {
        const bool descend = is_slope(method) || method == Method::TIM;
        std::vector<double> momentum(T, 0.0);
        std::vector<double> lo(T);
        std::vector<double> hi(T);
        for (std::size_t i = 0; i < T; ++i) {
            lo[i] = adj[i] - eps;
            hi[i] = adj[i] + eps;
        }
        double cos_up = 0.0;
        double cos_down = 0.0;
        if (method == Method::SIM) {
            cos_up = metrics::cosine_similarity(adj, hi);
            cos_down = metrics::cosine_similarity(adj, lo);
        }
        for (std::size_t k = 0; k < iters; ++k) {
            const Tensor xt = Tensor::vector(x, true);
            const Objective o = objective(xt);
            res.trace.push_back({k, check_finite(o.loss.item(), k), o.slope});
            const auto g = ad::grad(o.loss, {xt})[0].to_vector();
            std::vector<double> dir = g;
            if (method == Method::MIFGSM) {
                double l1 = 0.0;
                for (double v : g) {
                    l1 += std::abs(v);
                }
                for (std::size_t i = 0; i < T; ++i) {
                    momentum[i] = config.mu * momentum[i] + (l1 > 0.0 ? g[i] / l1 : 0.0);
                }
                dir = momentum;
            }
            for (std::size_t i = 0; i < T; ++i) {
                const double s = dir[i] > 0.0 ? 1.0 : (dir[i] < 0.0 ? -1.0 : 0.0);
                x[i] += (descend ? -1.0 : 1.0) * res.alpha * s;
                x[i] = std::clamp(x[i], lo[i], hi[i]);
            }
            if (method == Method::SIM) {
                if (metrics::cosine_similarity(adj, x) < cos_up) {
                    x = hi;
                }
                if (metrics::cosine_similarity(adj, x) < cos_down) {
                    x = lo;
                }
            }
        }
    }
    res.x_adv = res.original;
    res.x_adv.adjprc = x;
    double sq = 0.0;
    for (std::size_t i = 0; i < T; ++i) {
        sq += (x[i] - adj[i]) * (x[i] - adj[i]);
    }
    res.eta_norm = std::sqrt(sq);
    res.after = evaluate(model, x, dates, adj);
    return res;
}

} // namespace slopestrike::attacks
