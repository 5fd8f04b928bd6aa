#include "slopestrike/cli.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "slopestrike/agan.hpp"
#include "slopestrike/attacks.hpp"
#include "slopestrike/dataio.hpp"
#include "slopestrike/defense.hpp"
#include "slopestrike/error.hpp"
#include "slopestrike/forecaster.hpp"
#include "slopestrike/metrics.hpp"
#include "slopestrike/svg.hpp"

namespace slopestrike::cli {

namespace {

namespace fs = std::filesystem;
using dataio::format_double;

// ---- plumbing ----------------------------------------------------------------------------------

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text + ",") {
        if (c == ',') {
            const auto b = cur.find_first_not_of(" \t");
            if (b != std::string::npos) {
                out.push_back(cur.substr(b, cur.find_last_not_of(" \t") - b + 1));
            }
            cur.clear();
        } else {
            cur += c;
        }
    }
    return out;
}

std::vector<double> parse_doubles(const std::string& text, const std::string& what) {
    std::vector<double> out;
    for (const auto& item : split_list(text)) {
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (ec != std::errc() || ptr != item.data() + item.size() || !std::isfinite(v)) {
            throw ContractError(fmt::format("{}: '{}' is not a number", what, item));
        }
        out.push_back(v);
    }
    if (out.empty()) {
        throw ContractError(fmt::format("{}: empty list", what));
    }
    return out;
}

std::vector<attacks::Method> parse_methods(const std::string& text) {
    std::vector<attacks::Method> out;
    for (const auto& m : split_list(text)) {
        out.push_back(attacks::parse_method(m));
    }
    if (out.empty()) {
        throw ContractError("no attack method given");
    }
    return out;
}

/// Records every file a command writes and emits run_manifest.json last.
class Run {
public:
    Run(fs::path out_dir, std::string command, std::uint64_t seed, std::vector<std::pair<std::string, std::string>> settings)
        : out_dir_(std::move(out_dir)), command_(std::move(command)), seed_(seed), settings_(std::move(settings)) {
        fs::create_directories(out_dir_);
    }

    void write(const std::string& rel, std::string_view contents) {
        dataio::write_file(out_dir_ / rel, contents);
        outputs_[rel] = defense::sha256_hex(contents);
    }
    /// For files written by library code.
    void record(const std::string& rel) { outputs_[rel] = defense::sha256_file(out_dir_ / rel); }
    fs::path path(const std::string& rel) const { return out_dir_ / rel; }

    void finish() const {
        nlohmann::ordered_json j;
        j["command"] = command_;
        j["seed"] = seed_;
        nlohmann::ordered_json s = nlohmann::ordered_json::object();
        for (const auto& [k, v] : settings_) {
            s[k] = v;
        }
        j["settings"] = s;
        nlohmann::ordered_json o = nlohmann::ordered_json::object();
        for (const auto& [k, v] : outputs_) {
            o[k] = v;
        }
        j["outputs"] = o;
        dataio::write_file(out_dir_ / "run_manifest.json", j.dump(2) + "\n");
    }

private:
    fs::path out_dir_;
    std::string command_;
    std::uint64_t seed_;
    std::vector<std::pair<std::string, std::string>> settings_;
    std::map<std::string, std::string> outputs_;
};

std::vector<std::pair<std::string, std::string>> resolved_settings(const CLI::App* app) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const CLI::Option* opt : app->get_options()) {
        const auto name = opt->get_single_name();
        if (name.empty() || name == "help" || name == "config" || name == "seed") {
            continue;
        }
        std::string value;
        if (opt->get_expected_max() == 0) {
            value = opt->count() > 0 ? "true" : "false";
        } else if (opt->count() > 0) {
            const auto& r = opt->results();
            for (std::size_t i = 0; i < r.size(); ++i) {
                value += (i ? "," : "") + r[i];
            }
        } else {
            value = opt->get_default_str();
        }
        out.emplace_back(name, value);
    }
    return out;
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
    if (flag) {
        return *flag;
    }
    if (const char* env = std::getenv("SLOPESTRIKE_SEED"); env != nullptr && *env != '\0') {
        std::uint64_t v = 0;
        const std::string_view s(env);
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || ptr != s.data() + s.size()) {
            throw ContractError(fmt::format("SLOPESTRIKE_SEED='{}' is not an unsigned integer", s));
        }
        return v;
    }
    return 0;
}

forecaster::Nhits load_model(const std::string& path) {
    return forecaster::Nhits::from_checkpoint(dataio::load_checkpoint(path));
}

const dataio::PriceSeries& pick_ticker(const std::vector<dataio::PriceSeries>& all, const std::string& ticker) {
    if (all.empty()) {
        throw ContractError("price file holds no series");
    }
    if (ticker.empty()) {
        return all.front();
    }
    for (const auto& s : all) {
        if (s.ticker == ticker) {
            return s;
        }
    }
    throw ContractError(fmt::format("ticker '{}' not found", ticker));
}

std::string file_safe(std::string s) {
    for (auto& c : s) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.')) {
            c = '_';
        }
    }
    return s;
}

std::string confusion_csv(const metrics::ConfusionReport& r) {
    return fmt::format("tp,tn,fp,fn,accuracy,specificity,kappa\n{},{},{},{},{},{},{}\n", r.tp, r.tn, r.fp, r.fn,
                       format_double(r.accuracy), format_double(r.specificity), format_double(r.kappa));
}

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex m;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(m);
                    if (!failure) {
                        failure = std::current_exception();
                    }
                }
            }
        });
    }
    for (auto& th : pool) {
        th.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

// ---- synth -------------------------------------------------------------------------------------

struct SynthOptions {
    std::size_t n_series = 20;
    std::size_t days = 700;
    double s0 = 50.0;
    double mu = 0.0005;
    double sigma = 0.01;
    std::string prefix = "SYN";
    std::string out;
};

void cmd_synth(const SynthOptions& o, Run& run, std::uint64_t seed, std::ostream& out) {
    const auto series = dataio::synth_gbm(o.n_series, o.days, o.s0, o.mu, o.sigma, seed, o.prefix);
    run.write("prices.csv", dataio::format_csv(series));
    out << fmt::format("wrote {} series x {} days to {}\n", series.size(), o.days, run.path("prices.csv").string());
}

// ---- train -------------------------------------------------------------------------------------

struct TrainCmdOptions {
    std::string data;
    std::string val_data;
    std::string out;
    std::size_t epochs = 100;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    std::size_t hidden = 64;
    std::size_t batch = 64;
    std::size_t windows_per_epoch = 1024;
    std::size_t val_windows = 256;
    std::size_t patience = 15;
    bool no_exog = false;
    std::size_t min_length = 600;
    std::size_t bins = 8;
    bool resume = false;
};

void cmd_train(const TrainCmdOptions& o, Run& run, std::uint64_t seed, std::ostream& out) {
    const auto data = dataio::load_csv(o.data);
    std::vector<dataio::PriceSeries> train;
    std::vector<dataio::PriceSeries> val;
    if (!o.val_data.empty()) {
        train = data;
        val = dataio::load_csv(o.val_data);
    } else {
        std::vector<std::string> log;
        auto kept = dataio::filter_short(data, o.min_length, &log);
        dataio::SplitSpec spec;
        spec.n_bins = o.bins;
        spec.min_length = o.min_length;
        auto split = dataio::stratified_split(kept, spec, seed);
        log.insert(log.end(), split.log.begin(), split.log.end());
        std::string text;
        for (const auto& l : log) {
            text += l + "\n";
        }
        run.write("split_log.txt", text);
        run.write("train.csv", dataio::format_csv(split.train));
        run.write("val.csv", dataio::format_csv(split.val));
        run.write("test.csv", dataio::format_csv(split.test));
        train = std::move(split.train);
        val = std::move(split.val);
    }
    if (train.empty() || val.empty()) {
        throw ContractError(fmt::format("need non-empty train and validation sets (got {} / {}); supply more series "
                                        "or --val-data",
                                        train.size(), val.size()));
    }
    forecaster::NhitsConfig c;
    c.epochs = o.epochs;
    c.lr = o.lr;
    c.weight_decay = o.weight_decay;
    c.hidden_size = o.hidden;
    c.batch_size = o.batch;
    c.windows_per_epoch = o.windows_per_epoch;
    c.val_windows = o.val_windows;
    c.early_stop_patience = o.patience;
    c.use_exogenous = !o.no_exog;
    c.seed = seed;
    forecaster::TrainOptions opts;
    opts.state_path = run.path("train_state.ckpt");
    opts.on_epoch = [&](const forecaster::EpochLog& e) {
        out << fmt::format("epoch {} train {:.6f} val {:.6f}\n", e.epoch, e.train_loss, e.val_loss);
    };
    auto r = o.resume ? forecaster::resume(train, val, *opts.state_path, opts) : forecaster::train(train, val, c, opts);
    run.record("train_state.ckpt");
    run.write("model.ckpt", dataio::encode_checkpoint(r.best.to_checkpoint()));
    run.write("training_log.csv", forecaster::format_training_log(r.state.log));
    out << fmt::format("best epoch {} val loss {:.6f}{}\n", r.state.best_epoch, r.state.best_val,
                       r.early_stopped ? " (early stop)" : "");
}

// ---- attack ------------------------------------------------------------------------------------

struct AttackCmdOptions {
    std::string model;
    std::string data;
    std::string out;
    std::string methods = "gsa,lssa";
    std::string eps = "2";
    std::size_t iter = 20;
    int direction = 1;
    std::size_t window = 300;
    std::size_t max_series = 0;
    std::size_t plot_series = 1;
    std::size_t jobs = 1;
    double c = 5.0;
    double d = 2.0;
    double mu = 0.35;
    std::optional<double> gamma;
    double lambda_cw = 1.0;
    std::size_t cw_iter = 200;
    double cw_step = 0.01;
};

struct AttackOutcome {
    std::string method;
    double eps = 0.0;
    attacks::AttackResult result;
};

dataio::AttackReportRow report_row(const std::string& ticker, const std::string& method, double eps,
                                   const attacks::Evaluation& e) {
    return {ticker, method, eps, e.errors.mae, e.errors.rmse, e.errors.mape, e.gen_slope, e.ls_slope};
}

void cmd_attack(const AttackCmdOptions& o, Run& run, std::uint64_t seed, std::ostream& out) {
    const auto methods = parse_methods(o.methods);
    const auto eps = parse_doubles(o.eps, "--eps");
    const auto model = load_model(o.model);
    auto series = dataio::load_csv(o.data);
    if (o.max_series > 0 && series.size() > o.max_series) {
        series.resize(o.max_series);
    }
    if (series.empty()) {
        throw ContractError("no series to attack");
    }
    std::vector<std::vector<AttackOutcome>> results(series.size());
    parallel_for(series.size(), o.jobs, [&](std::size_t i) {
        for (auto m : methods) {
            for (double e : eps) {
                attacks::AttackConfig c;
                c.method = m;
                c.eps_pct = e;
                c.iter = o.iter;
                c.target_dir = o.direction;
                c.window = o.window;
                c.c = o.c;
                c.d = o.d;
                c.mu = o.mu;
                c.gamma = o.gamma;
                c.lambda_cw = o.lambda_cw;
                c.cw_iter = o.cw_iter;
                c.cw_step = o.cw_step;
                c.seed = seed;
                results[i].push_back({std::string(attacks::to_string(m)), e, attacks::run_attack(series[i], model, c)});
            }
        }
    });

    std::vector<dataio::AttackReportRow> rows;
    std::vector<dataio::PriceSeries> adversarial;
    // key (method, eps) -> sums; "normal" uses eps 0
    std::map<std::pair<std::string, double>, std::pair<std::size_t, dataio::AttackReportRow>> agg;
    std::vector<std::pair<std::string, double>> order;
    const auto accumulate = [&](const dataio::AttackReportRow& r) {
        const auto key = std::make_pair(r.method, r.eps_pct);
        auto [it, fresh] = agg.try_emplace(key, 0, dataio::AttackReportRow{"mean", r.method, r.eps_pct});
        if (fresh) {
            order.push_back(key);
        }
        auto& [n, s] = it->second;
        ++n;
        s.mae += r.mae;
        s.rmse += r.rmse;
        s.mape += r.mape;
        s.gen_slope += r.gen_slope;
        s.ls_slope += r.ls_slope;
    };
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& ticker = series[i].ticker;
        const auto& first = results[i].front().result;
        rows.push_back(report_row(ticker, "normal", 0.0, first.before));
        accumulate(rows.back());
        for (const auto& oc : results[i]) {
            rows.push_back(report_row(ticker, oc.method, oc.eps, oc.result.after));
            accumulate(rows.back());
            const auto stem = file_safe(fmt::format("{}_{}_{}", ticker, oc.method, format_double(oc.eps)));
            run.write("traces/" + stem + ".csv", attacks::format_trace(oc.result.trace));
            auto adv = oc.result.x_adv;
            adv.ticker = stem;
            adversarial.push_back(std::move(adv));
            if (i < o.plot_series) {
                const auto& r = oc.result;
                const auto first_day = o.window - r.before.prediction.size();
                std::vector<double> days(r.before.prediction.size());
                std::vector<double> truth(days.size());
                for (std::size_t k = 0; k < days.size(); ++k) {
                    days[k] = static_cast<double>(first_day + k);
                    truth[k] = r.original.adjprc[first_day + k];
                }
                const auto chart = svg::line_chart(
                    fmt::format("{} {} eps {}%", ticker, oc.method, format_double(oc.eps)), "day", "adjprc",
                    {{"truth", days, truth}, {"normal forecast", days, r.before.prediction},
                     {"attacked forecast", days, r.after.prediction}});
                run.write("plots/" + stem + ".svg", chart);
            }
        }
    }
    run.write("attack_report.csv", dataio::format_attack_report(rows));
    run.write("adversarial.csv", dataio::format_csv(adversarial));

    std::string summary = "method,eps_pct,n,mae,rmse,mape,gen_slope,ls_slope\n";
    for (const auto& key : order) {
        const auto& [n, s] = agg.at(key);
        const double k = static_cast<double>(n);
        summary += fmt::format("{},{},{},{},{},{},{},{}\n", s.method, format_double(s.eps_pct), n,
                               format_double(s.mae / k), format_double(s.rmse / k), format_double(s.mape / k),
                               format_double(s.gen_slope / k), format_double(s.ls_slope / k));
    }
    run.write("attack_summary.csv", summary);

    // wide eps x method table of mean slopes
    std::string sweep = "eps_pct,normal_gen_slope,normal_ls_slope";
    for (auto m : methods) {
        sweep += fmt::format(",{0}_gen_slope,{0}_ls_slope", attacks::to_string(m));
    }
    sweep += "\n";
    const auto& [nn_, normal] = agg.at({"normal", 0.0});
    for (double e : eps) {
        const double k0 = static_cast<double>(nn_);
        sweep += fmt::format("{},{},{}", format_double(e), format_double(normal.gen_slope / k0),
                             format_double(normal.ls_slope / k0));
        for (auto m : methods) {
            const auto& [n, s] = agg.at({std::string(attacks::to_string(m)), e});
            const double k = static_cast<double>(n);
            sweep += fmt::format(",{},{}", format_double(s.gen_slope / k), format_double(s.ls_slope / k));
        }
        sweep += "\n";
    }
    run.write("slope_sweep.csv", sweep);
    out << summary;
}

// ---- defend ------------------------------------------------------------------------------------

struct DefendTrainOptions {
    std::string real;
    std::string attacked;
    std::string out;
    std::size_t epochs = 200;
    double lr = 1e-4;
    double weight_decay = 1e-5;
    std::size_t batch = 32;
    double dropout = 0.2;
    std::size_t kernel = 5;
    std::size_t input_length = 300;
    double holdout = 0.3;
};

std::vector<std::pair<std::string, std::vector<double>>> windows_of(const std::string& path, std::size_t length,
                                                                    std::vector<std::string>& log) {
    std::vector<std::pair<std::string, std::vector<double>>> out;
    for (const auto& s : dataio::load_csv(path)) {
        if (s.size() < length) {
            log.push_back(fmt::format("{}: skipped, {} days < input length {}", s.ticker, s.size(), length));
            continue;
        }
        out.emplace_back(s.ticker, s.head(length).adjprc);
    }
    return out;
}

void cmd_defend_train(const DefendTrainOptions& o, Run& run, std::uint64_t seed, std::ostream& out) {
    if (!(o.holdout >= 0.0 && o.holdout < 1.0)) {
        throw ContractError(fmt::format("--holdout must lie in [0,1), got {}", o.holdout));
    }
    std::vector<std::string> log;
    const auto real = windows_of(o.real, o.input_length, log);
    const auto adv = windows_of(o.attacked, o.input_length, log);
    std::mt19937_64 rng(seed);
    const auto split = [&](const auto& items, auto& fit, auto& held) {
        std::vector<std::size_t> idx(items.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto n_held = static_cast<std::size_t>(std::llround(o.holdout * static_cast<double>(items.size())));
        for (std::size_t k = 0; k < idx.size(); ++k) {
            (k < n_held ? held : fit).push_back(items[idx[k]].second);
        }
    };
    std::vector<std::vector<double>> real_fit, real_held, adv_fit, adv_held;
    split(real, real_fit, real_held);
    split(adv, adv_fit, adv_held);
    defense::DiscriminatorConfig c;
    c.epochs = o.epochs;
    c.lr = o.lr;
    c.weight_decay = o.weight_decay;
    c.batch_size = o.batch;
    c.dropout = o.dropout;
    c.kernel = o.kernel;
    c.input_length = o.input_length;
    c.seed = seed;
    auto r = defense::train_discriminator(real_fit, adv_fit, c);
    log.insert(log.end(), r.warnings.begin(), r.warnings.end());
    const bool has_held = !real_held.empty() || !adv_held.empty();
    const auto rep = has_held ? defense::evaluate_discriminator(r.model, real_held, adv_held)
                              : defense::evaluate_discriminator(r.model, real_fit, adv_fit);
    if (!has_held) {
        log.push_back("no held-out series; confusion matrix is on the training set");
    }
    std::string text;
    for (const auto& l : log) {
        text += l + "\n";
    }
    run.write("defend_log.txt", text);
    run.write("discriminator.ckpt", dataio::encode_checkpoint(r.model.to_checkpoint()));
    run.write("discriminator_curve.csv", defense::format_curve(r.curve));
    run.write("confusion.csv", confusion_csv(rep));
    run.write("confusion.svg", svg::confusion_matrix(has_held ? "held-out" : "training set", rep));
    out << fmt::format("accuracy {:.2f} specificity {:.2f} kappa {:.2f}\n", rep.accuracy, rep.specificity, rep.kappa);
}

struct DefendClassifyOptions {
    std::string model;
    std::string real;
    std::string attacked;
    std::string out;
};

void cmd_defend_classify(const DefendClassifyOptions& o, Run& run, std::ostream& out) {
    if (o.real.empty() && o.attacked.empty()) {
        throw ContractError("give --real and/or --attacked");
    }
    const auto model = defense::Discriminator::from_checkpoint(dataio::load_checkpoint(o.model));
    std::string csv = "ticker,label,probability,prediction\n";
    std::size_t n = 0;
    for (int label : {0, 1}) {
        const auto& path = label == 0 ? o.real : o.attacked;
        if (path.empty()) {
            continue;
        }
        for (const auto& s : dataio::load_csv(path)) {
            if (s.size() < model.config().input_length) {
                throw ContractError(fmt::format("{}: {} days < input length {}", s.ticker, s.size(),
                                                model.config().input_length));
            }
            const double p = model.classify(s.head(model.config().input_length).adjprc);
            csv += fmt::format("{},{},{},{}\n", s.ticker, label, format_double(p), p >= 0.5 ? 1 : 0);
            ++n;
        }
    }
    run.write("classifications.csv", csv);
    out << fmt::format("classified {} series\n", n);
}

std::vector<std::string> exclusions(const fs::path& dir, const std::string& file) {
    if (file.empty()) {
        return {};
    }
    const auto rel = fs::weakly_canonical(fs::absolute(file)).lexically_relative(fs::weakly_canonical(fs::absolute(dir)));
    if (rel.empty() || rel.native().starts_with("..")) {
        return {};
    }
    return {rel.generic_string()};
}

// ---- gan ---------------------------------------------------------------------------------------

struct GanTrainOptions {
    std::string data;
    std::string ticker;
    std::string forecaster;
    std::string out;
    std::string epochs_per_block = "50";
    std::string alphas = "0.25,0.25,0.3,0.35,0.35";
    std::size_t samples_per_epoch = 512;
    std::size_t batch = 32;
    std::size_t critic_iters = 5;
    double lambda_gp = 1.0;
    double gp_prob = 0.6;
    double lr_g = 1e-4;
    double lr_c = 1e-4;
};

void cmd_gan_train(const GanTrainOptions& o, Run& run, std::uint64_t seed, std::ostream& out) {
    const auto all = dataio::load_csv(o.data);
    const auto& stock = pick_ticker(all, o.ticker);
    const auto model = load_model(o.forecaster);
    agan::GanConfig c;
    c.adv_scale_schedule = parse_doubles(o.alphas, "--alphas");
    std::vector<std::size_t> epochs;
    for (double e : parse_doubles(o.epochs_per_block, "--epochs-per-block")) {
        if (e < 0 || e != std::floor(e)) {
            throw ContractError(fmt::format("--epochs-per-block: {} is not a count", e));
        }
        epochs.push_back(static_cast<std::size_t>(e));
    }
    if (epochs.size() == 1) {
        epochs.assign(c.adv_scale_schedule.size(), epochs[0]);
    }
    c.epochs_per_block = epochs;
    c.samples_per_epoch = o.samples_per_epoch;
    c.batch_size = o.batch;
    c.critic_iters = o.critic_iters;
    c.lambda_gp = o.lambda_gp;
    c.gp_apply_prob = o.gp_prob;
    c.lr_g = o.lr_g;
    c.lr_c = o.lr_c;
    c.seed = seed;
    auto r = agan::train_agan(stock, model, c);
    run.write("gan.ckpt", dataio::encode_checkpoint(r.bundle.to_checkpoint()));
    run.write("gan_log.csv", agan::format_gan_log(r.log));
    out << fmt::format("trained {} blocks on {}\n", c.adv_scale_schedule.size(), stock.ticker);
}

struct GanGenerateOptions {
    std::string bundle;
    std::string data;
    std::string ticker;
    std::string forecaster;
    std::string out;
    std::size_t n = 2000;
};

std::vector<std::vector<double>> unscaled(const std::vector<std::vector<double>>& rows, const agan::ScaleBounds& b) {
    auto out = rows;
    for (auto& r : out) {
        for (auto& v : r) {
            v = b.unscale(v);
        }
    }
    return out;
}

void cmd_gan_generate(const GanGenerateOptions& o, Run& run, std::uint64_t seed, std::ostream& out) {
    const auto bundle = agan::GanBundle::from_checkpoint(dataio::load_checkpoint(o.bundle));
    const auto all = dataio::load_csv(o.data);
    const auto& stock = pick_ticker(all, o.ticker);
    const auto conds = agan::sample_intervals(stock, o.n, seed, bundle.config.interval_length, bundle.bounds);
    const auto gen = agan::generate(bundle, conds, seed * 1000003ULL + 1);
    std::vector<std::vector<double>> real;
    for (const auto& c : conds) {
        real.push_back(c.condition);
    }
    run.write("generated.csv", agan::format_intervals(gen));
    run.write("conditions.csv", agan::format_intervals(real));
    if (!o.forecaster.empty()) {
        const auto model = load_model(o.forecaster);
        const auto real_r = unscaled(real, bundle.bounds);
        const auto gen_r = unscaled(gen, bundle.bounds);
        std::string csv = "interval_id,real_gen_slope,real_ls_slope,generated_gen_slope,generated_ls_slope\n";
        double sums[4] = {0, 0, 0, 0};
        ad::NoGradGuard guard;
        constexpr std::size_t kChunk = 64;
        for (std::size_t b0 = 0; b0 < conds.size(); b0 += kChunk) {
            const auto b1 = std::min(conds.size(), b0 + kChunk);
            std::vector<double> p0;
            std::vector<std::vector<dataio::Date>> dates;
            std::vector<double> rf, gf;
            for (std::size_t k = b0; k < b1; ++k) {
                p0.push_back(conds[k].p0);
                dates.push_back(conds[k].dates);
                rf.insert(rf.end(), real_r[k].begin(), real_r[k].end());
                gf.insert(gf.end(), gen_r[k].begin(), gen_r[k].end());
            }
            const auto len = bundle.config.interval_length;
            const auto rp = agan::forecast_median_paths(
                model, agan::to_prices(ad::Tensor::from({b1 - b0, len}, rf), p0), dates);
            const auto gp = agan::forecast_median_paths(
                model, agan::to_prices(ad::Tensor::from({b1 - b0, len}, gf), p0), dates);
            const auto h = rp.dim(1);
            for (std::size_t k = 0; k < b1 - b0; ++k) {
                const auto row = [h, k](const ad::Tensor& t) {
                    auto v = t.values();
                    return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(k * h),
                                               v.begin() + static_cast<std::ptrdiff_t>((k + 1) * h));
                };
                const double s[4] = {attacks::general_slope(row(rp)), attacks::ls_slope(row(rp)),
                                     attacks::general_slope(row(gp)), attacks::ls_slope(row(gp))};
                csv += fmt::format("{},{},{},{},{}\n", b0 + k, format_double(s[0]), format_double(s[1]),
                                   format_double(s[2]), format_double(s[3]));
                for (int q = 0; q < 4; ++q) {
                    sums[q] += s[q];
                }
            }
        }
        const double n = static_cast<double>(conds.size());
        run.write("slopes.csv", csv);
        const auto summary = fmt::format("data,gen_slope,ls_slope\nreal,{},{}\ngenerated,{},{}\n",
                                         format_double(sums[0] / n), format_double(sums[1] / n),
                                         format_double(sums[2] / n), format_double(sums[3] / n));
        run.write("slope_summary.csv", summary);
        out << summary;
    }
    out << fmt::format("generated {} intervals\n", gen.size());
}

// ---- eval --------------------------------------------------------------------------------------

struct EvalOptions {
    std::string real;
    std::string generated;
    std::string bundle;
    std::string classifications;
    std::string out;
};

std::vector<std::string> csv_lines(const std::string& path, const std::string& header) {
    const auto text = dataio::read_file(path);
    std::vector<std::string> lines;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) {
        if (!l.empty() && l.back() == '\r') {
            l.pop_back();
        }
        lines.push_back(l);
    }
    if (lines.empty() || lines[0] != header) {
        throw ParseError(fmt::format("{}:1: expected header '{}'", path, header));
    }
    lines.erase(lines.begin());
    while (!lines.empty() && lines.back().empty()) {
        lines.pop_back();
    }
    return lines;
}

std::vector<std::vector<double>> parse_intervals(const std::string& path) {
    std::vector<std::vector<double>> out;
    const auto lines = csv_lines(path, "interval_id,day,scaled_log_return");
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto f = split_list(lines[i]);
        std::size_t id = 0, day = 0;
        double v = 0.0;
        const auto bad = [&] { return ParseError(fmt::format("{}:{}: malformed interval row", path, i + 2)); };
        if (f.size() != 3) {
            throw bad();
        }
        if (std::from_chars(f[0].data(), f[0].data() + f[0].size(), id).ec != std::errc() ||
            std::from_chars(f[1].data(), f[1].data() + f[1].size(), day).ec != std::errc() ||
            std::from_chars(f[2].data(), f[2].data() + f[2].size(), v).ec != std::errc()) {
            throw bad();
        }
        if (id == out.size() && day == 0) {
            out.emplace_back();
        }
        if (id + 1 != out.size() || day != out.back().size()) {
            throw ParseError(fmt::format("{}:{}: rows must be ordered by interval_id then day", path, i + 2));
        }
        out.back().push_back(v);
    }
    return out;
}

void cmd_eval(const EvalOptions& o, Run& run, std::ostream& out) {
    if (o.real.empty() != o.generated.empty()) {
        throw ContractError("--real and --generated go together");
    }
    if (o.real.empty() && o.classifications.empty()) {
        throw ContractError("nothing to evaluate: give --real/--generated and/or --classifications");
    }
    if (!o.real.empty()) {
        auto real = parse_intervals(o.real);
        auto gen = parse_intervals(o.generated);
        if (!o.bundle.empty()) {
            const auto b = agan::GanBundle::from_checkpoint(dataio::load_checkpoint(o.bundle)).bounds;
            real = unscaled(real, b);
            gen = unscaled(gen, b);
        }
        const auto flat = [](const std::vector<std::vector<double>>& s) {
            std::vector<double> v;
            for (const auto& r : s) {
                v.insert(v.end(), r.begin(), r.end());
            }
            return v;
        };
        const auto fr = flat(real);
        const auto fg = flat(gen);
        auto mr = metrics::moments(fr);
        auto mg = metrics::moments(fg);
        mr.mmd = 0.0;
        mg.mmd = metrics::mmd(real, gen);
        std::string csv = "data,mu,sigma,iqr,skew,kurtosis,mmd\n";
        for (const auto& [name, m] : {std::pair{"real", mr}, std::pair{"generated", mg}}) {
            csv += fmt::format("{},{},{},{},{},{},{}\n", name, format_double(m.mu), format_double(m.sigma),
                               format_double(m.iqr), format_double(m.skew), format_double(m.kurtosis),
                               format_double(m.mmd));
        }
        run.write("moments.csv", csv);
        // histogram overlay
        const double lo = std::min(*std::min_element(fr.begin(), fr.end()), *std::min_element(fg.begin(), fg.end()));
        const double hi = std::max(*std::max_element(fr.begin(), fr.end()), *std::max_element(fg.begin(), fg.end()));
        constexpr std::size_t kBins = 40;
        const double w = hi > lo ? (hi - lo) / kBins : 1.0;
        const auto hist = [&](const std::vector<double>& v) {
            std::vector<double> h(kBins, 0.0);
            for (double x : v) {
                h[std::min(kBins - 1, static_cast<std::size_t>((x - lo) / w))] += 1.0 / (static_cast<double>(v.size()) * w);
            }
            return h;
        };
        std::vector<double> centers(kBins);
        for (std::size_t k = 0; k < kBins; ++k) {
            centers[k] = lo + (static_cast<double>(k) + 0.5) * w;
        }
        run.write("histogram.svg", svg::line_chart("log-return density", "log return", "density",
                                                   {{"real", centers, hist(fr)}, {"generated", centers, hist(fg)}}));
        out << csv;
    }
    if (!o.classifications.empty()) {
        std::vector<int> labels, preds;
        const auto lines = csv_lines(o.classifications, "ticker,label,probability,prediction");
        for (std::size_t i = 0; i < lines.size(); ++i) {
            const auto f = split_list(lines[i]);
            if (f.size() != 4 || (f[1] != "0" && f[1] != "1") || (f[3] != "0" && f[3] != "1")) {
                throw ParseError(fmt::format("{}:{}: malformed classification row", o.classifications, i + 2));
            }
            labels.push_back(f[1] == "1");
            preds.push_back(f[3] == "1");
        }
        const auto rep = metrics::confusion(labels, preds);
        run.write("confusion.csv", confusion_csv(rep));
        run.write("confusion.svg", svg::confusion_matrix("discriminator", rep));
        out << confusion_csv(rep);
    }
}

} // namespace

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ContractError*>(&e) != nullptr || dynamic_cast<const UnsupportedError*>(&e) != nullptr) {
        return kUsage;
    }
    if (dynamic_cast<const NumericalError*>(&e) != nullptr) {
        return kNumerical;
    }
    if (dynamic_cast<const Error*>(&e) != nullptr) {
        return kData;
    }
    return kFailure;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"slopestrike: forecaster training, slope attacks, defenses and adversarial GAN", "slopestrike"};
    app.set_config("--config", "", "INI file; [command] or [command.sub] sections, flags override it");
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    std::optional<std::uint64_t> seed_flag;
    app.add_option("--seed", seed_flag, "Global seed (falls back to SLOPESTRIKE_SEED, then 0)");

    std::function<void()> action;
    const auto with_run = [&](CLI::App* sub, const std::string& name, const std::string& out_dir, auto body) {
        const auto seed = resolve_seed(seed_flag);
        Run r(out_dir, name, seed, resolved_settings(sub));
        body(r, seed);
        r.finish();
    };

    SynthOptions so;
    auto* synth = app.add_subcommand("synth", "Write seeded GBM price series");
    synth->add_option("--n-series", so.n_series);
    synth->add_option("--days", so.days);
    synth->add_option("--s0", so.s0);
    synth->add_option("--mu", so.mu, "Per-day drift");
    synth->add_option("--sigma", so.sigma, "Per-day volatility");
    synth->add_option("--prefix", so.prefix, "Ticker prefix");
    synth->add_option("--out", so.out)->required();
    synth->callback([&] {
        action = [&] { with_run(synth, "synth", so.out, [&](Run& r, std::uint64_t s) { cmd_synth(so, r, s, out); }); };
    });

    TrainCmdOptions to;
    auto* train = app.add_subcommand("train", "Train the forecaster");
    train->add_option("--data", to.data, "Price CSV")->required()->check(CLI::ExistingFile);
    train->add_option("--val-data", to.val_data, "Validation CSV (skips the stratified split)")->check(CLI::ExistingFile);
    train->add_option("--out", to.out)->required();
    train->add_option("--epochs", to.epochs);
    train->add_option("--lr", to.lr);
    train->add_option("--weight-decay", to.weight_decay);
    train->add_option("--hidden", to.hidden);
    train->add_option("--batch-size", to.batch);
    train->add_option("--windows-per-epoch", to.windows_per_epoch);
    train->add_option("--val-windows", to.val_windows);
    train->add_option("--patience", to.patience);
    train->add_flag("--no-exog", to.no_exog, "Price channel only");
    train->add_option("--min-length", to.min_length, "Drop series shorter than this before splitting");
    train->add_option("--bins", to.bins, "Median-price bins for the stratified split");
    train->add_flag("--resume", to.resume, "Continue from <out>/train_state.ckpt");
    train->callback([&] {
        action = [&] { with_run(train, "train", to.out, [&](Run& r, std::uint64_t s) { cmd_train(to, r, s, out); }); };
    });

    AttackCmdOptions ao;
    auto* attack = app.add_subcommand("attack", "Attack a trained forecaster");
    attack->add_option("--model", ao.model, "Forecaster checkpoint")->required()->check(CLI::ExistingFile);
    attack->add_option("--data", ao.data, "Price CSV")->required()->check(CLI::ExistingFile);
    attack->add_option("--out", ao.out)->required();
    attack->add_option("--methods", ao.methods, "Comma list: fgsm,bim,mifgsm,sim,tim,cw,gsa,lssa,cw_gsa,cw_lssa");
    attack->add_option("--eps", ao.eps, "Comma list of budgets in percent of median price");
    attack->add_option("--iter", ao.iter);
    attack->add_option("--direction", ao.direction, "+1 up, -1 down, 0 flatten");
    attack->add_option("--window", ao.window, "Days attacked from the start of each series");
    attack->add_option("--max-series", ao.max_series, "0 = all");
    attack->add_option("--plot-series", ao.plot_series, "Overlay plots for the first N series");
    attack->add_option("--jobs", ao.jobs, "Worker threads (output does not depend on it)");
    attack->add_option("--c", ao.c);
    attack->add_option("--d", ao.d);
    attack->add_option("--mu", ao.mu, "MI-FGSM momentum");
    attack->add_option("--gamma", ao.gamma, "TIM / C&W margin (default eps)");
    attack->add_option("--lambda-cw", ao.lambda_cw);
    attack->add_option("--cw-iter", ao.cw_iter);
    attack->add_option("--cw-step", ao.cw_step);
    attack->callback([&] {
        action = [&] { with_run(attack, "attack", ao.out, [&](Run& r, std::uint64_t s) { cmd_attack(ao, r, s, out); }); };
    });

    auto* defend = app.add_subcommand("defend", "Discriminator and integrity manifest");
    defend->require_subcommand(1);
    DefendTrainOptions dto;
    auto* dtrain = defend->add_subcommand("train", "Train the CNN discriminator");
    dtrain->add_option("--real", dto.real, "Unaltered price CSV")->required()->check(CLI::ExistingFile);
    dtrain->add_option("--attacked", dto.attacked, "Adversarial price CSV")->required()->check(CLI::ExistingFile);
    dtrain->add_option("--out", dto.out)->required();
    dtrain->add_option("--epochs", dto.epochs);
    dtrain->add_option("--lr", dto.lr);
    dtrain->add_option("--weight-decay", dto.weight_decay);
    dtrain->add_option("--batch-size", dto.batch);
    dtrain->add_option("--dropout", dto.dropout);
    dtrain->add_option("--kernel", dto.kernel);
    dtrain->add_option("--input-length", dto.input_length);
    dtrain->add_option("--holdout", dto.holdout, "Held-out fraction per class");
    dtrain->callback([&] {
        action = [&] {
            with_run(dtrain, "defend train", dto.out, [&](Run& r, std::uint64_t s) { cmd_defend_train(dto, r, s, out); });
        };
    });

    DefendClassifyOptions dco;
    auto* dclass = defend->add_subcommand("classify", "Score series with a trained discriminator");
    dclass->add_option("--model", dco.model)->required()->check(CLI::ExistingFile);
    dclass->add_option("--real", dco.real, "Series labelled 0")->check(CLI::ExistingFile);
    dclass->add_option("--attacked", dco.attacked, "Series labelled 1")->check(CLI::ExistingFile);
    dclass->add_option("--out", dco.out)->required();
    dclass->callback([&] {
        action = [&] {
            with_run(dclass, "defend classify", dco.out, [&](Run& r, std::uint64_t) { cmd_defend_classify(dco, r, out); });
        };
    });

    std::string bm_dir, bm_output;
    auto* dbuild = defend->add_subcommand("build-manifest", "Hash every file under a directory");
    dbuild->add_option("dir", bm_dir)->required()->check(CLI::ExistingDirectory);
    dbuild->add_option("--output", bm_output, "Write here instead of stdout (excluded from the hash if inside dir)");
    dbuild->callback([&] {
        action = [&] {
            const auto m = defense::build_manifest(bm_dir, exclusions(bm_dir, bm_output));
            const auto text = defense::format_manifest(m);
            if (bm_output.empty()) {
                out << text;
            } else {
                dataio::write_file(bm_output, text);
                out << fmt::format("{} files, root {}\n", m.entries.size(), m.root_digest);
            }
        };
    });

    std::string vf_dir, vf_manifest;
    int verify_code = kOk;
    auto* dverify = defend->add_subcommand("verify", "Check a directory against a manifest");
    dverify->add_option("dir", vf_dir)->required()->check(CLI::ExistingDirectory);
    dverify->add_option("manifest", vf_manifest)->required()->check(CLI::ExistingFile);
    dverify->callback([&] {
        action = [&] {
            const auto m = defense::parse_manifest(dataio::read_file(vf_manifest));
            const auto v = defense::verify_manifest(vf_dir, m, exclusions(vf_dir, vf_manifest));
            out << defense::format_verification(v);
            verify_code = v.ok() ? kOk : kData;
        };
    });

    auto* gan = app.add_subcommand("gan", "Adversarial conditional WGAN-GP");
    gan->require_subcommand(1);
    GanTrainOptions gto;
    auto* gtrain = gan->add_subcommand("train", "Train on one stock against a frozen forecaster");
    gtrain->add_option("--data", gto.data)->required()->check(CLI::ExistingFile);
    gtrain->add_option("--ticker", gto.ticker, "Default: first series");
    gtrain->add_option("--forecaster", gto.forecaster)->required()->check(CLI::ExistingFile);
    gtrain->add_option("--out", gto.out)->required();
    gtrain->add_option("--epochs-per-block", gto.epochs_per_block, "One count or one per block");
    gtrain->add_option("--alphas", gto.alphas, "Adversarial scale per block");
    gtrain->add_option("--samples-per-epoch", gto.samples_per_epoch);
    gtrain->add_option("--batch-size", gto.batch);
    gtrain->add_option("--critic-iters", gto.critic_iters);
    gtrain->add_option("--lambda-gp", gto.lambda_gp);
    gtrain->add_option("--gp-prob", gto.gp_prob);
    gtrain->add_option("--lr-g", gto.lr_g);
    gtrain->add_option("--lr-c", gto.lr_c);
    gtrain->callback([&] {
        action = [&] { with_run(gtrain, "gan train", gto.out, [&](Run& r, std::uint64_t s) { cmd_gan_train(gto, r, s, out); }); };
    });

    GanGenerateOptions ggo;
    auto* ggen = gan->add_subcommand("generate", "Generate intervals conditioned on real ones");
    ggen->add_option("--bundle", ggo.bundle)->required()->check(CLI::ExistingFile);
    ggen->add_option("--data", ggo.data)->required()->check(CLI::ExistingFile);
    ggen->add_option("--ticker", ggo.ticker, "Default: first series");
    ggen->add_option("--forecaster", ggo.forecaster, "Also report forecast slopes")->check(CLI::ExistingFile);
    ggen->add_option("--n", ggo.n, "Number of intervals");
    ggen->add_option("--out", ggo.out)->required();
    ggen->callback([&] {
        action = [&] {
            with_run(ggen, "gan generate", ggo.out, [&](Run& r, std::uint64_t s) { cmd_gan_generate(ggo, r, s, out); });
        };
    });

    EvalOptions eo;
    auto* eval = app.add_subcommand("eval", "Moment/MMD table and confusion matrix");
    eval->add_option("--real", eo.real, "Interval CSV")->check(CLI::ExistingFile);
    eval->add_option("--generated", eo.generated, "Interval CSV")->check(CLI::ExistingFile);
    eval->add_option("--bundle", eo.bundle, "Unscale with this GAN bundle's bounds")->check(CLI::ExistingFile);
    eval->add_option("--classifications", eo.classifications, "Output of defend classify")->check(CLI::ExistingFile);
    eval->add_option("--out", eo.out)->required();
    eval->callback([&] {
        action = [&] { with_run(eval, "eval", eo.out, [&](Run& r, std::uint64_t) { cmd_eval(eo, r, out); }); };
    });

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    }
    try {
        if (action) {
            action();
        }
    } catch (const CLI::Error& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return verify_code;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) {
        args.emplace_back(argv[i]);
    }
    return run(args, out, err);
}

} // namespace slopestrike::cli
