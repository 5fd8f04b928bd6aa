#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace slopestrike::dataio {

/// Calendar date; ordering and weekday follow the proleptic Gregorian calendar.
struct Date {
    int year = 1970;
    unsigned month = 1;
    unsigned day = 1;

    static Date parse(std::string_view iso);  // YYYY-MM-DD
    std::string to_string() const;
    /// Days since 1970-01-01.
    std::int64_t serial() const;
    static Date from_serial(std::int64_t days);
    /// Monday = 0 ... Sunday = 6.
    int weekday() const;

    friend auto operator<=>(const Date&, const Date&) = default;
};

struct PriceSeries {
    std::string ticker;
    std::vector<Date> dates;
    std::vector<double> adjprc;

    std::size_t size() const { return adjprc.size(); }
    /// Throws if dates are not strictly increasing, prices not positive, or
    /// lengths differ.
    void validate() const;
    /// First `n` days (n <= size()).
    PriceSeries head(std::size_t n) const;
};

double median(std::vector<double> values);

/// Reads `ticker,date,adjprc` rows; one series per ticker in first-seen order.
std::vector<PriceSeries> load_csv(const std::filesystem::path& path);
std::vector<PriceSeries> parse_csv(std::string_view text, const std::string& source = "<memory>");
void write_csv(const std::filesystem::path& path, const std::vector<PriceSeries>& series);
std::string format_csv(const std::vector<PriceSeries>& series);

struct SplitSpec {
    std::size_t n_bins = 8;
    double train = 0.75;
    double val = 0.10;
    double test = 0.15;
    std::size_t min_length = 600;

    void validate() const;
};

struct SplitResult {
    std::vector<PriceSeries> train;
    std::vector<PriceSeries> val;
    std::vector<PriceSeries> test;
    std::vector<std::string> log;
};

/// Drops series shorter than `min_length`, appending one line per drop to `log`.
std::vector<PriceSeries> filter_short(std::vector<PriceSeries> series, std::size_t min_length,
                                      std::vector<std::string>* log = nullptr);

/// Stratified split on median price. Series are binned into equal-width bins
/// over [min median, max median] (edge ties go to the lower bin), shuffled per
/// bin and allocated by the fractions. Bins with fewer than 3 members are
/// pooled and allocated together at the end.
SplitResult stratified_split(const std::vector<PriceSeries>& series, const SplitSpec& spec, std::uint64_t seed);

/// Geometric Brownian motion paths on consecutive business days starting
/// 2000-01-03: p_t = p_{t-1} exp((mu - sigma^2/2) + sigma z_t).
std::vector<PriceSeries> synth_gbm(std::size_t n_series, std::size_t n_days, double s0, double mu, double sigma,
                                   std::uint64_t seed, const std::string& ticker_prefix = "SYN");

// ---- checkpoints ---------------------------------------------------------

struct NamedArray {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;
};

struct Checkpoint {
    static constexpr int kFormatVersion = 1;

    /// Free-form architecture descriptor (model kind, hyperparameters...).
    nlohmann::json architecture;
    std::vector<NamedArray> arrays;

    const NamedArray& get(const std::string& name) const;
};

/// `{header JSON}\n\0` + little-endian float64 arrays in header order + CRC-32
/// (little-endian u32) of every preceding byte.
std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---- reports ---------------------------------------------------------------

struct AttackReportRow {
    std::string ticker;
    std::string method;
    double eps_pct = 0.0;
    double mae = 0.0;
    double rmse = 0.0;
    double mape = 0.0;
    double gen_slope = 0.0;
    double ls_slope = 0.0;
};

inline constexpr std::string_view kAttackReportHeader = "ticker,method,eps_pct,mae,rmse,mape,gen_slope,ls_slope";

std::string format_attack_report(const std::vector<AttackReportRow>& rows);
std::vector<AttackReportRow> parse_attack_report(std::string_view text);

/// Shortest round-trip decimal representation.
std::string format_double(double value);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

} // namespace slopestrike::dataio
