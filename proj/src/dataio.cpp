#include "slopestrike/dataio.hpp"

#include <fmt/format.h>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "slopestrike/error.hpp"

namespace slopestrike::dataio {

namespace {

std::vector<std::string_view> split_fields(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

bool parse_double(std::string_view s, double& out) {
    s = trim(s);
    if (s.empty()) {
        return false;
    }
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

std::uint32_t crc32_of(std::string_view bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks for very large files.
    std::size_t off = 0;
    while (off < bytes.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + off), chunk);
        off += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

void append_le_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
    }
}

std::uint32_t read_le_u32(const char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    }
    return v;
}

void append_le_double(std::string& out, double d) {
    const auto bits = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
    }
}

double read_le_double(const char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    }
    return std::bit_cast<double>(bits);
}

} // namespace

// ---- Date ------------------------------------------------------------------------

Date Date::parse(std::string_view iso) {
    iso = trim(iso);
    int y = 0;
    unsigned m = 0;
    unsigned d = 0;
    auto bad = [&] { return ParseError("invalid ISO-8601 date '" + std::string(iso) + "'"); };
    if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-') {
        throw bad();
    }
    if (std::from_chars(iso.data(), iso.data() + 4, y).ptr != iso.data() + 4 ||
        std::from_chars(iso.data() + 5, iso.data() + 7, m).ptr != iso.data() + 7 ||
        std::from_chars(iso.data() + 8, iso.data() + 10, d).ptr != iso.data() + 10) {
        throw bad();
    }
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) {
        throw bad();
    }
    return Date{y, m, d};
}

std::string Date::to_string() const { return fmt::format("{:04d}-{:02d}-{:02d}", year, month, day); }

std::int64_t Date::serial() const {
    const std::chrono::year_month_day ymd{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
    return std::chrono::sys_days(ymd).time_since_epoch().count();
}

Date Date::from_serial(std::int64_t days) {
    const std::chrono::sys_days sd{std::chrono::days{days}};
    const std::chrono::year_month_day ymd{sd};
    return Date{static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day())};
}

int Date::weekday() const {
    const std::chrono::weekday wd{std::chrono::sys_days{std::chrono::days{serial()}}};
    return static_cast<int>(wd.iso_encoding()) - 1;
}

// ---- PriceSeries -----------------------------------------------------------------

void PriceSeries::validate() const {
    if (dates.size() != adjprc.size()) {
        throw ContractError("series '" + ticker + "': " + std::to_string(dates.size()) + " dates but " +
                            std::to_string(adjprc.size()) + " prices");
    }
    for (std::size_t i = 0; i < adjprc.size(); ++i) {
        if (!(adjprc[i] > 0.0) || !std::isfinite(adjprc[i])) {
            throw DomainError("series '" + ticker + "': non-positive price " + format_double(adjprc[i]) + " on " +
                              dates[i].to_string());
        }
        if (i > 0 && !(dates[i - 1] < dates[i])) {
            throw ContractError("series '" + ticker + "': dates not strictly increasing at " + dates[i].to_string());
        }
    }
}

PriceSeries PriceSeries::head(std::size_t n) const {
    if (n > size()) {
        throw ContractError("series '" + ticker + "': head(" + std::to_string(n) + ") of length " +
                            std::to_string(size()));
    }
    PriceSeries out{ticker, {dates.begin(), dates.begin() + static_cast<std::ptrdiff_t>(n)},
                    {adjprc.begin(), adjprc.begin() + static_cast<std::ptrdiff_t>(n)}};
    return out;
}

double median(std::vector<double> values) {
    if (values.empty()) {
        throw ContractError("median of empty sample");
    }
    std::sort(values.begin(), values.end());
    const auto n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// ---- CSV ---------------------------------------------------------------------------

std::vector<PriceSeries> parse_csv(std::string_view text, const std::string& source) {
    std::vector<PriceSeries> out;
    std::map<std::string, std::size_t> index;
    std::vector<std::vector<std::pair<Date, double>>> rows;
    std::size_t line_no = 0;
    bool header_seen = false;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        std::string_view line = trim(text.substr(pos, end - pos));
        pos = end + 1;
        ++line_no;
        if (line.empty()) {
            if (end == text.size()) {
                break;
            }
            continue;
        }
        const auto where = source + ":" + std::to_string(line_no);
        auto fields = split_fields(line, ',');
        if (!header_seen) {
            if (fields.size() != 3 || trim(fields[0]) != "ticker" || trim(fields[1]) != "date" ||
                trim(fields[2]) != "adjprc") {
                throw ParseError(where + ": expected header 'ticker,date,adjprc'");
            }
            header_seen = true;
            continue;
        }
        if (fields.size() != 3) {
            throw ParseError(where + ": expected 3 fields, got " + std::to_string(fields.size()));
        }
        const std::string ticker(trim(fields[0]));
        if (ticker.empty()) {
            throw ParseError(where + ": empty ticker");
        }
        Date date;
        try {
            date = Date::parse(fields[1]);
        } catch (const ParseError& e) {
            throw ParseError(where + ": " + e.what());
        }
        double price = 0.0;
        if (!parse_double(fields[2], price)) {
            throw ParseError(where + ": invalid price '" + std::string(trim(fields[2])) + "'");
        }
        if (!(price > 0.0) || !std::isfinite(price)) {
            throw DomainError(where + ": non-positive price " + std::string(trim(fields[2])));
        }
        auto [it, inserted] = index.emplace(ticker, out.size());
        if (inserted) {
            out.push_back(PriceSeries{ticker, {}, {}});
            rows.emplace_back();
        }
        rows[it->second].emplace_back(date, price);
    }
    if (!header_seen) {
        throw ParseError(source + ": missing header 'ticker,date,adjprc'");
    }
    for (std::size_t s = 0; s < out.size(); ++s) {
        auto& r = rows[s];
        std::stable_sort(r.begin(), r.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        for (std::size_t i = 1; i < r.size(); ++i) {
            if (r[i].first == r[i - 1].first) {
                throw ParseError(source + ": duplicate row for ticker '" + out[s].ticker + "' on " +
                                 r[i].first.to_string());
            }
        }
        for (const auto& [d, p] : r) {
            out[s].dates.push_back(d);
            out[s].adjprc.push_back(p);
        }
    }
    return out;
}

std::vector<PriceSeries> load_csv(const std::filesystem::path& path) { return parse_csv(read_file(path), path.string()); }

std::string format_csv(const std::vector<PriceSeries>& series) {
    std::string out = "ticker,date,adjprc\n";
    for (const auto& s : series) {
        s.validate();
        for (std::size_t i = 0; i < s.size(); ++i) {
            out += s.ticker;
            out += ',';
            out += s.dates[i].to_string();
            out += ',';
            out += format_double(s.adjprc[i]);
            out += '\n';
        }
    }
    return out;
}

void write_csv(const std::filesystem::path& path, const std::vector<PriceSeries>& series) {
    write_file(path, format_csv(series));
}

// ---- split -------------------------------------------------------------------------

void SplitSpec::validate() const {
    if (n_bins < 1) {
        throw ContractError("split: n_bins must be >= 1");
    }
    if (train < 0.0 || val < 0.0 || test < 0.0 || std::abs(train + val + test - 1.0) > 1e-9) {
        throw ContractError("split: fractions must be non-negative and sum to 1");
    }
}

std::vector<PriceSeries> filter_short(std::vector<PriceSeries> series, std::size_t min_length,
                                      std::vector<std::string>* log) {
    std::vector<PriceSeries> kept;
    for (auto& s : series) {
        if (s.size() < min_length) {
            if (log != nullptr) {
                log->push_back("dropped '" + s.ticker + "': " + std::to_string(s.size()) + " days < " +
                               std::to_string(min_length));
            }
            continue;
        }
        kept.push_back(std::move(s));
    }
    return kept;
}

namespace {

/// Counts for one group. Rounding is cumulative over every group seen so far so
/// the global proportions stay close to the requested fractions (per-group rounding of 7.5
/// would otherwise always round up).
struct Allocator {
    const SplitSpec& spec;
    std::size_t seen = 0;
    std::size_t given_train = 0;
    std::size_t given_tv = 0;

    std::array<std::size_t, 3> next(std::size_t n) {
        seen += n;
        const auto want_train = static_cast<std::size_t>(std::llround(static_cast<double>(seen) * spec.train));
        const auto want_tv =
            static_cast<std::size_t>(std::llround(static_cast<double>(seen) * (spec.train + spec.val)));
        const auto a = std::min(want_train > given_train ? want_train - given_train : 0, n);
        const auto tv = std::min(std::max(want_tv > given_tv ? want_tv - given_tv : 0, a), n);
        given_train += a;
        given_tv += tv;
        return {a, tv - a, n - tv};
    }
};

} // namespace

SplitResult stratified_split(const std::vector<PriceSeries>& series, const SplitSpec& spec, std::uint64_t seed) {
    spec.validate();
    if (series.empty()) {
        throw ContractError("split: empty input");
    }
    for (const auto& s : series) {
        if (s.size() < spec.min_length) {
            throw ContractError("split: series '" + s.ticker + "' shorter than " + std::to_string(spec.min_length) +
                                " days; filter first");
        }
    }
    std::vector<double> medians;
    for (const auto& s : series) {
        medians.push_back(median(s.adjprc));
    }
    const double lo = *std::min_element(medians.begin(), medians.end());
    const double hi = *std::max_element(medians.begin(), medians.end());
    const double width = (hi - lo) / static_cast<double>(spec.n_bins);
    std::vector<std::vector<std::size_t>> bins(spec.n_bins);
    for (std::size_t i = 0; i < series.size(); ++i) {
        std::size_t b = 0;
        if (width > 0.0) {
            const double pos = (medians[i] - lo) / width;
            const double c = std::ceil(pos);
            b = c <= 1.0 ? 0 : static_cast<std::size_t>(c) - 1;
            b = std::min(b, spec.n_bins - 1);
        }
        bins[b].push_back(i);
    }

    SplitResult result;
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> pooled;
    Allocator alloc{spec};
    auto assign = [&](std::vector<std::size_t>& members) {
        std::shuffle(members.begin(), members.end(), rng);
        const auto counts = alloc.next(members.size());
        std::size_t k = 0;
        for (std::size_t i = 0; i < counts[0]; ++i) {
            result.train.push_back(series[members[k++]]);
        }
        for (std::size_t i = 0; i < counts[1]; ++i) {
            result.val.push_back(series[members[k++]]);
        }
        for (std::size_t i = 0; i < counts[2]; ++i) {
            result.test.push_back(series[members[k++]]);
        }
    };
    for (std::size_t b = 0; b < bins.size(); ++b) {
        if (bins[b].empty()) {
            continue;
        }
        if (bins[b].size() < 3) {
            result.log.push_back("bin " + std::to_string(b) + " has " + std::to_string(bins[b].size()) +
                                 " series; using global allocation");
            pooled.insert(pooled.end(), bins[b].begin(), bins[b].end());
            continue;
        }
        assign(bins[b]);
    }
    if (!pooled.empty()) {
        assign(pooled);
    }
    return result;
}

// ---- synthetic data ------------------------------------------------------------------

std::vector<PriceSeries> synth_gbm(std::size_t n_series, std::size_t n_days, double s0, double mu, double sigma,
                                   std::uint64_t seed, const std::string& ticker_prefix) {
    if (!(s0 > 0.0)) {
        throw DomainError("synth_gbm: s0 must be positive, got " + format_double(s0));
    }
    if (n_days < 120) {
        throw ContractError("synth_gbm: n_days must be >= 120");
    }
    if (sigma < 0.0) {
        throw ContractError("synth_gbm: sigma must be >= 0");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::int64_t start = Date{2000, 1, 3}.serial();
    std::vector<Date> calendar;
    for (std::int64_t d = start; calendar.size() < n_days; ++d) {
        const Date date = Date::from_serial(d);
        if (date.weekday() < 5) {
            calendar.push_back(date);
        }
    }
    std::vector<PriceSeries> out;
    const double drift = mu - 0.5 * sigma * sigma;
    for (std::size_t s = 0; s < n_series; ++s) {
        PriceSeries ps{fmt::format("{}{:03d}", ticker_prefix, s), calendar, {}};
        ps.adjprc.reserve(n_days);
        double p = s0;
        ps.adjprc.push_back(p);
        for (std::size_t t = 1; t < n_days; ++t) {
            const double z = normal(rng);
            p *= std::exp(drift + sigma * z);
            ps.adjprc.push_back(p);
        }
        out.push_back(std::move(ps));
    }
    return out;
}

// ---- checkpoints -----------------------------------------------------------------------

const NamedArray& Checkpoint::get(const std::string& name) const {
    for (const auto& a : arrays) {
        if (a.name == name) {
            return a;
        }
    }
    throw ContractError("checkpoint: no array named '" + name + "'");
}

std::string encode_checkpoint(const Checkpoint& checkpoint) {
    nlohmann::json header;
    header["format"] = "slopestrike-checkpoint";
    header["version"] = Checkpoint::kFormatVersion;
    header["architecture"] = checkpoint.architecture;
    header["checksum"] = "crc32";
    auto arrays = nlohmann::json::array();
    for (const auto& a : checkpoint.arrays) {
        std::size_t n = 1;
        for (auto d : a.shape) {
            n *= d;
        }
        if (n != a.values.size()) {
            throw DimensionError("checkpoint: array '" + a.name + "' has " + std::to_string(a.values.size()) +
                                 " values for its shape");
        }
        arrays.push_back({{"name", a.name}, {"shape", a.shape}});
    }
    header["arrays"] = arrays;
    std::string out = header.dump();
    out.push_back('\n');
    out.push_back('\0');
    for (const auto& a : checkpoint.arrays) {
        for (double v : a.values) {
            append_le_double(out, v);
        }
    }
    append_le_u32(out, crc32_of(out));
    return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    if (bytes.size() < 6) {
        throw CorruptionError("checkpoint: file too short");
    }
    const auto stored = read_le_u32(bytes.data() + bytes.size() - 4);
    const auto body = bytes.substr(0, bytes.size() - 4);
    if (crc32_of(body) != stored) {
        throw CorruptionError("checkpoint: checksum mismatch (file truncated or modified)");
    }
    const auto sep = body.find(std::string_view("\n\0", 2));
    if (sep == std::string_view::npos) {
        throw CorruptionError("checkpoint: missing header terminator");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(body.substr(0, sep));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError(std::string("checkpoint: bad header: ") + e.what());
    }
    if (header.value("format", "") != "slopestrike-checkpoint") {
        throw CorruptionError("checkpoint: not a slopestrike checkpoint");
    }
    const int version = header.value("version", -1);
    if (version != Checkpoint::kFormatVersion) {
        throw VersionError("checkpoint: format version " + std::to_string(version) + " unsupported (expected " +
                           std::to_string(Checkpoint::kFormatVersion) + ")");
    }
    Checkpoint out;
    out.architecture = header.value("architecture", nlohmann::json::object());
    std::size_t offset = sep + 2;
    for (const auto& entry : header.at("arrays")) {
        NamedArray a;
        a.name = entry.at("name").get<std::string>();
        a.shape = entry.at("shape").get<std::vector<std::size_t>>();
        std::size_t n = 1;
        for (auto d : a.shape) {
            n *= d;
        }
        if (offset + n * 8 > body.size()) {
            throw CorruptionError("checkpoint: payload shorter than header declares");
        }
        a.values.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            a.values[i] = read_le_double(body.data() + offset + i * 8);
        }
        offset += n * 8;
        out.arrays.push_back(std::move(a));
    }
    if (offset != body.size()) {
        throw CorruptionError("checkpoint: trailing bytes after declared arrays");
    }
    return out;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    write_file(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

// ---- reports ------------------------------------------------------------------------------

std::string format_double(double value) { return fmt::format("{}", value); }

std::string format_attack_report(const std::vector<AttackReportRow>& rows) {
    std::string out(kAttackReportHeader);
    out += '\n';
    for (const auto& r : rows) {
        out += fmt::format("{},{},{},{},{},{},{},{}\n", r.ticker, r.method, format_double(r.eps_pct),
                           format_double(r.mae), format_double(r.rmse), format_double(r.mape),
                           format_double(r.gen_slope), format_double(r.ls_slope));
    }
    return out;
}

std::vector<AttackReportRow> parse_attack_report(std::string_view text) {
    std::vector<AttackReportRow> rows;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto l = trim(line);
        if (l.empty()) {
            continue;
        }
        if (line_no == 1) {
            if (l != kAttackReportHeader) {
                throw ParseError("attack report: unexpected header");
            }
            continue;
        }
        auto f = split_fields(l, ',');
        if (f.size() != 8) {
            throw ParseError("attack report line " + std::to_string(line_no) + ": expected 8 fields");
        }
        AttackReportRow r;
        r.ticker = std::string(f[0]);
        r.method = std::string(f[1]);
        double* targets[] = {&r.eps_pct, &r.mae, &r.rmse, &r.mape, &r.gen_slope, &r.ls_slope};
        for (int k = 0; k < 6; ++k) {
            if (!parse_double(f[2 + k], *targets[k])) {
                throw ParseError("attack report line " + std::to_string(line_no) + ": bad number");
            }
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) {
        throw IoError("error reading '" + path.string() + "'");
    }
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) {
        throw IoError("error writing '" + path.string() + "'");
    }
}

} // namespace slopestrike::dataio
