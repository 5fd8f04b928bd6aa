#include "slopestrike/defense.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "slopestrike/error.hpp"

namespace slopestrike::defense {

namespace fs = std::filesystem;

// ---- config ------------------------------------------------------------------------------------

void DiscriminatorConfig::validate() const {
    if (conv_channels.size() != 3) {
        throw ContractError(fmt::format("discriminator needs 3 conv layers, got {}", conv_channels.size()));
    }
    for (auto c : conv_channels) {
        if (c == 0) {
            throw ContractError("discriminator conv channels must be positive");
        }
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw ContractError(fmt::format("dropout must lie in [0,1), got {}", dropout));
    }
    if (kernel == 0 || pool == 0 || batch_size == 0) {
        throw ContractError("kernel, pool and batch_size must be positive");
    }
    if (!(lr >= 0.0) || !(weight_decay >= 0.0)) {
        throw ContractError("lr and weight_decay must be non-negative");
    }
    if (head_length() == 0) {
        throw ContractError(fmt::format("input_length {} too short for three pooling stages", input_length));
    }
}

std::size_t DiscriminatorConfig::head_length() const {
    std::size_t len = input_length;
    for (std::size_t i = 0; i < 3; ++i) {
        if (len < pool) {
            return 0;
        }
        len = (len - pool) / pool + 1;
    }
    return len;
}

nlohmann::json DiscriminatorConfig::to_json() const {
    return {{"conv_channels", conv_channels}, {"kernel", kernel},         {"pool", pool},
            {"dropout", dropout},             {"lr", lr},                 {"weight_decay", weight_decay},
            {"batch_size", batch_size},       {"epochs", epochs},         {"input_length", input_length},
            {"seed", seed}};
}

DiscriminatorConfig DiscriminatorConfig::from_json(const nlohmann::json& j) {
    DiscriminatorConfig c;
    c.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
    c.kernel = j.at("kernel").get<std::size_t>();
    c.pool = j.at("pool").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.lr = j.at("lr").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.input_length = j.at("input_length").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

// ---- model -------------------------------------------------------------------------------------

std::vector<double> standardize(const std::vector<double>& series) {
    if (series.empty()) {
        return {};
    }
    const double n = static_cast<double>(series.size());
    const double mean = std::accumulate(series.begin(), series.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : series) {
        ss += (v - mean) * (v - mean);
    }
    const double sd = std::sqrt(ss / n);
    std::vector<double> out(series.size(), 0.0);
    if (sd > 1e-12 * std::max(1.0, std::abs(mean))) {
        for (std::size_t i = 0; i < series.size(); ++i) {
            out[i] = (series[i] - mean) / sd;
        }
    }
    return out;
}

Discriminator::Discriminator(DiscriminatorConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(seed);
    ad::Conv1dOptions opts;
    opts.causal = true;
    std::size_t in = 1;
    for (std::size_t i = 0; i < 3; ++i) {
        convs_.emplace_back(in, config_.conv_channels[i], config_.kernel, opts, rng);
        convs_.back().append_parameters(fmt::format("conv{}", i), params_);
        in = config_.conv_channels[i];
    }
    head_ = nn::Linear(in * config_.head_length(), 1, rng);
    head_.append_parameters("head", params_);
}

Tensor Discriminator::logits(const Tensor& x, std::mt19937_64* rng) const {
    if (x.rank() != 2 || x.dim(1) != config_.input_length) {
        throw DimensionError(fmt::format("discriminator expects [B, {}], got {}", config_.input_length,
                                         ad::to_string(x.shape())));
    }
    const auto batch = x.dim(0);
    Tensor h = ad::reshape(x, {batch, 1, config_.input_length});
    for (const auto& conv : convs_) {
        h = ad::maxpool1d(ad::relu(conv(h)), config_.pool);
    }
    h = ad::reshape(h, {batch, h.numel() / batch});
    if (rng != nullptr && config_.dropout > 0.0) {
        std::bernoulli_distribution keep(1.0 - config_.dropout);
        const double inv = 1.0 / (1.0 - config_.dropout);
        std::vector<double> mask(h.numel());
        for (auto& m : mask) {
            m = keep(*rng) ? inv : 0.0;
        }
        h = h * Tensor::from(h.shape(), std::move(mask));
    }
    return ad::reshape(head_(h), {batch});
}

namespace {

Tensor stack_standardized(const std::vector<const std::vector<double>*>& rows, std::size_t length) {
    std::vector<double> flat;
    flat.reserve(rows.size() * length);
    for (const auto* r : rows) {
        if (r->size() != length) {
            throw ContractError(fmt::format("discriminator input must have length {}, got {}", length, r->size()));
        }
        auto s = standardize(*r);
        flat.insert(flat.end(), s.begin(), s.end());
    }
    return Tensor::from({rows.size(), length}, std::move(flat));
}

double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

} // namespace

double Discriminator::classify(const std::vector<double>& series) const {
    ad::NoGradGuard guard;
    const Tensor z = logits(stack_standardized({&series}, config_.input_length));
    return sigmoid(z[0]);
}

dataio::Checkpoint Discriminator::to_checkpoint() const {
    dataio::Checkpoint c;
    c.architecture = {{"model", "cnn-discriminator"}, {"config", config_.to_json()}};
    for (const auto& [name, p] : params_) {
        auto v = p.values();
        c.arrays.push_back({name, p.shape(), {v.begin(), v.end()}});
    }
    return c;
}

Discriminator Discriminator::from_checkpoint(const dataio::Checkpoint& checkpoint) {
    if (checkpoint.architecture.value("model", "") != "cnn-discriminator") {
        throw ContractError("checkpoint does not hold a cnn-discriminator");
    }
    Discriminator d(DiscriminatorConfig::from_json(checkpoint.architecture.at("config")), 0);
    for (const auto& [name, p] : d.params_) {
        const auto& a = checkpoint.get(name);
        if (a.shape != p.shape()) {
            throw DimensionError(fmt::format("checkpoint array '{}' has shape {}, model expects {}", name,
                                             ad::to_string(a.shape), ad::to_string(p.shape())));
        }
        Tensor t = p;
        std::copy(a.values.begin(), a.values.end(), t.mutable_values().begin());
    }
    return d;
}

Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& labels) {
    if (logits.rank() != 1 || logits.dim(0) != labels.size()) {
        throw DimensionError("bce_with_logits: logits must be [B] matching labels");
    }
    const Tensor y = Tensor::vector(labels);
    const Tensor per = ad::relu(logits) - logits * y + ad::log(1.0 + ad::exp(-ad::abs(logits)));
    return ad::mean(per);
}

// ---- training ----------------------------------------------------------------------------------

DiscriminatorResult train_discriminator(const std::vector<std::vector<double>>& real,
                                        const std::vector<std::vector<double>>& attacked,
                                        const DiscriminatorConfig& config) {
    config.validate();
    if (real.empty() || attacked.empty()) {
        throw ContractError("discriminator training needs both real and attacked series");
    }
    DiscriminatorResult result{Discriminator(config, config.seed), {}, {}};
    const double ratio = static_cast<double>(std::max(real.size(), attacked.size())) /
                         static_cast<double>(std::min(real.size(), attacked.size()));
    if (ratio > 10.0) {
        result.warnings.push_back(
            fmt::format("class imbalance {}:{} exceeds 10:1", real.size(), attacked.size()));
    }

    std::vector<const std::vector<double>*> rows;
    std::vector<double> labels;
    for (const auto& r : real) {
        rows.push_back(&r);
        labels.push_back(0.0);
    }
    for (const auto& a : attacked) {
        rows.push_back(&a);
        labels.push_back(1.0);
    }
    const Tensor all = stack_standardized(rows, config.input_length);
    const auto n = rows.size();
    const auto len = config.input_length;

    auto& model = result.model;
    nn::Adam opt(config.lr, 0.9, 0.999, config.weight_decay);
    std::vector<std::size_t> order(n);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::mt19937_64 rng(config.seed * 1000003ULL + epoch);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (std::size_t b = 0; b < n; b += config.batch_size) {
            const auto e = std::min(n, b + config.batch_size);
            std::vector<std::size_t> idx;
            std::vector<double> y;
            for (std::size_t k = b; k < e; ++k) {
                for (std::size_t t = 0; t < len; ++t) {
                    idx.push_back(order[k] * len + t);
                }
                y.push_back(labels[order[k]]);
            }
            const Tensor x = Tensor::from({e - b, len}, [&] {
                std::vector<double> v(idx.size());
                auto src = all.values();
                for (std::size_t i = 0; i < idx.size(); ++i) {
                    v[i] = src[idx[i]];
                }
                return v;
            }());
            const Tensor loss = bce_with_logits(model.logits(x, &rng), y);
            if (!std::isfinite(loss.item())) {
                throw NumericalError(fmt::format("discriminator loss is {} at epoch {}", loss.item(), epoch));
            }
            nn::zero_grad(model.parameters());
            loss.backward();
            opt.step(model.parameters());
            total += loss.item() * static_cast<double>(e - b);
        }
        std::size_t correct = 0;
        {
            ad::NoGradGuard guard;
            const Tensor z = model.logits(all);
            for (std::size_t i = 0; i < n; ++i) {
                correct += ((z[i] >= 0.0) ? 1.0 : 0.0) == labels[i];
            }
        }
        result.curve.push_back({epoch, total / static_cast<double>(n),
                                100.0 * static_cast<double>(correct) / static_cast<double>(n)});
    }
    return result;
}

metrics::ConfusionReport evaluate_discriminator(const Discriminator& model,
                                                const std::vector<std::vector<double>>& real,
                                                const std::vector<std::vector<double>>& attacked) {
    std::vector<int> labels;
    std::vector<int> preds;
    for (const auto& r : real) {
        labels.push_back(0);
        preds.push_back(model.predict(r));
    }
    for (const auto& a : attacked) {
        labels.push_back(1);
        preds.push_back(model.predict(a));
    }
    return metrics::confusion(labels, preds);
}

std::string format_curve(const std::vector<DiscriminatorEpoch>& curve) {
    std::string out = "epoch,loss,accuracy\n";
    for (const auto& e : curve) {
        out += fmt::format("{},{},{}\n", e.epoch, dataio::format_double(e.loss), dataio::format_double(e.accuracy));
    }
    return out;
}

// ---- manifest ----------------------------------------------------------------------------------

namespace {

struct Sha256 {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    Sha256() {
        if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
            throw Error("SHA-256 initialisation failed");
        }
    }
    ~Sha256() { EVP_MD_CTX_free(ctx); }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const char* data, std::size_t n) {
        if (EVP_DigestUpdate(ctx, data, n) != 1) {
            throw Error("SHA-256 update failed");
        }
    }
    std::string hex() {
        unsigned char md[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx, md, &len) != 1) {
            throw Error("SHA-256 finalisation failed");
        }
        std::string out;
        out.reserve(2 * len);
        for (unsigned int i = 0; i < len; ++i) {
            out += fmt::format("{:02x}", md[i]);
        }
        return out;
    }
};

std::string entry_lines(const std::vector<ManifestEntry>& entries) {
    std::string out;
    for (const auto& e : entries) {
        out += e.path;
        out += '\t';
        out += e.digest;
        out += '\n';
    }
    return out;
}

std::vector<std::pair<std::string, fs::path>> list_files(const fs::path& dir, const std::vector<std::string>& exclude) {
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) {
        throw IoError(fmt::format("{}: not a readable directory", dir.string()));
    }
    const std::set<std::string> skip(exclude.begin(), exclude.end());
    std::vector<std::pair<std::string, fs::path>> files;
    fs::recursive_directory_iterator it(dir, ec);
    if (ec) {
        throw IoError(fmt::format("{}: {}", dir.string(), ec.message()));
    }
    for (; it != fs::recursive_directory_iterator(); it.increment(ec)) {
        if (ec) {
            throw IoError(fmt::format("{}: {}", dir.string(), ec.message()));
        }
        if (!it->is_regular_file()) {
            continue;
        }
        auto rel = fs::relative(it->path(), dir).generic_string();
        if (rel.find_first_of("\t\n") != std::string::npos) {
            throw ContractError(fmt::format("file name with tab or newline cannot be listed: {}", rel));
        }
        if (!skip.contains(rel)) {
            files.emplace_back(std::move(rel), it->path());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

} // namespace

std::string sha256_hex(std::string_view bytes) {
    Sha256 h;
    h.update(bytes.data(), bytes.size());
    return h.hex();
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError(fmt::format("{}: cannot open for reading", path.string()));
    }
    Sha256 h;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    if (in.bad()) {
        throw IoError(fmt::format("{}: read failed", path.string()));
    }
    return h.hex();
}

std::string root_digest(const std::vector<ManifestEntry>& entries) {
    return sha256_hex(entry_lines(entries));
}

IntegrityManifest build_manifest(const fs::path& dir, const std::vector<std::string>& exclude) {
    IntegrityManifest m;
    for (const auto& [rel, full] : list_files(dir, exclude)) {
        m.entries.push_back({rel, sha256_file(full)});
    }
    m.root_digest = root_digest(m.entries);
    return m;
}

std::string format_manifest(const IntegrityManifest& manifest) {
    return entry_lines(manifest.entries) + "root\t" + manifest.root_digest + "\n";
}

IntegrityManifest parse_manifest(std::string_view text) {
    std::vector<std::string> lines;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) {
            nl = text.size();
        }
        lines.emplace_back(text.substr(pos, nl - pos));
        pos = nl + 1;
    }
    if (lines.empty() || !lines.back().starts_with("root\t")) {
        throw ParseError("manifest: last line must be 'root<TAB>digest'");
    }
    IntegrityManifest m;
    m.root_digest = lines.back().substr(5);
    lines.pop_back();
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto tab = lines[i].rfind('\t');
        if (tab == std::string::npos || tab == 0) {
            throw ParseError(fmt::format("manifest:{}: expected 'path<TAB>digest'", i + 1));
        }
        ManifestEntry e{lines[i].substr(0, tab), lines[i].substr(tab + 1)};
        if (!m.entries.empty() && !(m.entries.back().path < e.path)) {
            throw ParseError(fmt::format("manifest:{}: paths not strictly sorted", i + 1));
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

Verification verify_manifest(const fs::path& dir, const IntegrityManifest& manifest,
                             const std::vector<std::string>& exclude) {
    Verification v;
    v.manifest_intact = root_digest(manifest.entries) == manifest.root_digest;
    const auto current = build_manifest(dir, exclude);
    std::map<std::string, std::string> want;
    for (const auto& e : manifest.entries) {
        want.emplace(e.path, e.digest);
    }
    for (const auto& e : current.entries) {
        auto it = want.find(e.path);
        if (it == want.end()) {
            v.added.push_back(e.path);
        } else {
            if (it->second != e.digest) {
                v.modified.push_back(e.path);
            }
            want.erase(it);
        }
    }
    for (const auto& [path, digest] : want) {
        v.removed.push_back(path);
    }
    return v;
}

std::string format_verification(const Verification& v) {
    if (v.ok()) {
        return "PASS\n";
    }
    std::string out = "FAIL\n";
    if (!v.manifest_intact) {
        out += "manifest\troot digest does not match its entries\n";
    }
    for (const auto& p : v.added) {
        out += "added\t" + p + "\n";
    }
    for (const auto& p : v.removed) {
        out += "removed\t" + p + "\n";
    }
    for (const auto& p : v.modified) {
        out += "modified\t" + p + "\n";
    }
    return out;
}

} // namespace slopestrike::defense
