#pragma once

// Adversarial-input discriminator and the directory integrity manifest.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "slopestrike/autodiff.hpp"
#include "slopestrike/dataio.hpp"
#include "slopestrike/metrics.hpp"
#include "slopestrike/nn.hpp"

namespace slopestrike::defense {

using ad::Tensor;

struct DiscriminatorConfig {
    std::vector<std::size_t> conv_channels = {16, 32, 16};
    std::size_t kernel = 5;
    std::size_t pool = 2;
    double dropout = 0.2;
    double lr = 1e-4;
    double weight_decay = 1e-5;
    std::size_t batch_size = 32;
    std::size_t epochs = 200;
    std::size_t input_length = 300;
    std::uint64_t seed = 0;

    void validate() const;
    /// Length of the feature map handed to the linear head.
    std::size_t head_length() const;
    nlohmann::json to_json() const;
    static DiscriminatorConfig from_json(const nlohmann::json& j);
};

/// Zero mean, unit population std; a constant series maps to zeros.
std::vector<double> standardize(const std::vector<double>& series);

/// Three causal conv layers (ReLU, max-pool) then dropout and a linear head.
class Discriminator {
public:
    Discriminator(DiscriminatorConfig config, std::uint64_t seed);

    const DiscriminatorConfig& config() const { return config_; }
    const nn::ParameterList& parameters() const { return params_; }

    /// x [B, L] already standardized; returns logits [B]. Dropout is active only
    /// when `rng` is non-null.
    Tensor logits(const Tensor& x, std::mt19937_64* rng = nullptr) const;

    /// Probability that `series` (raw prices, length input_length) was altered.
    double classify(const std::vector<double>& series) const;
    int predict(const std::vector<double>& series) const { return classify(series) >= 0.5 ? 1 : 0; }

    dataio::Checkpoint to_checkpoint() const;
    static Discriminator from_checkpoint(const dataio::Checkpoint& checkpoint);

private:
    DiscriminatorConfig config_;
    std::vector<nn::Conv1d> convs_;
    nn::Linear head_;
    nn::ParameterList params_;
};

/// mean over the batch of max(z,0) - z*y + log(1 + exp(-|z|)).
Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& labels);

struct DiscriminatorEpoch {
    std::size_t epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;  // percent, training set, eval mode
};

struct DiscriminatorResult {
    Discriminator model;
    std::vector<DiscriminatorEpoch> curve;
    std::vector<std::string> warnings;
};

/// Label 0 for `real`, 1 for `attacked`. Series are raw price windows.
DiscriminatorResult train_discriminator(const std::vector<std::vector<double>>& real,
                                        const std::vector<std::vector<double>>& attacked,
                                        const DiscriminatorConfig& config);

metrics::ConfusionReport evaluate_discriminator(const Discriminator& model,
                                                const std::vector<std::vector<double>>& real,
                                                const std::vector<std::vector<double>>& attacked);

std::string format_curve(const std::vector<DiscriminatorEpoch>& curve);

// ---- integrity manifest ---------------------------------------------------------

struct ManifestEntry {
    std::string path;    // relative, '/'-separated
    std::string digest;  // lowercase hex SHA-256
    bool operator==(const ManifestEntry&) const = default;
};

struct IntegrityManifest {
    std::vector<ManifestEntry> entries;  // sorted by path
    std::string root_digest;
};

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Root digest over the serialized entry lines.
std::string root_digest(const std::vector<ManifestEntry>& entries);

/// Hashes every regular file under `dir`. Relative paths listed in `exclude`
/// are skipped.
IntegrityManifest build_manifest(const std::filesystem::path& dir, const std::vector<std::string>& exclude = {});

/// `path\tdigest` per entry, then `root\tdigest`.
std::string format_manifest(const IntegrityManifest& manifest);
IntegrityManifest parse_manifest(std::string_view text);

struct Verification {
    bool manifest_intact = true;  // stored root matches stored entries
    std::vector<std::string> added;
    std::vector<std::string> removed;
    std::vector<std::string> modified;

    bool ok() const { return manifest_intact && added.empty() && removed.empty() && modified.empty(); }
};

Verification verify_manifest(const std::filesystem::path& dir, const IntegrityManifest& manifest,
                             const std::vector<std::string>& exclude = {});

std::string format_verification(const Verification& v);

} // namespace slopestrike::defense
