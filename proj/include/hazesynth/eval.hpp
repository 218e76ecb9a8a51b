#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "hazesynth/image.hpp"
#include "hazesynth/networks.hpp"
#include "hazesynth/training.hpp"

namespace hazesynth {

// Depth-driven haze synthesis with random scattering coefficient and a gray airlight.
struct BaselineConfig {
    std::array<double, 2> beta_range{0.6, 1.8};
    std::array<double, 2> airlight_range{0.7, 1.0};
    uint64_t seed = 0;
    // Multiplier applied to 8/16-bit depth files after normalizing them to [0, 1].
    double depth_scale = 1.0;

    void validate() const;
};

struct BaselineResult {
    Image image;
    double beta = 0.0;
    double airlight = 0.0;
};

// β ~ U(beta_range), A ~ U(airlight_range) on all channels, t = e^(−βd), then
// the scattering model. Draws β before A from `rng`.
BaselineResult baseline_render(const Image& clean, const DepthMap& depth, const BaselineConfig& cfg,
                               Rng& rng);

// Maps an image to a fixed-length feature vector for set statistics.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::string id() const = 0;
    virtual int64_t dim() const = 0;
    virtual Eigen::VectorXd features(const Image& img) const = 0;
};

// Spatially averaged activations of one backbone tap.
class BackbonePooledExtractor final : public FeatureExtractor {
public:
    BackbonePooledExtractor(FeatureBackbone backbone, std::string tap);
    std::string id() const override;
    int64_t dim() const override;
    Eigen::VectorXd features(const Image& img) const override;

private:
    FeatureBackbone backbone_;
    std::string tap_;
};

// 16 hand-built haze statistics: per-channel mean and standard deviation,
// dark channel mean and spread, bright channel mean, saturation mean,
// luminance quantiles (10/50/90 %), mean gradient magnitude and the
// blue-minus-red and green-minus-red chroma offsets. Cheap and deterministic,
// for desk-scale comparisons.
class HazeStatsExtractor final : public FeatureExtractor {
public:
    std::string id() const override { return "haze-stats-v1"; }
    int64_t dim() const override { return 16; }
    Eigen::VectorXd features(const Image& img) const override;
};

// "haze-stats" or "vgg16:<tap>" (e.g. "vgg16:relu3_3"); the backbone is only
// consulted for the latter.
std::unique_ptr<FeatureExtractor> make_extractor(const std::string& spec, const FeatureBackbone& backbone);

struct SetStatistics {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;  // unbiased (n − 1)
    int64_t count = 0;
};

// Running sums so partial results from independent workers merge exactly.
class StatisticsAccumulator {
public:
    explicit StatisticsAccumulator(int64_t dim);
    void add(const Eigen::VectorXd& v);
    void merge(const StatisticsAccumulator& other);
    // Throws DataError for fewer than two samples.
    SetStatistics finalize() const;
    int64_t count() const noexcept { return count_; }

private:
    Eigen::VectorXd sum_;
    Eigen::MatrixXd outer_;
    int64_t count_ = 0;
};

SetStatistics compute_set_statistics(std::span<const Image> images, const FeatureExtractor& extractor);
// Rows are samples.
SetStatistics statistics_from_samples(const Eigen::MatrixXd& samples);

// ‖μ1 − μ2‖² + Tr(Σ1 + Σ2 − 2(Σ1Σ2)^½); the root comes from the eigenvalues of
// Σ1^½ Σ2 Σ1^½ with negative eigenvalues clamped to 0.
double fid(const SetStatistics& a, const SetStatistics& b);

// 10·log10(peak² / MSE); +infinity when the images are identical.
double psnr(const Image& a, const Image& b, double peak = 1.0);
double psnr_from_mse(double mse, double peak = 1.0);

struct EvalReport {
    double fid = 0.0;
    int64_t n_rendered = 0;
    int64_t n_reference = 0;
    std::string extractor_id;

    nlohmann::json to_json() const;
    std::string table() const;
};

EvalReport evaluate_sets(const std::filesystem::path& rendered_dir,
                         const std::filesystem::path& reference_dir, const FeatureExtractor& extractor);

} // namespace hazesynth
