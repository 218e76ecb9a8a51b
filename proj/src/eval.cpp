#include "hazesynth/eval.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "hazesynth/errors.hpp"

namespace hazesynth {

void BaselineConfig::validate() const {
    if (!(beta_range[0] > 0.0) || beta_range[0] > beta_range[1])
        throw ConfigError("beta_range", "beta_range must satisfy 0 < low <= high");
    if (!(airlight_range[0] >= 0.0) || airlight_range[0] > airlight_range[1] || airlight_range[1] > 1.0)
        throw ConfigError("airlight_range", "airlight_range must satisfy 0 <= low <= high <= 1");
    if (!(depth_scale > 0.0))
        throw ConfigError("depth_scale", "depth_scale must be > 0");
}

namespace {

double draw(const std::array<double, 2>& r, Rng& rng) {
    if (r[0] == r[1])
        return r[0];
    return std::uniform_real_distribution<double>(r[0], r[1])(rng);
}

} // namespace

BaselineResult baseline_render(const Image& clean, const DepthMap& depth, const BaselineConfig& cfg,
                               Rng& rng) {
    cfg.validate();
    if (depth.empty())
        throw InvalidArgument("baseline_render: a depth map is required");
    if (clean.height() != depth.height() || clean.width() != depth.width())
        throw InvalidArgument("baseline_render: depth and image sizes differ");
    BaselineResult r;
    r.beta = draw(cfg.beta_range, rng);
    r.airlight = draw(cfg.airlight_range, rng);
    const auto a = static_cast<float>(r.airlight);
    r.image = render_haze(clean, transmission_from_depth(depth, r.beta), Airlight(a, a, a));
    return r;
}

// ---------------------------------------------------------------------------
// Extractors

BackbonePooledExtractor::BackbonePooledExtractor(FeatureBackbone backbone, std::string tap)
    : backbone_(std::move(backbone)), tap_(std::move(tap)) {
    if (!backbone_.loaded())
        throw StateError("BackbonePooledExtractor: backbone is not loaded");
    FeatureBackbone::channels(tap_);
}

std::string BackbonePooledExtractor::id() const {
    return fmt::format("{}:{}:avgpool", backbone_.id(), tap_);
}

int64_t BackbonePooledExtractor::dim() const {
    return FeatureBackbone::channels(tap_);
}

Eigen::VectorXd BackbonePooledExtractor::features(const Image& img) const {
    torch::NoGradGuard no_grad;
    auto x = img.channels() == 3 ? img.tensor() : img.tensor().expand({3, -1, -1});
    auto f = backbone_.extract(x, {tap_}).front().mean({0, 2, 3}).to(torch::kFloat64).contiguous();
    return Eigen::Map<const Eigen::VectorXd>(f.data_ptr<double>(), f.numel());
}

Eigen::VectorXd HazeStatsExtractor::features(const Image& img) const {
    torch::NoGradGuard no_grad;
    auto x = (img.channels() == 3 ? img.tensor() : img.tensor().expand({3, -1, -1})).to(torch::kFloat64);
    auto flat = x.flatten(1);
    auto mean = flat.mean(1);
    auto stdv = flat.std(1, /*unbiased=*/false);
    auto dark = std::get<0>(x.min(0));
    auto bright = std::get<0>(x.max(0));
    auto sat = (bright - dark) / bright.clamp_min(1e-6);
    auto lum = ops::luminance(x).flatten();
    auto q = torch::quantile(lum, torch::tensor({0.1, 0.5, 0.9}, torch::kFloat64));
    auto l2 = ops::luminance(x).squeeze(0);
    double grad = 0.0;
    if (l2.size(0) > 1)
        grad += l2.diff(1, 0).abs().mean().item<double>();
    if (l2.size(1) > 1)
        grad += l2.diff(1, 1).abs().mean().item<double>();

    Eigen::VectorXd v(16);
    v << mean[0].item<double>(), mean[1].item<double>(), mean[2].item<double>(),
        stdv[0].item<double>(), stdv[1].item<double>(), stdv[2].item<double>(),
        dark.mean().item<double>(), dark.std(false).item<double>(), bright.mean().item<double>(),
        sat.mean().item<double>(), q[0].item<double>(), q[1].item<double>(), q[2].item<double>(), grad,
        (mean[2] - mean[0]).item<double>(), (mean[1] - mean[0]).item<double>();
    return v;
}

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& spec, const FeatureBackbone& backbone) {
    if (spec == "haze-stats")
        return std::make_unique<HazeStatsExtractor>();
    const std::string prefix = "vgg16:";
    if (spec.rfind(prefix, 0) == 0)
        return std::make_unique<BackbonePooledExtractor>(backbone, spec.substr(prefix.size()));
    throw ConfigError("fid_extractor", fmt::format("unknown feature extractor '{}'", spec));
}

// ---------------------------------------------------------------------------
// Statistics and metrics

StatisticsAccumulator::StatisticsAccumulator(int64_t dim)
    : sum_(Eigen::VectorXd::Zero(dim)), outer_(Eigen::MatrixXd::Zero(dim, dim)) {}

void StatisticsAccumulator::add(const Eigen::VectorXd& v) {
    if (v.size() != sum_.size())
        throw InvalidArgument("StatisticsAccumulator: feature dimension mismatch");
    sum_ += v;
    outer_.selfadjointView<Eigen::Lower>().rankUpdate(v);
    ++count_;
}

void StatisticsAccumulator::merge(const StatisticsAccumulator& other) {
    if (other.sum_.size() != sum_.size())
        throw InvalidArgument("StatisticsAccumulator: feature dimension mismatch");
    sum_ += other.sum_;
    outer_ += other.outer_;
    count_ += other.count_;
}

SetStatistics StatisticsAccumulator::finalize() const {
    if (count_ < 2)
        throw DataError(fmt::format("set statistics need at least 2 samples, got {}", count_));
    SetStatistics s;
    s.count = count_;
    const double n = static_cast<double>(count_);
    s.mean = sum_ / n;
    Eigen::MatrixXd outer = outer_.selfadjointView<Eigen::Lower>();
    s.cov = (outer - n * s.mean * s.mean.transpose()) / (n - 1.0);
    s.cov = 0.5 * (s.cov + s.cov.transpose());
    return s;
}

SetStatistics compute_set_statistics(std::span<const Image> images, const FeatureExtractor& extractor) {
    if (images.size() < 2)
        throw DataError(fmt::format("set statistics need at least 2 images, got {}", images.size()));
    StatisticsAccumulator acc(extractor.dim());
    for (const auto& img : images)
        acc.add(extractor.features(img));
    return acc.finalize();
}

SetStatistics statistics_from_samples(const Eigen::MatrixXd& samples) {
    if (samples.rows() < 2)
        throw DataError("set statistics need at least 2 samples");
    SetStatistics s;
    s.count = samples.rows();
    s.mean = samples.colwise().mean().transpose();
    const Eigen::MatrixXd centered = samples.rowwise() - s.mean.transpose();
    s.cov = centered.transpose() * centered / static_cast<double>(samples.rows() - 1);
    return s;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

} // namespace

double fid(const SetStatistics& a, const SetStatistics& b) {
    if (a.mean.size() != b.mean.size() || a.cov.rows() != b.cov.rows() || a.cov.rows() != a.mean.size())
        throw InvalidArgument("fid: statistics dimensions differ");
    const double mean_term = (a.mean - b.mean).squaredNorm();
    const Eigen::MatrixXd root_a = psd_sqrt(a.cov);
    Eigen::MatrixXd inner = root_a * b.cov * root_a;
    inner = 0.5 * (inner + inner.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner, Eigen::EigenvaluesOnly);
    const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    return mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross;
}

double psnr_from_mse(double mse, double peak) {
    if (mse == 0.0)
        return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

double psnr(const Image& a, const Image& b, double peak) {
    if (a.tensor().sizes() != b.tensor().sizes())
        throw InvalidArgument("psnr: shape mismatch");
    const double mse = (a.tensor().to(torch::kFloat64) - b.tensor().to(torch::kFloat64)).pow(2).mean().item<double>();
    return psnr_from_mse(mse, peak);
}

// ---------------------------------------------------------------------------
// Reports

nlohmann::json EvalReport::to_json() const {
    return {{"fid", fid}, {"n_rendered", n_rendered}, {"n_reference", n_reference},
            {"extractor_id", extractor_id}};
}

std::string EvalReport::table() const {
    std::string s;
    s += fmt::format("{:<14}{}\n", "extractor", extractor_id);
    s += fmt::format("{:<14}{}\n", "n_rendered", n_rendered);
    s += fmt::format("{:<14}{}\n", "n_reference", n_reference);
    s += fmt::format("{:<14}{:.6f}\n", "FID", fid);
    return s;
}

namespace {

SetStatistics statistics_of_dir(const std::filesystem::path& dir, const FeatureExtractor& extractor,
                                int64_t& count) {
    const auto paths = list_images(dir);
    if (paths.empty())
        throw DataError(fmt::format("no PNG/JPEG images in {}", dir.string()));
    StatisticsAccumulator acc(extractor.dim());
    for (const auto& p : paths)
        acc.add(extractor.features(load_image(p)));
    count = acc.count();
    return acc.finalize();
}

} // namespace

EvalReport evaluate_sets(const std::filesystem::path& rendered_dir,
                         const std::filesystem::path& reference_dir, const FeatureExtractor& extractor) {
    EvalReport r;
    r.extractor_id = extractor.id();
    const auto rendered = statistics_of_dir(rendered_dir, extractor, r.n_rendered);
    const auto reference = statistics_of_dir(reference_dir, extractor, r.n_reference);
    r.fid = fid(rendered, reference);
    return r;
}

} // namespace hazesynth
