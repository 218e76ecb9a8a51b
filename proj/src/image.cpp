#include "hazesynth/image.hpp"

#include <cmath>
#include <string>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "hazesynth/errors.hpp"

namespace hazesynth {

namespace {

void require_chw(const torch::Tensor& t, const char* what) {
    if (!t.defined() || t.dim() != 3)
        throw InvalidArgument(fmt::format("{}: expected a C×H×W tensor", what));
    if (t.size(1) < 1 || t.size(2) < 1)
        throw InvalidArgument(fmt::format("{}: height and width must be >= 1", what));
    if (!t.is_floating_point())
        throw InvalidArgument(fmt::format("{}: expected a floating-point tensor", what));
}

void require_same_hw(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.size(-1) != b.size(-1) || a.size(-2) != b.size(-2))
        throw InvalidArgument(fmt::format("{}: spatial shapes differ ({}x{} vs {}x{})", what,
                                          a.size(-2), a.size(-1), b.size(-2), b.size(-1)));
}

// Mat (any depth, 1/3/4 channels) → 3×H×W float in [0,1].
torch::Tensor mat_to_rgb_tensor(const cv::Mat& src) {
    double scale = 1.0;
    switch (src.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    case CV_32F: break;
    default: throw FormatError("unsupported image bit depth");
    }
    cv::Mat rgb;
    switch (src.channels()) {
    case 1: cv::cvtColor(src, rgb, cv::COLOR_GRAY2RGB); break;
    case 3: cv::cvtColor(src, rgb, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(src, rgb, cv::COLOR_BGRA2RGB); break;
    default: throw FormatError("unsupported channel count");
    }
    cv::Mat f;
    rgb.convertTo(f, CV_32FC3, scale);
    auto hwc = torch::from_blob(f.data, {f.rows, f.cols, 3}, torch::kFloat32);
    return hwc.permute({2, 0, 1}).contiguous().clamp(0.0, 1.0);
}

} // namespace

Image::Image(torch::Tensor data) : data_(std::move(data)) {
    require_chw(data_, "Image");
    if (data_.size(0) != 1 && data_.size(0) != 3)
        throw InvalidArgument(fmt::format("Image: channels must be 1 or 3, got {}", data_.size(0)));
    if (data_.numel() > 0 && (data_.min().item<double>() < 0.0 || data_.max().item<double>() > 1.0))
        throw InvalidArgument("Image: values must lie in [0, 1]");
}

TransmissionMap::TransmissionMap(torch::Tensor data) : data_(std::move(data)) {
    require_chw(data_, "TransmissionMap");
    if (data_.size(0) != 1)
        throw InvalidArgument("TransmissionMap: expected exactly one channel");
    if (!(data_.min().item<double>() > 0.0) || data_.max().item<double>() > 1.0)
        throw InvalidArgument("TransmissionMap: values must lie in (0, 1]");
}

DepthMap::DepthMap(torch::Tensor data) : data_(std::move(data)) {
    require_chw(data_, "DepthMap");
    if (data_.size(0) != 1)
        throw InvalidArgument("DepthMap: expected exactly one channel");
    if (data_.min().item<double>() < 0.0)
        throw InvalidArgument("DepthMap: depth must be non-negative");
}

Airlight::Airlight(float r, float g, float b) : Airlight(std::array<float, 3>{r, g, b}) {}

Airlight::Airlight(std::array<float, 3> rgb) : rgb_(rgb) {
    for (float v : rgb_)
        if (!(v >= 0.0f && v <= 1.0f))
            throw InvalidArgument(fmt::format("Airlight: component {} outside [0, 1]", v));
}

torch::Tensor Airlight::tensor() const {
    return torch::tensor({rgb_[0], rgb_[1], rgb_[2]}, torch::kFloat32);
}

Image load_image(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec))
        throw NotFoundError(fmt::format("image not found: {}", path.string()));
    cv::Mat src = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (src.empty())
        throw FormatError(fmt::format("cannot decode image: {}", path.string()));
    return Image(mat_to_rgb_tensor(src));
}

namespace {

void write_mat(const torch::Tensor& chw, const std::filesystem::path& path) {
    auto q = (chw.detach().to(torch::kFloat32) * 255.0).round().clamp(0, 255).to(torch::kUInt8);
    auto hwc = q.permute({1, 2, 0}).contiguous();
    const int c = static_cast<int>(hwc.size(2));
    cv::Mat m(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC(c),
              hwc.data_ptr<uint8_t>());
    cv::Mat out;
    if (c == 3)
        cv::cvtColor(m, out, cv::COLOR_RGB2BGR);
    else
        out = m;
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), out);
    } catch (const cv::Exception& e) {
        throw InvalidArgument(fmt::format("cannot encode {}: {}", path.string(), e.what()));
    }
    if (!ok)
        throw Error(fmt::format("failed to write image {}", path.string()));
}

} // namespace

void save_image(const Image& img, const std::filesystem::path& path) {
    write_mat(img.tensor(), path);
}

void save_image(const TransmissionMap& t, const std::filesystem::path& path) {
    write_mat(t.tensor(), path);
}

DepthMap load_depth(const std::filesystem::path& path, double scale) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec))
        throw NotFoundError(fmt::format("depth map not found: {}", path.string()));
    cv::Mat src = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_GRAYSCALE);
    if (src.empty())
        throw FormatError(fmt::format("cannot decode depth map: {}", path.string()));
    double norm = 1.0;
    if (src.depth() == CV_8U)
        norm = scale / 255.0;
    else if (src.depth() == CV_16U)
        norm = scale / 65535.0;
    else if (src.depth() != CV_32F)
        throw FormatError(fmt::format("unsupported depth map bit depth: {}", path.string()));
    cv::Mat f;
    src.convertTo(f, CV_32F, norm);
    auto t = torch::from_blob(f.data, {1, f.rows, f.cols}, torch::kFloat32).clone();
    return DepthMap(t.clamp_min(0.0));
}

Image to_grayscale(const Image& img) {
    if (img.channels() == 1)
        return img;
    return Image(ops::luminance(img.tensor()).clamp(0.0, 1.0));
}

Image resize_bilinear(const Image& img, int64_t height, int64_t width) {
    if (height < 1 || width < 1)
        throw InvalidArgument("resize_bilinear: target size must be positive");
    auto out = torch::nn::functional::interpolate(
        img.tensor().unsqueeze(0),
        torch::nn::functional::InterpolateFuncOptions()
            .size(std::vector<int64_t>{height, width})
            .mode(torch::kBilinear)
            .align_corners(false));
    return Image(out.squeeze(0).clamp(0.0, 1.0));
}

TransmissionMap transmission_from_depth(const DepthMap& depth, double beta) {
    if (!(beta > 0.0) || !std::isfinite(beta))
        throw InvalidArgument(fmt::format("transmission_from_depth: beta must be > 0, got {}", beta));
    auto t = torch::exp(-beta * depth.tensor());
    // exp underflows to 0 for very deep points; keep the (0, 1] invariant.
    return TransmissionMap(t.clamp_min(std::numeric_limits<float>::min()));
}

TransmissionMap apply_density(const TransmissionMap& t, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw InvalidArgument(fmt::format("apply_density: alpha must lie in [0, 1], got {}", alpha));
    return TransmissionMap(ops::density(t.tensor(), alpha));
}

Image render_haze(const Image& clean, const TransmissionMap& t, const Airlight& airlight) {
    if (clean.channels() != 3)
        throw InvalidArgument("render_haze: clean image must have 3 channels");
    require_same_hw(clean.tensor(), t.tensor(), "render_haze");
    auto z = ops::render(clean.tensor(), t.tensor().to(clean.tensor().dtype()),
                         airlight.tensor().to(clean.tensor().dtype()));
    return Image(z.clamp(0.0, 1.0));
}

namespace ops {

torch::Tensor luminance(const torch::Tensor& rgb) {
    const int64_t cdim = rgb.dim() - 3;
    if (rgb.size(cdim) == 1)
        return rgb;
    auto channels = rgb.unbind(cdim);
    return (0.299 * channels[0] + 0.587 * channels[1] + 0.114 * channels[2]).unsqueeze(cdim);
}

torch::Tensor density(const torch::Tensor& t, double alpha) {
    if (alpha == 1.0)
        return t;
    if (alpha == 0.0)
        return torch::ones_like(t) + 0.0 * t;
    return t.pow(alpha);
}

torch::Tensor density_from_logits(const torch::Tensor& logits, double alpha) {
    if (alpha == 0.0)
        return torch::ones_like(logits) + 0.0 * logits;
    return torch::exp(alpha * torch::log_sigmoid(logits));
}

torch::Tensor render(const torch::Tensor& clean, const torch::Tensor& t,
                     const torch::Tensor& airlight) {
    require_same_hw(clean, t, "render");
    torch::Tensor a;
    if (airlight.dim() == 1)
        a = airlight.view({3, 1, 1});
    else
        a = airlight.view({airlight.size(0), 3, 1, 1});
    return t * clean + (1.0 - t) * a;
}

} // namespace ops

} // namespace hazesynth
