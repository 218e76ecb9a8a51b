#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include <torch/torch.h>

namespace hazesynth {

// C×H×W float32 tensor, C ∈ {1, 3}, every element in [0, 1].
class Image {
public:
    Image() = default;
    // Throws InvalidArgument when the tensor breaks the invariants above.
    explicit Image(torch::Tensor data);

    const torch::Tensor& tensor() const noexcept { return data_; }
    int64_t channels() const { return data_.size(0); }
    int64_t height() const { return data_.size(1); }
    int64_t width() const { return data_.size(2); }
    bool empty() const noexcept { return !data_.defined(); }

private:
    torch::Tensor data_;
};

// 1×H×W, every element in (0, 1].
class TransmissionMap {
public:
    TransmissionMap() = default;
    explicit TransmissionMap(torch::Tensor data);

    const torch::Tensor& tensor() const noexcept { return data_; }
    int64_t height() const { return data_.size(1); }
    int64_t width() const { return data_.size(2); }

private:
    torch::Tensor data_;
};

// 1×H×W, every element >= 0, in relative depth units.
class DepthMap {
public:
    DepthMap() = default;
    explicit DepthMap(torch::Tensor data);

    const torch::Tensor& tensor() const noexcept { return data_; }
    int64_t height() const { return data_.size(1); }
    int64_t width() const { return data_.size(2); }
    bool empty() const noexcept { return !data_.defined(); }

private:
    torch::Tensor data_;
};

// Global atmospheric light, one value per RGB channel in [0, 1].
class Airlight {
public:
    Airlight(float r, float g, float b);
    explicit Airlight(std::array<float, 3> rgb);

    const std::array<float, 3>& rgb() const noexcept { return rgb_; }
    float operator[](std::size_t c) const { return rgb_[c]; }
    // 3-element float32 tensor.
    torch::Tensor tensor() const;

private:
    std::array<float, 3> rgb_;
};

// Decodes PNG/JPEG into a 3×H×W image. Grayscale sources are replicated,
// alpha is dropped, 8-bit values are divided by 255 (16-bit by 65535).
Image load_image(const std::filesystem::path& path);

// Quantizes with round(v·255) clamped to [0, 255]; the format follows the extension.
void save_image(const Image& img, const std::filesystem::path& path);
void save_image(const TransmissionMap& t, const std::filesystem::path& path);

// 8/16-bit depth images are normalized to [0, 1] and multiplied by `scale`;
// 32-bit float images are taken as-is.
DepthMap load_depth(const std::filesystem::path& path, double scale = 1.0);

Image to_grayscale(const Image& img);
Image resize_bilinear(const Image& img, int64_t height, int64_t width);

TransmissionMap transmission_from_depth(const DepthMap& depth, double beta);
TransmissionMap apply_density(const TransmissionMap& t, double alpha);
Image render_haze(const Image& clean, const TransmissionMap& t, const Airlight& airlight);

// Unchecked, differentiable tensor forms of the operations above. They accept
// either a single C×H×W sample or a B×C×H×W batch.
namespace ops {

// 0.299 R + 0.587 G + 0.114 B along the channel axis; 1-channel input passes through.
torch::Tensor luminance(const torch::Tensor& rgb);

// t^alpha elementwise.
torch::Tensor density(const torch::Tensor& t, double alpha);

// sigmoid(logits)^alpha computed as exp(alpha·logsigmoid(logits)). Unlike
// density(), the gradient stays finite where the sigmoid underflows to 0.
torch::Tensor density_from_logits(const torch::Tensor& logits, double alpha);

// t·x + (1 − t)·A. `t` has one channel and broadcasts over RGB; `airlight`
// is [3] for a single sample or [B, 3] for a batch.
torch::Tensor render(const torch::Tensor& clean, const torch::Tensor& t,
                     const torch::Tensor& airlight);

} // namespace ops

} // namespace hazesynth
