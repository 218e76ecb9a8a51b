#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace hazesynth {

// Seven 3×3 stride-1 convolutions with LeakyReLU(0.2) and two residual skips
// (outputs of layer 2 → 4 and 4 → 6). Spatial size is preserved end to end.
class ConvTrunkImpl : public torch::nn::Module {
public:
    ConvTrunkImpl(int64_t in_channels, int64_t width, int64_t out_channels);
    torch::Tensor forward(const torch::Tensor& x);

private:
    std::vector<torch::nn::Conv2d> convs_;
};
TORCH_MODULE(ConvTrunk);

// Transmission-estimation network: B×3×H×W → B×1×H×W in (0, 1).
class TransmissionNetImpl : public torch::nn::Module {
public:
    static constexpr int64_t kMinSide = 16;

    explicit TransmissionNetImpl(int64_t width = 64);
    torch::Tensor forward(const torch::Tensor& x);
    // Pre-sigmoid output; forward(x) == sigmoid(logits(x)).
    torch::Tensor logits(const torch::Tensor& x);

private:
    ConvTrunk trunk_{nullptr};
};
TORCH_MODULE(TransmissionNet);

// Airlight-transfer network: same trunk with three output channels, then a
// global average pool and a sigmoid. B×3×H×W → B×3 in (0, 1).
class AirlightNetImpl : public torch::nn::Module {
public:
    static constexpr int64_t kMinSide = 16;

    explicit AirlightNetImpl(int64_t width = 64);
    torch::Tensor forward(const torch::Tensor& y);

private:
    ConvTrunk trunk_{nullptr};
};
TORCH_MODULE(AirlightNet);

// Patch discriminator: four stride-2 4×4 conv stages (64, 128, 256, 512
// channels, LeakyReLU 0.2), a 3×3 single-channel conv and a sigmoid.
// B×3×H×W → B×1×(H/16)×(W/16) scores in (0, 1).
class PatchDiscriminatorImpl : public torch::nn::Module {
public:
    static constexpr int64_t kMinSide = 64;

    PatchDiscriminatorImpl();
    torch::Tensor forward(const torch::Tensor& img);

private:
    torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

// Kaiming fan-in normal init (LeakyReLU 0.2 gain) for every conv weight,
// zero biases. Same seed gives identical parameters.
void init_parameters(torch::nn::Module& module, uint64_t seed);

// VGG16 convolutional body (conv1_1 … relu5_3). Pooling uses ceil mode so
// maps down to 1×1 remain valid; on even sizes it matches the classic layout.
class Vgg16FeaturesImpl : public torch::nn::Module {
public:
    Vgg16FeaturesImpl();

    // Runs until the deepest requested tap. `taps` are layer indices into
    // `layer_names()`; results come back in request order.
    std::vector<torch::Tensor> forward(const torch::Tensor& x, const std::vector<std::size_t>& taps);

    static const std::vector<std::string>& layer_names();

private:
    std::vector<torch::nn::Conv2d> convs_;
};
TORCH_MODULE(Vgg16Features);

// Frozen perceptual backbone with named taps (relu1_1 … relu5_3).
// A default-constructed backbone is "not loaded" and refuses to run.
class FeatureBackbone {
public:
    FeatureBackbone() = default;

    // Named-array weights file whose arrays are `convX_Y.weight` / `convX_Y.bias`.
    static FeatureBackbone from_weights(const std::filesystem::path& path);
    // Seed-deterministic Kaiming initialization, used when no weights file is available.
    static FeatureBackbone random(uint64_t seed);

    bool loaded() const noexcept { return static_cast<bool>(net_); }
    // Identifies the weights, e.g. "vgg16:file:<name>" or "vgg16:random:<seed>".
    const std::string& id() const noexcept { return id_; }

    // Images in [0, 1] (B×3×H×W or 3×H×W); ImageNet mean/std normalization is
    // applied internally. Unknown tap names throw InvalidArgument.
    std::vector<torch::Tensor> extract(const torch::Tensor& img,
                                       const std::vector<std::string>& taps) const;

    // Copy in another floating dtype (float64 for gradient checks).
    FeatureBackbone to(torch::ScalarType dtype) const;

    // Channel count at a tap.
    static int64_t channels(const std::string& tap);

    Vgg16Features module() const { return net_; }

private:
    Vgg16Features net_{nullptr};
    std::string id_;
};

} // namespace hazesynth
