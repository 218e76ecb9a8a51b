#include "hazesynth/networks.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "hazesynth/archive.hpp"
#include "hazesynth/errors.hpp"

namespace hazesynth {

namespace {

constexpr double kSlope = 0.2;

torch::nn::Conv2d conv3x3(int64_t in, int64_t out) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(1).padding(1));
}

torch::Tensor lrelu(const torch::Tensor& x) {
    return torch::leaky_relu(x, kSlope);
}

void require_input(const torch::Tensor& x, int64_t min_side, const char* who) {
    if (x.dim() != 4 || x.size(1) != 3)
        throw InvalidArgument(fmt::format("{}: expected a B×3×H×W batch", who));
    if (x.size(2) < min_side || x.size(3) < min_side)
        throw InvalidArgument(fmt::format("{}: input {}x{} is smaller than the minimum side {}",
                                          who, x.size(2), x.size(3), min_side));
}

// (block, conv-count) of VGG16.
constexpr std::array<std::pair<int, int>, 5> kVggBlocks{{{1, 2}, {2, 2}, {3, 3}, {4, 3}, {5, 3}}};
constexpr std::array<int64_t, 5> kVggWidths{64, 128, 256, 512, 512};

const std::array<double, 3> kImagenetMean{0.485, 0.456, 0.406};
const std::array<double, 3> kImagenetStd{0.229, 0.224, 0.225};

} // namespace

ConvTrunkImpl::ConvTrunkImpl(int64_t in_channels, int64_t width, int64_t out_channels) {
    for (int i = 0; i < 7; ++i) {
        const int64_t in = i == 0 ? in_channels : width;
        const int64_t out = i == 6 ? out_channels : width;
        convs_.push_back(register_module(fmt::format("conv{}", i + 1), conv3x3(in, out)));
    }
}

torch::Tensor ConvTrunkImpl::forward(const torch::Tensor& x) {
    auto h1 = lrelu(convs_[0](x));
    auto h2 = lrelu(convs_[1](h1));
    auto h3 = lrelu(convs_[2](h2));
    auto h4 = lrelu(convs_[3](h3)) + h2;
    auto h5 = lrelu(convs_[4](h4));
    auto h6 = lrelu(convs_[5](h5)) + h4;
    return convs_[6](h6);
}

TransmissionNetImpl::TransmissionNetImpl(int64_t width)
    : trunk_(register_module("trunk", ConvTrunk(3, width, 1))) {}

torch::Tensor TransmissionNetImpl::logits(const torch::Tensor& x) {
    require_input(x, kMinSide, "TransmissionNet");
    return trunk_(x);
}

torch::Tensor TransmissionNetImpl::forward(const torch::Tensor& x) {
    return torch::sigmoid(logits(x));
}

AirlightNetImpl::AirlightNetImpl(int64_t width)
    : trunk_(register_module("trunk", ConvTrunk(3, width, 3))) {}

torch::Tensor AirlightNetImpl::forward(const torch::Tensor& y) {
    require_input(y, kMinSide, "AirlightNet");
    auto pooled = torch::adaptive_avg_pool2d(trunk_(y), {1, 1}).flatten(1);
    return torch::sigmoid(pooled);
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl() {
    torch::nn::Sequential seq;
    int64_t in = 3;
    for (int64_t out : {64, 128, 256, 512}) {
        seq->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1)));
        seq->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(kSlope)));
        in = out;
    }
    seq->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 1, 3).stride(1).padding(1)));
    body_ = register_module("body", seq);
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& img) {
    require_input(img, kMinSide, "PatchDiscriminator");
    return torch::sigmoid(body_->forward(img));
}

void init_parameters(torch::nn::Module& module, uint64_t seed) {
    torch::NoGradGuard no_grad;
    auto gen = at::detail::createCPUGenerator(seed);
    const double gain = std::sqrt(2.0 / (1.0 + kSlope * kSlope));
    for (auto& p : module.named_parameters(true)) {
        auto& t = p.value();
        const auto& name = p.key();
        if (name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0) {
            t.zero_();
        } else {
            const int64_t fan_in = t.numel() / t.size(0);
            const double std = gain / std::sqrt(static_cast<double>(fan_in));
            t.copy_(torch::randn(t.sizes(), gen, t.options()) * std);
        }
    }
}

Vgg16FeaturesImpl::Vgg16FeaturesImpl() {
    int64_t in = 3;
    for (std::size_t b = 0; b < kVggBlocks.size(); ++b) {
        const auto [block, count] = kVggBlocks[b];
        for (int i = 1; i <= count; ++i) {
            convs_.push_back(register_module(fmt::format("conv{}_{}", block, i),
                                             conv3x3(in, kVggWidths[b])));
            in = kVggWidths[b];
        }
    }
}

const std::vector<std::string>& Vgg16FeaturesImpl::layer_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n;
        for (const auto& [block, count] : kVggBlocks)
            for (int i = 1; i <= count; ++i)
                n.push_back(fmt::format("relu{}_{}", block, i));
        return n;
    }();
    return names;
}

std::vector<torch::Tensor> Vgg16FeaturesImpl::forward(const torch::Tensor& x,
                                                      const std::vector<std::size_t>& taps) {
    std::vector<torch::Tensor> out(taps.size());
    if (taps.empty())
        return out;
    const std::size_t last = *std::max_element(taps.begin(), taps.end());
    auto h = x;
    std::size_t layer = 0;
    for (const auto& [block, count] : kVggBlocks) {
        if (block > 1)
            h = torch::max_pool2d(h, {2, 2}, {2, 2}, {0, 0}, {1, 1}, /*ceil_mode=*/true);
        for (int i = 0; i < count; ++i, ++layer) {
            h = torch::relu(convs_[layer](h));
            for (std::size_t k = 0; k < taps.size(); ++k)
                if (taps[k] == layer)
                    out[k] = h;
            if (layer == last)
                return out;
        }
    }
    return out;
}

namespace {

void freeze(Vgg16Features& net) {
    net->eval();
    for (auto& p : net->parameters())
        p.set_requires_grad(false);
}

std::size_t tap_index(const std::string& tap) {
    const auto& names = Vgg16FeaturesImpl::layer_names();
    auto it = std::find(names.begin(), names.end(), tap);
    if (it == names.end())
        throw InvalidArgument(fmt::format("unknown feature tap '{}'", tap));
    return static_cast<std::size_t>(it - names.begin());
}

} // namespace

FeatureBackbone FeatureBackbone::from_weights(const std::filesystem::path& path) {
    auto ar = Archive::load(path, "vgg16-weights");
    FeatureBackbone b;
    b.net_ = Vgg16Features();
    restore_module(ar, "", *b.net_);
    freeze(b.net_);
    b.id_ = fmt::format("vgg16:file:{}", path.filename().string());
    return b;
}

FeatureBackbone FeatureBackbone::random(uint64_t seed) {
    FeatureBackbone b;
    b.net_ = Vgg16Features();
    init_parameters(*b.net_, seed);
    freeze(b.net_);
    b.id_ = fmt::format("vgg16:random:{}", seed);
    return b;
}

std::vector<torch::Tensor> FeatureBackbone::extract(const torch::Tensor& img,
                                                    const std::vector<std::string>& taps) const {
    if (!loaded())
        throw StateError("feature backbone is not loaded");
    std::vector<std::size_t> idx;
    idx.reserve(taps.size());
    for (const auto& t : taps)
        idx.push_back(tap_index(t));
    auto x = img.dim() == 3 ? img.unsqueeze(0) : img;
    if (x.dim() != 4 || x.size(1) != 3)
        throw InvalidArgument("feature backbone expects 3-channel images");
    const auto opts = torch::TensorOptions().dtype(x.scalar_type());
    auto mean = torch::tensor({kImagenetMean[0], kImagenetMean[1], kImagenetMean[2]}, opts).view({1, 3, 1, 1});
    auto std = torch::tensor({kImagenetStd[0], kImagenetStd[1], kImagenetStd[2]}, opts).view({1, 3, 1, 1});
    Vgg16Features net = net_;
    return net->forward((x - mean) / std, idx);
}

FeatureBackbone FeatureBackbone::to(torch::ScalarType dtype) const {
    if (!loaded())
        throw StateError("feature backbone is not loaded");
    FeatureBackbone b;
    b.net_ = Vgg16Features();
    {
        torch::NoGradGuard no_grad;
        auto src = net_->named_parameters(true);
        for (auto& p : b.net_->named_parameters(true))
            p.value().copy_(src[p.key()]);
    }
    b.net_->to(dtype);
    freeze(b.net_);
    b.id_ = id_;
    return b;
}

int64_t FeatureBackbone::channels(const std::string& tap) {
    const std::size_t layer = tap_index(tap);
    std::size_t seen = 0;
    for (std::size_t b = 0; b < kVggBlocks.size(); ++b) {
        seen += static_cast<std::size_t>(kVggBlocks[b].second);
        if (layer < seen)
            return kVggWidths[b];
    }
    return kVggWidths.back();
}

} // namespace hazesynth
