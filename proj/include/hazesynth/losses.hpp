#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

#include "hazesynth/networks.hpp"

namespace hazesynth {

struct SsimConfig {
    enum class Mode { global, windowed };

    double dynamic_range = 1.0;
    Mode mode = Mode::global;
    int window = 11;
    double window_sigma = 1.5;

    double c1() const { return (0.01 * dynamic_range) * (0.01 * dynamic_range); }
    double c2() const { return (0.03 * dynamic_range) * (0.03 * dynamic_range); }
    void validate() const;
};

// Every coefficient of the composite objective. Zeroing one reproduces an ablation arm.
struct LossWeights {
    // total = S·structure + A·airlight + adv·adversarial
    double lambda_S = 1.0;
    double lambda_A = 0.1;
    double lambda_adv = 1.0;
    // structure = e·edge + l·luminance + smooth·smoothness
    double lambda_e = 0.25;
    double lambda_l = 0.25;
    double lambda_smooth = 1.0;
    // airlight = s·style + c·content
    double lambda_s = 0.1;
    double lambda_c = 0.1;

    void validate() const;
};

struct FeatureTaps {
    std::vector<std::string> style_layers{"relu1_2", "relu2_2", "relu3_3", "relu4_3"};
    std::vector<std::string> content_layers{"relu3_3"};

    void validate() const;
};

// What scales the transmission gradient in the smoothness term: the
// transmission gradient itself (default) or the clean image's luminance gradient.
enum class SmoothWeighting { transmission, image };

// Score clamp for the adversarial logs.
inline constexpr double kLogEpsilon = 1e-7;

// All structure-side losses take a 1-channel luminance `x_lum` and a
// transmission `t` shaped [1,H,W] or [B,1,H,W].

// mean |x_lum − t|
torch::Tensor edge_loss(const torch::Tensor& x_lum, const torch::Tensor& t);

// Structural similarity, averaged over the batch. Global mode uses whole-image
// statistics; windowed mode evaluates a Gaussian window centered at every
// pixel, truncated at the border with the weights renormalized.
torch::Tensor ssim(const torch::Tensor& x_lum, const torch::Tensor& t, const SsimConfig& cfg = {});

// 1 − ssim, in [0, 2].
torch::Tensor luminance_loss(const torch::Tensor& x_lum, const torch::Tensor& t,
                             const SsimConfig& cfg = {});

// mean_r |∇r t|·e^(−|∇r w|) + mean_c |∇c t|·e^(−|∇c w|) with forward differences,
// where w = t or w = `guide` under SmoothWeighting::image. A direction without
// any valid difference contributes 0, so 1×1 maps give 0.
torch::Tensor smoothness_loss(const torch::Tensor& t,
                              SmoothWeighting weighting = SmoothWeighting::transmission,
                              const torch::Tensor& guide = {});

struct StructureTerms {
    torch::Tensor edge, luminance, smooth, total;
};

// λe·edge + λl·luminance + λsmooth·smooth
torch::Tensor compose_structure(const torch::Tensor& edge, const torch::Tensor& luminance,
                                const torch::Tensor& smooth, const LossWeights& w);

// `x` may be RGB; it is converted to luminance first.
StructureTerms structure_loss(const torch::Tensor& x, const torch::Tensor& t, const LossWeights& w,
                              const SsimConfig& cfg = {},
                              SmoothWeighting weighting = SmoothWeighting::transmission);

// Mean over taps of the per-element mean squared feature difference.
torch::Tensor style_perceptual_loss(const torch::Tensor& y, const torch::Tensor& z,
                                    const FeatureTaps& taps, const FeatureBackbone& backbone);
torch::Tensor content_perceptual_loss(const torch::Tensor& x, const torch::Tensor& z,
                                      const FeatureTaps& taps, const FeatureBackbone& backbone);

struct AirlightTerms {
    torch::Tensor style, content, total;
};

torch::Tensor compose_airlight(const torch::Tensor& style, const torch::Tensor& content,
                               const LossWeights& w);

// Runs the backbone once per image, sharing z's features between both terms.
AirlightTerms airlight_loss(const torch::Tensor& x, const torch::Tensor& y, const torch::Tensor& z,
                            const LossWeights& w, const FeatureTaps& taps,
                            const FeatureBackbone& backbone);

// −(mean log D(y) + mean log(1 − D(z))), scores clamped at kLogEpsilon.
torch::Tensor adversarial_loss_discriminator(const torch::Tensor& d_real, const torch::Tensor& d_fake);

// Non-saturating generator side: −mean log D(z).
torch::Tensor adversarial_loss_generator(const torch::Tensor& d_fake);

// λS·structure + λA·airlight + λadv·adversarial. Throws NumericError naming
// the first non-finite component ("L_S", "L_A" or "L_adv").
torch::Tensor total_generator_loss(const torch::Tensor& structure, const torch::Tensor& airlight,
                                   const torch::Tensor& adversarial, const LossWeights& w);

} // namespace hazesynth
