#include "hazesynth/losses.hpp"

#include <cmath>

#include <fmt/format.h>

#include "hazesynth/errors.hpp"
#include "hazesynth/image.hpp"

namespace hazesynth {

namespace {

torch::Tensor as_batch(const torch::Tensor& t) {
    return t.dim() == 3 ? t.unsqueeze(0) : t;
}

void require_matching(const torch::Tensor& a, const torch::Tensor& b, const char* who) {
    if (!a.defined() || !b.defined())
        throw InvalidArgument(fmt::format("{}: undefined input", who));
    if (a.sizes() != b.sizes())
        throw InvalidArgument(fmt::format("{}: shape mismatch", who));
}

void require_finite_weight(double v, const char* key) {
    if (!(v >= 0.0) || !std::isfinite(v))
        throw InvalidArgument(fmt::format("loss weight {} must be a finite non-negative number", key));
}

torch::Tensor gaussian_window(int size, double sigma, const torch::TensorOptions& opts) {
    auto coords = torch::arange(size, opts.dtype(torch::kFloat64)) - static_cast<double>(size / 2);
    auto g = torch::exp(-(coords * coords) / (2.0 * sigma * sigma));
    g = g / g.sum();
    return torch::outer(g, g).to(opts.dtype()).view({1, 1, size, size});
}

torch::Tensor ssim_formula(const torch::Tensor& mx, const torch::Tensor& mt, const torch::Tensor& vx,
                           const torch::Tensor& vt, const torch::Tensor& cov, double c1, double c2) {
    return ((2.0 * mx * mt + c1) * (2.0 * cov + c2)) /
           ((mx * mx + mt * mt + c1) * (vx + vt + c2));
}

torch::Tensor mse(const torch::Tensor& a, const torch::Tensor& b) {
    return (a - b).pow(2).mean();
}

void require_finite(const torch::Tensor& v, const char* term) {
    const double x = v.item<double>();
    if (!std::isfinite(x))
        throw NumericError(term, fmt::format("loss term {} is not finite ({})", term, x));
}

} // namespace

void SsimConfig::validate() const {
    if (!(dynamic_range > 0.0))
        throw InvalidArgument("ssim: dynamic_range must be > 0");
    if (mode == Mode::windowed) {
        if (window < 3 || window % 2 == 0)
            throw InvalidArgument("ssim: window must be odd and >= 3");
        if (!(window_sigma > 0.0))
            throw InvalidArgument("ssim: window_sigma must be > 0");
    }
}

void LossWeights::validate() const {
    require_finite_weight(lambda_S, "lambda_S");
    require_finite_weight(lambda_A, "lambda_A");
    require_finite_weight(lambda_adv, "lambda_adv");
    require_finite_weight(lambda_e, "lambda_e");
    require_finite_weight(lambda_l, "lambda_l");
    require_finite_weight(lambda_smooth, "lambda_smooth");
    require_finite_weight(lambda_s, "lambda_s");
    require_finite_weight(lambda_c, "lambda_c");
}

void FeatureTaps::validate() const {
    if (style_layers.empty())
        throw InvalidArgument("style_layers must not be empty");
    if (content_layers.empty())
        throw InvalidArgument("content_layers must not be empty");
}

torch::Tensor edge_loss(const torch::Tensor& x_lum, const torch::Tensor& t) {
    require_matching(x_lum, t, "edge_loss");
    return (x_lum - t).abs().mean();
}

torch::Tensor ssim(const torch::Tensor& x_lum, const torch::Tensor& t, const SsimConfig& cfg) {
    require_matching(x_lum, t, "ssim");
    cfg.validate();
    auto x = as_batch(x_lum);
    auto y = as_batch(t);
    const double c1 = cfg.c1();
    const double c2 = cfg.c2();

    if (cfg.mode == SsimConfig::Mode::global) {
        auto xf = x.flatten(1);
        auto yf = y.flatten(1);
        auto mx = xf.mean(1);
        auto my = yf.mean(1);
        auto dx = xf - mx.unsqueeze(1);
        auto dy = yf - my.unsqueeze(1);
        auto vx = (dx * dx).mean(1);
        auto vy = (dy * dy).mean(1);
        auto cov = (dx * dy).mean(1);
        return ssim_formula(mx, my, vx, vy, cov, c1, c2).mean();
    }

    const auto window = gaussian_window(cfg.window, cfg.window_sigma, x.options());
    const int64_t pad = cfg.window / 2;
    auto filt = [&](const torch::Tensor& v) {
        return torch::conv2d(v.flatten(0, 1).unsqueeze(1), window, {}, 1, pad);
    };
    auto norm = filt(torch::ones_like(x));
    auto mx = filt(x) / norm;
    auto my = filt(y) / norm;
    auto vx = filt(x * x) / norm - mx * mx;
    auto vy = filt(y * y) / norm - my * my;
    auto cov = filt(x * y) / norm - mx * my;
    return ssim_formula(mx, my, vx, vy, cov, c1, c2).mean();
}

torch::Tensor luminance_loss(const torch::Tensor& x_lum, const torch::Tensor& t,
                             const SsimConfig& cfg) {
    return 1.0 - ssim(x_lum, t, cfg);
}

torch::Tensor smoothness_loss(const torch::Tensor& t, SmoothWeighting weighting,
                              const torch::Tensor& guide) {
    if (!t.defined() || t.dim() < 2)
        throw InvalidArgument("smoothness_loss: expected a map with at least 2 dimensions");
    const torch::Tensor& w = weighting == SmoothWeighting::image ? guide : t;
    if (weighting == SmoothWeighting::image)
        require_matching(t, guide, "smoothness_loss");

    const int64_t h = t.size(-2);
    const int64_t wd = t.size(-1);
    auto loss = torch::zeros({}, t.options());
    if (h >= 2) {
        auto g = t.diff(1, -2);
        auto gw = weighting == SmoothWeighting::image ? w.diff(1, -2) : g;
        loss = loss + (g.abs() * torch::exp(-gw.abs())).mean();
    }
    if (wd >= 2) {
        auto g = t.diff(1, -1);
        auto gw = weighting == SmoothWeighting::image ? w.diff(1, -1) : g;
        loss = loss + (g.abs() * torch::exp(-gw.abs())).mean();
    }
    return loss;
}

torch::Tensor compose_structure(const torch::Tensor& edge, const torch::Tensor& luminance,
                                const torch::Tensor& smooth, const LossWeights& w) {
    return w.lambda_e * edge + w.lambda_l * luminance + w.lambda_smooth * smooth;
}

StructureTerms structure_loss(const torch::Tensor& x, const torch::Tensor& t, const LossWeights& w,
                              const SsimConfig& cfg, SmoothWeighting weighting) {
    auto x_lum = ops::luminance(x);
    StructureTerms terms;
    terms.edge = edge_loss(x_lum, t);
    terms.luminance = luminance_loss(x_lum, t, cfg);
    terms.smooth = smoothness_loss(t, weighting, x_lum);
    terms.total = compose_structure(terms.edge, terms.luminance, terms.smooth, w);
    return terms;
}

torch::Tensor style_perceptual_loss(const torch::Tensor& y, const torch::Tensor& z,
                                    const FeatureTaps& taps, const FeatureBackbone& backbone) {
    require_matching(y, z, "style_perceptual_loss");
    taps.validate();
    auto fy = backbone.extract(y, taps.style_layers);
    auto fz = backbone.extract(z, taps.style_layers);
    auto loss = torch::zeros({}, z.options());
    for (std::size_t i = 0; i < fy.size(); ++i)
        loss = loss + mse(fy[i], fz[i]);
    return loss / static_cast<double>(fy.size());
}

torch::Tensor content_perceptual_loss(const torch::Tensor& x, const torch::Tensor& z,
                                      const FeatureTaps& taps, const FeatureBackbone& backbone) {
    require_matching(x, z, "content_perceptual_loss");
    taps.validate();
    auto fx = backbone.extract(x, taps.content_layers);
    auto fz = backbone.extract(z, taps.content_layers);
    auto loss = torch::zeros({}, z.options());
    for (std::size_t i = 0; i < fx.size(); ++i)
        loss = loss + mse(fx[i], fz[i]);
    return loss / static_cast<double>(fx.size());
}

torch::Tensor compose_airlight(const torch::Tensor& style, const torch::Tensor& content,
                               const LossWeights& w) {
    return w.lambda_s * style + w.lambda_c * content;
}

AirlightTerms airlight_loss(const torch::Tensor& x, const torch::Tensor& y, const torch::Tensor& z,
                            const LossWeights& w, const FeatureTaps& taps,
                            const FeatureBackbone& backbone) {
    require_matching(x, z, "airlight_loss");
    require_matching(y, z, "airlight_loss");
    taps.validate();

    std::vector<std::string> all = taps.style_layers;
    for (const auto& c : taps.content_layers)
        if (std::find(all.begin(), all.end(), c) == all.end())
            all.push_back(c);
    auto fz = backbone.extract(z, all);
    auto feature_of_z = [&](const std::string& tap) -> const torch::Tensor& {
        return fz[static_cast<std::size_t>(std::find(all.begin(), all.end(), tap) - all.begin())];
    };

    std::vector<torch::Tensor> fy, fx;
    {
        torch::NoGradGuard no_grad;
        fy = backbone.extract(y, taps.style_layers);
        fx = backbone.extract(x, taps.content_layers);
    }

    AirlightTerms terms;
    terms.style = torch::zeros({}, z.options());
    for (std::size_t i = 0; i < fy.size(); ++i)
        terms.style = terms.style + mse(fy[i], feature_of_z(taps.style_layers[i]));
    terms.style = terms.style / static_cast<double>(fy.size());

    terms.content = torch::zeros({}, z.options());
    for (std::size_t i = 0; i < fx.size(); ++i)
        terms.content = terms.content + mse(fx[i], feature_of_z(taps.content_layers[i]));
    terms.content = terms.content / static_cast<double>(fx.size());

    terms.total = compose_airlight(terms.style, terms.content, w);
    return terms;
}

torch::Tensor adversarial_loss_discriminator(const torch::Tensor& d_real, const torch::Tensor& d_fake) {
    auto real_term = torch::log(d_real.clamp(kLogEpsilon, 1.0)).mean();
    auto fake_term = torch::log((1.0 - d_fake).clamp(kLogEpsilon, 1.0)).mean();
    return -(real_term + fake_term);
}

torch::Tensor adversarial_loss_generator(const torch::Tensor& d_fake) {
    return -torch::log(d_fake.clamp(kLogEpsilon, 1.0)).mean();
}

torch::Tensor total_generator_loss(const torch::Tensor& structure, const torch::Tensor& airlight,
                                   const torch::Tensor& adversarial, const LossWeights& w) {
    require_finite(structure, "L_S");
    require_finite(airlight, "L_A");
    require_finite(adversarial, "L_adv");
    return w.lambda_S * structure + w.lambda_A * airlight + w.lambda_adv * adversarial;
}

} // namespace hazesynth
