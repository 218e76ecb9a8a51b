#include <doctest.h>

#include <cmath>
#include <vector>

#include "hazesynth/errors.hpp"
#include "hazesynth/losses.hpp"
#include "support/gradcheck.hpp"
#include "support/scenes.hpp"

using namespace hazesynth;
using hazesynth::testing::check_gradient;

namespace {

torch::Tensor full(double v, int64_t h = 2, int64_t w = 2) {
    return torch::full({1, h, w}, v, torch::kFloat64);
}

double item(const torch::Tensor& t) { return t.item<double>(); }

// Direct per-pixel evaluation of windowed SSIM: Gaussian weights over the
// in-bounds part of the window, renormalized, weighted moments, then the mean map.
double ssim_bruteforce(const torch::Tensor& x, const torch::Tensor& y, int window, double sigma,
                       double c1, double c2) {
    auto xa = x.to(torch::kFloat64).contiguous();
    auto ya = y.to(torch::kFloat64).contiguous();
    auto X = xa.accessor<double, 3>();
    auto Y = ya.accessor<double, 3>();
    const int64_t h = x.size(1), w = x.size(2);
    const int r = window / 2;
    double total = 0.0;
    for (int64_t i = 0; i < h; ++i) {
        for (int64_t j = 0; j < w; ++j) {
            double ws = 0, mx = 0, my = 0;
            for (int du = -r; du <= r; ++du)
                for (int dv = -r; dv <= r; ++dv) {
                    const int64_t u = i + du, v = j + dv;
                    if (u < 0 || u >= h || v < 0 || v >= w) continue;
                    const double g = std::exp(-(du * du + dv * dv) / (2 * sigma * sigma));
                    ws += g;
                    mx += g * X[0][u][v];
                    my += g * Y[0][u][v];
                }
            mx /= ws;
            my /= ws;
            double vx = 0, vy = 0, cxy = 0;
            for (int du = -r; du <= r; ++du)
                for (int dv = -r; dv <= r; ++dv) {
                    const int64_t u = i + du, v = j + dv;
                    if (u < 0 || u >= h || v < 0 || v >= w) continue;
                    const double g = std::exp(-(du * du + dv * dv) / (2 * sigma * sigma)) / ws;
                    vx += g * (X[0][u][v] - mx) * (X[0][u][v] - mx);
                    vy += g * (Y[0][u][v] - my) * (Y[0][u][v] - my);
                    cxy += g * (X[0][u][v] - mx) * (Y[0][u][v] - my);
                }
            total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    return total / static_cast<double>(h * w);
}

const FeatureBackbone& backbone64() {
    static FeatureBackbone b = FeatureBackbone::random(7).to(torch::kFloat64);
    return b;
}

double feature_mse(const torch::Tensor& a, const torch::Tensor& b) {
    auto d = (a.to(torch::kFloat64) - b.to(torch::kFloat64)).contiguous();
    const auto* p = d.data_ptr<double>();
    double s = 0.0;
    for (int64_t i = 0; i < d.numel(); ++i) s += p[i] * p[i];
    return s / static_cast<double>(d.numel());
}

} // namespace

TEST_SUITE("losses") {

TEST_CASE("edge loss") {
    CHECK(item(edge_loss(full(0.5), full(0.5))) == doctest::Approx(0.0));
    CHECK(item(edge_loss(full(1.0), full(0.25))) == doctest::Approx(0.75).epsilon(1e-9));
    auto a = torch::rand({1, 5, 5}), b = torch::rand({1, 5, 5});
    CHECK(item(edge_loss(a, b)) == doctest::Approx(item(edge_loss(b, a))));
    CHECK(item(edge_loss(a, b)) >= 0.0);
    CHECK_THROWS_AS(edge_loss(full(0.1, 2, 2), full(0.1, 2, 3)), InvalidArgument);
}

TEST_CASE("luminance loss, global statistics") {
    auto a = torch::rand({1, 6, 6}, torch::kFloat64);
    CHECK(item(luminance_loss(a, a)) == doctest::Approx(0.0).epsilon(1e-12));
    // Constant maps: variances vanish, leaving (2·0.5·0.25 + c1) / (0.25 + 0.0625 + c1).
    const double c1 = 1e-4;
    const double expected = (2 * 0.5 * 0.25 + c1) / (0.25 + 0.0625 + c1);
    CHECK(expected == doctest::Approx(0.800064).epsilon(1e-6));
    CHECK(item(ssim(full(0.5), full(0.25))) == doctest::Approx(expected).epsilon(1e-9));
    CHECK(item(luminance_loss(full(0.5), full(0.25))) == doctest::Approx(1 - expected).epsilon(1e-9));
    for (int i = 0; i < 20; ++i) {
        auto x = torch::rand({1, 7, 5}, torch::kFloat64), y = torch::rand({1, 7, 5}, torch::kFloat64);
        const double l = item(luminance_loss(x, y));
        CHECK(l >= 0.0);
        CHECK(l <= 2.0);
        CHECK(l == doctest::Approx(item(luminance_loss(y, x))).epsilon(1e-12));
    }
}

TEST_CASE("windowed SSIM matches the direct evaluation") {
    SsimConfig cfg;
    cfg.mode = SsimConfig::Mode::windowed;
    Rng rng(21);
    std::uniform_int_distribution<int64_t> side(8, 16);
    for (int i = 0; i < 10; ++i) {
        const int64_t h = side(rng), w = side(rng);
        auto x = torch::rand({1, h, w}, torch::kFloat64), y = torch::rand({1, h, w}, torch::kFloat64);
        const double expected = ssim_bruteforce(x, y, cfg.window, cfg.window_sigma, cfg.c1(), cfg.c2());
        CHECK(item(ssim(x, y, cfg)) == doctest::Approx(expected).epsilon(1e-9));
    }
    auto x = torch::rand({1, 9, 9}, torch::kFloat64);
    CHECK(item(ssim(x, x, cfg)) == doctest::Approx(1.0).epsilon(1e-12));
    cfg.window = 4;
    CHECK_THROWS_AS(ssim(x, x, cfg), InvalidArgument);
}

TEST_CASE("smoothness loss") {
    CHECK(item(smoothness_loss(full(0.4, 5, 5))) == doctest::Approx(0.0));
    auto pair = torch::tensor({0.0, 1.0}, torch::kFloat64).view({1, 1, 2});
    CHECK(item(smoothness_loss(pair)) == doctest::Approx(0.36787944).epsilon(1e-7));
    CHECK(item(smoothness_loss(pair.transpose(1, 2))) == doctest::Approx(0.36787944).epsilon(1e-7));
    CHECK(item(smoothness_loss(full(0.3, 1, 1))) == doctest::Approx(0.0));
    for (int i = 0; i < 10; ++i) {
        auto t = torch::rand({1, 4, 6}, torch::kFloat64);
        CHECK(item(smoothness_loss(t)) == doctest::Approx(item(smoothness_loss(t.transpose(1, 2)))));
    }
    // Image-guided weighting: a flat guide leaves plain total variation.
    auto t = torch::rand({1, 4, 4}, torch::kFloat64);
    auto guide = full(0.2, 4, 4);
    const double tv = item(t.diff(1, -2).abs().mean() + t.diff(1, -1).abs().mean());
    CHECK(item(smoothness_loss(t, SmoothWeighting::image, guide)) == doctest::Approx(tv).epsilon(1e-12));
}

TEST_CASE("structure composition") {
    LossWeights w;
    auto s = compose_structure(torch::tensor(0.75), torch::tensor(0.2), torch::tensor(0.1), w);
    CHECK(item(s) == doctest::Approx(0.3375).epsilon(1e-6));
    LossWeights zero = w;
    zero.lambda_e = zero.lambda_l = zero.lambda_smooth = 0;
    auto x = torch::rand({3, 8, 8}), t = torch::rand({1, 8, 8});
    CHECK(item(structure_loss(x, t, zero).total) == doctest::Approx(0.0));
    // t equal to a constant luminance is a perfect structural match.
    auto gray = torch::full({3, 4, 4}, 0.6);
    auto terms = structure_loss(gray, torch::full({1, 4, 4}, 0.6), w);
    CHECK(item(terms.total) == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("perceptual losses") {
    const auto& bb = backbone64();
    FeatureTaps taps;
    auto y = torch::rand({1, 3, 16, 16}, torch::kFloat64);
    auto z = torch::rand({1, 3, 16, 16}, torch::kFloat64);
    CHECK(item(style_perceptual_loss(y, y, taps, bb)) == doctest::Approx(0.0));
    CHECK(item(content_perceptual_loss(z, z, taps, bb)) == doctest::Approx(0.0));
    const double s = item(style_perceptual_loss(y, z, taps, bb));
    CHECK(s > 0.0);
    CHECK(s == doctest::Approx(item(style_perceptual_loss(z, y, taps, bb))).epsilon(1e-12));

    auto fy = bb.extract(y, taps.style_layers);
    auto fz = bb.extract(z, taps.style_layers);
    double expected = 0.0;
    for (std::size_t i = 0; i < fy.size(); ++i) expected += feature_mse(fy[i], fz[i]);
    expected /= static_cast<double>(fy.size());
    CHECK(s == doctest::Approx(expected).epsilon(1e-5));

    auto fc = bb.extract(y, taps.content_layers);
    auto fzc = bb.extract(z, taps.content_layers);
    CHECK(item(content_perceptual_loss(y, z, taps, bb)) ==
          doctest::Approx(feature_mse(fc[0], fzc[0])).epsilon(1e-5));
}

TEST_CASE("airlight composition") {
    LossWeights w;
    CHECK(item(compose_airlight(torch::tensor(2.0), torch::tensor(3.0), w)) == doctest::Approx(0.5));
    const auto& bb = backbone64();
    auto x = torch::rand({1, 3, 16, 16}, torch::kFloat64);
    auto terms = airlight_loss(x, x, x, w, {}, bb);
    CHECK(item(terms.total) == doctest::Approx(0.0));
    auto y = torch::rand({1, 3, 16, 16}, torch::kFloat64);
    auto z = torch::rand({1, 3, 16, 16}, torch::kFloat64);
    terms = airlight_loss(x, y, z, w, {}, bb);
    CHECK(item(terms.style) == doctest::Approx(item(style_perceptual_loss(y, z, {}, bb))));
    CHECK(item(terms.content) == doctest::Approx(item(content_perceptual_loss(x, z, {}, bb))));
    LossWeights zero = w;
    zero.lambda_s = zero.lambda_c = 0;
    CHECK(item(airlight_loss(x, y, z, zero, {}, bb).total) == doctest::Approx(0.0));
}

TEST_CASE("adversarial losses") {
    auto half = torch::full({1, 1, 8, 8}, 0.5, torch::kFloat64);
    CHECK(item(adversarial_loss_discriminator(half, half)) == doctest::Approx(1.38629436).epsilon(1e-7));
    auto real = torch::full({4}, 0.9, torch::kFloat64), fake = torch::full({4}, 0.1, torch::kFloat64);
    CHECK(item(adversarial_loss_discriminator(real, fake)) == doctest::Approx(0.21072103).epsilon(1e-7));
    CHECK(item(adversarial_loss_generator(half)) == doctest::Approx(0.69314718).epsilon(1e-7));
    CHECK(item(adversarial_loss_generator(torch::full({2}, std::exp(-1.0), torch::kFloat64))) ==
          doctest::Approx(1.0).epsilon(1e-9));
    // Saturated scores stay finite thanks to the clamp.
    CHECK(std::isfinite(item(adversarial_loss_generator(torch::zeros({3})))));
    CHECK(std::isfinite(item(adversarial_loss_discriminator(torch::zeros({3}), torch::ones({3})))));
}

TEST_CASE("total loss and non-finite detection") {
    LossWeights w;
    auto total = total_generator_loss(torch::tensor(0.3375), torch::tensor(0.5), torch::tensor(0.693), w);
    CHECK(item(total) == doctest::Approx(1.0805).epsilon(1e-6));
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const double inf = std::numeric_limits<double>::infinity();
    try {
        total_generator_loss(torch::tensor(0.1), torch::tensor(nan), torch::tensor(0.1), w);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(e.term() == "L_A");
    }
    try {
        total_generator_loss(torch::tensor(inf), torch::tensor(0.1), torch::tensor(0.1), w);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(e.term() == "L_S");
    }
}

TEST_CASE("weights scale their term linearly") {
    auto s = torch::tensor(0.4), a = torch::tensor(0.7), adv = torch::tensor(0.9);
    LossWeights w;
    const double base = item(total_generator_loss(s, a, adv, w));
    LossWeights w2 = w;
    w2.lambda_A *= 2;
    CHECK(item(total_generator_loss(s, a, adv, w2)) - base == doctest::Approx(w.lambda_A * 0.7));
    w2 = w;
    w2.lambda_adv = 0;
    CHECK(item(total_generator_loss(s, a, adv, w2)) == doctest::Approx(base - 0.9));
}

TEST_CASE("analytic gradients agree with finite differences") {
    auto x = torch::rand({1, 4, 4}, torch::kFloat64);
    auto t0 = torch::rand({1, 4, 4}, torch::kFloat64) * 0.8 + 0.1;
    SsimConfig windowed;
    windowed.mode = SsimConfig::Mode::windowed;

    struct Case {
        const char* name;
        std::function<torch::Tensor(const torch::Tensor&)> f;
        torch::Tensor at;
    };
    const auto& bb = backbone64();
    auto y = torch::rand({1, 3, 4, 4}, torch::kFloat64);
    auto xc = torch::rand({1, 3, 4, 4}, torch::kFloat64);
    auto z0 = torch::rand({1, 3, 4, 4}, torch::kFloat64);
    std::vector<Case> cases{
        {"edge", [&](const torch::Tensor& t) { return edge_loss(x, t); }, t0},
        {"luminance_global", [&](const torch::Tensor& t) { return luminance_loss(x, t); }, t0},
        {"luminance_windowed", [&](const torch::Tensor& t) { return luminance_loss(x, t, windowed); }, t0},
        {"smooth", [&](const torch::Tensor& t) { return smoothness_loss(t); }, t0},
        {"style", [&](const torch::Tensor& z) { return style_perceptual_loss(y, z, {}, bb); }, z0},
        {"content", [&](const torch::Tensor& z) { return content_perceptual_loss(xc, z, {}, bb); }, z0},
        {"adv_g", [&](const torch::Tensor& d) { return adversarial_loss_generator(d); },
         torch::rand({1, 1, 4, 4}, torch::kFloat64) * 0.8 + 0.1},
    };
    for (const auto& c : cases) {
        CAPTURE(c.name);
        auto r = check_gradient(c.f, c.at);
        CHECK(r.analytic_norm > 0.0);
        CHECK(r.relative_error < 1e-3);
    }
}

}
