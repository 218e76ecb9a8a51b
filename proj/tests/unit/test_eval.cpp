#include <doctest.h>

#include <cmath>
#include <limits>

#include <opencv2/imgcodecs.hpp>

#include "hazesynth/errors.hpp"
#include "hazesynth/eval.hpp"
#include "support/scenes.hpp"

using namespace hazesynth;

namespace {

SetStatistics stats(Eigen::VectorXd mean, Eigen::MatrixXd cov) {
    return SetStatistics{std::move(mean), std::move(cov), 10};
}

Eigen::MatrixXd random_spd(int k, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    Eigen::MatrixXd a(k, k);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) a(i, j) = n(rng);
    return a * a.transpose() / k + 0.1 * Eigen::MatrixXd::Identity(k, k);
}

} // namespace

TEST_SUITE("eval") {

TEST_CASE("baseline renderer") {
    BaselineConfig cfg;
    cfg.beta_range = {1.0, 1.0};
    cfg.airlight_range = {0.8, 0.8};
    Rng rng(0);
    auto res = baseline_render(Image(torch::zeros({3, 2, 2})), DepthMap(torch::ones({1, 2, 2})), cfg, rng);
    CHECK(res.beta == 1.0);
    CHECK(res.airlight == doctest::Approx(0.8));
    CHECK(res.image.tensor()[0][0][0].item<double>() == doctest::Approx(0.50569645).epsilon(1e-6));

    Rng r1(4), r2(4);
    BaselineConfig def;
    auto x = Image(torch::rand({3, 8, 8}));
    auto d = DepthMap(torch::rand({1, 8, 8}) * 3);
    auto a = baseline_render(x, d, def, r1);
    auto b = baseline_render(x, d, def, r2);
    CHECK(torch::equal(a.image.tensor(), b.image.tensor()));
    CHECK(a.beta >= 0.6);
    CHECK(a.beta <= 1.8);
    CHECK(a.airlight >= 0.7);
    CHECK(a.airlight <= 1.0);
    auto lo = torch::clamp_max(x.tensor(), a.airlight) - 1e-6;
    auto hi = torch::clamp_min(x.tensor(), a.airlight) + 1e-6;
    CHECK((a.image.tensor() >= lo).all().item<bool>());
    CHECK((a.image.tensor() <= hi).all().item<bool>());

    CHECK_THROWS_AS(baseline_render(x, DepthMap{}, def, r1), InvalidArgument);
    CHECK_THROWS_AS(baseline_render(x, DepthMap(torch::ones({1, 4, 8})), def, r1), InvalidArgument);
    BaselineConfig bad;
    bad.beta_range = {0.0, 1.0};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("FID closed forms") {
    const int k = 5;
    Eigen::MatrixXd I = Eigen::MatrixXd::Identity(k, k);
    Eigen::VectorXd zero = Eigen::VectorXd::Zero(k);
    CHECK(fid(stats(zero, I), stats(zero, I)) == doctest::Approx(0.0).epsilon(1e-9));
    // Means differ by 1 in every coordinate, covariances equal: FID = k.
    CHECK(fid(stats(zero, I), stats(Eigen::VectorXd::Ones(k), I)) == doctest::Approx(k).epsilon(1e-6));
    // Scaled identity: Tr(I + 4I − 2·2I) = k.
    CHECK(fid(stats(zero, I), stats(zero, 4 * I)) == doctest::Approx(k).epsilon(1e-6));

    for (uint64_t s = 0; s < 10; ++s) {
        auto a = stats(Eigen::VectorXd::Random(k), random_spd(k, s));
        auto b = stats(Eigen::VectorXd::Random(k), random_spd(k, s + 100));
        const double ab = fid(a, b);
        CHECK(ab >= -1e-9);
        CHECK(ab == doctest::Approx(fid(b, a)).epsilon(1e-6));
        CHECK(fid(a, a) == doctest::Approx(0.0).epsilon(1e-6));
    }
    CHECK_THROWS_AS(fid(stats(zero, I), stats(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3))),
                    InvalidArgument);
}

TEST_CASE("set statistics") {
    Eigen::MatrixXd dup(2, 3);
    dup << 1, 2, 3, 1, 2, 3;
    auto s = statistics_from_samples(dup);
    CHECK(s.cov.norm() == doctest::Approx(0.0));
    CHECK(s.mean(1) == doctest::Approx(2.0));

    Eigen::MatrixXd m = Eigen::MatrixXd::Random(20, 4);
    auto a = statistics_from_samples(m);
    Eigen::MatrixXd rev = m.colwise().reverse();
    auto b = statistics_from_samples(rev);
    CHECK((a.mean - b.mean).norm() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK((a.cov - b.cov).norm() == doctest::Approx(0.0).epsilon(1e-12));
    Eigen::MatrixXd centered = m.rowwise() - m.colwise().mean();
    Eigen::MatrixXd unbiased = centered.transpose() * centered / 19.0;
    CHECK((a.cov - unbiased).norm() == doctest::Approx(0.0).epsilon(1e-12));

    StatisticsAccumulator left(4), right(4), all(4);
    for (int i = 0; i < 20; ++i) {
        (i < 7 ? left : right).add(m.row(i).transpose());
        all.add(m.row(i).transpose());
    }
    left.merge(right);
    CHECK((left.finalize().cov - all.finalize().cov).norm() == doctest::Approx(0.0).epsilon(1e-12));
    StatisticsAccumulator one(4);
    one.add(m.row(0).transpose());
    CHECK_THROWS_AS(one.finalize(), DataError);
}

TEST_CASE("extractors") {
    auto bb = FeatureBackbone::random(0);
    auto vgg = make_extractor("vgg16:relu1_2", bb);
    CHECK(vgg->dim() == 64);
    CHECK(vgg->id() == "vgg16:random:0:relu1_2:avgpool");
    std::vector<Image> imgs;
    Rng rng(1);
    for (int i = 0; i < 3; ++i) imgs.push_back(testing::random_image(3, 32, 32, rng));
    auto s = compute_set_statistics(imgs, *vgg);
    CHECK(s.mean.size() == 64);
    CHECK(s.count == 3);

    auto hs = make_extractor("haze-stats", bb);
    CHECK(hs->dim() == 16);
    CHECK(hs->features(imgs[0]).size() == 16);
    CHECK((hs->features(imgs[0]) - hs->features(imgs[0])).norm() == 0.0);
    CHECK_THROWS_AS(make_extractor("inception", bb), ConfigError);
    CHECK_THROWS_AS(compute_set_statistics(std::span<const Image>(imgs.data(), 1), *hs), DataError);
}

TEST_CASE("PSNR") {
    auto a = Image(torch::rand({3, 4, 4}));
    CHECK(psnr(a, a) == std::numeric_limits<double>::infinity());
    CHECK(psnr_from_mse(0.01) == doctest::Approx(20.0).epsilon(1e-9));
    auto x = Image(torch::full({3, 4, 4}, 0.5f));
    auto y = Image(torch::full({3, 4, 4}, 0.6f));
    CHECK(psnr(x, y) == doctest::Approx(20.0).epsilon(1e-5));
    auto b = Image(torch::rand({3, 4, 4}));
    CHECK(psnr(a, b) == psnr(b, a));
    CHECK_THROWS_AS(psnr(a, Image(torch::rand({3, 4, 5}))), InvalidArgument);
}

TEST_CASE("evaluate_sets") {
    auto dir = testing::temp_dir("eval_sets");
    auto corpus = testing::write_desk_corpus(dir, 6, 4, 48, 48, 3);
    HazeStatsExtractor hs;
    auto same = evaluate_sets(corpus.clean_dir, corpus.clean_dir, hs);
    CHECK(same.fid <= 1e-6);
    CHECK(same.n_rendered == 6);
    CHECK(same.n_reference == 6);
    CHECK(same.extractor_id == "haze-stats-v1");
    auto diff = evaluate_sets(corpus.clean_dir, corpus.exemplar_dir, hs);
    CHECK(diff.fid > 0.0);
    auto j = diff.to_json();
    CHECK(j["fid"].get<double>() == diff.fid);
    CHECK(j["n_reference"].get<int64_t>() == 4);
    CHECK(!diff.table().empty());
    CHECK_THROWS_AS(evaluate_sets(testing::temp_dir("eval_empty"), corpus.clean_dir, hs), DataError);
}

}
