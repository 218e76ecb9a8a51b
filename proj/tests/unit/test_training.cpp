#include <doctest.h>

#include <fstream>
#include <sstream>

#include "hazesynth/archive.hpp"
#include "hazesynth/errors.hpp"
#include "hazesynth/training.hpp"
#include "support/scenes.hpp"

using namespace hazesynth;
namespace fs = std::filesystem;

namespace {

const testing::DeskCorpus& tiny_corpus() {
    static const testing::DeskCorpus c =
        testing::write_desk_corpus(testing::temp_dir("train_corpus"), 4, 4, 72, 80, 1);
    return c;
}

TrainConfig tiny_config(const fs::path& ckpt_dir) {
    TrainConfig cfg;
    cfg.iterations = 2;
    cfg.batches_per_iteration = 3;
    cfg.batch_size = 2;
    cfg.patch_size = 64;
    cfg.network_width = 8;
    cfg.seed = 5;
    cfg.clean_dir = tiny_corpus().clean_dir;
    cfg.exemplar_dir = tiny_corpus().exemplar_dir;
    cfg.checkpoint_dir = ckpt_dir;
    return cfg;
}

std::vector<std::string> read_lines(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) out.push_back(line);
    return out;
}

void expect_config_error(const TrainConfig& cfg, const std::string& key) {
    try {
        cfg.validate();
        FAIL("expected ConfigError for " << key);
    } catch (const ConfigError& e) {
        CHECK(e.key() == key);
    }
}

} // namespace

TEST_SUITE("training") {

TEST_CASE("config validation names the offending key") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    auto c = cfg;
    c.learning_rate = 0;
    expect_config_error(c, "learning_rate");
    c = cfg;
    c.patch_size = 32;
    expect_config_error(c, "patch_size");
    c = cfg;
    c.alpha_sampling = AlphaSampling::fixed(1.5);
    expect_config_error(c, "alpha_value");
    c = cfg;
    c.alpha_sampling = AlphaSampling::uniform(0.8, 0.2);
    expect_config_error(c, "alpha_range");
    c = cfg;
    c.loss_weights.lambda_A = -1;
    expect_config_error(c, "lambda_A");
    c = cfg;
    c.taps.style_layers = {"relu7_1"};
    expect_config_error(c, "style_layers");
    try {
        cfg.validate_paths();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.key() == "clean_dir");
    }
}

TEST_CASE("config json round trip") {
    TrainConfig cfg = tiny_config("/tmp/x");
    cfg.alpha_sampling = AlphaSampling::uniform(0.3, 0.9);
    cfg.loss_weights.lambda_adv = 0;
    cfg.ssim.mode = SsimConfig::Mode::windowed;
    auto back = TrainConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
}

TEST_CASE("alpha sampling") {
    Rng rng(1);
    auto u = AlphaSampling::uniform(0.2, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const double a = u.sample(rng);
        CHECK(a >= 0.2);
        CHECK(a <= 1.0);
    }
    CHECK(AlphaSampling::fixed(0.6).sample(rng) == 0.6);
}

TEST_CASE("image sets and batches") {
    auto clean = ImageSet::load_dir(tiny_corpus().clean_dir, 64);
    auto ex = ImageSet::load_dir(tiny_corpus().exemplar_dir, 64);
    CHECK(clean.size() == 4);
    auto cfg = tiny_config("/tmp/unused");
    Rng r1(3), r2(3);
    auto b1 = sample_batch(clean, ex, cfg, r1);
    auto b2 = sample_batch(clean, ex, cfg, r2);
    CHECK(b1.clean.sizes() == torch::IntArrayRef{2, 3, 64, 64});
    CHECK(b1.exemplar.sizes() == torch::IntArrayRef{2, 3, 64, 64});
    CHECK(torch::equal(b1.clean, b2.clean));
    CHECK(torch::equal(b1.exemplar, b2.exemplar));
    CHECK(b1.alpha == b2.alpha);
    CHECK(b1.alpha >= 0.2);
    CHECK(b1.alpha <= 1.0);
    CHECK_THROWS_AS(sample_batch(ImageSet{}, ex, cfg, r1), DataError);

    auto empty = testing::temp_dir("empty_set");
    try {
        ImageSet::load_dir(empty);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find(empty.string()) != std::string::npos);
    }

    // Small images are upscaled so that a crop always fits.
    auto small_dir = testing::temp_dir("small_set");
    Rng rng(2);
    save_image(testing::random_image(3, 20, 40, rng), small_dir / "s.png");
    auto small = ImageSet::load_dir(small_dir, 64);
    CHECK(small.images[0].height() >= 64);
    CHECK(small.images[0].width() >= 64);
}

TEST_CASE("optimizer is Adam with default moments and converges on a quadratic") {
    auto p = torch::zeros({1}, torch::requires_grad());
    auto opt = make_optimizer({p}, 0.05);
    const auto& o = static_cast<const torch::optim::AdamOptions&>(opt->defaults());
    CHECK(std::get<0>(o.betas()) == doctest::Approx(0.9));
    CHECK(std::get<1>(o.betas()) == doctest::Approx(0.999));
    CHECK(o.lr() == doctest::Approx(0.05));
    for (int i = 0; i < 200; ++i) {
        opt->zero_grad();
        auto loss = (p - 1.0).pow(2).sum();
        loss.backward();
        opt->step();
    }
    CHECK(p.item<double>() == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("train step reports every term and renders within bounds") {
    auto cfg = tiny_config("/tmp/unused");
    Trainer trainer(cfg, FeatureBackbone::random(0));
    auto clean = ImageSet::load_dir(cfg.clean_dir, 64);
    auto ex = ImageSet::load_dir(cfg.exemplar_dir, 64);
    auto batch = sample_batch(clean, ex, cfg, trainer.rng());

    auto r = trainer.render(batch);
    CHECK(r.transmission.sizes() == torch::IntArrayRef{2, 1, 64, 64});
    CHECK(r.airlight.sizes() == torch::IntArrayRef{2, 3});
    auto a = r.airlight.view({2, 3, 1, 1});
    CHECK((r.hazy >= torch::minimum(batch.clean, a) - 1e-6).all().item<bool>());
    CHECK((r.hazy <= torch::maximum(batch.clean, a) + 1e-6).all().item<bool>());

    auto rep = trainer.train_step(batch);
    CHECK(rep.step == 1);
    CHECK(trainer.step() == 1);
    CHECK(StepReport::names().size() == rep.values().size());
    for (double v : rep.values()) CHECK(std::isfinite(v));
    const auto& w = cfg.loss_weights;
    CHECK(rep.L_S == doctest::Approx(w.lambda_e * rep.L_e + w.lambda_l * rep.L_l + w.lambda_smooth * rep.L_smooth));
    CHECK(rep.L_A == doctest::Approx(w.lambda_s * rep.L_s + w.lambda_c * rep.L_c));
    CHECK(rep.L_total == doctest::Approx(w.lambda_S * rep.L_S + w.lambda_A * rep.L_A + w.lambda_adv * rep.L_adv_g));
}

TEST_CASE("trainer requires a loaded backbone") {
    CHECK_THROWS_AS(Trainer(tiny_config("/tmp/unused"), FeatureBackbone{}), StateError);
}

TEST_CASE("checkpoint round trip and corrupt files") {
    auto dir = testing::temp_dir("ckpt_rt");
    auto cfg = tiny_config(dir);
    Trainer a(cfg, FeatureBackbone::random(0));
    auto clean = ImageSet::load_dir(cfg.clean_dir, 64);
    auto ex = ImageSet::load_dir(cfg.exemplar_dir, 64);
    a.train_step(sample_batch(clean, ex, cfg, a.rng()));
    a.train_step(sample_batch(clean, ex, cfg, a.rng()));
    a.save_checkpoint(dir / "a.ckpt");

    Trainer b(cfg, FeatureBackbone::random(0));
    b.load_checkpoint(dir / "a.ckpt");
    CHECK(b.step() == 2);
    CHECK(b.rng() == a.rng());
    auto x = torch::rand({1, 3, 32, 32});
    CHECK(torch::equal(a.ten()->forward(x), b.ten()->forward(x)));
    CHECK(torch::equal(a.atn()->forward(x), b.atn()->forward(x)));

    // Identical subsequent steps prove the optimizer moments came back too.
    auto ba = sample_batch(clean, ex, cfg, a.rng());
    auto bb = sample_batch(clean, ex, cfg, b.rng());
    CHECK(a.train_step(ba).values() == b.train_step(bb).values());

    // Truncated file: refused, state untouched.
    std::ifstream in(dir / "a.ckpt", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    std::ofstream(dir / "t.ckpt", std::ios::binary).write(bytes.data(), bytes.size() / 2);
    Trainer c(cfg, FeatureBackbone::random(0));
    auto before = c.ten()->forward(x);
    CHECK_THROWS_AS(c.load_checkpoint(dir / "t.ckpt"), FormatError);
    CHECK(c.step() == 0);
    CHECK(torch::equal(before, c.ten()->forward(x)));

    // Wrong architecture width: rejected before anything is restored.
    auto wide = cfg;
    wide.network_width = 16;
    Trainer d(wide, FeatureBackbone::random(0));
    CHECK_THROWS_AS(d.load_checkpoint(dir / "a.ckpt"), FormatError);
    CHECK(d.step() == 0);
}

TEST_CASE("renderer from checkpoint") {
    auto dir = testing::temp_dir("ckpt_render");
    auto cfg = tiny_config(dir);
    Trainer t(cfg, FeatureBackbone::random(0));
    t.save_checkpoint(dir / "r.ckpt");
    auto r = HazeRenderer::from_checkpoint(dir / "r.ckpt");
    Rng rng(1);
    auto img = testing::random_image(3, 40, 48, rng);
    auto tm = r.transmission(img);
    CHECK(tm.height() == 40);
    CHECK(torch::equal(r.render(img, 0.0, Airlight(0.5f, 0.5f, 0.5f)).tensor(), img.tensor()));
    auto a = r.airlight(img);
    for (int c = 0; c < 3; ++c) {
        CHECK(a[c] > 0.0f);
        CHECK(a[c] < 1.0f);
    }
}

TEST_CASE("fit writes logs and checkpoints, and resumes exactly") {
    auto full_dir = testing::temp_dir("fit_full");
    auto cfg = tiny_config(full_dir);
    int calls = 0;
    FitOptions opts;
    opts.on_step = [&](const StepReport&) { ++calls; return true; };
    auto res = fit(cfg, opts);
    CHECK(res.completed);
    CHECK(res.final_step == 6);
    CHECK(calls == 6);
    CHECK(fs::exists(full_dir / kCheckpointFile));
    auto steps = read_lines(full_dir / "step_log.tsv");
    CHECK(steps.size() == 7);
    CHECK(read_lines(full_dir / "train_log.tsv").size() == 3);

    // Stop after step 4: the last checkpoint is at step 3; resuming replays 4..6.
    auto cut_dir = testing::temp_dir("fit_cut");
    auto cut = tiny_config(cut_dir);
    FitOptions stop;
    stop.on_step = [](const StepReport& r) { return r.step < 4; };
    auto partial = fit(cut, stop);
    CHECK_FALSE(partial.completed);
    CHECK(partial.final_step == 4);
    auto resumed = fit(cut);
    CHECK(resumed.completed);
    CHECK(resumed.steps_run == 3);
    CHECK(read_lines(cut_dir / "step_log.tsv") == steps);
    CHECK(read_lines(cut_dir / "train_log.tsv") == read_lines(full_dir / "train_log.tsv"));

    // A completed run resumes as a no-op; resume=false starts over.
    CHECK(fit(cut).steps_run == 0);
    auto fresh = cut;
    fresh.resume = false;
    fresh.iterations = 1;
    CHECK(fit(fresh).steps_run == 3);
}

TEST_CASE("prefetching loader runs the same number of steps") {
    auto dir = testing::temp_dir("fit_prefetch");
    auto cfg = tiny_config(dir);
    cfg.deterministic_loader = false;
    auto res = fit(cfg);
    CHECK(res.completed);
    CHECK(res.final_step == 6);
}

}
