#include "hazesynth/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "hazesynth/errors.hpp"
#include "hazesynth/log.hpp"
#include "hazesynth/eval.hpp"
#include "hazesynth/training.hpp"

namespace hazesynth::cli {

namespace fs = std::filesystem;

std::string format_alpha(double alpha) {
    std::string s = fmt::format("{}", alpha);
    if (s.find_first_of(".e") == std::string::npos)
        s += ".0";
    return s;
}

namespace {

// Every key of the config file. Names mirror TrainConfig / BaselineConfig fields.
struct Settings {
    TrainConfig train;
    std::string alpha_sampling = "uniform";
    std::vector<double> alpha_range{0.2, 1.0};
    std::string ssim_mode = "global";
    std::string smooth_weighting = "transmission";
    std::string clean_dir, exemplar_dir, backbone_weights, checkpoint_dir;

    BaselineConfig baseline;
    std::vector<double> beta_range{0.6, 1.8};
    std::vector<double> airlight_range{0.7, 1.0};

    std::string rendered_dir, reference_dir, report_path = "fid_report.json";
    std::string fid_extractor = "vgg16:relu4_3";
    std::string log_level = "info";
};

void add_settings(CLI::App& app, Settings& s) {
    auto& t = s.train;
    auto& w = t.loss_weights;
    const std::string g = "Configuration (also accepted as config-file keys)";
    app.add_option("--learning_rate", t.learning_rate)->group(g)->capture_default_str();
    app.add_option("--iterations", t.iterations)->group(g)->capture_default_str();
    app.add_option("--batches_per_iteration", t.batches_per_iteration)->group(g)->capture_default_str();
    app.add_option("--batch_size", t.batch_size)->group(g)->capture_default_str();
    app.add_option("--patch_size", t.patch_size)->group(g)->capture_default_str();
    app.add_option("--alpha_sampling", s.alpha_sampling, "fixed or uniform")
        ->group(g)->capture_default_str()->check(CLI::IsMember({"fixed", "uniform"}));
    app.add_option("--alpha_value", t.alpha_sampling.value)->group(g)->capture_default_str();
    app.add_option("--alpha_range", s.alpha_range)->group(g)->expected(2)->delimiter(',')->capture_default_str();
    app.add_option("--seed", t.seed, "Seed for initialization, sampling and the baseline")
        ->capture_default_str();
    app.add_option("--lambda_S", w.lambda_S)->group(g)->capture_default_str();
    app.add_option("--lambda_A", w.lambda_A)->group(g)->capture_default_str();
    app.add_option("--lambda_adv", w.lambda_adv)->group(g)->capture_default_str();
    app.add_option("--lambda_e", w.lambda_e)->group(g)->capture_default_str();
    app.add_option("--lambda_l", w.lambda_l)->group(g)->capture_default_str();
    app.add_option("--lambda_smooth", w.lambda_smooth)->group(g)->capture_default_str();
    app.add_option("--lambda_s", w.lambda_s)->group(g)->capture_default_str();
    app.add_option("--lambda_c", w.lambda_c)->group(g)->capture_default_str();
    app.add_option("--ssim_mode", s.ssim_mode)->group(g)->capture_default_str()
        ->check(CLI::IsMember({"global", "windowed"}));
    app.add_option("--ssim_window", t.ssim.window)->group(g)->capture_default_str();
    app.add_option("--ssim_sigma", t.ssim.window_sigma)->group(g)->capture_default_str();
    app.add_option("--smooth_weighting", s.smooth_weighting)->group(g)->capture_default_str()
        ->check(CLI::IsMember({"transmission", "image"}));
    app.add_option("--style_layers", t.taps.style_layers)->group(g)->delimiter(',')->capture_default_str();
    app.add_option("--content_layers", t.taps.content_layers)->group(g)->delimiter(',')->capture_default_str();
    app.add_option("--network_width", t.network_width)->group(g)->capture_default_str();
    app.add_option("--clean_dir", s.clean_dir)->group(g);
    app.add_option("--exemplar_dir", s.exemplar_dir)->group(g);
    app.add_option("--backbone_weights", s.backbone_weights)->group(g);
    app.add_option("--backbone_seed", t.backbone_seed)->group(g)->capture_default_str();
    app.add_option("--checkpoint_dir", s.checkpoint_dir)->group(g);
    app.add_option("--resume", t.resume)->group(g)->capture_default_str();
    app.add_option("--deterministic_loader", t.deterministic_loader)->group(g)->capture_default_str();
    app.add_option("--beta_range", s.beta_range)->group(g)->expected(2)->delimiter(',')->capture_default_str();
    app.add_option("--airlight_range", s.airlight_range)->group(g)->expected(2)->delimiter(',')->capture_default_str();
    app.add_option("--depth_scale", s.baseline.depth_scale)->group(g)->capture_default_str();
    app.add_option("--rendered_dir", s.rendered_dir)->group(g);
    app.add_option("--reference_dir", s.reference_dir)->group(g);
    app.add_option("--report_path", s.report_path)->group(g)->capture_default_str();
    app.add_option("--fid_extractor", s.fid_extractor, "haze-stats or vgg16:<tap>")
        ->group(g)->capture_default_str();
    app.add_option("--log-level", s.log_level)->capture_default_str()
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
}

// Folds the string-typed settings into the typed configs.
void resolve(Settings& s) {
    auto& t = s.train;
    t.alpha_sampling.kind =
        s.alpha_sampling == "fixed" ? AlphaSampling::Kind::fixed : AlphaSampling::Kind::uniform;
    t.alpha_sampling.low = s.alpha_range.at(0);
    t.alpha_sampling.high = s.alpha_range.at(1);
    t.ssim.mode = s.ssim_mode == "windowed" ? SsimConfig::Mode::windowed : SsimConfig::Mode::global;
    t.smooth_weighting =
        s.smooth_weighting == "image" ? SmoothWeighting::image : SmoothWeighting::transmission;
    t.clean_dir = s.clean_dir;
    t.exemplar_dir = s.exemplar_dir;
    t.backbone_weights = s.backbone_weights;
    t.checkpoint_dir = s.checkpoint_dir;
    s.baseline.beta_range = {s.beta_range.at(0), s.beta_range.at(1)};
    s.baseline.airlight_range = {s.airlight_range.at(0), s.airlight_range.at(1)};
    s.baseline.seed = t.seed;
}

void write_resolved(const CLI::App& app, const fs::path& dir) {
    const std::string text = app.config_to_str(true, false);
    log::info("resolved config:\n{}", text);
    if (dir.empty())
        return;
    fs::create_directories(dir);
    std::ofstream(dir / "resolved_config.toml") << text;
}

fs::path require_dir_key(const std::string& value, const char* key) {
    if (value.empty())
        throw ConfigError(key, fmt::format("missing required key {}", key));
    return value;
}

// ---------------------------------------------------------------------------

int cmd_train(const CLI::App& app, Settings& s) {
    resolve(s);
    s.train.validate_paths();
    write_resolved(app, s.train.checkpoint_dir);
    const auto result = fit(s.train);
    std::cout << fmt::format("trained {} steps; checkpoint {}\n", result.final_step,
                             result.checkpoint.string());
    return kExitOk;
}

struct RenderArgs {
    std::string checkpoint, input, exemplar, out_dir;
    double alpha = 1.0;
    std::vector<double> airlight;
    bool dump_transmission = false;
};

int cmd_render(const CLI::App& app, Settings& s, const RenderArgs& a) {
    if (!(a.alpha >= 0.0 && a.alpha <= 1.0))
        throw ConfigError("alpha", fmt::format("alpha {} is outside [0, 1]", a.alpha));
    if (a.exemplar.empty() && a.airlight.empty())
        throw ConfigError("exemplar", "render needs --exemplar or --airlight");
    std::optional<Airlight> literal;
    if (!a.airlight.empty()) {
        try {
            literal = Airlight(static_cast<float>(a.airlight.at(0)), static_cast<float>(a.airlight.at(1)),
                               static_cast<float>(a.airlight.at(2)));
        } catch (const InvalidArgument& e) {
            throw ConfigError("airlight", e.what());
        }
    }
    resolve(s);
    write_resolved(app, a.out_dir);

    const auto renderer = HazeRenderer::from_checkpoint(a.checkpoint);
    const Airlight airlight = literal ? *literal : renderer.airlight(load_image(a.exemplar));
    log::info("airlight ({:.4f}, {:.4f}, {:.4f})", airlight[0], airlight[1], airlight[2]);

    std::vector<fs::path> inputs;
    if (fs::is_directory(a.input))
        inputs = list_images(a.input);
    else
        inputs.push_back(a.input);
    if (inputs.empty())
        throw DataError(fmt::format("no PNG/JPEG images in {}", a.input));

    const fs::path out_dir = a.out_dir;
    fs::create_directories(out_dir);
    const std::string suffix = "_a" + format_alpha(a.alpha);
    for (const auto& p : inputs) {
        const Image clean = load_image(p);
        const auto t = renderer.transmission(clean);
        const Image hazy = render_haze(clean, apply_density(t, a.alpha), airlight);
        save_image(hazy, out_dir / (p.stem().string() + suffix + ".png"));
        if (a.dump_transmission)
            save_image(t, out_dir / (p.stem().string() + "_t.png"));
    }
    std::cout << fmt::format("rendered {} image(s) into {}\n", inputs.size(), out_dir.string());
    return kExitOk;
}

struct BaselineArgs {
    std::string input_dir, depth_dir, out_dir;
};

std::optional<fs::path> find_depth(const fs::path& dir, const std::string& stem) {
    for (const char* ext : {".png", ".tif", ".tiff", ".exr", ".jpg", ".jpeg", ".PNG", ".TIF", ".TIFF"}) {
        fs::path p = dir / (stem + ext);
        if (fs::is_regular_file(p))
            return p;
    }
    return std::nullopt;
}

int cmd_baseline(const CLI::App& app, Settings& s, const BaselineArgs& a) {
    resolve(s);
    s.baseline.validate();
    const auto inputs = list_images(a.input_dir);
    if (inputs.empty())
        throw DataError(fmt::format("no PNG/JPEG images in {}", a.input_dir));
    std::vector<fs::path> depths;
    for (const auto& p : inputs) {
        auto d = find_depth(a.depth_dir, p.stem().string());
        if (!d)
            throw DataError(fmt::format("missing depth map for '{}' in {}", p.stem().string(), a.depth_dir));
        depths.push_back(*d);
    }
    write_resolved(app, a.out_dir);

    Rng rng(s.baseline.seed);
    const fs::path out_dir = a.out_dir;
    std::ofstream log(out_dir / "baseline_log.tsv", std::ios::trunc);
    log << "stem\tbeta\tairlight\n";
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto r = baseline_render(load_image(inputs[i]), load_depth(depths[i], s.baseline.depth_scale),
                                       s.baseline, rng);
        save_image(r.image, out_dir / (inputs[i].stem().string() + ".png"));
        log << inputs[i].stem().string() << '\t' << fmt::format("{}", r.beta) << '\t'
            << fmt::format("{}", r.airlight) << '\n';
    }
    std::cout << fmt::format("baseline rendered {} image(s) into {}\n", inputs.size(), out_dir.string());
    return kExitOk;
}

struct EvalArgs {
    std::string rendered, reference;
};

int cmd_eval(const CLI::App& app, Settings& s, const EvalArgs& a) {
    resolve(s);
    const fs::path rendered = require_dir_key(a.rendered.empty() ? s.rendered_dir : a.rendered, "rendered_dir");
    const fs::path reference =
        require_dir_key(a.reference.empty() ? s.reference_dir : a.reference, "reference_dir");
    const fs::path report_path = s.report_path;
    write_resolved(app, {});

    FeatureBackbone backbone;
    if (s.fid_extractor != "haze-stats")
        backbone = load_backbone(s.train.backbone_weights, s.train.backbone_seed);
    const auto extractor = make_extractor(s.fid_extractor, backbone);
    EvalReport report;
    try {
        report = evaluate_sets(rendered, reference, *extractor);
    } catch (const DataError& e) {
        throw ConfigError("rendered_dir", e.what());
    }
    if (report_path.has_parent_path())
        fs::create_directories(report_path.parent_path());
    std::ofstream(report_path) << report.to_json().dump(2) << '\n';
    fs::path table_path = report_path;
    table_path.replace_extension(".txt");
    std::ofstream(table_path) << report.table();
    std::cout << report.table();
    return kExitOk;
}

} // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"Haze rendering, baseline synthesis and set evaluation"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "Key-value config file (TOML syntax); flags override it");

    Settings s;
    add_settings(app, s);

    auto* train = app.add_subcommand("train", "Train the transmission and airlight networks");

    RenderArgs ra;
    auto* render = app.add_subcommand("render", "Render haze into an image or a directory of images");
    render->add_option("--checkpoint", ra.checkpoint)->required();
    render->add_option("--input", ra.input, "Image file or directory")->required();
    render->add_option("--alpha", ra.alpha, "Haze density in [0, 1]")->capture_default_str();
    auto* ex = render->add_option("--exemplar", ra.exemplar, "Hazy exemplar supplying the airlight");
    auto* al = render->add_option("--airlight", ra.airlight, "Literal airlight r,g,b")
                   ->expected(3)->delimiter(',');
    ex->excludes(al);
    render->add_option("--out-dir", ra.out_dir)->required();
    render->add_flag("--dump-transmission", ra.dump_transmission, "Also write <stem>_t.png");

    BaselineArgs ba;
    auto* baseline = app.add_subcommand("baseline", "Depth-based haze synthesis with random beta and airlight");
    baseline->add_option("--input-dir", ba.input_dir)->required();
    baseline->add_option("--depth-dir", ba.depth_dir)->required();
    baseline->add_option("--out-dir", ba.out_dir)->required();

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "FID between a rendered set and a reference set");
    eval->add_option("rendered", ea.rendered, "Rendered image directory (or rendered_dir)");
    eval->add_option("reference", ea.reference, "Reference image directory (or reference_dir)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    log::set_level(log::parse_level(s.log_level));
    try {
        if (*train)
            return cmd_train(app, s);
        if (*render)
            return cmd_render(app, s, ra);
        if (*baseline)
            return cmd_baseline(app, s, ba);
        if (*eval)
            return cmd_eval(app, s, ea);
    } catch (const ConfigError& e) {
        std::cerr << "config error [" << e.key() << "]: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}

int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv{"hazesynth"};
    for (const auto& a : args)
        argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

} // namespace hazesynth::cli
