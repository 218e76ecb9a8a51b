#include "hazesynth/training.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <future>
#include <sstream>

#include <fmt/format.h>

#include "hazesynth/archive.hpp"
#include "hazesynth/errors.hpp"
#include "hazesynth/log.hpp"

namespace hazesynth {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

double AlphaSampling::sample(Rng& rng) const {
    if (kind == Kind::fixed)
        return value;
    if (low == high)
        return low;
    return std::uniform_real_distribution<double>(low, high)(rng);
}

void AlphaSampling::validate() const {
    auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (kind == Kind::fixed) {
        if (!in_unit(value))
            throw ConfigError("alpha_value", fmt::format("alpha_value {} is outside [0, 1]", value));
    } else if (!in_unit(low) || !in_unit(high) || low > high) {
        throw ConfigError("alpha_range",
                          fmt::format("alpha_range [{}, {}] must be an ordered subrange of [0, 1]", low, high));
    }
}

namespace {

void require(bool ok, const char* key, const std::string& msg) {
    if (!ok)
        throw ConfigError(key, fmt::format("{}: {}", key, msg));
}

const char* to_string(SsimConfig::Mode m) {
    return m == SsimConfig::Mode::global ? "global" : "windowed";
}

const char* to_string(SmoothWeighting w) {
    return w == SmoothWeighting::transmission ? "transmission" : "image";
}

} // namespace

void TrainConfig::validate() const {
    require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate", "must be > 0");
    require(iterations >= 1, "iterations", "must be >= 1");
    require(batches_per_iteration >= 1, "batches_per_iteration", "must be >= 1");
    require(batch_size >= 1, "batch_size", "must be >= 1");
    require(patch_size >= PatchDiscriminatorImpl::kMinSide, "patch_size", "must be >= 64");
    require(network_width >= 1, "network_width", "must be >= 1");
    alpha_sampling.validate();

    const std::pair<const char*, double> weights[] = {
        {"lambda_S", loss_weights.lambda_S},       {"lambda_A", loss_weights.lambda_A},
        {"lambda_adv", loss_weights.lambda_adv},   {"lambda_e", loss_weights.lambda_e},
        {"lambda_l", loss_weights.lambda_l},       {"lambda_smooth", loss_weights.lambda_smooth},
        {"lambda_s", loss_weights.lambda_s},       {"lambda_c", loss_weights.lambda_c}};
    for (const auto& [key, v] : weights)
        require(v >= 0.0 && std::isfinite(v), key, "must be a finite non-negative number");

    try {
        ssim.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError("ssim_window", e.what());
    }
    require(!taps.style_layers.empty(), "style_layers", "must not be empty");
    require(!taps.content_layers.empty(), "content_layers", "must not be empty");
    for (const auto& t : taps.style_layers)
        try {
            FeatureBackbone::channels(t);
        } catch (const InvalidArgument& e) {
            throw ConfigError("style_layers", e.what());
        }
    for (const auto& t : taps.content_layers)
        try {
            FeatureBackbone::channels(t);
        } catch (const InvalidArgument& e) {
            throw ConfigError("content_layers", e.what());
        }
}

void TrainConfig::validate_paths() const {
    validate();
    require(!clean_dir.empty(), "clean_dir", "missing required key");
    require(!exemplar_dir.empty(), "exemplar_dir", "missing required key");
    require(!checkpoint_dir.empty(), "checkpoint_dir", "missing required key");
}

nlohmann::json TrainConfig::to_json() const {
    nlohmann::json j;
    j["learning_rate"] = learning_rate;
    j["iterations"] = iterations;
    j["batches_per_iteration"] = batches_per_iteration;
    j["batch_size"] = batch_size;
    j["patch_size"] = patch_size;
    j["alpha_sampling"] = alpha_sampling.kind == AlphaSampling::Kind::fixed ? "fixed" : "uniform";
    j["alpha_value"] = alpha_sampling.value;
    j["alpha_range"] = {alpha_sampling.low, alpha_sampling.high};
    j["seed"] = seed;
    j["lambda_S"] = loss_weights.lambda_S;
    j["lambda_A"] = loss_weights.lambda_A;
    j["lambda_adv"] = loss_weights.lambda_adv;
    j["lambda_e"] = loss_weights.lambda_e;
    j["lambda_l"] = loss_weights.lambda_l;
    j["lambda_smooth"] = loss_weights.lambda_smooth;
    j["lambda_s"] = loss_weights.lambda_s;
    j["lambda_c"] = loss_weights.lambda_c;
    j["ssim_mode"] = to_string(ssim.mode);
    j["ssim_window"] = ssim.window;
    j["ssim_sigma"] = ssim.window_sigma;
    j["ssim_dynamic_range"] = ssim.dynamic_range;
    j["smooth_weighting"] = to_string(smooth_weighting);
    j["style_layers"] = taps.style_layers;
    j["content_layers"] = taps.content_layers;
    j["network_width"] = network_width;
    j["clean_dir"] = clean_dir.string();
    j["exemplar_dir"] = exemplar_dir.string();
    j["backbone_weights"] = backbone_weights.string();
    j["backbone_seed"] = backbone_seed;
    j["checkpoint_dir"] = checkpoint_dir.string();
    j["resume"] = resume;
    j["deterministic_loader"] = deterministic_loader;
    return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    auto get = [&](const char* key, auto& dst) {
        if (!j.contains(key))
            return;
        try {
            j.at(key).get_to(dst);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(key, fmt::format("{}: {}", key, e.what()));
        }
    };
    auto get_path = [&](const char* key, fs::path& dst) {
        std::string s = dst.string();
        get(key, s);
        dst = s;
    };
    get("learning_rate", c.learning_rate);
    get("iterations", c.iterations);
    get("batches_per_iteration", c.batches_per_iteration);
    get("batch_size", c.batch_size);
    get("patch_size", c.patch_size);
    std::string alpha_kind = "uniform";
    get("alpha_sampling", alpha_kind);
    if (alpha_kind == "fixed")
        c.alpha_sampling.kind = AlphaSampling::Kind::fixed;
    else if (alpha_kind == "uniform")
        c.alpha_sampling.kind = AlphaSampling::Kind::uniform;
    else
        throw ConfigError("alpha_sampling", "alpha_sampling must be 'fixed' or 'uniform'");
    get("alpha_value", c.alpha_sampling.value);
    if (j.contains("alpha_range")) {
        std::vector<double> r;
        get("alpha_range", r);
        if (r.size() != 2)
            throw ConfigError("alpha_range", "alpha_range needs exactly two values");
        c.alpha_sampling.low = r[0];
        c.alpha_sampling.high = r[1];
    }
    get("seed", c.seed);
    get("lambda_S", c.loss_weights.lambda_S);
    get("lambda_A", c.loss_weights.lambda_A);
    get("lambda_adv", c.loss_weights.lambda_adv);
    get("lambda_e", c.loss_weights.lambda_e);
    get("lambda_l", c.loss_weights.lambda_l);
    get("lambda_smooth", c.loss_weights.lambda_smooth);
    get("lambda_s", c.loss_weights.lambda_s);
    get("lambda_c", c.loss_weights.lambda_c);
    std::string mode = to_string(c.ssim.mode);
    get("ssim_mode", mode);
    if (mode == "global")
        c.ssim.mode = SsimConfig::Mode::global;
    else if (mode == "windowed")
        c.ssim.mode = SsimConfig::Mode::windowed;
    else
        throw ConfigError("ssim_mode", "ssim_mode must be 'global' or 'windowed'");
    get("ssim_window", c.ssim.window);
    get("ssim_sigma", c.ssim.window_sigma);
    get("ssim_dynamic_range", c.ssim.dynamic_range);
    std::string weighting = to_string(c.smooth_weighting);
    get("smooth_weighting", weighting);
    if (weighting == "transmission")
        c.smooth_weighting = SmoothWeighting::transmission;
    else if (weighting == "image")
        c.smooth_weighting = SmoothWeighting::image;
    else
        throw ConfigError("smooth_weighting", "smooth_weighting must be 'transmission' or 'image'");
    get("style_layers", c.taps.style_layers);
    get("content_layers", c.taps.content_layers);
    get("network_width", c.network_width);
    get_path("clean_dir", c.clean_dir);
    get_path("exemplar_dir", c.exemplar_dir);
    get_path("backbone_weights", c.backbone_weights);
    get("backbone_seed", c.backbone_seed);
    get_path("checkpoint_dir", c.checkpoint_dir);
    get("resume", c.resume);
    get("deterministic_loader", c.deterministic_loader);
    return c;
}

// ---------------------------------------------------------------------------
// Data

std::vector<fs::path> list_images(const fs::path& dir) {
    std::error_code ec;
    if (!fs::is_directory(dir, ec))
        throw DataError(fmt::format("not a directory: {}", dir.string()));
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file())
            continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg")
            out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

ImageSet ImageSet::load_dir(const fs::path& dir, int64_t min_side) {
    ImageSet set;
    set.paths = list_images(dir);
    if (set.paths.empty())
        throw DataError(fmt::format("no PNG/JPEG images in {}", dir.string()));
    set.images.reserve(set.paths.size());
    for (const auto& p : set.paths) {
        Image img = load_image(p);
        const int64_t h = img.height();
        const int64_t w = img.width();
        if (std::min(h, w) < min_side) {
            const double s = static_cast<double>(min_side) / static_cast<double>(std::min(h, w));
            const int64_t nh = std::max<int64_t>(min_side, static_cast<int64_t>(std::ceil(h * s)));
            const int64_t nw = std::max<int64_t>(min_side, static_cast<int64_t>(std::ceil(w * s)));
            log::warn("{} is {}x{}, smaller than the patch size {}; upscaling to {}x{}",
                         p.string(), h, w, min_side, nh, nw);
            img = resize_bilinear(img, nh, nw);
        }
        set.images.push_back(std::move(img));
    }
    return set;
}

namespace {

torch::Tensor random_crops(const ImageSet& set, int64_t count, int64_t patch, Rng& rng) {
    std::vector<torch::Tensor> crops;
    crops.reserve(static_cast<std::size_t>(count));
    std::uniform_int_distribution<std::size_t> pick(0, set.size() - 1);
    for (int64_t i = 0; i < count; ++i) {
        const auto& img = set.images[pick(rng)].tensor();
        const int64_t oy = std::uniform_int_distribution<int64_t>(0, img.size(1) - patch)(rng);
        const int64_t ox = std::uniform_int_distribution<int64_t>(0, img.size(2) - patch)(rng);
        crops.push_back(img.slice(1, oy, oy + patch).slice(2, ox, ox + patch));
    }
    return torch::stack(crops).contiguous();
}

} // namespace

Batch sample_batch(const ImageSet& clean, const ImageSet& exemplar, const TrainConfig& cfg, Rng& rng) {
    if (clean.empty())
        throw DataError("clean image set is empty");
    if (exemplar.empty())
        throw DataError("exemplar image set is empty");
    Batch b;
    b.clean = random_crops(clean, cfg.batch_size, cfg.patch_size, rng);
    b.exemplar = random_crops(exemplar, cfg.batch_size, cfg.patch_size, rng);
    b.alpha = cfg.alpha_sampling.sample(rng);
    return b;
}

// ---------------------------------------------------------------------------
// Reports

const std::vector<std::string>& StepReport::names() {
    static const std::vector<std::string> n{"L_e",   "L_l",     "L_smooth", "L_S",     "L_s",
                                            "L_c",   "L_A",     "L_adv_d",  "L_adv_g", "L_total"};
    return n;
}

std::vector<double> StepReport::values() const {
    return {L_e, L_l, L_smooth, L_S, L_s, L_c, L_A, L_adv_d, L_adv_g, L_total};
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

constexpr uint64_t kTenSeedOffset = 0x9E3779B97F4A7C15ULL;
constexpr uint64_t kAtnSeedOffset = 0xBF58476D1CE4E5B9ULL;
constexpr uint64_t kDiscSeedOffset = 0x94D049BB133111EBULL;

void set_trainable(torch::nn::Module& m, bool on) {
    for (auto& p : m.parameters())
        p.set_requires_grad(on);
}

double scalar(const torch::Tensor& t, const char* term) {
    const double v = t.item<double>();
    if (!std::isfinite(v))
        throw NumericError(term, fmt::format("loss term {} is not finite ({})", term, v));
    return v;
}

// Finite losses can still back-propagate inf/NaN; refuse to apply such an update.
void require_finite_gradients(const std::vector<torch::Tensor>& params, const char* term) {
    for (const auto& p : params)
        if (p.grad().defined() && !torch::isfinite(p.grad()).all().item<bool>())
            throw NumericError(term, fmt::format("non-finite gradient in {}", term));
}

std::vector<torch::Tensor> generator_parameters(TransmissionNet& ten, AirlightNet& atn) {
    auto params = ten->parameters();
    for (auto& p : atn->parameters())
        params.push_back(p);
    return params;
}

void store_adam(Archive& ar, const std::string& prefix, torch::optim::Adam& opt) {
    auto& state = opt.state();
    const auto& params = opt.param_groups().at(0).params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto it = state.find(params[i].unsafeGetTensorImpl());
        if (it == state.end())
            continue;
        const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
        const std::string key = fmt::format("{}{}.", prefix, i);
        ar.put(key + "step", torch::tensor({static_cast<int64_t>(s.step())}, torch::kInt64));
        ar.put(key + "exp_avg", s.exp_avg());
        ar.put(key + "exp_avg_sq", s.exp_avg_sq());
    }
}

void restore_adam(const Archive& ar, const std::string& prefix, torch::optim::Adam& opt) {
    auto& state = opt.state();
    state.clear();
    const auto& params = opt.param_groups().at(0).params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string key = fmt::format("{}{}.", prefix, i);
        if (!ar.contains(key + "step"))
            continue;
        auto s = std::make_unique<torch::optim::AdamParamState>();
        s->step(ar.get(key + "step").item<int64_t>());
        s->exp_avg(ar.get(key + "exp_avg").clone());
        s->exp_avg_sq(ar.get(key + "exp_avg_sq").clone());
        state[params[i].unsafeGetTensorImpl()] = std::move(s);
    }
}

// Every parameter/buffer of `m` must be present with the right shape.
void check_module(const Archive& ar, const std::string& prefix, const torch::nn::Module& m) {
    auto check = [&](const std::string& key, const torch::Tensor& t) {
        const auto& src = ar.get(prefix + key);
        if (src.sizes() != t.sizes() || src.scalar_type() != t.scalar_type())
            throw FormatError(fmt::format("checkpoint: shape/dtype mismatch for '{}{}'", prefix, key));
    };
    for (const auto& p : m.named_parameters(true))
        check(p.key(), p.value());
    for (const auto& b : m.named_buffers(true))
        check(b.key(), b.value());
}

void check_adam(const Archive& ar, const std::string& prefix, torch::optim::Adam& opt) {
    const auto& params = opt.param_groups().at(0).params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string key = fmt::format("{}{}.", prefix, i);
        if (!ar.contains(key + "step"))
            continue;
        for (const char* part : {"exp_avg", "exp_avg_sq"})
            if (ar.get(key + part).sizes() != params[i].sizes())
                throw FormatError(fmt::format("checkpoint: shape mismatch for '{}{}'", key, part));
    }
}

} // namespace

std::unique_ptr<torch::optim::Adam> make_optimizer(std::vector<torch::Tensor> params,
                                                   double learning_rate) {
    return std::make_unique<torch::optim::Adam>(
        std::move(params), torch::optim::AdamOptions(learning_rate).betas({0.9, 0.999}));
}

Trainer::Trainer(TrainConfig cfg, FeatureBackbone backbone)
    : cfg_(std::move(cfg)),
      backbone_(std::move(backbone)),
      ten_(cfg_.network_width),
      atn_(cfg_.network_width),
      disc_(),
      rng_(cfg_.seed) {
    cfg_.validate();
    if (!backbone_.loaded())
        throw StateError("Trainer: feature backbone is not loaded");
    init_parameters(*ten_, cfg_.seed ^ kTenSeedOffset);
    init_parameters(*atn_, cfg_.seed ^ kAtnSeedOffset);
    init_parameters(*disc_, cfg_.seed ^ kDiscSeedOffset);

    opt_g_ = make_optimizer(generator_parameters(ten_, atn_), cfg_.learning_rate);
    opt_d_ = make_optimizer(disc_->parameters(), cfg_.learning_rate);
}

Trainer::Rendered Trainer::render(const Batch& batch) {
    Rendered r;
    auto logits = ten_->logits(batch.clean);
    r.transmission = torch::sigmoid(logits);
    r.dense_transmission = ops::density_from_logits(logits, batch.alpha);
    r.airlight = atn_->forward(batch.exemplar);
    r.hazy = ops::render(batch.clean, r.dense_transmission, r.airlight);
    return r;
}

StepReport Trainer::train_step(const Batch& batch) {
    const auto& w = cfg_.loss_weights;
    const auto& x = batch.clean;
    const auto& y = batch.exemplar;
    if (!x.defined() || !y.defined() || x.sizes() != y.sizes())
        throw InvalidArgument("train_step: clean and exemplar batches must have the same shape");

    StepReport report;
    auto r = render(batch);

    // Discriminator: real = exemplar, fake = detached rendering.
    set_trainable(*disc_, true);
    opt_d_->zero_grad();
    auto loss_d = adversarial_loss_discriminator(disc_->forward(y), disc_->forward(r.hazy.detach()));
    report.L_adv_d = scalar(loss_d, "L_adv_d");
    loss_d.backward();
    require_finite_gradients(disc_->parameters(), "grad(discriminator)");
    opt_d_->step();

    // Generator (TEN + ATN) against the updated, frozen discriminator.
    set_trainable(*disc_, false);
    auto structure = structure_loss(x, r.transmission, w, cfg_.ssim, cfg_.smooth_weighting);
    auto airlight = airlight_loss(x, y, r.hazy, w, cfg_.taps, backbone_);
    auto adv_g = adversarial_loss_generator(disc_->forward(r.hazy));
    report.L_e = scalar(structure.edge, "L_e");
    report.L_l = scalar(structure.luminance, "L_l");
    report.L_smooth = scalar(structure.smooth, "L_smooth");
    report.L_S = scalar(structure.total, "L_S");
    report.L_s = scalar(airlight.style, "L_s");
    report.L_c = scalar(airlight.content, "L_c");
    report.L_A = scalar(airlight.total, "L_A");
    report.L_adv_g = scalar(adv_g, "L_adv_g");
    auto total = total_generator_loss(structure.total, airlight.total, adv_g, w);
    report.L_total = scalar(total, "L_total");

    opt_g_->zero_grad();
    total.backward();
    require_finite_gradients(generator_parameters(ten_, atn_), "grad(generator)");
    opt_g_->step();
    set_trainable(*disc_, true);

    report.step = ++step_;
    return report;
}

void Trainer::save_checkpoint(const fs::path& path) const {
    Archive ar(kCheckpointKind);
    store_module(ar, "ten.", *ten_);
    store_module(ar, "atn.", *atn_);
    store_module(ar, "disc.", *disc_);
    store_adam(ar, "opt_g.", *opt_g_);
    store_adam(ar, "opt_d.", *opt_d_);
    std::ostringstream rng_state;
    rng_state << rng_;
    ar.meta()["step"] = step_;
    ar.meta()["rng"] = rng_state.str();
    ar.meta()["config"] = cfg_.to_json();
    ar.meta()["backbone"] = backbone_.id();
    ar.save(path);
}

void Trainer::load_checkpoint(const fs::path& path) {
    const Archive ar = Archive::load(path, kCheckpointKind);
    // Validate everything before touching live state.
    check_module(ar, "ten.", *ten_);
    check_module(ar, "atn.", *atn_);
    check_module(ar, "disc.", *disc_);
    check_adam(ar, "opt_g.", *opt_g_);
    check_adam(ar, "opt_d.", *opt_d_);
    Rng rng;
    int64_t step = 0;
    try {
        std::istringstream is(ar.meta().at("rng").get<std::string>());
        is >> rng;
        if (!is)
            throw FormatError("checkpoint: corrupt RNG state");
        step = ar.meta().at("step").get<int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("checkpoint: {}", e.what()));
    }
    if (ar.meta().contains("config") &&
        ar.meta()["config"].value("seed", cfg_.seed) != cfg_.seed)
        log::warn("checkpoint {} was written with a different seed", path.string());

    restore_module(ar, "ten.", *ten_);
    restore_module(ar, "atn.", *atn_);
    restore_module(ar, "disc.", *disc_);
    restore_adam(ar, "opt_g.", *opt_g_);
    restore_adam(ar, "opt_d.", *opt_d_);
    rng_ = rng;
    step_ = step;
}

// ---------------------------------------------------------------------------
// Inference

HazeRenderer::HazeRenderer(TransmissionNet ten, AirlightNet atn)
    : ten_(std::move(ten)), atn_(std::move(atn)) {
    ten_->eval();
    atn_->eval();
}

HazeRenderer HazeRenderer::from_checkpoint(const fs::path& path) {
    const Archive ar = Archive::load(path, kCheckpointKind);
    int64_t width = 64;
    if (ar.meta().contains("config"))
        width = ar.meta()["config"].value("network_width", width);
    TransmissionNet ten(width);
    AirlightNet atn(width);
    check_module(ar, "ten.", *ten);
    check_module(ar, "atn.", *atn);
    restore_module(ar, "ten.", *ten);
    restore_module(ar, "atn.", *atn);
    return HazeRenderer(std::move(ten), std::move(atn));
}

TransmissionMap HazeRenderer::transmission(const Image& clean) const {
    if (clean.channels() != 3)
        throw InvalidArgument("transmission: expected a 3-channel image");
    torch::NoGradGuard no_grad;
    TransmissionNet ten = ten_;
    auto t = ten->forward(clean.tensor().unsqueeze(0)).squeeze(0);
    return TransmissionMap(t.clamp(std::numeric_limits<float>::min(), 1.0));
}

Airlight HazeRenderer::airlight(const Image& exemplar) const {
    if (exemplar.channels() != 3)
        throw InvalidArgument("airlight: expected a 3-channel image");
    torch::NoGradGuard no_grad;
    AirlightNet atn = atn_;
    auto a = atn->forward(exemplar.tensor().unsqueeze(0)).squeeze(0).contiguous();
    return Airlight(a[0].item<float>(), a[1].item<float>(), a[2].item<float>());
}

Image HazeRenderer::render(const Image& clean, double alpha, const Airlight& airlight) const {
    auto t = apply_density(transmission(clean), alpha);
    return render_haze(clean, t, airlight);
}

// ---------------------------------------------------------------------------
// Training loop

FeatureBackbone load_backbone(const fs::path& weights, uint64_t seed) {
    if (weights.empty()) {
        log::warn("no backbone_weights configured; using a randomly initialized VGG16 (seed {})", seed);
        return FeatureBackbone::random(seed);
    }
    return FeatureBackbone::from_weights(weights);
}

namespace {

// Keeps the header plus rows whose first column is <= `limit`.
void truncate_log(const fs::path& path, int64_t limit) {
    std::ifstream in(path);
    if (!in)
        return;
    std::vector<std::string> keep;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            keep.push_back(line);
            header = false;
            continue;
        }
        if (line.empty())
            continue;
        if (std::stoll(line.substr(0, line.find('\t'))) <= limit)
            keep.push_back(line);
    }
    in.close();
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : keep)
        out << l << '\n';
}

void write_header(const fs::path& path, const std::string& lead) {
    std::ofstream out(path, std::ios::trunc);
    out << lead;
    for (const auto& n : StepReport::names())
        out << '\t' << n;
    out << '\n';
}

void append_row(const fs::path& path, const std::vector<int64_t>& lead, const std::vector<double>& values) {
    std::ofstream out(path, std::ios::app);
    for (std::size_t i = 0; i < lead.size(); ++i)
        out << (i ? "\t" : "") << lead[i];
    for (double v : values)
        out << '\t' << fmt::format("{}", v);
    out << '\n';
}

} // namespace

FitResult fit(const TrainConfig& cfg, const FitOptions& opts) {
    cfg.validate_paths();
    fs::create_directories(cfg.checkpoint_dir);
    log::info("resolved training config: {}", cfg.to_json().dump());

    auto backbone = load_backbone(cfg.backbone_weights, cfg.backbone_seed);
    const ImageSet clean = ImageSet::load_dir(cfg.clean_dir, cfg.patch_size);
    const ImageSet exemplar = ImageSet::load_dir(cfg.exemplar_dir, cfg.patch_size);
    log::info("corpus: {} clean images, {} exemplars", clean.size(), exemplar.size());

    Trainer trainer(cfg, std::move(backbone));
    const fs::path ckpt = cfg.checkpoint_dir / kCheckpointFile;
    const fs::path step_log = cfg.checkpoint_dir / "step_log.tsv";
    const fs::path iter_log = cfg.checkpoint_dir / "train_log.tsv";

    if (cfg.resume && fs::exists(ckpt)) {
        trainer.load_checkpoint(ckpt);
        log::info("resuming from {} at step {}", ckpt.string(), trainer.step());
        truncate_log(step_log, trainer.step());
        truncate_log(iter_log, trainer.step() / cfg.batches_per_iteration);
    } else {
        write_header(step_log, "step");
        write_header(iter_log, "iteration\tstep");
    }

    FitResult result;
    result.checkpoint = ckpt;
    const int64_t total_steps = cfg.iterations * cfg.batches_per_iteration;
    auto next_batch = [&] { return sample_batch(clean, exemplar, cfg, trainer.rng()); };
    std::future<Batch> prefetched;

    for (int64_t it = trainer.step() / cfg.batches_per_iteration; it < cfg.iterations; ++it) {
        std::vector<double> sums(StepReport::names().size(), 0.0);
        int64_t in_iter = 0;
        for (int64_t b = trainer.step() % cfg.batches_per_iteration; b < cfg.batches_per_iteration; ++b) {
            Batch batch;
            if (cfg.deterministic_loader) {
                batch = next_batch();
            } else {
                batch = prefetched.valid() ? prefetched.get() : next_batch();
                if (trainer.step() + 1 < total_steps)
                    prefetched = std::async(std::launch::async, next_batch);
            }
            const StepReport report = trainer.train_step(batch);
            ++result.steps_run;
            ++in_iter;
            const auto values = report.values();
            for (std::size_t k = 0; k < values.size(); ++k)
                sums[k] += values[k];
            append_row(step_log, {report.step}, values);
            log::debug("step {} L_total {}", report.step, report.L_total);
            if (opts.on_step && !opts.on_step(report)) {
                if (prefetched.valid())
                    prefetched.wait();
                result.final_step = trainer.step();
                return result;
            }
        }
        for (auto& s : sums)
            s /= static_cast<double>(in_iter);
        append_row(iter_log, {it + 1, trainer.step()}, sums);
        if (prefetched.valid())
            prefetched.wait();  // the worker is still advancing the RNG being saved
        trainer.save_checkpoint(ckpt);
        log::info("iteration {}/{} step {} L_total {:.6f}", it + 1, cfg.iterations, trainer.step(),
                     sums.back());
    }
    result.final_step = trainer.step();
    result.completed = true;
    return result;
}

} // namespace hazesynth
