#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "hazesynth/image.hpp"
#include "hazesynth/losses.hpp"
#include "hazesynth/networks.hpp"

namespace hazesynth {

using Rng = std::mt19937_64;

struct AlphaSampling {
    enum class Kind { fixed, uniform };

    Kind kind = Kind::uniform;
    double value = 1.0;  // fixed mode
    double low = 0.2;    // uniform mode
    double high = 1.0;

    static AlphaSampling fixed(double v) { return {Kind::fixed, v, v, v}; }
    static AlphaSampling uniform(double lo, double hi) { return {Kind::uniform, 1.0, lo, hi}; }

    double sample(Rng& rng) const;
    void validate() const;
};

struct TrainConfig {
    double learning_rate = 0.001;
    int64_t iterations = 100;
    int64_t batches_per_iteration = 100;
    int64_t batch_size = 32;
    int64_t patch_size = 128;
    AlphaSampling alpha_sampling;
    uint64_t seed = 0;
    LossWeights loss_weights;
    SsimConfig ssim;
    SmoothWeighting smooth_weighting = SmoothWeighting::transmission;
    FeatureTaps taps;
    int64_t network_width = 64;

    std::filesystem::path clean_dir;
    std::filesystem::path exemplar_dir;
    // Empty selects the seeded random backbone (see backbone_seed).
    std::filesystem::path backbone_weights;
    uint64_t backbone_seed = 0;
    std::filesystem::path checkpoint_dir;

    // Continue from checkpoint_dir/latest.ckpt when it exists.
    bool resume = true;
    // Sample batches inline on the training thread. When false the next batch
    // is prefetched on a worker thread, which makes checkpointed RNG state run
    // one batch ahead and breaks bit-exact resumption.
    bool deterministic_loader = true;

    // Throws ConfigError naming the first offending key.
    void validate() const;
    // Like validate() but also requires the corpus directories to be set.
    void validate_paths() const;

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

// In-memory image collection from a directory of PNG/JPEG files.
struct ImageSet {
    std::vector<std::filesystem::path> paths;
    std::vector<Image> images;

    // Sorted by filename. Images with a side shorter than `min_side` are
    // bilinearly upscaled (aspect preserved) with a logged warning.
    // Throws DataError naming the directory when it holds no images.
    static ImageSet load_dir(const std::filesystem::path& dir, int64_t min_side = 0);
    std::size_t size() const noexcept { return images.size(); }
    bool empty() const noexcept { return images.empty(); }
};

// Lists *.png / *.jpg / *.jpeg in `dir` (case-insensitive), sorted.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

struct Batch {
    torch::Tensor clean;     // B×3×p×p
    torch::Tensor exemplar;  // B×3×p×p, unpaired with `clean`
    double alpha = 1.0;
};

// Independent uniform crops (image chosen with replacement, uniform origin)
// from each set, plus an alpha drawn from cfg.alpha_sampling.
Batch sample_batch(const ImageSet& clean, const ImageSet& exemplar, const TrainConfig& cfg, Rng& rng);

// Adam with the default moment coefficients (0.9, 0.999), shared by both players.
std::unique_ptr<torch::optim::Adam> make_optimizer(std::vector<torch::Tensor> params,
                                                   double learning_rate);

struct StepReport {
    int64_t step = 0;
    double L_e = 0, L_l = 0, L_smooth = 0, L_S = 0;
    double L_s = 0, L_c = 0, L_A = 0;
    double L_adv_d = 0, L_adv_g = 0;
    double L_total = 0;

    static const std::vector<std::string>& names();
    std::vector<double> values() const;
};

// Generator/discriminator networks, their Adam optimizers, the sampling RNG
// and the step counter. One train_step is one discriminator update followed by
// one TEN+ATN update.
class Trainer {
public:
    Trainer(TrainConfig cfg, FeatureBackbone backbone);

    StepReport train_step(const Batch& batch);

    // Forward pass only: t, t^alpha, A and the rendered z for a batch.
    struct Rendered {
        torch::Tensor transmission, dense_transmission, airlight, hazy;
    };
    Rendered render(const Batch& batch);

    const TrainConfig& config() const noexcept { return cfg_; }
    int64_t step() const noexcept { return step_; }
    Rng& rng() noexcept { return rng_; }
    TransmissionNet& ten() noexcept { return ten_; }
    AirlightNet& atn() noexcept { return atn_; }
    PatchDiscriminator& disc() noexcept { return disc_; }
    const FeatureBackbone& backbone() const noexcept { return backbone_; }

    void save_checkpoint(const std::filesystem::path& path) const;
    // Restores parameters, optimizer moments, step and RNG state.
    void load_checkpoint(const std::filesystem::path& path);

private:
    TrainConfig cfg_;
    FeatureBackbone backbone_;
    TransmissionNet ten_;
    AirlightNet atn_;
    PatchDiscriminator disc_;
    std::unique_ptr<torch::optim::Adam> opt_g_;
    std::unique_ptr<torch::optim::Adam> opt_d_;
    Rng rng_;
    int64_t step_ = 0;
};

// Reads only what rendering needs from a checkpoint: TEN and ATN.
class HazeRenderer {
public:
    static HazeRenderer from_checkpoint(const std::filesystem::path& path);
    HazeRenderer(TransmissionNet ten, AirlightNet atn);

    TransmissionMap transmission(const Image& clean) const;
    Airlight airlight(const Image& exemplar) const;
    Image render(const Image& clean, double alpha, const Airlight& airlight) const;

private:
    TransmissionNet ten_;
    AirlightNet atn_;
};

struct FitOptions {
    // Invoked after every step; returning false stops the run after the
    // current step without writing a further checkpoint (simulates a kill).
    std::function<bool(const StepReport&)> on_step;
};

struct FitResult {
    std::filesystem::path checkpoint;
    int64_t final_step = 0;
    int64_t steps_run = 0;
    bool completed = false;
};

// Runs iterations × batches_per_iteration steps, writing
//   checkpoint_dir/latest.ckpt   after every iteration
//   checkpoint_dir/train_log.tsv one row of loss means per iteration
//   checkpoint_dir/step_log.tsv  one row per step
// and resuming from latest.ckpt when cfg.resume is set.
FitResult fit(const TrainConfig& cfg, const FitOptions& opts = {});

// Backbone selected by cfg.backbone_weights / cfg.backbone_seed.
FeatureBackbone load_backbone(const std::filesystem::path& weights, uint64_t seed);

// Checkpoint/archive kind tag and file name inside checkpoint_dir.
inline constexpr const char* kCheckpointKind = "hazesynth-checkpoint";
inline constexpr const char* kCheckpointFile = "latest.ckpt";

} // namespace hazesynth
