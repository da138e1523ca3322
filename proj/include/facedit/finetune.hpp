#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "facedit/embedders.hpp"
#include "facedit/objectives.hpp"
#include "facedit/parameters.hpp"
#include "facedit/schedule.hpp"
#include "facedit/tensor.hpp"

namespace facedit {

// Training hyperparameters. Defaults are the full-scale values; the toy
// configurations override learning rate, batch, iterations and resolution.
struct TrainConfig {
    double learning_rate = 1e-5;
    int batch_size = 16;
    int iterations = 30000;
    int height = 512;
    int width = 512;
    LossWeights loss_weights;
    // DDIM grid used to invert training images.
    int inversion_steps = 50;
    // Denoising steps differentiated through per sample (truncated backprop).
    int truncated_steps = 1;
    std::uint64_t seed = 0;
    // Parameter name prefixes to update; empty means the whole network.
    std::vector<std::string> trainable;

    // learning_rate >= 0 (0 freezes the optimizer), iterations >= 1,
    // batch_size >= 1, 1 <= truncated_steps <= inversion_steps.
    void validate() const;
};

struct CaptionedSample {
    Tensor3 image;
    std::string caption;                    // reference prompt
    std::vector<std::string> edit_prompts;  // optional target prompts
};

struct CaptionedDataset {
    std::vector<CaptionedSample> samples;
    // Target prompts shared by samples that carry none of their own.
    std::vector<std::string> prompt_bank;

    // Non-empty, uniform image shape, non-empty captions. Throws InvalidDataset.
    void validate() const;
};

struct TrainStep {
    int step = 0;
    double loss = 0.0;
    double wall_ms = 0.0;
};

struct FinetuneHooks {
    // Called after every optimizer step.
    std::function<void(const TrainStep&)> on_step;
    // Directional branch only: use the original image as the generated one
    // (no gradient reaches the denoiser). Isolates the loss from generation.
    bool frozen_generation = false;
};

// Adaptive-moment optimizer over a ParameterSet.
class Adam {
public:
    explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

    // Updates every parameter whose name starts with one of `trainable`
    // (all when empty) using `grads` of identical layout.
    void step(ParameterSet& params, const ParameterSet& grads, const std::vector<std::string>& trainable);

    long steps_taken() const noexcept { return t_; }

private:
    double lr_, beta1_, beta2_, epsilon_;
    long t_ = 0;
    ParameterSet m_, v_;
};

// Trains the identity branch: per sample, invert the image to a random
// timestep with the current weights, reconstruct through the truncated
// denoising steps and minimise identity_loss against the image. Updates
// `denoiser` in place and returns the per-step loss curve.
std::vector<TrainStep> finetune_identity_branch(DifferentiableDenoiser& denoiser,
                                                const CaptionedDataset& dataset, const TrainConfig& cfg,
                                                const NoiseSchedule& schedule, const FaceEmbedder& face,
                                                const FinetuneHooks& hooks = {});

// Trains the directional branch: per sample, invert under the caption, then
// generate under a target prompt (the sample's own prompts, else the prompt
// bank) and minimise directional_loss. Throws InvalidDataset when a sample
// has no target prompt available.
std::vector<TrainStep> finetune_directional_branch(DifferentiableDenoiser& denoiser,
                                                   const CaptionedDataset& dataset,
                                                   const TrainConfig& cfg, const NoiseSchedule& schedule,
                                                   const ImageTextEmbedder& embedder,
                                                   const FinetuneHooks& hooks = {});

// One JSON object per line: {"step":..,"loss":..,"wall_ms":..}.
void write_loss_log(const std::vector<TrainStep>& curve, const std::filesystem::path& path);

// Mean loss of the first and last tenth of a curve (at least one step each).
struct DecileMeans {
    double first = 0.0;
    double last = 0.0;
};
DecileMeans decile_means(const std::vector<TrainStep>& curve);

}  // namespace facedit
