#pragma once

#include <span>
#include <string>
#include <vector>

#include "facedit/denoiser.hpp"
#include "facedit/schedule.hpp"
#include "facedit/tensor.hpp"

namespace facedit {

struct Latent {
    Tensor3 data;
    int frame_index = 0;
    int timestep = 0;
};

// Latents of one frame ordered by increasing timestep. Produced by inversion:
// latents.front() is the clean latent, latents.back() the inverted noise.
struct LatentTrajectory {
    std::vector<Latent> latents;
    std::string schedule_id;
    std::string conditioning;
};

// Text conditioning plus optional classifier-free guidance. With
// guidance_scale == 1 the denoiser is called once per step; otherwise twice
// (conditional and `negative_prompt`) and the predictions are blended.
struct Conditioning {
    std::string prompt;
    double guidance_scale = 1.0;
    std::string negative_prompt;
};

// Hooks for the sampling loops. `sink` records site features during
// denoising (conditional pass only); `phase` tags denoiser calls.
struct SamplerHooks {
    FeatureSink* sink = nullptr;
    std::string phase = "sample";
};

// sqrt(alpha_bar) * y0 + sqrt(1 - alpha_bar) * noise.
Tensor3 noise_marginal(const Tensor3& y0, double alpha_bar, const Tensor3& noise);

// Closed-form marginal q(y_t | y_0) of the forward chain, t in [1, T].
Latent forward_noise(const Latent& y0, int t, const NoiseSchedule& schedule, const Tensor3& noise);

// Clean-sample estimate (y_t - sqrt(1 - alpha_bar_t) eps) / sqrt(alpha_bar_t).
Tensor3 predict_clean(const Tensor3& y_t, int t, const Tensor3& eps, const NoiseSchedule& schedule);

// Deterministic DDIM move from timestep t_from to t_to (either direction).
Tensor3 ddim_transition(const Tensor3& y, int t_from, int t_to, const Tensor3& eps,
                        const NoiseSchedule& schedule);

// One deterministic DDIM step t -> t - 1.
Latent ddim_step(const Latent& y_t, int t, const Tensor3& eps, const NoiseSchedule& schedule);

// Noise prediction with optional classifier-free guidance.
std::vector<Tensor3> guided_prediction(const Denoiser& denoiser, DenoiseRequest request,
                                       const Conditioning& conditioning);

LatentTrajectory ddim_invert(const Latent& y0, const Denoiser& denoiser, int steps,
                             const NoiseSchedule& schedule, const Conditioning& conditioning,
                             const SamplerHooks& hooks = {});

Latent sample(const Latent& x_T, const Denoiser& denoiser, int steps, const NoiseSchedule& schedule,
              const Conditioning& conditioning, const InjectionContext* injection = nullptr,
              const SamplerHooks& hooks = {});

// Batched sampling. Every member shares the timestep grid; `injections` is
// empty or one entry per member. Sites in `extended_layers` attend jointly
// across the batch. With one member and no extended layers this is
// bit-identical to sample().
std::vector<Latent> sample_joint(std::span<const Latent> x_T, const Denoiser& denoiser, int steps,
                                 const NoiseSchedule& schedule, const Conditioning& conditioning,
                                 std::span<const InjectionContext* const> injections,
                                 const LayerSet& extended_layers, const SamplerHooks& hooks = {});

}  // namespace facedit
