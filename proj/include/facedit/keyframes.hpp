#pragma once

#include <map>
#include <vector>

#include "facedit/ddim.hpp"
#include "facedit/denoiser.hpp"
#include "facedit/feature_cache.hpp"
#include "facedit/tensor.hpp"

namespace facedit {

// Sorted keyframe indices into [0, n_frames); always contains 0 and n_frames - 1.
struct KeyframeSet {
    std::vector<int> indices;
    int stride = 1;
    int n_frames = 1;

    bool contains(int frame) const;
};

// {0, stride, 2 * stride, ...} plus the last frame.
KeyframeSet select_keyframes(int n_frames, int stride);

// Bilinear-form attention between keyframe features.
//
// w_a scores pairs as f_i^T w_a f_j (times `scale`), w_c maps the aggregated
// features. With scale == 1 the operations below are the literal joint
// keyframe attention; from_site() expresses a denoiser self-attention site
// (q, k, v, o projections on row vectors) in the same form.
struct AttentionParams {
    MatrixX w_a;
    MatrixX w_c;
    double scale = 1.0;

    static AttentionParams from_site(const MatrixX& wq, const MatrixX& wk, const MatrixX& wv,
                                     const MatrixX& wo);
};

// Row i holds softmax_j(scale * f_i^T w_a f_j); features are rows of `features`.
MatrixX attention_weights(const MatrixX& features, const AttentionParams& params);

// f_i + sum_j a_ij (w_c f_j), returned row-wise.
MatrixX extended_attention_update(const MatrixX& features, const AttentionParams& params);

// Reserved layer name under which edited keyframes carry their final clean
// latent as a (pixels x channels) token matrix. Propagating this layer yields
// the edited latents of non-keyframes.
inline constexpr const char* kLatentLayer = "latent";

// Edited base features T_base: per keyframe, per layer token matrices taken at
// the last denoising step, plus the final clean latents.
struct EditedKeyframeFeatures {
    std::map<int, std::map<LayerId, MatrixX>> features;
    std::map<int, Latent> latents;

    const MatrixX& at(int frame, const LayerId& layer) const;
};

struct KeyframeEditOptions {
    int steps = 50;
    LayerSet editing_layers;          // joint (extended) attention sites
    std::vector<int> injection_timesteps;  // empty: the whole sampling grid
    bool partial_injection = false;
    double guidance_scale = 1.0;
    std::string negative_prompt;
    std::string phase = "edit";
};

// Jointly denoises the keyframes' inverted latents with `denoiser` under
// `prompt`, injecting cached identity features at `injection_layers` and
// attending across keyframes at `options.editing_layers`.
//
// `trajectories` maps frame index to its inversion trajectory.
EditedKeyframeFeatures edit_keyframes(const KeyframeSet& keyframes,
                                      const std::map<int, LatentTrajectory>& trajectories,
                                      const FeatureCache& cache, const Denoiser& denoiser,
                                      const NoiseSchedule& schedule, const std::string& prompt,
                                      const LayerSet& injection_layers,
                                      const KeyframeEditOptions& options);

}  // namespace facedit
