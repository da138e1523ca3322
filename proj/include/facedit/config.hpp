#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "facedit/denoiser.hpp"
#include "facedit/evaluation.hpp"
#include "facedit/finetune.hpp"
#include "facedit/schedule.hpp"

namespace facedit {

// Every tunable of the pipeline. Parsed from flat `key = value` text; see
// configs/default.cfg for the documented defaults.
struct PipelineConfig {
    // Noise schedule.
    int num_train_steps = 1000;
    double beta_start = 0.00085;
    double beta_end = 0.012;

    // DDIM grid shared by inversion, feature recording and editing.
    int steps = 50;
    double guidance_scale = 1.0;
    std::string negative_prompt;
    std::string inversion_prompt = "a photo of a face";

    // Keyframe editing.
    int keyframe_stride = 8;
    std::vector<LayerId> injection_layers = {"up.0.attn", "up.1.attn"};
    std::vector<LayerId> editing_layers = {"down.0.attn", "down.1.attn", "up.0.attn", "up.1.attn"};

    // Propagation: token matches use the cached identity features of this
    // layer at this timestep (-1: the noisiest recorded timestep).
    LayerId correspondence_layer = "down.1.attn";
    int correspondence_timestep = -1;

    // Feature recording: empty layers means injection layers plus the
    // correspondence layer; every record_stride-th sampling timestep is kept
    // (injection then runs only at the recorded timesteps).
    std::vector<LayerId> record_layers;
    int record_stride = 1;

    // Fine-tuning.
    double lambda1 = 0.3;
    double lambda2 = 0.7;
    double learning_rate = 1e-5;
    int batch_size = 16;
    int iterations = 30000;
    int height = 512;
    int width = 512;
    int truncated_steps = 1;
    std::vector<std::string> trainable;
    std::vector<std::string> prompt_bank = {
        "a photo of a face with bangs",        "a photo of a face with a beard",
        "a photo of a face with sunglasses",   "a photo of a face with curly hair",
        "a photo of a smiling face",           "a photo of an old face",
        "a photo of a young face",             "a photo of a surprised face",
    };

    // Backends.
    std::string denoiser_backend = "toy";
    std::uint64_t denoiser_seed = 0;
    std::string embedder_backend = "toy";
    std::string flow_backend = "global-search";
    std::filesystem::path identity_checkpoint;     // empty: the base denoiser
    std::filesystem::path directional_checkpoint;  // empty: the base denoiser

    // Ablations.
    bool identity_guidance = true;
    bool directional_branch = true;

    // Evaluation and output.
    Similarity retrieval_similarity = Similarity::Cosine;
    double fps = 25.0;
    std::uint64_t seed = 0;
    std::filesystem::path cache_dir = "cache";

    // Cross-field checks; throws ConfigError.
    void validate() const;

    NoiseSchedule schedule() const;
    TrainConfig train_config() const;
    LayerSet recorded_layers() const;
    // Sampling timesteps whose features are recorded and injected.
    std::vector<int> recorded_timesteps() const;
    int resolved_correspondence_timestep() const;
};

// Applies one `key = value` assignment; unknown keys and malformed values
// raise ConfigError naming the key.
void apply_setting(PipelineConfig& cfg, const std::string& key, const std::string& value);

// Parses `key = value` lines ('#' starts a comment) on top of the defaults
// and validates the result.
PipelineConfig parse_config(const std::string& text, const std::string& origin = "<config>");
PipelineConfig load_config(const std::filesystem::path& path);

// Canonical text form; parse_config(to_text(cfg)) reproduces cfg.
std::string to_text(const PipelineConfig& cfg);

}  // namespace facedit
