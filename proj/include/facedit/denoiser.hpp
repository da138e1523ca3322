#pragma once

#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "facedit/tensor.hpp"

namespace facedit {

using LayerId = std::string;
using LayerSet = std::unordered_set<LayerId>;

// Token features at a self-attention site, stored in single precision:
// rows are tokens, columns are feature channels.
using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class InjectionContext;

// Receives the features entering each self-attention site, before any
// injection replaces them.
class FeatureSink {
public:
    virtual ~FeatureSink() = default;
    virtual void on_features(const LayerId& layer, int batch_index, int timestep,
                             const FeatureMatrix& tokens) = 0;
};

// One (possibly batched) noise-prediction request.
//
// `injections` is either empty or holds one entry per latent (nullptr for
// "no injection"). Sites listed in `extended_layers` attend jointly over the
// tokens of every latent in the batch; all other sites attend per latent.
struct DenoiseRequest {
    std::span<const Tensor3> latents;
    int timestep = 0;
    std::string prompt;
    std::span<const InjectionContext* const> injections{};
    const LayerSet* extended_layers = nullptr;
    FeatureSink* sink = nullptr;
    // Frame indices of the latents, for call accounting only. May be empty.
    std::span<const int> frames{};
    // Free-form tag for call accounting ("preprocess", "edit", ...).
    std::string phase;
};

// Noise predictor epsilon(latent, t, prompt[, injection]).
//
// Contract: each output has the shape of its input latent, and identical
// requests give bit-identical outputs.
class Denoiser {
public:
    virtual ~Denoiser() = default;

    virtual std::vector<Tensor3> predict_batch(const DenoiseRequest& request) const = 0;

    // Names of the self-attention sites that accept record/inject hooks.
    virtual const std::vector<LayerId>& attention_layers() const = 0;

    Tensor3 predict(const Tensor3& latent, int timestep, const std::string& prompt,
                    const InjectionContext* injection = nullptr) const;
};

// Throws InvalidArgument naming every layer in `layers` the denoiser does not have.
void require_known_layers(const Denoiser& denoiser, const LayerSet& layers, const char* what);

}  // namespace facedit
