#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "facedit/parameters.hpp"

namespace facedit {

struct ToyDenoiserConfig {
    int channels = 4;
    int dim = 16;         // token feature width at the attention sites
    int hidden = 32;      // token MLP width
    int text_dim = 16;    // prompt embedding width
    std::uint64_t seed = 0;
    // Analytic prior term x / (sqrt(alpha_bar(t)) + sqrt(1 - alpha_bar(t)))
    // under this linear-beta schedule. With it alone every deterministic DDIM
    // step is the rescaling f(t') / f(t), f = sqrt(alpha_bar) + sqrt(1 - alpha_bar),
    // so inversion followed by sampling is exact; the network adds a learned
    // residual on top.
    int prior_steps = 1000;
    double prior_beta_start = 0.00085;
    double prior_beta_end = 0.012;
    // Initial magnitude of the residual's output projection.
    double residual_scale = 0.05;
    // Round site features to float32 before attention so recorded features
    // (stored as float32) re-inject bit-exactly.
    bool quantize_sites = true;
};

// Prompt embedding for the toy models: the empty prompt maps to zero, every
// other prompt to a reproducible Gaussian vector seeded by its hash.
VectorX toy_prompt_vector(const std::string& prompt, int dim, std::uint64_t salt);

// Small attention network over pixel tokens standing in for a U-Net noise
// predictor: eps = x / (sqrt(alpha_bar(t)) + sqrt(1 - alpha_bar(t))) + residual(x, t, prompt). Four
// self-attention sites inside the residual; the two "up" sites form the
// decoder half. Each site computes
//
//     h += softmax(u Wq (u Wk)^T / sqrt(d)) u Wv Wo,   u = features entering the site
//     h += tanh(h W1 + b1) W2
//
// where u may be replaced by injected features, and keys/values span every
// latent of the batch at extended-attention sites.
class ToyDenoiser final : public DifferentiableDenoiser {
public:
    explicit ToyDenoiser(ToyDenoiserConfig config = {});
    ToyDenoiser(ToyDenoiserConfig config, ParameterSet params);

    std::vector<Tensor3> predict_batch(const DenoiseRequest& request) const override;
    const std::vector<LayerId>& attention_layers() const override { return sites_; }

    ParameterSet& parameters() override { return params_; }
    const ParameterSet& parameters() const override { return params_; }

    Pass forward_for_training(const Tensor3& latent, int timestep,
                              const std::string& prompt) const override;
    Tensor3 backward(const Pass& pass, const Tensor3& d_eps, ParameterSet& grads) const override;

    const ToyDenoiserConfig& config() const noexcept { return config_; }
    void set_quantize_sites(bool on) noexcept { config_.quantize_sites = on; }

    // Attention sites of the decoder half ("up.*").
    std::vector<LayerId> decoder_layers() const;

    static const std::vector<LayerId>& site_names();

    // The projections of one site, used to express its extended attention
    // through AttentionParams.
    const MatrixX& param(const std::string& name) const;

private:
    struct TrainTape;

    VectorX time_embedding(int timestep) const;
    double prior_coefficient(int timestep) const;
    void validate_params() const;
    void init_prior();

    ToyDenoiserConfig config_;
    std::vector<LayerId> sites_;
    ParameterSet params_;
    std::vector<double> prior_;  // prior coefficient per t in [0, prior_steps]
};

}  // namespace facedit
