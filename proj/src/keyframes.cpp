#include "facedit/keyframes.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "facedit/errors.hpp"
#include "facedit/injection.hpp"

namespace facedit {

bool KeyframeSet::contains(int frame) const {
    return std::binary_search(indices.begin(), indices.end(), frame);
}

KeyframeSet select_keyframes(int n_frames, int stride) {
    if (n_frames < 1) throw InvalidArgument("select_keyframes: n_frames must be >= 1");
    if (stride < 1) throw InvalidArgument("select_keyframes: stride must be >= 1");
    KeyframeSet ks;
    ks.stride = stride;
    ks.n_frames = n_frames;
    for (int i = 0; i < n_frames; i += stride) ks.indices.push_back(i);
    if (ks.indices.back() != n_frames - 1) ks.indices.push_back(n_frames - 1);
    return ks;
}

AttentionParams AttentionParams::from_site(const MatrixX& wq, const MatrixX& wk, const MatrixX& wv,
                                           const MatrixX& wo) {
    AttentionParams p;
    p.w_a = wq * wk.transpose();
    p.w_c = (wv * wo).transpose();
    p.scale = 1.0 / std::sqrt(static_cast<double>(wq.cols()));
    return p;
}

namespace {

void check_params(const MatrixX& features, const AttentionParams& params) {
    if (features.rows() < 1) throw InvalidArgument("attention needs at least one keyframe");
    const auto d = features.cols();
    if (params.w_a.rows() != d || params.w_a.cols() != d || params.w_c.rows() != d ||
        params.w_c.cols() != d) {
        std::ostringstream os;
        os << "attention parameters must be " << d << "x" << d << " to match the features";
        throw InvalidArgument(os.str());
    }
    if (!params.w_a.allFinite() || !params.w_c.allFinite() || !features.allFinite()) {
        throw InvalidArgument("attention inputs must be finite");
    }
}

}  // namespace

MatrixX attention_weights(const MatrixX& features, const AttentionParams& params) {
    check_params(features, params);
    MatrixX a = (features * params.w_a * features.transpose()) * params.scale;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double m = a.row(i).maxCoeff();
        a.row(i) = (a.row(i).array() - m).exp();
        a.row(i) /= a.row(i).sum();
    }
    return a;
}

MatrixX extended_attention_update(const MatrixX& features, const AttentionParams& params) {
    const MatrixX a = attention_weights(features, params);
    return features + a * (features * params.w_c.transpose());
}

const MatrixX& EditedKeyframeFeatures::at(int frame, const LayerId& layer) const {
    auto f = features.find(frame);
    if (f == features.end()) {
        throw MissingFeatureError("no edited features for keyframe " + std::to_string(frame),
                                  {FeatureKey{frame, layer, 0}.str()});
    }
    auto l = f->second.find(layer);
    if (l == f->second.end()) {
        throw MissingFeatureError("no edited features for layer " + layer + " of keyframe " +
                                      std::to_string(frame),
                                  {FeatureKey{frame, layer, 0}.str()});
    }
    return l->second;
}

namespace {

// Keeps the features of the most recent (lowest) timestep per batch member.
class FinalFeatureSink final : public FeatureSink {
public:
    explicit FinalFeatureSink(std::size_t batch) : last_(batch), timestep_(batch, -1) {}

    void on_features(const LayerId& layer, int batch_index, int timestep,
                     const FeatureMatrix& tokens) override {
        auto& slot = last_.at(static_cast<std::size_t>(batch_index));
        int& seen = timestep_.at(static_cast<std::size_t>(batch_index));
        if (seen != timestep) {
            if (seen != -1 && timestep > seen) {
                throw ContractViolation("keyframe edit observed timesteps out of order");
            }
            slot.clear();
            seen = timestep;
        }
        slot[layer] = tokens.cast<double>();
    }

    std::map<LayerId, MatrixX>& features(std::size_t b) { return last_.at(b); }

private:
    std::vector<std::map<LayerId, MatrixX>> last_;
    std::vector<int> timestep_;
};

}  // namespace

EditedKeyframeFeatures edit_keyframes(const KeyframeSet& keyframes,
                                      const std::map<int, LatentTrajectory>& trajectories,
                                      const FeatureCache& cache, const Denoiser& denoiser,
                                      const NoiseSchedule& schedule, const std::string& prompt,
                                      const LayerSet& injection_layers,
                                      const KeyframeEditOptions& options) {
    if (prompt.empty()) throw InvalidArgument("edit_keyframes: prompt must not be empty");
    if (keyframes.indices.empty()) throw InvalidArgument("edit_keyframes: no keyframes");
    require_known_layers(denoiser, injection_layers, "injection");
    require_known_layers(denoiser, options.editing_layers, "extended attention");

    std::vector<std::string> gaps;
    for (int k : keyframes.indices) {
        auto it = trajectories.find(k);
        if (it == trajectories.end() || it->second.latents.empty()) {
            gaps.push_back("trajectory of frame " + std::to_string(k));
        }
    }
    if (!gaps.empty()) {
        throw MissingFeatureError("edit_keyframes: missing inversion trajectories", std::move(gaps));
    }

    const auto grid = schedule.timestep_grid(options.steps);
    std::vector<int> inject_at = options.injection_timesteps;
    if (inject_at.empty()) inject_at.assign(grid.begin() + 1, grid.end());

    std::vector<InjectionContext> contexts;
    contexts.reserve(keyframes.indices.size());
    std::vector<const InjectionContext*> context_ptrs;
    std::vector<Latent> starts;
    for (int k : keyframes.indices) {
        if (!injection_layers.empty()) {
            contexts.push_back(make_injection_context(cache, k, injection_layers, inject_at,
                                                      options.partial_injection));
        }
        starts.push_back(trajectories.at(k).latents.back());
    }
    for (const auto& c : contexts) context_ptrs.push_back(&c);

    FinalFeatureSink sink(starts.size());
    SamplerHooks hooks;
    hooks.sink = &sink;
    hooks.phase = options.phase;
    const Conditioning cond{prompt, options.guidance_scale, options.negative_prompt};
    auto finals = sample_joint(starts, denoiser, options.steps, schedule, cond, context_ptrs,
                               options.editing_layers, hooks);

    EditedKeyframeFeatures out;
    for (std::size_t b = 0; b < finals.size(); ++b) {
        const int k = keyframes.indices[b];
        auto& layers = out.features[k];
        layers = std::move(sink.features(b));
        layers[kLatentLayer] = finals[b].data.to_tokens();
        out.latents.emplace(k, std::move(finals[b]));
    }
    return out;
}

}  // namespace facedit
