#pragma once

#include <map>
#include <utility>
#include <vector>

#include "facedit/denoiser.hpp"
#include "facedit/feature_cache.hpp"

namespace facedit {

// Resolves (layer, timestep) to recorded features of one frame so that a
// denoiser can substitute them for its own self-attention inputs.
//
// Holds pointers into the cache it was built from; the cache must outlive
// the context.
class InjectionContext {
public:
    int frame_index() const noexcept { return frame_index_; }
    const LayerSet& layers() const noexcept { return layers_; }
    const std::vector<int>& timesteps() const noexcept { return timesteps_; }

    // A partial context injects only at its listed timesteps; a full one
    // requires the sampler's whole grid to be listed.
    bool partial() const noexcept { return partial_; }
    bool covers_timestep(int timestep) const;

    // nullptr when this (layer, timestep) is not injected.
    const FeatureRecord* resolve(const LayerId& layer, int timestep) const;

private:
    friend InjectionContext make_injection_context(const FeatureCache&, int, LayerSet,
                                                   std::vector<int>, bool);

    int frame_index_ = 0;
    LayerSet layers_;
    std::vector<int> timesteps_;
    bool partial_ = false;
    std::map<std::pair<LayerId, int>, const FeatureRecord*> resolved_;
};

// Eagerly resolves every (layer in `layers`, t in `timesteps`) pair. Throws
// MissingFeatureError listing all gaps if any is absent.
InjectionContext make_injection_context(const FeatureCache& cache, int frame_index, LayerSet layers,
                                        std::vector<int> timesteps, bool partial = false);

}  // namespace facedit
