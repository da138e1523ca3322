#include "facedit/injection.hpp"

#include <algorithm>
#include <sstream>

#include "facedit/errors.hpp"

namespace facedit {

bool InjectionContext::covers_timestep(int timestep) const {
    return std::find(timesteps_.begin(), timesteps_.end(), timestep) != timesteps_.end();
}

const FeatureRecord* InjectionContext::resolve(const LayerId& layer, int timestep) const {
    auto it = resolved_.find({layer, timestep});
    return it == resolved_.end() ? nullptr : it->second;
}

InjectionContext make_injection_context(const FeatureCache& cache, int frame_index, LayerSet layers,
                                        std::vector<int> timesteps, bool partial) {
    InjectionContext ctx;
    ctx.frame_index_ = frame_index;
    ctx.partial_ = partial;

    std::vector<LayerId> ordered(layers.begin(), layers.end());
    std::sort(ordered.begin(), ordered.end());
    std::sort(timesteps.begin(), timesteps.end());
    timesteps.erase(std::unique(timesteps.begin(), timesteps.end()), timesteps.end());

    std::vector<std::string> gaps;
    for (const auto& layer : ordered) {
        for (int t : timesteps) {
            const FeatureKey key{frame_index, layer, t};
            if (const auto* rec = cache.find(key)) {
                ctx.resolved_[{layer, t}] = rec;
            } else {
                gaps.push_back(key.str());
            }
        }
    }
    if (!gaps.empty()) {
        std::ostringstream os;
        os << "cannot build injection context for frame " << frame_index << ": " << gaps.size()
           << " feature(s) missing:";
        for (const auto& g : gaps) os << " " << g;
        throw MissingFeatureError(os.str(), std::move(gaps));
    }
    ctx.layers_ = std::move(layers);
    ctx.timesteps_ = std::move(timesteps);
    return ctx;
}

}  // namespace facedit
