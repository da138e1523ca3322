#pragma once

#include <map>
#include <memory>
#include <string>

#include "facedit/denoiser.hpp"
#include "facedit/tensor.hpp"

namespace facedit {

// Named parameter blobs; the ordering of std::map makes iteration (and thus
// checkpoints and optimizer updates) deterministic.
using ParameterSet = std::map<std::string, MatrixX>;

ParameterSet zeros_like(const ParameterSet& params);

// A denoiser whose parameters can be trained by reverse-mode gradients.
class DifferentiableDenoiser : public Denoiser {
public:
    struct Tape {
        virtual ~Tape() = default;
    };
    struct Pass {
        Tensor3 eps;
        std::shared_ptr<const Tape> tape;
    };

    virtual ParameterSet& parameters() = 0;
    virtual const ParameterSet& parameters() const = 0;

    // Plain (uninjected, per-latent) forward pass that keeps what backward needs.
    virtual Pass forward_for_training(const Tensor3& latent, int timestep,
                                      const std::string& prompt) const = 0;

    // Adds d(loss)/d(params) into `grads` and returns d(loss)/d(latent).
    virtual Tensor3 backward(const Pass& pass, const Tensor3& d_eps, ParameterSet& grads) const = 0;
};

}  // namespace facedit
