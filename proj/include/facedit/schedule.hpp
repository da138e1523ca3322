#pragma once

#include <string>
#include <vector>

namespace facedit {

// Discrete variance-preserving noise schedule. alpha(t) is the per-step
// retention factor of the forward chain for t in [1, T]; alpha_bar(t) is the
// cumulative product, with alpha_bar(0) == 1 for the clean sample.
//
// Immutable after construction; safe to share across threads.
class NoiseSchedule {
public:
    // Validates every alpha in (0, 1); alpha_bar is then strictly decreasing.
    static NoiseSchedule from_alphas(std::vector<double> alphas);

    // beta linearly spaced in [beta_start, beta_end], alpha = 1 - beta.
    static NoiseSchedule linear_beta(int num_steps, double beta_start, double beta_end);

    int num_steps() const noexcept { return static_cast<int>(alpha_.size()); }
    double alpha(int t) const;
    double alpha_bar(int t) const;

    // Evenly strided DDIM timesteps 0 = tau_0 < tau_1 < ... < tau_steps = T.
    // With steps == T this is 0, 1, ..., T.
    std::vector<int> timestep_grid(int steps) const;

    // Short human-readable identity used to tag trajectories and caches.
    const std::string& id() const noexcept { return id_; }

private:
    NoiseSchedule(std::vector<double> alphas, std::string id);

    std::vector<double> alpha_;      // alpha_[t - 1] == alpha(t)
    std::vector<double> alpha_bar_;  // alpha_bar_[t] == alpha_bar(t), alpha_bar_[0] == 1
    std::string id_;
};

}  // namespace facedit
