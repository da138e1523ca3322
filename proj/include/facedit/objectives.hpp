#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "facedit/embedders.hpp"
#include "facedit/tensor.hpp"

namespace facedit {

struct PromptPair {
    std::string reference;
    std::string target;

    void validate() const;
};

struct LossWeights {
    double lambda1 = 0.3;
    double lambda2 = 0.7;

    void validate() const;
};

// How a zero image-direction or text-direction is handled by the
// directional loss: Throw (standalone contract) or treat the dot product as 0
// (inside training loops).
enum class DegeneratePolicy { Throw, ZeroDot };

// 1 - cos(a, b), in [0, 2]. Zero vectors raise DegenerateFeatureError.
double cosine_distance(const VectorX& a, const VectorX& b);

// d cosine_distance / d a.
VectorX cosine_distance_grad(const VectorX& a, const VectorX& b);

struct LossAndGrad {
    double value = 0.0;
    Tensor3 grad;  // with respect to the generated image
};

// mean |generated - ground_truth| + cosine_distance(f(generated), f(ground_truth)).
double identity_loss(const Tensor3& generated, const Tensor3& ground_truth, const FaceEmbedder& face);
LossAndGrad identity_loss_with_grad(const Tensor3& generated, const Tensor3& ground_truth,
                                    const FaceEmbedder& face);

// lambda1 * |f_I(gen) - f_I(orig)|^2
//   + lambda2 * (1 - <unit(f_I(gen) - f_I(orig)), unit(f_T(target) - f_T(reference))>)
//
// A zero image direction always contributes a dot product of 0. A zero text
// direction raises DegenerateDirectionError under DegeneratePolicy::Throw.
double directional_loss(const Tensor3& generated, const Tensor3& original, const PromptPair& prompts,
                        const ImageTextEmbedder& embedder, const LossWeights& weights,
                        DegeneratePolicy policy = DegeneratePolicy::Throw);
LossAndGrad directional_loss_with_grad(const Tensor3& generated, const Tensor3& original,
                                       const PromptPair& prompts, const ImageTextEmbedder& embedder,
                                       const LossWeights& weights,
                                       DegeneratePolicy policy = DegeneratePolicy::Throw);

// Maximum over coordinates of |g - fd| / (|g| + |fd| + 1e-8), where fd is the
// central finite difference with step `epsilon` in [1e-6, 1e-3].
double gradient_check(const std::function<double(std::span<const double>)>& loss,
                      const std::function<std::vector<double>(std::span<const double>)>& gradient,
                      std::span<const double> point, double epsilon);

}  // namespace facedit
