#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "facedit/embedders.hpp"
#include "facedit/evaluation.hpp"
#include "facedit/tensor.hpp"

namespace facedit {

struct ToyEmbedderConfig {
    int channels = 4;
    int hidden = 32;
    int dimension = 16;
    std::uint64_t seed = 1;
    // Subtract each channel's spatial mean first, making the embedding blind
    // to constant offsets. Off by default: channel means carry identity.
    bool ignore_constants = false;
};

// Translation-invariant image embedder:
//   unit(P * mean_pixels(tanh(A * x_p + b)))
// with fixed random A, b, P. Differentiable.
class ToyImageEmbedder final : public ImageEmbedder {
public:
    explicit ToyImageEmbedder(ToyEmbedderConfig config = {});

    VectorX embed(const Tensor3& image) const override;
    int dimension() const override { return config_.dimension; }
    bool differentiable() const override { return true; }
    Tensor3 embed_vjp(const Tensor3& image, const VectorX& upstream) const override;

private:
    MatrixX centered_tokens(const Tensor3& image) const;

    ToyEmbedderConfig config_;
    MatrixX a_;   // channels x hidden
    MatrixX b_;   // 1 x hidden
    MatrixX p_;   // hidden x dimension
};

// Prompt -> unit vector via a seeded hash embedding and a fixed projection.
class ToyTextEmbedder final : public TextEmbedder {
public:
    explicit ToyTextEmbedder(int dimension = 16, std::uint64_t seed = 2);

    VectorX embed(const std::string& prompt) const override;
    int dimension() const override { return dimension_; }

private:
    int dimension_;
    std::uint64_t seed_;
    MatrixX projection_;
};

struct SyntheticVideoParams {
    int n_frames = 8;
    double shift_x = 1.0;  // pixels per frame
    double shift_y = 0.0;
    std::uint64_t identity_seed = 0;
    Shape3 shape{4, 16, 16};
};

struct SyntheticVideo {
    std::vector<Tensor3> frames;
    std::vector<FlowField> flows;  // flows[t] maps frame t to frame t + 1
};

// Frames of a periodic identity-specific texture translating rigidly by
// (shift_x, shift_y) per frame with wrap-around. Integer shifts are exact
// circular rolls of frame 0; fractional shifts resample the analytic pattern.
SyntheticVideo make_synthetic_video(const SyntheticVideoParams& params);

// Frame 0 of an identity: a synthetic "face" image.
Tensor3 synthetic_face(std::uint64_t identity_seed, Shape3 shape = {4, 16, 16});

class ZeroFlowProvider final : public FlowProvider {
public:
    FlowField estimate(const Tensor3& from, const Tensor3& to) const override;
};

// Replays known flows in order; flows[t] is returned for the t-th call.
class ExactFlowProvider final : public FlowProvider {
public:
    explicit ExactFlowProvider(std::vector<FlowField> flows);
    FlowField estimate(const Tensor3& from, const Tensor3& to) const override;

private:
    std::vector<FlowField> flows_;
    mutable std::size_t next_ = 0;
};

// Estimates a single global integer translation by exhaustive search over
// |dx|, |dy| <= radius minimizing the mean absolute error on the overlap.
class GlobalShiftFlowProvider final : public FlowProvider {
public:
    explicit GlobalShiftFlowProvider(int radius = 3) : radius_(radius) {}
    FlowField estimate(const Tensor3& from, const Tensor3& to) const override;

private:
    int radius_;
};

}  // namespace facedit
