#pragma once

#include <vector>

#include "facedit/keyframes.hpp"
#include "facedit/tensor.hpp"

namespace facedit {

// Closest keyframes at or before (past) and at or after (future) a frame.
struct NeighborPair {
    int past = 0;
    int future = 0;
};

struct PropagationWeights {
    double minus = 1.0;  // weight of the past keyframe
    double plus = 0.0;   // weight of the future keyframe
};

// For each target token, the index of its best-matching source token.
struct TokenCorrespondence {
    std::vector<int> source;
};

NeighborPair neighbor_indices(int frame, const KeyframeSet& keyframes);

// Linear in frame-index distance; (1, 0) when the frame is a keyframe.
PropagationWeights propagation_weights(int frame, const NeighborPair& pair);

// Maps every row of `frame_tokens` to the row of `keyframe_tokens` with the
// highest cosine similarity; ties go to the lowest index. Zero-norm rows
// raise DegenerateFeatureError.
template <typename Derived1, typename Derived2>
TokenCorrespondence nn_correspondence(const Eigen::MatrixBase<Derived1>& frame_tokens,
                                      const Eigen::MatrixBase<Derived2>& keyframe_tokens);

TokenCorrespondence nn_correspondence_rows(const MatrixX& frame_tokens, const MatrixX& keyframe_tokens);

// Per token: w.minus * past[match_past] + w.plus * future[match_future].
MatrixX propagate(const MatrixX& base_past, const MatrixX& base_future,
                  const TokenCorrespondence& match_past, const TokenCorrespondence& match_future,
                  const PropagationWeights& weights);

template <typename Derived1, typename Derived2>
TokenCorrespondence nn_correspondence(const Eigen::MatrixBase<Derived1>& frame_tokens,
                                      const Eigen::MatrixBase<Derived2>& keyframe_tokens) {
    return nn_correspondence_rows(frame_tokens.template cast<double>(),
                                  keyframe_tokens.template cast<double>());
}

}  // namespace facedit
