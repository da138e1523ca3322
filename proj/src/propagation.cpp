#include "facedit/propagation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "facedit/errors.hpp"

namespace facedit {

NeighborPair neighbor_indices(int frame, const KeyframeSet& keyframes) {
    const auto& ks = keyframes.indices;
    if (ks.empty()) throw InvalidArgument("neighbor_indices: empty keyframe set");
    if (frame < 0 || frame < ks.front() || frame > ks.back()) {
        std::ostringstream os;
        os << "frame " << frame << " is outside the keyframe range [" << ks.front() << ", "
           << ks.back() << "]";
        throw InvalidArgument(os.str());
    }
    auto upper = std::lower_bound(ks.begin(), ks.end(), frame);
    NeighborPair pair;
    pair.future = *upper;
    pair.past = *upper == frame ? frame : *std::prev(upper);
    return pair;
}

PropagationWeights propagation_weights(int frame, const NeighborPair& pair) {
    if (!(pair.past <= frame && frame <= pair.future)) {
        throw InvalidArgument("propagation_weights: frame is not between its neighbors");
    }
    if (pair.past == pair.future) return {1.0, 0.0};
    const double plus = static_cast<double>(frame - pair.past) / (pair.future - pair.past);
    return {1.0 - plus, plus};
}

TokenCorrespondence nn_correspondence_rows(const MatrixX& frame_tokens,
                                           const MatrixX& keyframe_tokens) {
    if (frame_tokens.cols() != keyframe_tokens.cols()) {
        throw InvalidArgument("nn_correspondence: feature dimensions differ");
    }
    if (keyframe_tokens.rows() == 0) throw InvalidArgument("nn_correspondence: no keyframe tokens");

    const auto d = frame_tokens.cols();
    auto norms = [](const MatrixX& m, const char* which) {
        Eigen::VectorXd n(m.rows());
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            n[i] = m.row(i).norm();
            if (!(n[i] > 0.0) || !std::isfinite(n[i])) {
                std::ostringstream os;
                os << "nn_correspondence: " << which << " token " << i << " has zero or non-finite norm";
                throw DegenerateFeatureError(os.str());
            }
        }
        return n;
    };
    const Eigen::VectorXd fn = norms(frame_tokens, "frame");
    const Eigen::VectorXd kn = norms(keyframe_tokens, "keyframe");

    TokenCorrespondence out;
    out.source.resize(static_cast<std::size_t>(frame_tokens.rows()));
    for (Eigen::Index i = 0; i < frame_tokens.rows(); ++i) {
        int best = 0;
        double best_sim = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < keyframe_tokens.rows(); ++j) {
            double dot = 0.0;
            for (Eigen::Index c = 0; c < d; ++c) dot += frame_tokens(i, c) * keyframe_tokens(j, c);
            const double sim = dot / (fn[i] * kn[j]);
            if (sim > best_sim) {
                best_sim = sim;
                best = static_cast<int>(j);
            }
        }
        out.source[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

MatrixX propagate(const MatrixX& base_past, const MatrixX& base_future,
                  const TokenCorrespondence& match_past, const TokenCorrespondence& match_future,
                  const PropagationWeights& weights) {
    if (base_past.cols() != base_future.cols()) {
        throw InvalidArgument("propagate: keyframe feature widths differ");
    }
    if (match_past.source.size() != match_future.source.size()) {
        throw InvalidArgument("propagate: correspondences cover different token counts");
    }
    const auto n = static_cast<Eigen::Index>(match_past.source.size());
    MatrixX out(n, base_past.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const int p = match_past.source[static_cast<std::size_t>(i)];
        const int f = match_future.source[static_cast<std::size_t>(i)];
        if (p < 0 || p >= base_past.rows() || f < 0 || f >= base_future.rows()) {
            std::ostringstream os;
            os << "propagate: correspondence for token " << i << " is out of range";
            throw InvalidArgument(os.str());
        }
        out.row(i) = weights.minus * base_past.row(p) + weights.plus * base_future.row(f);
    }
    return out;
}

}  // namespace facedit
