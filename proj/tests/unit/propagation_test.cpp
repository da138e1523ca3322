#include <gtest/gtest.h>

#include "facedit/errors.hpp"
#include "facedit/propagation.hpp"
#include "facedit/random.hpp"

using namespace facedit;

TEST(NeighborIndices, KeyframeIsItsOwnNeighbor) {
    const auto ks = select_keyframes(9, 4);
    for (int k : ks.indices) {
        const auto p = neighbor_indices(k, ks);
        EXPECT_EQ(p.past, k);
        EXPECT_EQ(p.future, k);
    }
}

TEST(NeighborIndices, ClosestPastAndFutureKeyframes) {
    const auto ks = select_keyframes(9, 4);  // {0, 4, 8}
    const auto p = neighbor_indices(5, ks);
    EXPECT_EQ(p.past, 4);
    EXPECT_EQ(p.future, 8);
    const auto ends = select_keyframes(10, 9);  // {0, 9}
    EXPECT_EQ(neighbor_indices(9, ends).past, 9);
    EXPECT_EQ(neighbor_indices(9, ends).future, 9);
    EXPECT_THROW(neighbor_indices(10, ends), InvalidArgument);
    EXPECT_THROW(neighbor_indices(-1, ends), InvalidArgument);
}

TEST(PropagationWeights, LinearInFrameDistance) {
    const auto at_past = propagation_weights(4, {4, 8});
    EXPECT_EQ(at_past.minus, 1.0);
    EXPECT_EQ(at_past.plus, 0.0);
    const auto mid = propagation_weights(6, {4, 8});
    EXPECT_EQ(mid.minus, 0.5);
    EXPECT_EQ(mid.plus, 0.5);
    const auto w = propagation_weights(3, {0, 10});
    EXPECT_NEAR(w.minus, 0.7, 1e-15);
    EXPECT_NEAR(w.plus, 0.3, 1e-15);
    EXPECT_EQ(propagation_weights(8, {8, 8}).minus, 1.0);
    EXPECT_THROW(propagation_weights(11, {0, 10}), InvalidArgument);
}

TEST(NnCorrespondence, SelfMatchIsTheIdentity) {
    Rng rng(1);
    const MatrixX t = gaussian_matrix(6, 4, rng);
    const auto m = nn_correspondence(t, t);
    for (int i = 0; i < 6; ++i) EXPECT_EQ(m.source[i], i);
}

TEST(NnCorrespondence, MatchesExhaustiveCosineSearch) {
    Rng rng(2);
    const MatrixX frame = gaussian_matrix(5, 4, rng);
    const MatrixX key = gaussian_matrix(7, 4, rng);
    const auto m = nn_correspondence(frame, key);
    for (int i = 0; i < 5; ++i) {
        int best = 0;
        double best_sim = -2.0;
        for (int j = 0; j < 7; ++j) {
            const double sim = frame.row(i).dot(key.row(j)) / (frame.row(i).norm() * key.row(j).norm());
            if (sim > best_sim) {
                best_sim = sim;
                best = j;
            }
        }
        EXPECT_EQ(m.source[i], best) << "token " << i;
    }
}

TEST(NnCorrespondence, TiesGoToTheLowestIndex) {
    MatrixX key(3, 2);
    key << 1, 0, 0, 1, 0, 1;
    MatrixX frame(2, 2);
    frame << 1, 1, 0, 2;
    const auto m = nn_correspondence(frame, key);
    EXPECT_EQ(m.source[0], 0);  // equidistant from rows 0 and 1
    EXPECT_EQ(m.source[1], 1);  // rows 1 and 2 identical
}

TEST(NnCorrespondence, AcceptsSinglePrecisionFeatures) {
    Rng rng(3);
    const MatrixX t = gaussian_matrix(4, 3, rng);
    const FeatureMatrix f = t.cast<float>();
    EXPECT_EQ(nn_correspondence(f, f).source, (std::vector<int>{0, 1, 2, 3}));
}

TEST(NnCorrespondence, ZeroNormTokensAreDegenerate) {
    MatrixX key = MatrixX::Ones(2, 3);
    MatrixX frame = MatrixX::Zero(1, 3);
    EXPECT_THROW(nn_correspondence(frame, key), DegenerateFeatureError);
    EXPECT_THROW(nn_correspondence(key, frame), DegenerateFeatureError);
    EXPECT_THROW(nn_correspondence(key, MatrixX::Ones(2, 4)), InvalidArgument);
}

TEST(Propagate, KeyframeFixedPoint) {
    Rng rng(4);
    const MatrixX base = gaussian_matrix(4, 3, rng);
    const auto self = nn_correspondence(base, base);
    EXPECT_EQ(propagate(base, gaussian_matrix(4, 3, rng), self, self, {1.0, 0.0}), base);
}

TEST(Propagate, ConvexCombinationOfEqualTokensIsThatToken) {
    MatrixX past(2, 2), future(2, 2);
    past << 1, 2, 9, 9;
    future << 7, 7, 1, 2;
    const MatrixX out = propagate(past, future, {{0}}, {{1}}, {0.5, 0.5});
    EXPECT_EQ(out(0, 0), 1.0);
    EXPECT_EQ(out(0, 1), 2.0);
}

TEST(Propagate, MatchesHandLoopedOracle) {
    Rng rng(5);
    const MatrixX past = gaussian_matrix(3, 2, rng), future = gaussian_matrix(3, 2, rng);
    const TokenCorrespondence mp{{2, 0, 0}}, mf{{1, 1, 2}};
    const PropagationWeights w{0.25, 0.75};
    const MatrixX out = propagate(past, future, mp, mf, w);
    for (int t = 0; t < 3; ++t)
        for (int c = 0; c < 2; ++c)
            EXPECT_NEAR(out(t, c), 0.25 * past(mp.source[t], c) + 0.75 * future(mf.source[t], c), 1e-12);
}

TEST(Propagate, RejectsInconsistentInputs) {
    Rng rng(6);
    const MatrixX a = gaussian_matrix(3, 2, rng);
    EXPECT_THROW(propagate(a, gaussian_matrix(3, 3, rng), {{0}}, {{0}}, {0.5, 0.5}), InvalidArgument);
    EXPECT_THROW(propagate(a, a, {{0, 1}}, {{0}}, {0.5, 0.5}), InvalidArgument);
    EXPECT_THROW(propagate(a, a, {{5}}, {{0}}, {0.5, 0.5}), InvalidArgument);
}
