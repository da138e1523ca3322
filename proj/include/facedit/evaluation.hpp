#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "facedit/embedders.hpp"
#include "facedit/tensor.hpp"

namespace facedit {

// Mean of per-frame embeddings, deliberately left unnormalized.
struct VideoEmbedding {
    VectorX vector;
    std::string video_id;
    int frame_count = 0;
};

VideoEmbedding video_embedding(std::span<const Tensor3> frames, const FaceEmbedder& embedder,
                               std::string video_id = {});

enum class Similarity {
    Cosine,     // cosine of the mean embeddings
    Euclidean,  // negative Euclidean distance between the mean embeddings
};

double similarity(const VectorX& a, const VectorX& b, Similarity kind);

// 1-based rank of `truth_id` when `database` is sorted by descending
// similarity to `query`; equal scores keep database order.
int rank_of(const VideoEmbedding& query, const std::string& truth_id,
            std::span<const VideoEmbedding> database, Similarity kind = Similarity::Cosine);

struct RetrievalQuery {
    VideoEmbedding query;  // embedding of the edited video
    std::string truth_id;  // id of its original in the database
};

std::vector<int> ranks_of(std::span<const RetrievalQuery> queries,
                          std::span<const VideoEmbedding> database,
                          Similarity kind = Similarity::Cosine);
double recall_at_1(std::span<const RetrievalQuery> queries, std::span<const VideoEmbedding> database,
                   Similarity kind = Similarity::Cosine);
double mean_reciprocal_rank(std::span<const RetrievalQuery> queries,
                            std::span<const VideoEmbedding> database,
                            Similarity kind = Similarity::Cosine);
double mean_reciprocal_rank_of(std::span<const int> ranks);

// Per-pixel displacement (dx, dy) from frame t to frame t + 1.
struct FlowField {
    int height = 0;
    int width = 0;
    std::vector<double> dx;
    std::vector<double> dy;

    static FlowField constant(int height, int width, double dx, double dy);
    bool all_finite() const;
};

class FlowProvider {
public:
    virtual ~FlowProvider() = default;
    virtual FlowField estimate(const Tensor3& from, const Tensor3& to) const = 0;
};

struct WarpResult {
    Tensor3 image;
    std::vector<std::uint8_t> valid;  // height * width, row-major
    std::size_t valid_count() const;
};

// Backward bilinear warp: output(p) = frame(p - flow(p)). A pixel is valid
// when its sample position lies inside the frame.
WarpResult warp(const Tensor3& frame, const FlowField& flow);

// (1 / pairs) * sum_t mean over valid pixels and channels of
// |warp(I_t, o_t) - I_{t+1}|.
double temporal_loss(std::span<const Tensor3> frames, const FlowProvider& flow);

// Mean and sample standard deviation of opinion scores.
struct ScoreSummary {
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t count = 0;
};

ScoreSummary summarize_scores(std::span<const double> scores);

}  // namespace facedit
