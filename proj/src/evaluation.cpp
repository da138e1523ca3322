#include "facedit/evaluation.hpp"

#include <cmath>
#include <sstream>

#include "facedit/errors.hpp"
#include "facedit/objectives.hpp"

namespace facedit {

VideoEmbedding video_embedding(std::span<const Tensor3> frames, const FaceEmbedder& embedder,
                               std::string video_id) {
    if (frames.empty()) throw InvalidArgument("video_embedding needs at least one frame");
    VideoEmbedding out;
    out.video_id = std::move(video_id);
    out.frame_count = static_cast<int>(frames.size());
    out.vector = VectorX::Zero(embedder.dimension());
    for (std::size_t i = 0; i < frames.size(); ++i) {
        VectorX e;
        try {
            e = embedder.embed(frames[i]);
        } catch (const Error& err) {
            std::ostringstream os;
            os << "embedding frame " << i << " failed: " << err.what();
            throw NumericalError(os.str());
        }
        if (e.size() != out.vector.size()) {
            throw ContractViolation("embedder returned a vector of the wrong dimension");
        }
        out.vector += e;
    }
    out.vector /= static_cast<double>(frames.size());
    return out;
}

double similarity(const VectorX& a, const VectorX& b, Similarity kind) {
    if (a.size() != b.size()) throw InvalidArgument("similarity: dimension mismatch");
    switch (kind) {
        case Similarity::Cosine:
            return 1.0 - cosine_distance(a, b);
        case Similarity::Euclidean:
            return -(a - b).norm();
    }
    throw InvalidArgument("unknown similarity kind");
}

int rank_of(const VideoEmbedding& query, const std::string& truth_id,
            std::span<const VideoEmbedding> database, Similarity kind) {
    std::size_t truth = database.size();
    for (std::size_t i = 0; i < database.size(); ++i) {
        if (database[i].video_id == truth_id) {
            truth = i;
            break;
        }
    }
    if (truth == database.size()) {
        throw InvalidArgument("rank_of: video '" + truth_id + "' is not in the database");
    }
    const double target = similarity(query.vector, database[truth].vector, kind);
    int rank = 1;
    for (std::size_t i = 0; i < database.size(); ++i) {
        if (i == truth) continue;
        const double s = similarity(query.vector, database[i].vector, kind);
        if (s > target || (s == target && i < truth)) ++rank;
    }
    return rank;
}

std::vector<int> ranks_of(std::span<const RetrievalQuery> queries,
                          std::span<const VideoEmbedding> database, Similarity kind) {
    if (queries.empty()) throw InvalidArgument("retrieval metrics need at least one query");
    std::vector<int> ranks;
    ranks.reserve(queries.size());
    for (const auto& q : queries) ranks.push_back(rank_of(q.query, q.truth_id, database, kind));
    return ranks;
}

double recall_at_1(std::span<const RetrievalQuery> queries, std::span<const VideoEmbedding> database,
                   Similarity kind) {
    const auto ranks = ranks_of(queries, database, kind);
    std::size_t hits = 0;
    for (int r : ranks) hits += r == 1 ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double mean_reciprocal_rank_of(std::span<const int> ranks) {
    if (ranks.empty()) throw InvalidArgument("MRR needs at least one rank");
    double acc = 0.0;
    for (int r : ranks) {
        if (r < 1) throw InvalidArgument("ranks are 1-based");
        acc += 1.0 / r;
    }
    return acc / static_cast<double>(ranks.size());
}

double mean_reciprocal_rank(std::span<const RetrievalQuery> queries,
                            std::span<const VideoEmbedding> database, Similarity kind) {
    const auto ranks = ranks_of(queries, database, kind);
    return mean_reciprocal_rank_of(ranks);
}

FlowField FlowField::constant(int height, int width, double dx, double dy) {
    FlowField f;
    f.height = height;
    f.width = width;
    f.dx.assign(static_cast<std::size_t>(height) * width, dx);
    f.dy.assign(static_cast<std::size_t>(height) * width, dy);
    return f;
}

bool FlowField::all_finite() const {
    for (double v : dx) {
        if (!std::isfinite(v)) return false;
    }
    for (double v : dy) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::size_t WarpResult::valid_count() const {
    std::size_t n = 0;
    for (auto v : valid) n += v;
    return n;
}

WarpResult warp(const Tensor3& frame, const FlowField& flow) {
    const int h = frame.height();
    const int w = frame.width();
    const std::size_t n = static_cast<std::size_t>(h) * w;
    if (flow.height != h || flow.width != w || flow.dx.size() != n || flow.dy.size() != n) {
        throw InvalidArgument("warp: flow field does not match the frame");
    }
    if (!flow.all_finite()) throw InvalidArgument("warp: flow field has non-finite entries");

    WarpResult out{Tensor3(frame.shape()), std::vector<std::uint8_t>(n, 0)};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * w + x;
            const double sx = x - flow.dx[p];
            const double sy = y - flow.dy[p];
            if (!(sx >= 0.0 && sx <= w - 1 && sy >= 0.0 && sy <= h - 1)) continue;
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const double fx = sx - x0;
            const double fy = sy - y0;
            const int x1 = fx > 0.0 ? x0 + 1 : x0;
            const int y1 = fy > 0.0 ? y0 + 1 : y0;
            out.valid[p] = 1;
            for (int c = 0; c < frame.channels(); ++c) {
                const double top = (1.0 - fx) * frame.at(c, y0, x0) + fx * frame.at(c, y0, x1);
                const double bottom = (1.0 - fx) * frame.at(c, y1, x0) + fx * frame.at(c, y1, x1);
                out.image.at(c, y, x) = (1.0 - fy) * top + fy * bottom;
            }
        }
    }
    return out;
}

double temporal_loss(std::span<const Tensor3> frames, const FlowProvider& flow) {
    if (frames.size() < 2) throw InvalidArgument("temporal_loss needs at least two frames");
    double total = 0.0;
    for (std::size_t t = 0; t + 1 < frames.size(); ++t) {
        require_same_shape(frames[t], frames[t + 1], "temporal_loss");
        const FlowField o = flow.estimate(frames[t], frames[t + 1]);
        const WarpResult warped = warp(frames[t], o);
        const std::size_t valid = warped.valid_count();
        if (valid == 0) {
            std::ostringstream os;
            os << "flow between frames " << t << " and " << t + 1 << " leaves no valid pixel";
            throw DegenerateFlowError(os.str());
        }
        const int w = frames[t].width();
        double acc = 0.0;
        for (int c = 0; c < frames[t].channels(); ++c) {
            for (int y = 0; y < frames[t].height(); ++y) {
                for (int x = 0; x < w; ++x) {
                    if (!warped.valid[static_cast<std::size_t>(y) * w + x]) continue;
                    acc += std::abs(warped.image.at(c, y, x) - frames[t + 1].at(c, y, x));
                }
            }
        }
        total += acc / static_cast<double>(valid * static_cast<std::size_t>(frames[t].channels()));
    }
    return total / static_cast<double>(frames.size() - 1);
}

ScoreSummary summarize_scores(std::span<const double> scores) {
    if (scores.empty()) throw InvalidArgument("no scores to summarize");
    ScoreSummary s;
    s.count = scores.size();
    for (double v : scores) {
        if (!std::isfinite(v)) throw InvalidArgument("scores must be finite");
        s.mean += v;
    }
    s.mean /= static_cast<double>(s.count);
    if (s.count > 1) {
        double ss = 0.0;
        for (double v : scores) ss += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(s.count - 1));
    }
    return s;
}

}  // namespace facedit
