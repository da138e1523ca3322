#include "facedit/toy_models.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "facedit/errors.hpp"
#include "facedit/random.hpp"
#include "facedit/toy_denoiser.hpp"

namespace facedit {

ToyImageEmbedder::ToyImageEmbedder(ToyEmbedderConfig config) : config_(config) {
    if (config_.channels < 1 || config_.hidden < 1 || config_.dimension < 1) {
        throw InvalidArgument("toy embedder dimensions must be positive");
    }
    Rng rng(config_.seed);
    a_ = gaussian_matrix(config_.channels, config_.hidden, rng, 1.5);
    b_ = gaussian_matrix(1, config_.hidden, rng, 0.1);
    p_ = gaussian_matrix(config_.hidden, config_.dimension, rng,
                         1.0 / std::sqrt(static_cast<double>(config_.hidden)));
}

MatrixX ToyImageEmbedder::centered_tokens(const Tensor3& image) const {
    if (image.channels() != config_.channels) {
        throw InvalidArgument("toy embedder: wrong channel count");
    }
    MatrixX x = image.to_tokens();
    if (config_.ignore_constants) x.rowwise() -= x.colwise().mean();
    return x;
}

VectorX ToyImageEmbedder::embed(const Tensor3& image) const {
    MatrixX pre = centered_tokens(image) * a_;
    pre.rowwise() += b_.row(0);
    const VectorX phi = pre.array().tanh().matrix().colwise().mean().transpose();
    const VectorX z = p_.transpose() * phi;
    const double n = z.norm();
    if (!(n > 0.0)) throw DegenerateFeatureError("toy embedder produced a zero vector");
    return z / n;
}

Tensor3 ToyImageEmbedder::embed_vjp(const Tensor3& image, const VectorX& upstream) const {
    if (upstream.size() != config_.dimension) {
        throw InvalidArgument("embed_vjp: upstream gradient has the wrong dimension");
    }
    MatrixX pre = centered_tokens(image) * a_;
    pre.rowwise() += b_.row(0);
    const MatrixX act = pre.array().tanh().matrix();
    const VectorX phi = act.colwise().mean().transpose();
    const VectorX z = p_.transpose() * phi;
    const double n = z.norm();
    if (!(n > 0.0)) throw DegenerateFeatureError("toy embedder produced a zero vector");
    const VectorX e = z / n;

    const VectorX g_z = (upstream - e * e.dot(upstream)) / n;
    const VectorX g_phi = p_ * g_z;
    const double inv_pixels = 1.0 / static_cast<double>(act.rows());
    MatrixX g_pre = (1.0 - act.array().square()).matrix();
    for (Eigen::Index i = 0; i < g_pre.rows(); ++i) {
        g_pre.row(i).array() *= g_phi.transpose().array() * inv_pixels;
    }
    MatrixX g_x = g_pre * a_.transpose();
    if (config_.ignore_constants) g_x.rowwise() -= g_x.colwise().mean();
    return Tensor3::from_tokens(g_x, image.shape());
}

ToyTextEmbedder::ToyTextEmbedder(int dimension, std::uint64_t seed)
    : dimension_(dimension), seed_(seed) {
    if (dimension < 1) throw InvalidArgument("text embedder dimension must be positive");
    Rng rng(seed);
    projection_ = gaussian_matrix(32, dimension, rng, 1.0 / std::sqrt(32.0));
}

VectorX ToyTextEmbedder::embed(const std::string& prompt) const {
    if (prompt.empty()) throw DegenerateFeatureError("cannot embed an empty prompt");
    const VectorX raw = toy_prompt_vector(prompt, 32, seed_);
    const VectorX z = projection_.transpose() * raw;
    return z / z.norm();
}

namespace {

struct Pattern {
    struct Wave {
        int fx;
        int fy;
        double phase;
        std::vector<double> amplitude;  // per channel
    };
    std::vector<Wave> waves;
    std::vector<double> offset;  // per channel
    double gain = 1.0;

    double value(int c, double y, double x, int height, int width) const {
        double v = 0.0;
        for (const auto& w : waves) {
            v += w.amplitude[c] *
                 std::sin(2.0 * std::numbers::pi * (w.fx * x / width + w.fy * y / height) + w.phase);
        }
        return offset[c] + gain * v;
    }
};

Pattern identity_pattern(std::uint64_t identity_seed, int channels) {
    Rng rng(identity_seed * 0x9e3779b97f4a7c15ull + 0x5eedull);
    std::uniform_int_distribution<int> freq(-3, 3);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::normal_distribution<double> amp(0.0, 0.5);

    Pattern p;
    for (int k = 0; k < 5; ++k) {
        Pattern::Wave w;
        do {
            w.fx = freq(rng);
            w.fy = freq(rng);
        } while (w.fx == 0 && w.fy == 0);
        w.phase = phase(rng);
        for (int c = 0; c < channels; ++c) w.amplitude.push_back(amp(rng));
        p.waves.push_back(std::move(w));
    }
    for (int c = 0; c < channels; ++c) p.offset.push_back(0.3 * unit(rng));
    // Identity scalar carried in the texture contrast.
    p.gain = 1.0 + 0.5 * unit(rng);
    return p;
}

Tensor3 render(const Pattern& p, Shape3 shape, double dy, double dx) {
    Tensor3 out(shape);
    for (int c = 0; c < shape.channels; ++c) {
        for (int y = 0; y < shape.height; ++y) {
            for (int x = 0; x < shape.width; ++x) {
                out.at(c, y, x) = p.value(c, y - dy, x - dx, shape.height, shape.width);
            }
        }
    }
    return out;
}

int wrap(long v, int n) {
    const long m = v % n;
    return static_cast<int>(m < 0 ? m + n : m);
}

}  // namespace

Tensor3 synthetic_face(std::uint64_t identity_seed, Shape3 shape) {
    return render(identity_pattern(identity_seed, shape.channels), shape, 0.0, 0.0);
}

SyntheticVideo make_synthetic_video(const SyntheticVideoParams& params) {
    if (params.n_frames < 2) throw InvalidArgument("a synthetic video needs at least two frames");
    const Shape3 shape = params.shape;
    const Pattern pattern = identity_pattern(params.identity_seed, shape.channels);
    const bool integer_shift = params.shift_x == std::floor(params.shift_x) &&
                               params.shift_y == std::floor(params.shift_y);

    SyntheticVideo video;
    const Tensor3 first = render(pattern, shape, 0.0, 0.0);
    for (int k = 0; k < params.n_frames; ++k) {
        if (!integer_shift) {
            video.frames.push_back(render(pattern, shape, k * params.shift_y, k * params.shift_x));
            continue;
        }
        const long sx = static_cast<long>(params.shift_x) * k;
        const long sy = static_cast<long>(params.shift_y) * k;
        Tensor3 frame(shape);
        for (int c = 0; c < shape.channels; ++c) {
            for (int y = 0; y < shape.height; ++y) {
                for (int x = 0; x < shape.width; ++x) {
                    frame.at(c, y, x) = first.at(c, wrap(y - sy, shape.height), wrap(x - sx, shape.width));
                }
            }
        }
        video.frames.push_back(std::move(frame));
    }
    for (int k = 0; k + 1 < params.n_frames; ++k) {
        video.flows.push_back(FlowField::constant(shape.height, shape.width, params.shift_x, params.shift_y));
    }
    return video;
}

FlowField ZeroFlowProvider::estimate(const Tensor3& from, const Tensor3& to) const {
    require_same_shape(from, to, "flow");
    return FlowField::constant(from.height(), from.width(), 0.0, 0.0);
}

ExactFlowProvider::ExactFlowProvider(std::vector<FlowField> flows) : flows_(std::move(flows)) {}

FlowField ExactFlowProvider::estimate(const Tensor3& from, const Tensor3& to) const {
    require_same_shape(from, to, "flow");
    if (next_ >= flows_.size()) throw InvalidArgument("exact flow provider ran out of flows");
    return flows_[next_++];
}

FlowField GlobalShiftFlowProvider::estimate(const Tensor3& from, const Tensor3& to) const {
    require_same_shape(from, to, "flow");
    const int h = from.height();
    const int w = from.width();
    double best = std::numeric_limits<double>::infinity();
    int best_dx = 0;
    int best_dy = 0;
    for (int r = 0; r <= radius_; ++r) {
        // Scan rings of growing radius so ties prefer the smallest motion.
        for (int dy = -r; dy <= r; ++dy) {
            for (int dx = -r; dx <= r; ++dx) {
                if (std::max(std::abs(dx), std::abs(dy)) != r) continue;
                double acc = 0.0;
                long count = 0;
                for (int y = std::max(0, dy); y < std::min(h, h + dy); ++y) {
                    for (int x = std::max(0, dx); x < std::min(w, w + dx); ++x) {
                        for (int c = 0; c < from.channels(); ++c) {
                            acc += std::abs(from.at(c, y - dy, x - dx) - to.at(c, y, x));
                        }
                        ++count;
                    }
                }
                if (count == 0) continue;
                const double err = acc / static_cast<double>(count);
                if (err < best) {
                    best = err;
                    best_dx = dx;
                    best_dy = dy;
                }
            }
        }
    }
    return FlowField::constant(h, w, best_dx, best_dy);
}

}  // namespace facedit
