#include "facedit/objectives.hpp"

#include <cmath>
#include <sstream>

#include "facedit/errors.hpp"

namespace facedit {

Tensor3 ImageEmbedder::embed_vjp(const Tensor3&, const VectorX&) const {
    throw ContractViolation("this image embedder is not differentiable");
}

void PromptPair::validate() const {
    if (reference.empty() || target.empty()) throw InvalidArgument("prompts must be non-empty");
    if (reference == target) throw InvalidArgument("reference and target prompts must differ");
}

void LossWeights::validate() const {
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw InvalidArgument("loss weights must be >= 0");
    if (lambda1 == 0.0 && lambda2 == 0.0) throw InvalidArgument("loss weights must not both be zero");
}

double cosine_distance(const VectorX& a, const VectorX& b) {
    if (a.size() != b.size()) throw InvalidArgument("cosine_distance: dimension mismatch");
    const double na = a.norm();
    const double nb = b.norm();
    if (!(na > 0.0) || !(nb > 0.0)) throw DegenerateFeatureError("cosine_distance of a zero vector");
    // 1 - cos written as half the squared chord between the unit vectors:
    // identical directions give exactly 0 and small angles keep precision.
    return 0.5 * (a / na - b / nb).squaredNorm();
}

VectorX cosine_distance_grad(const VectorX& a, const VectorX& b) {
    const double na = a.norm();
    const double nb = b.norm();
    if (!(na > 0.0) || !(nb > 0.0)) throw DegenerateFeatureError("cosine_distance of a zero vector");
    const double cos = a.dot(b) / (na * nb);
    // d(1 - cos)/da = -(b / (|a||b|) - cos * a / |a|^2)
    return -(b / (na * nb) - cos * a / (na * na));
}

double identity_loss(const Tensor3& generated, const Tensor3& ground_truth, const FaceEmbedder& face) {
    require_same_shape(generated, ground_truth, "identity_loss");
    return mean_abs_diff(generated, ground_truth) +
           cosine_distance(face.embed(generated), face.embed(ground_truth));
}

LossAndGrad identity_loss_with_grad(const Tensor3& generated, const Tensor3& ground_truth,
                                    const FaceEmbedder& face) {
    require_same_shape(generated, ground_truth, "identity_loss");
    const VectorX eg = face.embed(generated);
    const VectorX et = face.embed(ground_truth);
    LossAndGrad out;
    out.value = mean_abs_diff(generated, ground_truth) + cosine_distance(eg, et);

    out.grad = face.embed_vjp(generated, cosine_distance_grad(eg, et));
    const double inv_n = 1.0 / static_cast<double>(generated.numel());
    auto g = out.grad.data();
    auto a = generated.data();
    auto b = ground_truth.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double d = a[i] - b[i];
        g[i] += d > 0.0 ? inv_n : (d < 0.0 ? -inv_n : 0.0);
    }
    return out;
}

namespace {

struct DirectionalParts {
    VectorX image_dir;
    double image_norm = 0.0;
    VectorX text_unit;  // zero when degenerate under ZeroDot
    double dot = 0.0;   // <unit(image_dir), text_unit>
};

DirectionalParts directional_parts(const Tensor3& generated, const Tensor3& original,
                                   const PromptPair& prompts, const ImageTextEmbedder& embedder,
                                   DegeneratePolicy policy) {
    prompts.validate();
    require_same_shape(generated, original, "directional_loss");
    if (embedder.image.dimension() != embedder.text.dimension()) {
        throw InvalidArgument("image and text embedders must share a dimension");
    }
    DirectionalParts p;
    p.image_dir = embedder.image.embed(generated) - embedder.image.embed(original);
    p.image_norm = p.image_dir.norm();

    const VectorX text_dir = embedder.text.embed(prompts.target) - embedder.text.embed(prompts.reference);
    const double text_norm = text_dir.norm();
    if (!(text_norm > 0.0)) {
        if (policy == DegeneratePolicy::Throw) {
            throw DegenerateDirectionError("target and reference prompts embed to the same vector");
        }
        p.text_unit = VectorX::Zero(text_dir.size());
    } else {
        p.text_unit = text_dir / text_norm;
    }
    p.dot = p.image_norm > 0.0 ? p.image_dir.dot(p.text_unit) / p.image_norm : 0.0;
    return p;
}

}  // namespace

double directional_loss(const Tensor3& generated, const Tensor3& original, const PromptPair& prompts,
                        const ImageTextEmbedder& embedder, const LossWeights& weights,
                        DegeneratePolicy policy) {
    weights.validate();
    const auto p = directional_parts(generated, original, prompts, embedder, policy);
    return weights.lambda1 * p.image_dir.squaredNorm() + weights.lambda2 * (1.0 - p.dot);
}

LossAndGrad directional_loss_with_grad(const Tensor3& generated, const Tensor3& original,
                                       const PromptPair& prompts, const ImageTextEmbedder& embedder,
                                       const LossWeights& weights, DegeneratePolicy policy) {
    weights.validate();
    const auto p = directional_parts(generated, original, prompts, embedder, policy);
    LossAndGrad out;
    out.value = weights.lambda1 * p.image_dir.squaredNorm() + weights.lambda2 * (1.0 - p.dot);

    VectorX d_dir = 2.0 * weights.lambda1 * p.image_dir;
    if (p.image_norm > 0.0) {
        const VectorX unit = p.image_dir / p.image_norm;
        d_dir -= weights.lambda2 * (p.text_unit - p.dot * unit) / p.image_norm;
    }
    out.grad = embedder.image.embed_vjp(generated, d_dir);
    return out;
}

double gradient_check(const std::function<double(std::span<const double>)>& loss,
                      const std::function<std::vector<double>(std::span<const double>)>& gradient,
                      std::span<const double> point, double epsilon) {
    if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) {
        throw InvalidArgument("gradient_check: epsilon must lie in [1e-6, 1e-3]");
    }
    const double base = loss(point);
    if (!std::isfinite(base)) throw NumericalError("gradient_check: loss is not finite at the point");
    const std::vector<double> analytic = gradient(point);
    if (analytic.size() != point.size()) {
        throw InvalidArgument("gradient_check: gradient size differs from the point size");
    }

    std::vector<double> x(point.begin(), point.end());
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + epsilon;
        const double up = loss(x);
        x[i] = keep - epsilon;
        const double down = loss(x);
        x[i] = keep;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            std::ostringstream os;
            os << "gradient_check: loss is not finite near coordinate " << i;
            throw NumericalError(os.str());
        }
        const double fd = (up - down) / (2.0 * epsilon);
        const double dev = std::abs(analytic[i] - fd) / (std::abs(analytic[i]) + std::abs(fd) + 1e-8);
        worst = std::max(worst, dev);
    }
    return worst;
}

}  // namespace facedit
