#include <gtest/gtest.h>

#include <cmath>

#include "facedit/errors.hpp"
#include "facedit/objectives.hpp"
#include "facedit/random.hpp"
#include "facedit/toy_models.hpp"

using namespace facedit;

namespace {

const Shape3 kShape{4, 4, 4};

Tensor3 from_span(std::span<const double> x) { return Tensor3(kShape, std::vector<double>(x.begin(), x.end())); }

double scalar_cosine_distance(const VectorX& a, const VectorX& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return 1.0 - dot / std::sqrt(na * nb);
}

}  // namespace

TEST(CosineDistance, ClosedFormCases) {
    VectorX a(3), b(3);
    a << 1, 2, 3;
    EXPECT_EQ(cosine_distance(a, a), 0.0);
    EXPECT_NEAR(cosine_distance(a, -a), 2.0, 1e-15);
    a << 1, 0, 0;
    b << 0, 5, 0;
    EXPECT_NEAR(cosine_distance(a, b), 1.0, 1e-15);
    EXPECT_THROW(cosine_distance(a, VectorX::Zero(3)), DegenerateFeatureError);
    EXPECT_THROW(cosine_distance(a, VectorX::Ones(2)), InvalidArgument);
}

TEST(CosineDistance, GradientMatchesFiniteDifferences) {
    Rng rng(1);
    const VectorX a = gaussian_vector(6, rng), b = gaussian_vector(6, rng);
    const VectorX g = cosine_distance_grad(a, b);
    for (int i = 0; i < 6; ++i) {
        VectorX ap = a, am = a;
        ap[i] += 1e-6;
        am[i] -= 1e-6;
        EXPECT_NEAR(g[i], (cosine_distance(ap, b) - cosine_distance(am, b)) / 2e-6, 1e-7);
    }
}

TEST(IdentityLoss, ZeroOnIdenticalImages) {
    const ToyImageEmbedder face;
    Rng rng(2);
    const Tensor3 img = gaussian_tensor(kShape, rng);
    EXPECT_EQ(identity_loss(img, img, face), 0.0);
}

TEST(IdentityLoss, ConstantOffsetWithOffsetBlindEmbedder) {
    ToyEmbedderConfig cfg;
    cfg.ignore_constants = true;
    const ToyImageEmbedder face(cfg);
    Rng rng(3);
    const Tensor3 gt = gaussian_tensor(kShape, rng);
    Tensor3 gen = gt;
    for (auto& v : gen.values()) v += 0.1;
    EXPECT_NEAR(identity_loss(gen, gt, face), 0.1, 1e-12);
}

TEST(IdentityLoss, MatchesScalarRecomputation) {
    const ToyImageEmbedder face;
    Rng rng(4);
    const Tensor3 a = gaussian_tensor(kShape, rng), b = gaussian_tensor(kShape, rng);
    double l1 = 0.0;
    for (std::size_t k = 0; k < a.numel(); ++k) l1 += std::abs(a.values()[k] - b.values()[k]);
    l1 /= static_cast<double>(a.numel());
    const double want = l1 + scalar_cosine_distance(face.embed(a), face.embed(b));
    EXPECT_NEAR(identity_loss(a, b, face), want, 1e-10);
    EXPECT_NEAR(identity_loss_with_grad(a, b, face).value, want, 1e-10);
}

TEST(DirectionalLoss, NullEditCostsLambda2) {
    const ToyImageEmbedder image;
    const ToyTextEmbedder text;
    Rng rng(5);
    const Tensor3 img = gaussian_tensor(kShape, rng);
    const PromptPair prompts{"a photo of a face", "a photo of a face with bangs"};
    EXPECT_NEAR(directional_loss(img, img, prompts, {image, text}, {0.3, 0.7}), 0.7, 1e-15);
}

TEST(DirectionalLoss, MatchesScalarRecomputation) {
    const ToyImageEmbedder image;
    const ToyTextEmbedder text;
    Rng rng(6);
    const Tensor3 gen = gaussian_tensor(kShape, rng), orig = gaussian_tensor(kShape, rng);
    const PromptPair prompts{"a photo of a face", "a photo of a face with a beard"};
    const VectorX di = image.embed(gen) - image.embed(orig);
    const VectorX dt = text.embed(prompts.target) - text.embed(prompts.reference);
    double sq = 0.0, dot = 0.0, ni = 0.0, nt = 0.0;
    for (Eigen::Index k = 0; k < di.size(); ++k) {
        sq += di[k] * di[k];
        dot += di[k] * dt[k];
        ni += di[k] * di[k];
        nt += dt[k] * dt[k];
    }
    const double want = 0.3 * sq + 0.7 * (1.0 - dot / std::sqrt(ni * nt));
    EXPECT_NEAR(directional_loss(gen, orig, prompts, {image, text}, {0.3, 0.7}), want, 1e-10);
}

TEST(DirectionalLoss, DegenerateTextDirection) {
    const ToyImageEmbedder image;
    const ToyTextEmbedder text;
    Rng rng(7);
    const Tensor3 a = gaussian_tensor(kShape, rng), b = gaussian_tensor(kShape, rng);
    // Same vector for different prompts: a text tower that ignores its input.
    struct ConstantText final : TextEmbedder {
        VectorX embed(const std::string&) const override { return VectorX::Ones(16).normalized(); }
        int dimension() const override { return 16; }
    } constant;
    const PromptPair prompts{"a", "b"};
    EXPECT_THROW(directional_loss(a, b, prompts, {image, constant}, {0.3, 0.7}), DegenerateDirectionError);
    const double zero_dot =
        directional_loss(a, b, prompts, {image, constant}, {0.0, 0.7}, DegeneratePolicy::ZeroDot);
    EXPECT_NEAR(zero_dot, 0.7, 1e-15);
}

TEST(DirectionalLoss, InvariantToScalingTheImageDirection) {
    // With lambda1 = 0 only the direction of the displacement matters: a
    // linear embedder makes gen - orig scale the image direction exactly.
    struct Linear final : ImageEmbedder {
        VectorX embed(const Tensor3& x) const override {
            return Eigen::Map<const VectorX>(x.values().data(), static_cast<Eigen::Index>(x.numel()));
        }
        int dimension() const override { return 16; }
    } linear;
    const ToyTextEmbedder text(16);
    Rng rng(8);
    const Shape3 s{1, 4, 4};
    const Tensor3 orig = gaussian_tensor(s, rng), delta = gaussian_tensor(s, rng);
    const PromptPair prompts{"a photo of a face", "a photo of an old face"};
    const double l1 = directional_loss(axpby(1, orig, 1, delta), orig, prompts, {linear, text}, {0.0, 0.7});
    const double l3 = directional_loss(axpby(1, orig, 3, delta), orig, prompts, {linear, text}, {0.0, 0.7});
    EXPECT_NEAR(l1, l3, 1e-12);
}

TEST(PromptPairAndWeights, Validation) {
    EXPECT_THROW((PromptPair{"", "x"}.validate()), InvalidArgument);
    EXPECT_THROW((PromptPair{"x", "x"}.validate()), InvalidArgument);
    EXPECT_THROW((LossWeights{0.0, 0.0}.validate()), InvalidArgument);
    EXPECT_THROW((LossWeights{-1.0, 0.5}.validate()), InvalidArgument);
    EXPECT_NO_THROW((LossWeights{0.3, 0.7}.validate()));
}

TEST(GradientCheck, QuadraticWithKnownGradient) {
    const std::vector<double> point = {0.3, -1.2, 2.5};
    const double dev = gradient_check(
        [](std::span<const double> x) { return 2 * x[0] * x[0] + x[1] * x[1] + 0.5 * x[2] * x[2] + x[0] * x[1]; },
        [](std::span<const double> x) {
            return std::vector<double>{4 * x[0] + x[1], 2 * x[1] + x[0], x[2]};
        },
        point, 1e-4);
    EXPECT_LT(dev, 1e-8);
}

TEST(GradientCheck, DetectsAWrongGradient) {
    const std::vector<double> point = {1.0, 2.0};
    const double dev = gradient_check([](std::span<const double> x) { return x[0] * x[1]; },
                                      [](std::span<const double> x) { return std::vector<double>{x[1], 0.0}; },
                                      point, 1e-5);
    EXPECT_GT(dev, 0.5);
    EXPECT_THROW(gradient_check([](std::span<const double>) { return 0.0; },
                                [](std::span<const double>) { return std::vector<double>{0.0}; }, point, 1e-2),
                 InvalidArgument);
}

TEST(GradientCheck, IdentityLossWithToyEmbedder) {
    const ToyImageEmbedder face;
    Rng rng(9);
    const Tensor3 gt = gaussian_tensor(kShape, rng), gen = gaussian_tensor(kShape, rng);
    const double dev = gradient_check(
        [&](std::span<const double> x) { return identity_loss(from_span(x), gt, face); },
        [&](std::span<const double> x) { return identity_loss_with_grad(from_span(x), gt, face).grad.values(); },
        gen.data(), 1e-6);
    EXPECT_LT(dev, 1e-4);
}

TEST(GradientCheck, DirectionalLossWithToyEmbedders) {
    const ToyImageEmbedder image;
    const ToyTextEmbedder text;
    const ImageTextEmbedder clip{image, text};
    const PromptPair prompts{"a photo of a face", "a photo of a surprised face"};
    Rng rng(10);
    const Tensor3 orig = gaussian_tensor(kShape, rng), gen = gaussian_tensor(kShape, rng);
    const double dev = gradient_check(
        [&](std::span<const double> x) { return directional_loss(from_span(x), orig, prompts, clip, {0.3, 0.7}); },
        [&](std::span<const double> x) {
            return directional_loss_with_grad(from_span(x), orig, prompts, clip, {0.3, 0.7}).grad.values();
        },
        gen.data(), 1e-6);
    EXPECT_LT(dev, 1e-4);
}
