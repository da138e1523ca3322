#include <gtest/gtest.h>

#include <cmath>

#include "facedit/ddim.hpp"
#include "facedit/errors.hpp"
#include "facedit/random.hpp"
#include "facedit/schedule.hpp"
#include "facedit/toy_denoiser.hpp"
#include "facedit/toy_models.hpp"

using namespace facedit;

namespace {

// Predicts zero noise everywhere; DDIM then reduces to pure rescaling.
class ZeroNoiseDenoiser final : public Denoiser {
public:
    std::vector<Tensor3> predict_batch(const DenoiseRequest& request) const override {
        std::vector<Tensor3> out;
        for (const auto& l : request.latents) out.emplace_back(l.shape(), 0.0);
        return out;
    }
    const std::vector<LayerId>& attention_layers() const override { return layers_; }

private:
    std::vector<LayerId> layers_{"site"};
};

Conditioning prompt(const std::string& text) {
    Conditioning c;
    c.prompt = text;
    return c;
}

}  // namespace

TEST(NoiseSchedule, AlphaBarIsCumulativeProduct) {
    const auto s = NoiseSchedule::linear_beta(1000, 0.00085, 0.012);
    double prod = 1.0;
    for (int t = 1; t <= 1000; ++t) {
        prod *= s.alpha(t);
        EXPECT_NEAR(s.alpha_bar(t) / prod, 1.0, 1e-12) << "t=" << t;
        EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    }
    EXPECT_EQ(s.alpha_bar(0), 1.0);
}

TEST(NoiseSchedule, RejectsAlphasOutsideOpenUnitInterval) {
    EXPECT_THROW(NoiseSchedule::from_alphas({0.9, 1.0}), InvalidArgument);
    EXPECT_THROW(NoiseSchedule::from_alphas({0.0}), InvalidArgument);
    EXPECT_THROW(NoiseSchedule::from_alphas({}), InvalidArgument);
    EXPECT_THROW(NoiseSchedule::linear_beta(10, 0.2, 0.1), InvalidArgument);
}

TEST(NoiseSchedule, TimestepGridSpansZeroToT) {
    const auto s = NoiseSchedule::linear_beta(10, 0.01, 0.02);
    EXPECT_EQ(s.timestep_grid(10), (std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10}));
    EXPECT_EQ(s.timestep_grid(5), (std::vector<int>{0, 2, 4, 6, 8, 10}));
    EXPECT_EQ(s.timestep_grid(0), (std::vector<int>{0}));
    const auto g = s.timestep_grid(3);
    EXPECT_EQ(g.front(), 0);
    EXPECT_EQ(g.back(), 10);
    EXPECT_THROW(s.timestep_grid(11), InvalidArgument);
}

TEST(ForwardNoise, LimitsOfTheMarginal) {
    Rng rng(1);
    const Tensor3 y0 = gaussian_tensor({2, 3, 3}, rng);
    const Tensor3 noise = gaussian_tensor({2, 3, 3}, rng);
    EXPECT_EQ(noise_marginal(y0, 1.0, noise), y0);
    EXPECT_EQ(noise_marginal(y0, 0.0, noise), noise);
}

TEST(ForwardNoise, ClosedFormMatchesElementwiseFormula) {
    const auto s = NoiseSchedule::linear_beta(10, 0.01, 0.2);
    Rng rng(2);
    const Tensor3 y0 = gaussian_tensor({1, 4, 4}, rng);
    const Tensor3 noise = gaussian_tensor({1, 4, 4}, rng);
    const Latent yt = forward_noise(Latent{y0, 0, 0}, 7, s, noise);
    EXPECT_EQ(yt.timestep, 7);
    const double ab = s.alpha_bar(7);
    for (std::size_t k = 0; k < y0.numel(); ++k) {
        EXPECT_NEAR(yt.data.values()[k], std::sqrt(ab) * y0.values()[k] + std::sqrt(1 - ab) * noise.values()[k],
                    1e-14);
    }
    EXPECT_THROW(forward_noise(Latent{y0, 0, 0}, 0, s, noise), InvalidArgument);
    EXPECT_THROW(forward_noise(Latent{y0, 0, 0}, 11, s, noise), InvalidArgument);
}

TEST(DdimStep, ExactNoiseRecoversCleanSample) {
    const auto s = NoiseSchedule::linear_beta(1000, 0.00085, 0.012);
    Rng rng(3);
    const Tensor3 y0 = gaussian_tensor({4, 4, 4}, rng);
    const Tensor3 noise = gaussian_tensor({4, 4, 4}, rng);
    for (int t : {1, 10, 500, 999}) {
        const Latent yt = forward_noise(Latent{y0, 0, 0}, t, s, noise);
        const Tensor3 y0_hat = predict_clean(yt.data, t, noise, s);
        EXPECT_LT(mean_abs_diff(y0_hat, y0), 1e-6) << "t=" << t;
    }
}

TEST(DdimStep, TerminalStepReturnsCleanEstimate) {
    const auto s = NoiseSchedule::linear_beta(5, 0.1, 0.3);
    Rng rng(4);
    const Tensor3 y = gaussian_tensor({1, 3, 3}, rng);
    const Tensor3 eps = gaussian_tensor({1, 3, 3}, rng);
    const Latent out = ddim_step(Latent{y, 0, 1}, 1, eps, s);
    EXPECT_EQ(out.timestep, 0);
    EXPECT_LT(mean_abs_diff(out.data, predict_clean(y, 1, eps, s)), 1e-15);
}

TEST(DdimStep, MatchesScalarRecomputation) {
    const auto s = NoiseSchedule::linear_beta(5, 0.1, 0.3);
    Rng rng(5);
    for (int t = 1; t <= 5; ++t) {
        const Tensor3 y = gaussian_tensor({2, 2, 3}, rng);
        const Tensor3 eps = gaussian_tensor({2, 2, 3}, rng);
        const Latent out = ddim_step(Latent{y, 0, t}, t, eps, s);
        // Alphas of this schedule by hand: beta linear in [0.1, 0.3] over 5 steps.
        double ab_t = 1.0, ab_prev = 1.0;
        for (int k = 1; k <= t; ++k) {
            const double beta = 0.1 + (0.3 - 0.1) * (k - 1) / 4.0;
            ab_prev = ab_t;
            ab_t *= 1.0 - beta;
        }
        for (std::size_t k = 0; k < y.numel(); ++k) {
            const double yk = y.values()[k], ek = eps.values()[k];
            const double clean = (yk - std::sqrt(1 - ab_t) * ek) / std::sqrt(ab_t);
            const double want = std::sqrt(ab_prev) * clean + std::sqrt(1 - ab_prev) * ek;
            EXPECT_NEAR(out.data.values()[k], want, 1e-12);
        }
    }
}

TEST(DdimInvert, ZeroNoiseDenoiserRescalesBySqrtAlphaBarRatios) {
    const auto s = NoiseSchedule::linear_beta(20, 0.01, 0.05);
    const ZeroNoiseDenoiser zero;
    Rng rng(6);
    const Tensor3 y0 = gaussian_tensor({1, 3, 3}, rng);
    const auto traj = ddim_invert(Latent{y0, 0, 0}, zero, 4, s, prompt("x"));
    ASSERT_EQ(traj.latents.size(), 5u);
    const auto grid = s.timestep_grid(4);
    for (std::size_t k = 0; k < traj.latents.size(); ++k) {
        EXPECT_EQ(traj.latents[k].timestep, grid[k]);
        const double factor = std::sqrt(s.alpha_bar(grid[k]));
        for (std::size_t e = 0; e < y0.numel(); ++e) {
            EXPECT_NEAR(traj.latents[k].data.values()[e], factor * y0.values()[e], 1e-12);
        }
    }
    // Sampling back divides the same factors out.
    const Latent back = sample(traj.latents.back(), zero, 4, s, prompt("x"));
    EXPECT_EQ(back.timestep, 0);
    EXPECT_LT(mean_abs_diff(back.data, y0), 1e-12);
}

TEST(DdimInvert, ZeroStepsIsTheIdentity) {
    const auto s = NoiseSchedule::linear_beta(20, 0.01, 0.05);
    const ZeroNoiseDenoiser zero;
    Rng rng(7);
    const Tensor3 y0 = gaussian_tensor({1, 3, 3}, rng);
    const auto traj = ddim_invert(Latent{y0, 0, 0}, zero, 0, s, prompt("x"));
    ASSERT_EQ(traj.latents.size(), 1u);
    EXPECT_EQ(traj.latents[0].data, y0);
    EXPECT_EQ(sample(Latent{y0, 0, 20}, zero, 0, s, prompt("x")).data, y0);
}

TEST(DdimInvert, ToyRoundTripStaysWithinTolerance) {
    const auto s = NoiseSchedule::linear_beta(1000, 0.00085, 0.012);
    const ToyDenoiser toy;
    for (std::uint64_t seed : {0u, 3u}) {
        const Tensor3 y0 = synthetic_face(seed);
        const auto traj = ddim_invert(Latent{y0, 0, 0}, toy, 20, s, prompt("a photo of a face"));
        EXPECT_EQ(traj.latents.size(), 21u);
        const Latent back = sample(traj.latents.back(), toy, 20, s, prompt("a photo of a face"));
        EXPECT_LT(mean_abs_diff(back.data, y0), 0.08);
    }
}

TEST(Sample, IsBitwiseDeterministic) {
    const auto s = NoiseSchedule::linear_beta(1000, 0.00085, 0.012);
    const ToyDenoiser toy;
    Rng rng(8);
    const Latent x{gaussian_tensor({4, 8, 8}, rng), 0, 1000};
    EXPECT_EQ(sample(x, toy, 10, s, prompt("a")).data, sample(x, toy, 10, s, prompt("a")).data);
}

TEST(Sample, GuidanceCallsTheDenoiserTwicePerStep) {
    struct Counting final : Denoiser {
        std::vector<Tensor3> predict_batch(const DenoiseRequest& r) const override {
            ++calls;
            return inner.predict_batch(r);
        }
        const std::vector<LayerId>& attention_layers() const override { return inner.attention_layers(); }
        ZeroNoiseDenoiser inner;
        mutable int calls = 0;
    } counting;
    const auto s = NoiseSchedule::linear_beta(20, 0.01, 0.05);
    Conditioning c = prompt("edit");
    sample(Latent{Tensor3({1, 2, 2}, 1.0), 0, 20}, counting, 5, s, c);
    EXPECT_EQ(counting.calls, 5);
    counting.calls = 0;
    c.guidance_scale = 7.5;
    sample(Latent{Tensor3({1, 2, 2}, 1.0), 0, 20}, counting, 5, s, c);
    EXPECT_EQ(counting.calls, 10);
}

TEST(DdimInvert, RejectsANoisyStartingLatent) {
    const auto s = NoiseSchedule::linear_beta(20, 0.01, 0.05);
    const ZeroNoiseDenoiser zero;
    EXPECT_THROW(ddim_invert(Latent{Tensor3({1, 2, 2}, 1.0), 0, 5}, zero, 4, s, prompt("x")), InvalidArgument);
}

TEST(Sample, RejectsLatentOffTheTopOfTheGrid) {
    const auto s = NoiseSchedule::linear_beta(20, 0.01, 0.05);
    const ZeroNoiseDenoiser zero;
    EXPECT_THROW(sample(Latent{Tensor3({1, 2, 2}, 1.0), 0, 15}, zero, 4, s, prompt("x")), InvalidArgument);
}
