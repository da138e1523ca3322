#include "facedit/ddim.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "facedit/errors.hpp"
#include "facedit/injection.hpp"

namespace facedit {

Tensor3 Denoiser::predict(const Tensor3& latent, int timestep, const std::string& prompt,
                          const InjectionContext* injection) const {
    const InjectionContext* inj[] = {injection};
    DenoiseRequest request;
    request.latents = std::span<const Tensor3>(&latent, 1);
    request.timestep = timestep;
    request.prompt = prompt;
    if (injection != nullptr) request.injections = inj;
    auto out = predict_batch(request);
    return std::move(out.front());
}

void require_known_layers(const Denoiser& denoiser, const LayerSet& layers, const char* what) {
    const auto& known = denoiser.attention_layers();
    std::vector<std::string> unknown;
    for (const auto& layer : layers) {
        if (std::find(known.begin(), known.end(), layer) == known.end()) unknown.push_back(layer);
    }
    if (!unknown.empty()) {
        std::sort(unknown.begin(), unknown.end());
        std::ostringstream os;
        os << what << ": unknown self-attention layer(s):";
        for (const auto& u : unknown) os << " " << u;
        throw InvalidArgument(os.str());
    }
}

Tensor3 noise_marginal(const Tensor3& y0, double alpha_bar, const Tensor3& noise) {
    require_same_shape(y0, noise, "forward_noise");
    if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) {
        throw InvalidArgument("alpha_bar must lie in [0, 1]");
    }
    return axpby(std::sqrt(alpha_bar), y0, std::sqrt(1.0 - alpha_bar), noise);
}

Latent forward_noise(const Latent& y0, int t, const NoiseSchedule& schedule, const Tensor3& noise) {
    if (t < 1 || t > schedule.num_steps()) {
        throw InvalidArgument("forward_noise: timestep out of range [1, T]");
    }
    return Latent{noise_marginal(y0.data, schedule.alpha_bar(t), noise), y0.frame_index, t};
}

Tensor3 predict_clean(const Tensor3& y_t, int t, const Tensor3& eps, const NoiseSchedule& schedule) {
    require_same_shape(y_t, eps, "ddim");
    const double ab = schedule.alpha_bar(t);
    if (!(ab > 0.0)) {
        std::ostringstream os;
        os << "alpha_bar(" << t << ") is zero; clean-sample estimate is singular";
        throw SingularityError(os.str());
    }
    const double inv = 1.0 / std::sqrt(ab);
    return axpby(inv, y_t, -std::sqrt(1.0 - ab) * inv, eps);
}

Tensor3 ddim_transition(const Tensor3& y, int t_from, int t_to, const Tensor3& eps,
                        const NoiseSchedule& schedule) {
    const Tensor3 clean = predict_clean(y, t_from, eps, schedule);
    const double ab_to = schedule.alpha_bar(t_to);
    return axpby(std::sqrt(ab_to), clean, std::sqrt(1.0 - ab_to), eps);
}

Latent ddim_step(const Latent& y_t, int t, const Tensor3& eps, const NoiseSchedule& schedule) {
    if (t < 1) throw InvalidArgument("ddim_step needs t >= 1");
    return Latent{ddim_transition(y_t.data, t, t - 1, eps, schedule), y_t.frame_index, t - 1};
}

namespace {

void check_outputs(std::span<const Tensor3> inputs, const std::vector<Tensor3>& outputs) {
    if (outputs.size() != inputs.size()) {
        throw ContractViolation("denoiser returned a different batch size than requested");
    }
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (outputs[i].shape() != inputs[i].shape()) {
            throw ContractViolation("denoiser output shape " + outputs[i].shape().str() +
                                    " differs from latent shape " + inputs[i].shape().str());
        }
        if (!outputs[i].all_finite()) {
            throw NumericalError("denoiser produced non-finite noise prediction");
        }
    }
}

void check_injection_coverage(const InjectionContext& ctx, const std::vector<int>& grid) {
    if (ctx.layers().empty() || ctx.partial()) return;
    std::vector<std::string> gaps;
    for (std::size_t k = 1; k < grid.size(); ++k) {
        if (ctx.covers_timestep(grid[k])) continue;
        for (const auto& layer : ctx.layers()) {
            gaps.push_back(FeatureKey{ctx.frame_index(), layer, grid[k]}.str());
        }
    }
    if (!gaps.empty()) {
        std::sort(gaps.begin(), gaps.end());
        std::ostringstream os;
        os << "injection context for frame " << ctx.frame_index() << " is missing " << gaps.size()
           << " feature(s) required by the sampling schedule";
        throw MissingFeatureError(os.str(), std::move(gaps));
    }
}

}  // namespace

std::vector<Tensor3> guided_prediction(const Denoiser& denoiser, DenoiseRequest request,
                                       const Conditioning& conditioning) {
    request.prompt = conditioning.prompt;
    auto cond = denoiser.predict_batch(request);
    check_outputs(request.latents, cond);
    if (conditioning.guidance_scale == 1.0) return cond;

    request.prompt = conditioning.negative_prompt;
    request.sink = nullptr;
    auto uncond = denoiser.predict_batch(request);
    check_outputs(request.latents, uncond);
    const double s = conditioning.guidance_scale;
    for (std::size_t i = 0; i < cond.size(); ++i) cond[i] = axpby(1.0 - s, uncond[i], s, cond[i]);
    return cond;
}

LatentTrajectory ddim_invert(const Latent& y0, const Denoiser& denoiser, int steps,
                             const NoiseSchedule& schedule, const Conditioning& conditioning,
                             const SamplerHooks& hooks) {
    if (y0.timestep != 0) throw InvalidArgument("ddim_invert expects a clean (t = 0) latent");
    if (!y0.data.all_finite()) throw NumericalError("ddim_invert: non-finite input latent");
    const auto grid = schedule.timestep_grid(steps);

    LatentTrajectory traj;
    traj.schedule_id = schedule.id();
    traj.conditioning = conditioning.prompt;
    traj.latents.reserve(grid.size());
    traj.latents.push_back(y0);

    const int frame = y0.frame_index;
    for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
        const Latent& cur = traj.latents.back();
        DenoiseRequest req;
        req.latents = std::span<const Tensor3>(&cur.data, 1);
        req.timestep = grid[k];
        req.sink = hooks.sink;
        req.frames = std::span<const int>(&frame, 1);
        req.phase = hooks.phase;
        auto eps = guided_prediction(denoiser, req, conditioning);
        traj.latents.push_back(
            Latent{ddim_transition(cur.data, grid[k], grid[k + 1], eps.front(), schedule), frame,
                   grid[k + 1]});
    }
    return traj;
}

std::vector<Latent> sample_joint(std::span<const Latent> x_T, const Denoiser& denoiser, int steps,
                                 const NoiseSchedule& schedule, const Conditioning& conditioning,
                                 std::span<const InjectionContext* const> injections,
                                 const LayerSet& extended_layers, const SamplerHooks& hooks) {
    if (x_T.empty()) throw InvalidArgument("sample needs at least one latent");
    if (!injections.empty() && injections.size() != x_T.size()) {
        throw InvalidArgument("sample: injections must be empty or one per latent");
    }
    std::vector<Latent> current(x_T.begin(), x_T.end());
    if (steps == 0) return current;

    const auto grid = schedule.timestep_grid(steps);
    for (const auto& lat : current) {
        if (lat.timestep != grid.back()) {
            std::ostringstream os;
            os << "sample: latent is at timestep " << lat.timestep << " but the " << steps
               << "-step grid starts at " << grid.back();
            throw InvalidArgument(os.str());
        }
        require_same_shape(lat.data, current.front().data, "sample");
    }
    require_known_layers(denoiser, extended_layers, "extended attention");
    for (const auto* ctx : injections) {
        if (ctx == nullptr) continue;
        require_known_layers(denoiser, ctx->layers(), "injection");
        check_injection_coverage(*ctx, grid);
    }

    std::vector<int> frames;
    for (const auto& lat : current) frames.push_back(lat.frame_index);
    std::vector<Tensor3> data;
    data.reserve(current.size());
    for (auto& lat : current) data.push_back(std::move(lat.data));

    for (std::size_t k = grid.size() - 1; k >= 1; --k) {
        DenoiseRequest req;
        req.latents = data;
        req.timestep = grid[k];
        req.injections = injections;
        req.extended_layers = extended_layers.empty() ? nullptr : &extended_layers;
        req.sink = hooks.sink;
        req.frames = frames;
        req.phase = hooks.phase;
        auto eps = guided_prediction(denoiser, req, conditioning);
        for (std::size_t b = 0; b < data.size(); ++b) {
            data[b] = ddim_transition(data[b], grid[k], grid[k - 1], eps[b], schedule);
        }
    }

    std::vector<Latent> out;
    out.reserve(data.size());
    for (std::size_t b = 0; b < data.size(); ++b) out.push_back(Latent{std::move(data[b]), frames[b], 0});
    return out;
}

Latent sample(const Latent& x_T, const Denoiser& denoiser, int steps, const NoiseSchedule& schedule,
              const Conditioning& conditioning, const InjectionContext* injection,
              const SamplerHooks& hooks) {
    const InjectionContext* inj[] = {injection};
    std::span<const InjectionContext* const> injections;
    if (injection != nullptr) injections = inj;
    auto out = sample_joint(std::span<const Latent>(&x_T, 1), denoiser, steps, schedule, conditioning,
                            injections, LayerSet{}, hooks);
    return std::move(out.front());
}

}  // namespace facedit
