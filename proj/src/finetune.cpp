#include "facedit/finetune.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

#include "json.hpp"

#include "facedit/ddim.hpp"
#include "facedit/errors.hpp"
#include "facedit/random.hpp"

namespace facedit {

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw InvalidArgument("learning_rate must be a finite value >= 0");
    }
    if (iterations < 1) throw InvalidArgument("iterations must be >= 1");
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (height < 1 || width < 1) throw InvalidArgument("resolution must be positive");
    if (inversion_steps < 1) throw InvalidArgument("inversion_steps must be >= 1");
    if (truncated_steps < 1 || truncated_steps > inversion_steps) {
        throw InvalidArgument("truncated_steps must lie in [1, inversion_steps]");
    }
    loss_weights.validate();
}

void CaptionedDataset::validate() const {
    if (samples.empty()) throw InvalidDataset("the training dataset is empty");
    const Shape3 shape = samples.front().image.shape();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (s.image.shape() != shape) {
            std::ostringstream os;
            os << "sample " << i << " has shape " << s.image.shape().str() << ", expected " << shape.str();
            throw InvalidDataset(os.str());
        }
        if (s.caption.empty()) throw InvalidDataset("sample " + std::to_string(i) + " has an empty caption");
        if (!s.image.all_finite()) {
            throw InvalidDataset("sample " + std::to_string(i) + " has non-finite pixels");
        }
    }
}

Adam::Adam(double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

namespace {

bool is_trainable(const std::string& name, const std::vector<std::string>& trainable) {
    if (trainable.empty()) return true;
    for (const auto& prefix : trainable) {
        if (name.rfind(prefix, 0) == 0) return true;
    }
    return false;
}

}  // namespace

void Adam::step(ParameterSet& params, const ParameterSet& grads, const std::vector<std::string>& trainable) {
    if (m_.empty()) {
        m_ = zeros_like(params);
        v_ = zeros_like(params);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, p] : params) {
        if (!is_trainable(name, trainable)) continue;
        auto g = grads.find(name);
        if (g == grads.end()) continue;
        auto& m = m_.at(name);
        auto& v = v_.at(name);
        m = beta1_ * m + (1.0 - beta1_) * g->second;
        v = (beta2_ * v.array() + (1.0 - beta2_) * g->second.array().square()).matrix();
        p.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + epsilon_);
    }
}

namespace {

// Everything the loss needs from one truncated reconstruction.
struct Generation {
    Tensor3 y0_hat;
    std::vector<DifferentiableDenoiser::Pass> passes;
    std::vector<double> carry;  // d x_next / d x per transition
    std::vector<double> mix;    // d x_next / d eps per transition
    double final_x = 0.0;       // d y0_hat / d x at the last step
    double final_eps = 0.0;     // d y0_hat / d eps at the last step
};

// Inverts `image` under `inversion_prompt` up to grid index k (no gradient),
// then runs `truncated` differentiable steps under `prompt` ending in a clean
// estimate.
Generation generate(const DifferentiableDenoiser& denoiser, const Tensor3& image,
                    const std::string& inversion_prompt, const std::string& prompt,
                    const std::vector<int>& grid, int k, int truncated, const NoiseSchedule& schedule) {
    Tensor3 x = image;
    for (int j = 0; j < k; ++j) {
        const Tensor3 eps = denoiser.predict(x, grid[j], inversion_prompt);
        x = ddim_transition(x, grid[j], grid[j + 1], eps, schedule);
    }

    Generation g;
    for (int s = 0; s < truncated; ++s) {
        const int j = k - s;
        const int t = grid[j];
        auto pass = denoiser.forward_for_training(x, t, prompt);
        const double ab = schedule.alpha_bar(t);
        const double a = 1.0 / std::sqrt(ab);
        const double b = -std::sqrt(1.0 - ab) / std::sqrt(ab);
        if (s + 1 == truncated) {
            g.final_x = a;
            g.final_eps = b;
            g.y0_hat = axpby(a, x, b, pass.eps);
        } else {
            const double ab_to = schedule.alpha_bar(grid[j - 1]);
            const double c1 = std::sqrt(ab_to) * a;
            const double c2 = std::sqrt(ab_to) * b + std::sqrt(1.0 - ab_to);
            g.carry.push_back(c1);
            g.mix.push_back(c2);
            x = axpby(c1, x, c2, pass.eps);
        }
        g.passes.push_back(std::move(pass));
    }
    return g;
}

void backpropagate(const DifferentiableDenoiser& denoiser, const Generation& g, const Tensor3& d_y0,
                   ParameterSet& grads) {
    const std::size_t last = g.passes.size() - 1;
    Tensor3 d_x = axpby(g.final_x, d_y0, 0.0, d_y0);
    Tensor3 d_eps = axpby(g.final_eps, d_y0, 0.0, d_y0);
    d_x = axpby(1.0, d_x, 1.0, denoiser.backward(g.passes[last], d_eps, grads));
    for (std::size_t s = last; s-- > 0;) {
        d_eps = axpby(g.mix[s], d_x, 0.0, d_x);
        d_x = axpby(g.carry[s], d_x, 1.0, denoiser.backward(g.passes[s], d_eps, grads));
    }
}

void scale_grads(ParameterSet& grads, double factor) {
    for (auto& [name, m] : grads) m *= factor;
}

void check_finite(double loss, int step, std::size_t sample, const char* branch) {
    if (std::isfinite(loss)) return;
    std::ostringstream os;
    os << branch << " fine-tuning diverged: loss " << loss << " at step " << step << " (sample " << sample
       << ")";
    throw NumericalError(os.str());
}

struct SampleResult {
    LossAndGrad loss;
    std::optional<Generation> generation;  // absent when no gradient reaches the denoiser
};

// Loss of one sample reconstructed from grid index k.
using SampleObjective = std::function<SampleResult(std::size_t sample, Rng& rng, int k)>;

std::vector<TrainStep> train_loop(DifferentiableDenoiser& denoiser, const CaptionedDataset& dataset,
                                  const TrainConfig& cfg, const FinetuneHooks& hooks, const char* branch,
                                  const SampleObjective& objective) {
    cfg.validate();
    dataset.validate();
    const Shape3 shape = dataset.samples.front().image.shape();
    if (shape.height != cfg.height || shape.width != cfg.width) {
        std::ostringstream os;
        os << "dataset resolution " << shape.height << "x" << shape.width
           << " differs from the configured " << cfg.height << "x" << cfg.width;
        throw InvalidDataset(os.str());
    }

    Rng rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, dataset.samples.size() - 1);
    std::uniform_int_distribution<int> pick_k(cfg.truncated_steps, cfg.inversion_steps);
    Adam adam(cfg.learning_rate);
    std::vector<TrainStep> curve;
    curve.reserve(static_cast<std::size_t>(cfg.iterations));
    const auto start = std::chrono::steady_clock::now();

    for (int step = 0; step < cfg.iterations; ++step) {
        ParameterSet grads = zeros_like(denoiser.parameters());
        double loss = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const std::size_t i = pick(rng);
            const int k = pick_k(rng);
            const SampleResult r = objective(i, rng, k);
            check_finite(r.loss.value, step, i, branch);
            loss += r.loss.value;
            if (r.generation) backpropagate(denoiser, *r.generation, r.loss.grad, grads);
        }
        scale_grads(grads, 1.0 / cfg.batch_size);
        loss /= cfg.batch_size;
        adam.step(denoiser.parameters(), grads, cfg.trainable);

        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        curve.push_back(TrainStep{step, loss, ms});
        if (hooks.on_step) hooks.on_step(curve.back());
    }
    return curve;
}

}  // namespace

std::vector<TrainStep> finetune_identity_branch(DifferentiableDenoiser& denoiser,
                                                const CaptionedDataset& dataset, const TrainConfig& cfg,
                                                const NoiseSchedule& schedule, const FaceEmbedder& face,
                                                const FinetuneHooks& hooks) {
    if (!face.differentiable()) throw InvalidArgument("identity fine-tuning needs a differentiable embedder");
    const auto grid = schedule.timestep_grid(cfg.inversion_steps);
    return train_loop(denoiser, dataset, cfg, hooks, "identity",
                      [&](std::size_t i, Rng&, int k) {
                          const auto& s = dataset.samples[i];
                          SampleResult r;
                          r.generation = generate(denoiser, s.image, s.caption, s.caption, grid, k,
                                                  cfg.truncated_steps, schedule);
                          r.loss = identity_loss_with_grad(r.generation->y0_hat, s.image, face);
                          return r;
                      });
}

std::vector<TrainStep> finetune_directional_branch(DifferentiableDenoiser& denoiser,
                                                   const CaptionedDataset& dataset,
                                                   const TrainConfig& cfg, const NoiseSchedule& schedule,
                                                   const ImageTextEmbedder& embedder,
                                                   const FinetuneHooks& hooks) {
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        if (dataset.samples[i].edit_prompts.empty() && dataset.prompt_bank.empty()) {
            throw InvalidDataset("sample " + std::to_string(i) +
                                 " has no edit prompts and no prompt bank is configured");
        }
    }
    if (!hooks.frozen_generation && !embedder.image.differentiable()) {
        throw InvalidArgument("directional fine-tuning needs a differentiable image embedder");
    }
    const auto grid = schedule.timestep_grid(cfg.inversion_steps);
    return train_loop(
        denoiser, dataset, cfg, hooks, "directional",
        [&](std::size_t i, Rng& rng, int k) {
            const auto& s = dataset.samples[i];
            const auto& prompts = s.edit_prompts.empty() ? dataset.prompt_bank : s.edit_prompts;
            std::uniform_int_distribution<std::size_t> pick_prompt(0, prompts.size() - 1);
            const PromptPair pair{s.caption, prompts[pick_prompt(rng)]};
            SampleResult r;
            if (hooks.frozen_generation) {
                r.loss.value = directional_loss(s.image, s.image, pair, embedder, cfg.loss_weights,
                                                DegeneratePolicy::ZeroDot);
                return r;
            }
            r.generation = generate(denoiser, s.image, s.caption, pair.target, grid, k,
                                    cfg.truncated_steps, schedule);
            r.loss = directional_loss_with_grad(r.generation->y0_hat, s.image, pair, embedder,
                                                cfg.loss_weights, DegeneratePolicy::ZeroDot);
            return r;
        });
}

void write_loss_log(const std::vector<TrainStep>& curve, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write loss log " + path.string());
    for (const auto& s : curve) {
        nlohmann::json rec{{"step", s.step}, {"loss", s.loss}, {"wall_ms", s.wall_ms}};
        out << rec.dump() << '\n';
    }
    if (!out) throw IoError("failed writing loss log " + path.string());
}

DecileMeans decile_means(const std::vector<TrainStep>& curve) {
    if (curve.empty()) throw InvalidArgument("decile_means of an empty curve");
    const std::size_t n = std::max<std::size_t>(1, curve.size() / 10);
    DecileMeans d;
    for (std::size_t i = 0; i < n; ++i) {
        d.first += curve[i].loss;
        d.last += curve[curve.size() - 1 - i].loss;
    }
    d.first /= static_cast<double>(n);
    d.last /= static_cast<double>(n);
    return d;
}

}  // namespace facedit
