#include "facedit/toy_denoiser.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "facedit/errors.hpp"
#include "facedit/injection.hpp"
#include "facedit/random.hpp"
#include "facedit/schedule.hpp"

namespace facedit {

namespace {

constexpr std::uint64_t kConditioningSalt = 0x636f6e64ull;  // "cond"

using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

void softmax_rows(MatrixX& s) {
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        const double m = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - m).exp();
        s.row(i) /= s.row(i).sum();
    }
}

MatrixX quantize(const MatrixX& m) { return m.cast<float>().cast<double>(); }

}  // namespace

ParameterSet zeros_like(const ParameterSet& params) {
    ParameterSet out;
    for (const auto& [name, m] : params) out.emplace(name, MatrixX::Zero(m.rows(), m.cols()));
    return out;
}

VectorX toy_prompt_vector(const std::string& prompt, int dim, std::uint64_t salt) {
    if (prompt.empty()) return VectorX::Zero(dim);
    Rng rng(fnv1a64(prompt, salt));
    return gaussian_vector(dim, rng);
}

const std::vector<LayerId>& ToyDenoiser::site_names() {
    static const std::vector<LayerId> names = {"down.0.attn", "down.1.attn", "up.0.attn", "up.1.attn"};
    return names;
}

ToyDenoiser::ToyDenoiser(ToyDenoiserConfig config) : config_(config), sites_(site_names()) {
    if (config_.channels < 1 || config_.dim < 2 || config_.hidden < 1 || config_.text_dim < 1) {
        throw InvalidArgument("toy denoiser dimensions must be positive");
    }
    init_prior();
    Rng rng(config_.seed);
    const int c = config_.channels;
    const int d = config_.dim;
    const int hd = config_.hidden;
    const int e = config_.text_dim;
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    const double se = 1.0 / std::sqrt(static_cast<double>(e));

    params_["in.w"] = gaussian_matrix(c, d, rng, 1.0 / std::sqrt(static_cast<double>(c)));
    params_["in.b"] = MatrixX::Zero(1, d);
    params_["time.w"] = gaussian_matrix(d, d, rng, 0.5 * sd);
    params_["cond.w"] = gaussian_matrix(e, d, rng, 0.5 * se);
    for (const auto& s : sites_) {
        params_[s + ".cond"] = gaussian_matrix(e, d, rng, 0.3 * se);
        params_[s + ".q"] = gaussian_matrix(d, d, rng, sd);
        params_[s + ".k"] = gaussian_matrix(d, d, rng, sd);
        params_[s + ".v"] = gaussian_matrix(d, d, rng, sd);
        params_[s + ".o"] = gaussian_matrix(d, d, rng, 0.5 * sd);
        params_[s + ".mlp1"] = gaussian_matrix(d, hd, rng, sd);
        params_[s + ".mlp1b"] = MatrixX::Zero(1, hd);
        params_[s + ".mlp2"] = gaussian_matrix(hd, d, rng, 0.5 / std::sqrt(static_cast<double>(hd)));
    }
    params_["out.w"] = gaussian_matrix(d, c, rng, config_.residual_scale * sd);
    params_["out.b"] = MatrixX::Zero(1, c);
}

ToyDenoiser::ToyDenoiser(ToyDenoiserConfig config, ParameterSet params)
    : config_(config), sites_(site_names()), params_(std::move(params)) {
    init_prior();
    validate_params();
}

void ToyDenoiser::init_prior() {
    const auto schedule =
        NoiseSchedule::linear_beta(config_.prior_steps, config_.prior_beta_start, config_.prior_beta_end);
    prior_.resize(static_cast<std::size_t>(config_.prior_steps) + 1);
    for (int t = 0; t <= config_.prior_steps; ++t) {
        const double ab = schedule.alpha_bar(t);
        prior_[t] = 1.0 / (std::sqrt(ab) + std::sqrt(1.0 - ab));
    }
}

double ToyDenoiser::prior_coefficient(int timestep) const {
    if (timestep < 0 || timestep > config_.prior_steps) {
        std::ostringstream os;
        os << "toy denoiser: timestep " << timestep << " outside [0, " << config_.prior_steps << "]";
        throw InvalidArgument(os.str());
    }
    return prior_[static_cast<std::size_t>(timestep)];
}

void ToyDenoiser::validate_params() const {
    const ToyDenoiser reference(config_);
    for (const auto& [name, m] : reference.params_) {
        auto it = params_.find(name);
        if (it == params_.end()) throw VersionError("toy denoiser parameter '" + name + "' missing");
        if (it->second.rows() != m.rows() || it->second.cols() != m.cols()) {
            throw VersionError("toy denoiser parameter '" + name + "' has the wrong shape");
        }
    }
    if (params_.size() != reference.params_.size()) {
        throw VersionError("toy denoiser checkpoint has unexpected parameters");
    }
}

const MatrixX& ToyDenoiser::param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw InvalidArgument("no toy denoiser parameter named " + name);
    return it->second;
}

std::vector<LayerId> ToyDenoiser::decoder_layers() const {
    std::vector<LayerId> out;
    for (const auto& s : sites_) {
        if (s.rfind("up.", 0) == 0) out.push_back(s);
    }
    return out;
}

VectorX ToyDenoiser::time_embedding(int timestep) const {
    const int d = config_.dim;
    const int half = d / 2;
    VectorX emb = VectorX::Zero(d);
    // Low frequencies only, so the prediction varies smoothly along the
    // sampling grid.
    const double phase = 0.5 * std::numbers::pi * timestep / config_.prior_steps;
    for (int j = 0; j < half; ++j) {
        emb[j] = std::sin((j + 1) * phase);
        emb[half + j] = std::cos((j + 1) * phase);
    }
    return emb;
}

// Intermediate values of a single-latent, uninjected forward pass.
struct ToyDenoiser::TrainTape final : DifferentiableDenoiser::Tape {
    struct Site {
        MatrixX u;       // features entering attention (after quantization)
        MatrixX q, k, v;
        MatrixX attn;    // softmax weights
        MatrixX mixed;   // attn * v
        MatrixX h_mid;   // residual stream after attention
        MatrixX act;     // tanh activations of the MLP
    };
    Shape3 shape;
    MatrixX x;
    VectorX text;
    VectorX temb;
    double prior = 0.0;
    std::vector<Site> sites;
    MatrixX h_final;
};

std::vector<Tensor3> ToyDenoiser::predict_batch(const DenoiseRequest& request) const {
    const auto& latents = request.latents;
    if (latents.empty()) throw InvalidArgument("predict_batch needs at least one latent");
    const Shape3 shape = latents.front().shape();
    if (shape.channels != config_.channels) {
        std::ostringstream os;
        os << "toy denoiser expects " << config_.channels << " channels, got " << shape.channels;
        throw InvalidArgument(os.str());
    }
    for (const auto& l : latents) require_same_shape(l, latents.front(), "toy denoiser batch");
    if (!request.injections.empty() && request.injections.size() != latents.size()) {
        throw InvalidArgument("toy denoiser: injections must be empty or one per latent");
    }

    const std::size_t batch = latents.size();
    const int t = request.timestep;
    const double scale = 1.0 / std::sqrt(static_cast<double>(config_.dim));
    const VectorX text = toy_prompt_vector(request.prompt, config_.text_dim, kConditioningSalt);
    const VectorX temb = time_embedding(t);
    const double prior = prior_coefficient(t);

    RowVector global = param("in.b").row(0) + temb.transpose() * param("time.w") +
                       text.transpose() * param("cond.w");

    std::vector<MatrixX> h(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        h[b] = latents[b].to_tokens() * param("in.w");
        h[b].rowwise() += global;
    }

    const bool extended_any = request.extended_layers != nullptr && batch > 1;
    for (const auto& site : sites_) {
        const RowVector site_cond = text.transpose() * param(site + ".cond");
        const MatrixX& wq = param(site + ".q");
        const MatrixX& wk = param(site + ".k");
        const MatrixX& wv = param(site + ".v");
        const MatrixX& wo = param(site + ".o");

        std::vector<MatrixX> q(batch), k(batch), v(batch);
        for (std::size_t b = 0; b < batch; ++b) {
            h[b].rowwise() += site_cond;
            MatrixX own = config_.quantize_sites ? quantize(h[b]) : h[b];
            if (request.sink != nullptr) {
                request.sink->on_features(site, static_cast<int>(b), t, own.cast<float>());
            }
            const FeatureRecord* injected = nullptr;
            if (!request.injections.empty() && request.injections[b] != nullptr) {
                injected = request.injections[b]->resolve(site, t);
            }
            if (injected != nullptr) {
                if (injected->rows() != own.rows() || injected->cols() != own.cols()) {
                    throw ContractViolation("injected features for " + site +
                                            " do not match the site's token shape");
                }
                own = injected->cast<double>();
            }
            q[b] = own * wq;
            k[b] = own * wk;
            v[b] = own * wv;
        }

        const bool extended = extended_any && request.extended_layers->count(site) != 0;
        MatrixX k_all, v_all;
        if (extended) {
            const Eigen::Index n = k.front().rows();
            k_all.resize(n * static_cast<Eigen::Index>(batch), config_.dim);
            v_all.resize(n * static_cast<Eigen::Index>(batch), config_.dim);
            for (std::size_t b = 0; b < batch; ++b) {
                k_all.middleRows(n * static_cast<Eigen::Index>(b), n) = k[b];
                v_all.middleRows(n * static_cast<Eigen::Index>(b), n) = v[b];
            }
        }

        const MatrixX& w1 = param(site + ".mlp1");
        const RowVector b1 = param(site + ".mlp1b").row(0);
        const MatrixX& w2 = param(site + ".mlp2");
        for (std::size_t b = 0; b < batch; ++b) {
            const MatrixX& keys = extended ? k_all : k[b];
            const MatrixX& values = extended ? v_all : v[b];
            MatrixX scores = (q[b] * keys.transpose()) * scale;
            softmax_rows(scores);
            h[b] += (scores * values) * wo;
            MatrixX pre = h[b] * w1;
            pre.rowwise() += b1;
            h[b] += pre.array().tanh().matrix() * w2;
        }
    }

    std::vector<Tensor3> out;
    out.reserve(batch);
    const RowVector bout = param("out.b").row(0);
    for (std::size_t b = 0; b < batch; ++b) {
        MatrixX eps = h[b] * param("out.w") + prior * latents[b].to_tokens();
        eps.rowwise() += bout;
        out.push_back(Tensor3::from_tokens(eps, shape));
    }
    return out;
}

DifferentiableDenoiser::Pass ToyDenoiser::forward_for_training(const Tensor3& latent, int timestep,
                                                               const std::string& prompt) const {
    if (latent.channels() != config_.channels) {
        throw InvalidArgument("toy denoiser: wrong channel count for training input");
    }
    auto tape = std::make_shared<TrainTape>();
    tape->shape = latent.shape();
    tape->x = latent.to_tokens();
    tape->text = toy_prompt_vector(prompt, config_.text_dim, kConditioningSalt);
    tape->temb = time_embedding(timestep);
    tape->prior = prior_coefficient(timestep);
    const double scale = 1.0 / std::sqrt(static_cast<double>(config_.dim));

    MatrixX h = tape->x * param("in.w");
    RowVector global = param("in.b").row(0) + tape->temb.transpose() * param("time.w") +
                       tape->text.transpose() * param("cond.w");
    h.rowwise() += global;

    for (const auto& site : sites_) {
        TrainTape::Site rec;
        const RowVector site_cond = tape->text.transpose() * param(site + ".cond");
        h.rowwise() += site_cond;
        rec.u = config_.quantize_sites ? quantize(h) : h;
        rec.q = rec.u * param(site + ".q");
        rec.k = rec.u * param(site + ".k");
        rec.v = rec.u * param(site + ".v");
        rec.attn = (rec.q * rec.k.transpose()) * scale;
        softmax_rows(rec.attn);
        rec.mixed = rec.attn * rec.v;
        h += rec.mixed * param(site + ".o");
        rec.h_mid = h;
        MatrixX pre = h * param(site + ".mlp1");
        pre.rowwise() += param(site + ".mlp1b").row(0);
        rec.act = pre.array().tanh().matrix();
        h += rec.act * param(site + ".mlp2");
        tape->sites.push_back(std::move(rec));
    }
    tape->h_final = h;

    MatrixX eps = h * param("out.w") + prior_coefficient(timestep) * tape->x;
    eps.rowwise() += param("out.b").row(0);
    Pass pass;
    pass.eps = Tensor3::from_tokens(eps, latent.shape());
    pass.tape = std::move(tape);
    return pass;
}

Tensor3 ToyDenoiser::backward(const Pass& pass, const Tensor3& d_eps, ParameterSet& grads) const {
    const auto* tape = dynamic_cast<const TrainTape*>(pass.tape.get());
    if (tape == nullptr) throw ContractViolation("backward needs a tape from this toy denoiser");
    if (d_eps.shape() != tape->shape) throw InvalidArgument("backward: gradient shape mismatch");
    for (const auto& [name, m] : params_) {
        auto [it, inserted] = grads.try_emplace(name, MatrixX::Zero(m.rows(), m.cols()));
        if (!inserted && (it->second.rows() != m.rows() || it->second.cols() != m.cols())) {
            throw InvalidArgument("gradient buffer for " + name + " has the wrong shape");
        }
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(config_.dim));

    const MatrixX g_eps = d_eps.to_tokens();
    grads["out.w"] += tape->h_final.transpose() * g_eps;
    grads["out.b"] += g_eps.colwise().sum();
    MatrixX dh = g_eps * param("out.w").transpose();

    for (std::size_t si = sites_.size(); si-- > 0;) {
        const auto& site = sites_[si];
        const auto& rec = tape->sites[si];

        // h_out = h_mid + tanh(h_mid W1 + b1) W2
        grads[site + ".mlp2"] += rec.act.transpose() * dh;
        const MatrixX d_act = dh * param(site + ".mlp2").transpose();
        const MatrixX d_pre = (d_act.array() * (1.0 - rec.act.array().square())).matrix();
        grads[site + ".mlp1"] += rec.h_mid.transpose() * d_pre;
        grads[site + ".mlp1b"] += d_pre.colwise().sum();
        MatrixX d_mid = dh + d_pre * param(site + ".mlp1").transpose();

        // h_mid = h_in + softmax(q k^T * scale) v Wo, with q, k, v = u W{q,k,v}
        grads[site + ".o"] += rec.mixed.transpose() * d_mid;
        const MatrixX d_mixed = d_mid * param(site + ".o").transpose();
        const MatrixX d_attn = d_mixed * rec.v.transpose();
        const MatrixX d_v = rec.attn.transpose() * d_mixed;
        const Eigen::VectorXd row_dot = (d_attn.array() * rec.attn.array()).rowwise().sum();
        MatrixX d_scores = rec.attn.array() * (d_attn.colwise() - row_dot).array();
        d_scores *= scale;
        const MatrixX d_q = d_scores * rec.k;
        const MatrixX d_k = d_scores.transpose() * rec.q;
        grads[site + ".q"] += rec.u.transpose() * d_q;
        grads[site + ".k"] += rec.u.transpose() * d_k;
        grads[site + ".v"] += rec.u.transpose() * d_v;
        // Site quantization is treated as the identity.
        const MatrixX d_u = d_q * param(site + ".q").transpose() + d_k * param(site + ".k").transpose() +
                            d_v * param(site + ".v").transpose();
        dh = d_mid + d_u;
        grads[site + ".cond"] += tape->text * dh.colwise().sum();
    }

    const RowVector col = dh.colwise().sum();
    grads["in.w"] += tape->x.transpose() * dh;
    grads["in.b"] += col;
    grads["time.w"] += tape->temb * col;
    grads["cond.w"] += tape->text * col;
    return Tensor3::from_tokens(dh * param("in.w").transpose() + tape->prior * g_eps, tape->shape);
}

}  // namespace facedit
