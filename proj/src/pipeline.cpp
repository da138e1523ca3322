#include "facedit/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <string_view>
#include <thread>

#include "json.hpp"

#include "facedit/checkpoint.hpp"
#include "facedit/errors.hpp"
#include "facedit/objectives.hpp"
#include "facedit/propagation.hpp"
#include "facedit/random.hpp"

namespace facedit {

namespace fs = std::filesystem;

namespace {

std::string content_id(const ToyDenoiser& d) {
    std::uint64_t h = fnv1a64("toy");
    for (const auto& [name, m] : d.parameters()) {
        h = fnv1a64(name, h);
        h = fnv1a64(std::string_view(reinterpret_cast<const char*>(m.data()),
                                     static_cast<std::size_t>(m.size()) * sizeof(double)),
                    h);
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "toy-%016llx", static_cast<unsigned long long>(h));
    return buf;
}

ToyDenoiserConfig base_config(const PipelineConfig& cfg) {
    ToyDenoiserConfig t;
    t.seed = cfg.denoiser_seed;
    t.prior_steps = cfg.num_train_steps;
    t.prior_beta_start = cfg.beta_start;
    t.prior_beta_end = cfg.beta_end;
    return t;
}

}  // namespace

Branches::Branches(ToyDenoiser base, std::unique_ptr<ToyDenoiser> identity,
                   std::unique_ptr<ToyDenoiser> directional, bool identity_guidance, bool directional_branch)
    : base_(std::move(base)),
      identity_(std::move(identity)),
      directional_(std::move(directional)),
      identity_guidance_(identity_guidance),
      directional_branch_(directional_branch) {
    inversion_id_ = content_id(inversion());
}

Branches Branches::load(const PipelineConfig& cfg) {
    std::unique_ptr<ToyDenoiser> identity;
    std::unique_ptr<ToyDenoiser> directional;
    if (!cfg.identity_checkpoint.empty()) {
        identity = std::make_unique<ToyDenoiser>(load_checkpoint(cfg.identity_checkpoint));
    }
    if (!cfg.directional_checkpoint.empty()) {
        directional = std::make_unique<ToyDenoiser>(load_checkpoint(cfg.directional_checkpoint));
    }
    return Branches(ToyDenoiser(base_config(cfg)), std::move(identity), std::move(directional),
                    cfg.identity_guidance, cfg.directional_branch);
}

const ToyDenoiser& Branches::inversion() const {
    if (identity_guidance_ && identity_) return *identity_;
    return base_;
}

const ToyDenoiser& Branches::editing() const {
    if (!directional_branch_) return inversion();
    if (directional_) return *directional_;
    return base_;
}

// ---------------------------------------------------------------- preprocess

namespace {

std::string join_sorted(const LayerSet& layers) {
    std::vector<std::string> v(layers.begin(), layers.end());
    std::sort(v.begin(), v.end());
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

// Runs fn(i) for i in [0, n) on up to hardware_concurrency threads and
// rethrows the first failure.
template <typename Fn>
void parallel_for(int n, Fn&& fn) {
    const int workers = std::max(1, std::min<int>(n, static_cast<int>(std::thread::hardware_concurrency())));
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&] {
        for (int i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = n;
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace

PreprocessResult preprocess(const FrameSequence& video, const Denoiser& identity_branch,
                            const PipelineConfig& cfg, const std::string& denoiser_id, CallLog* log) {
    video.validate();
    cfg.validate();
    const auto schedule = cfg.schedule();
    const LayerSet layers = cfg.recorded_layers();
    const std::vector<int> timesteps = cfg.recorded_timesteps();
    Conditioning cond;
    cond.prompt = cfg.inversion_prompt;
    const int n = static_cast<int>(video.frames.size());

    std::unique_ptr<LoggingDenoiser> logged;
    if (log != nullptr) logged = std::make_unique<LoggingDenoiser>(identity_branch, *log);
    const Denoiser& denoiser = logged ? *logged : identity_branch;

    PreprocessResult out;
    out.n_frames = n;
    out.fps = video.fps;
    std::vector<LatentTrajectory> trajectories(static_cast<std::size_t>(n));
    parallel_for(n, [&](int i) {
        SamplerHooks invert_hooks;
        invert_hooks.phase = "preprocess";
        auto traj = ddim_invert(Latent{video.frames[i], i, 0}, denoiser, cfg.steps, schedule, cond, invert_hooks);

        CacheRecorder recorder(out.cache, {i}, layers, timesteps);
        SamplerHooks record_hooks;
        record_hooks.sink = &recorder;
        record_hooks.phase = "preprocess";
        sample(traj.latents.back(), denoiser, cfg.steps, schedule, cond, nullptr, record_hooks);
        trajectories[static_cast<std::size_t>(i)] = std::move(traj);
    });
    for (int i = 0; i < n; ++i) out.trajectories.emplace(i, std::move(trajectories[static_cast<std::size_t>(i)]));

    const Shape3 s = video.frames.front().shape();
    out.cache.set_metadata("frames", std::to_string(n));
    out.cache.set_metadata("shape", std::to_string(s.channels) + "," + std::to_string(s.height) + "," +
                                        std::to_string(s.width));
    out.cache.set_metadata("fps", std::to_string(video.fps));
    out.cache.set_metadata("steps", std::to_string(cfg.steps));
    out.cache.set_metadata("schedule", schedule.id());
    out.cache.set_metadata("inversion_prompt", cfg.inversion_prompt);
    out.cache.set_metadata("denoiser", denoiser_id);
    out.cache.set_metadata("record_layers", join_sorted(layers));
    out.cache.set_metadata("record_timesteps", join_ints(timesteps));
    return out;
}

namespace {

constexpr const char* kTrajectoryDir = "trajectories";

fs::path trajectory_path(const fs::path& cache_dir, int frame, int t) {
    char name[48];
    std::snprintf(name, sizeof(name), "frame_%05d_t%05d.npy", frame, t);
    return cache_dir / kTrajectoryDir / name;
}

}  // namespace

void save_preprocess(const PreprocessResult& result, const fs::path& cache_dir, bool overwrite) {
    if (has_manifest(cache_dir) || fs::exists(cache_dir / kTrajectoryDir)) {
        if (!overwrite) {
            throw WriteOnceViolation("cache directory " + cache_dir.string() +
                                     " already holds preprocess artifacts; pass --overwrite to rebuild it");
        }
        fs::remove_all(cache_dir / "records");
        fs::remove_all(cache_dir / kTrajectoryDir);
        fs::remove(cache_dir / "manifest.txt");
    }
    fs::create_directories(cache_dir / kTrajectoryDir);
    for (const auto& [frame, traj] : result.trajectories) {
        for (const auto& lat : traj.latents) write_npy(lat.data, trajectory_path(cache_dir, frame, lat.timestep));
    }
    // The manifest goes last so an interrupted run leaves no loadable cache.
    persist(result.cache, cache_dir);
}

PreprocessResult load_preprocess(const fs::path& cache_dir, const PipelineConfig& cfg,
                                 const std::string& denoiser_id) {
    if (!has_manifest(cache_dir)) {
        throw MissingArtifactError("no preprocess artifacts in " + cache_dir.string() +
                                   "; run `facedit preprocess` on this video first");
    }
    PreprocessResult out;
    out.cache = load_cache(cache_dir);
    const auto& c = out.cache;
    const auto schedule = cfg.schedule();

    auto expect = [&](const char* key, const std::string& want) {
        const std::string got = c.metadata(key);
        if (got != want) {
            throw VersionError("cache in " + cache_dir.string() + " was built with " + key + " = '" + got +
                               "' but the current settings need '" + want +
                               "'; rerun preprocess with --overwrite");
        }
    };
    expect("steps", std::to_string(cfg.steps));
    expect("schedule", schedule.id());
    expect("inversion_prompt", cfg.inversion_prompt);
    expect("denoiser", denoiser_id);
    expect("record_layers", join_sorted(cfg.recorded_layers()));
    expect("record_timesteps", join_ints(cfg.recorded_timesteps()));

    try {
        out.n_frames = std::stoi(c.metadata("frames", "0"));
        out.fps = std::stod(c.metadata("fps", "25"));
    } catch (const std::exception&) {
        throw IntegrityError("cache metadata in " + cache_dir.string() + " is malformed");
    }
    if (out.n_frames < 1) throw IntegrityError("cache in " + cache_dir.string() + " lists no frames");

    const auto grid = schedule.timestep_grid(cfg.steps);
    for (int f = 0; f < out.n_frames; ++f) {
        LatentTrajectory traj;
        traj.schedule_id = schedule.id();
        traj.conditioning = cfg.inversion_prompt;
        for (int t : grid) {
            const fs::path p = trajectory_path(cache_dir, f, t);
            if (!fs::exists(p)) {
                throw IntegrityError("trajectory of frame " + std::to_string(f) + " at t=" + std::to_string(t) +
                                     " is missing from " + cache_dir.string());
            }
            traj.latents.push_back(Latent{read_npy(p), f, t});
        }
        out.trajectories.emplace(f, std::move(traj));
    }
    return out;
}

// ---------------------------------------------------------------------- edit

EditResult edit(const PreprocessResult& artifacts, const Denoiser& editing_branch, const std::string& prompt,
                const PipelineConfig& cfg, CallLog* log) {
    cfg.validate();
    if (prompt.empty()) throw InvalidArgument("edit: the prompt must not be empty");
    const int n = artifacts.n_frames;
    if (n < 1 || static_cast<int>(artifacts.trajectories.size()) != n) {
        throw IntegrityError("edit: preprocess artifacts are incomplete");
    }
    const auto schedule = cfg.schedule();

    EditResult result;
    result.keyframes = select_keyframes(n, cfg.keyframe_stride);

    std::unique_ptr<LoggingDenoiser> logged;
    if (log != nullptr) {
        logged = std::make_unique<LoggingDenoiser>(editing_branch, *log);
        log->set_run_info(RunInfo{n, cfg.steps, static_cast<int>(result.keyframes.indices.size())});
    }
    const Denoiser& denoiser = logged ? *logged : editing_branch;

    KeyframeEditOptions options;
    options.steps = cfg.steps;
    options.editing_layers = LayerSet(cfg.editing_layers.begin(), cfg.editing_layers.end());
    options.injection_timesteps = cfg.recorded_timesteps();
    options.partial_injection = cfg.record_stride > 1;
    options.guidance_scale = cfg.guidance_scale;
    options.negative_prompt = cfg.negative_prompt;
    options.phase = kEditPhase;
    const LayerSet injection(cfg.injection_layers.begin(), cfg.injection_layers.end());
    const EditedKeyframeFeatures base = edit_keyframes(result.keyframes, artifacts.trajectories, artifacts.cache,
                                                       denoiser, schedule, prompt, injection, options);

    const LayerId& corr_layer = cfg.correspondence_layer;
    const int corr_t = cfg.resolved_correspondence_timestep();
    const Shape3 shape = artifacts.trajectories.at(0).latents.front().data.shape();
    result.video.fps = artifacts.fps;
    result.video.frames.resize(static_cast<std::size_t>(n));
    parallel_for(n, [&](int i) {
        if (result.keyframes.contains(i)) {
            result.video.frames[static_cast<std::size_t>(i)] = base.latents.at(i).data;
            return;
        }
        const NeighborPair pair = neighbor_indices(i, result.keyframes);
        const auto& own = artifacts.cache.lookup(FeatureKey{i, corr_layer, corr_t});
        const auto match_past =
            nn_correspondence(own, artifacts.cache.lookup(FeatureKey{pair.past, corr_layer, corr_t}));
        const auto match_future =
            nn_correspondence(own, artifacts.cache.lookup(FeatureKey{pair.future, corr_layer, corr_t}));
        const MatrixX tokens = propagate(base.at(pair.past, kLatentLayer), base.at(pair.future, kLatentLayer),
                                         match_past, match_future, propagation_weights(i, pair));
        // The toy latent autoencoder is the identity, so decoding is a reshape.
        result.video.frames[static_cast<std::size_t>(i)] = Tensor3::from_tokens(tokens, shape);
    });
    for (std::size_t i = 0; i < result.video.frames.size(); ++i) {
        if (!result.video.frames[i].all_finite()) {
            throw NumericalError("edit produced non-finite pixels in frame " + std::to_string(i));
        }
    }
    return result;
}

// ------------------------------------------------------------ dataset files

CaptionedDataset load_dataset(const fs::path& dir) {
    const fs::path index = dir / "dataset.txt";
    std::ifstream in(index);
    if (!in) throw MissingArtifactError("no dataset index at " + index.string());
    CaptionedDataset ds;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line.front() == '#') continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, '\t')) cols.push_back(col);
        if (cols.size() < 2 || cols.size() > 3) {
            throw InvalidDataset(index.string() + ":" + std::to_string(lineno) +
                                 ": expected <image> TAB <caption> [TAB <prompts>]");
        }
        CaptionedSample sample;
        sample.image = read_npy(dir / cols[0]);
        sample.caption = cols[1];
        if (cols.size() == 3) {
            std::stringstream ps(cols[2]);
            std::string p;
            while (std::getline(ps, p, '|')) {
                if (!p.empty()) sample.edit_prompts.push_back(p);
            }
        }
        ds.samples.push_back(std::move(sample));
    }
    ds.validate();
    return ds;
}

void save_dataset(const CaptionedDataset& dataset, const fs::path& dir, bool overwrite) {
    dataset.validate();
    const fs::path index = dir / "dataset.txt";
    if (fs::exists(index) && !overwrite) {
        throw WriteOnceViolation(index.string() + " already exists; pass --overwrite to replace it");
    }
    fs::create_directories(dir);
    std::ofstream out(index, std::ios::trunc);
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const auto& s = dataset.samples[i];
        char name[32];
        std::snprintf(name, sizeof(name), "image_%05zu.npy", i);
        write_npy(s.image, dir / name);
        out << name << '\t' << s.caption;
        if (!s.edit_prompts.empty()) {
            out << '\t';
            for (std::size_t j = 0; j < s.edit_prompts.size(); ++j) out << (j ? "|" : "") << s.edit_prompts[j];
        }
        out << '\n';
    }
    if (!out) throw IoError("failed writing " + index.string());
}

std::vector<DatabaseEntry> load_database_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("no database manifest at " + path.string());
    std::vector<DatabaseEntry> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        DatabaseEntry e;
        std::string dir;
        if (!(ls >> e.id)) continue;
        if (!(ls >> dir)) {
            throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": expected '<id> <directory>'");
        }
        e.dir = fs::path(dir).is_absolute() ? fs::path(dir) : path.parent_path() / dir;
        for (const auto& prev : out) {
            if (prev.id == e.id) throw InvalidArgument(path.string() + ": duplicate video id '" + e.id + "'");
        }
        out.push_back(std::move(e));
    }
    if (out.empty()) throw InvalidArgument("database manifest " + path.string() + " lists no videos");
    return out;
}

// ---------------------------------------------------------------- evaluation

EvaluationRow evaluate_method(const std::string& method, std::span<const EditedVideo> videos,
                              std::span<const VideoEmbedding> database, const FaceEmbedder& embedder,
                              const FlowProvider& flow, Similarity similarity) {
    if (videos.empty()) throw InvalidArgument("evaluate: no edited videos");
    EvaluationRow row;
    row.method = method;
    row.queries = videos.size();
    std::vector<RetrievalQuery> queries;
    for (const auto& v : videos) {
        if (v.edited.frames.size() != v.original.frames.size()) {
            throw InvalidArgument("evaluate: edited video of '" + v.original_id + "' has " +
                                  std::to_string(v.edited.frames.size()) + " frames, the original " +
                                  std::to_string(v.original.frames.size()));
        }
        VideoEmbedding e = video_embedding(v.edited.frames, embedder, v.original_id + ":edited");
        const VideoEmbedding o = video_embedding(v.original.frames, embedder, v.original_id);
        row.cosine_distance += cosine_distance(e.vector, o.vector);
        row.temporal_loss += temporal_loss(v.edited.frames, flow);
        queries.push_back(RetrievalQuery{std::move(e), v.original_id});
    }
    const auto ranks = ranks_of(queries, database, similarity);
    row.cosine_distance /= static_cast<double>(videos.size());
    row.temporal_loss /= static_cast<double>(videos.size());
    row.recall_at_1 = static_cast<double>(std::count(ranks.begin(), ranks.end(), 1)) /
                      static_cast<double>(ranks.size());
    row.mrr = mean_reciprocal_rank_of(ranks);
    return row;
}

std::string format_report_table(std::span<const EvaluationRow> rows) {
    std::ostringstream os;
    os << std::left << std::setw(24) << "method" << std::right << std::setw(10) << "cosine" << std::setw(8)
       << "R@1" << std::setw(8) << "MRR" << std::setw(10) << "temporal" << std::setw(9) << "queries" << '\n';
    os << std::fixed;
    for (const auto& r : rows) {
        os << std::left << std::setw(24) << r.method << std::right << std::setprecision(4) << std::setw(10)
           << r.cosine_distance << std::setprecision(3) << std::setw(8) << r.recall_at_1 << std::setw(8) << r.mrr
           << std::setprecision(4) << std::setw(10) << r.temporal_loss << std::setw(9) << r.queries << '\n';
    }
    return os.str();
}

void write_report_jsonl(std::span<const EvaluationRow> rows, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write report " + path.string());
    for (const auto& r : rows) {
        out << nlohmann::json{{"method", r.method},
                              {"cosine_distance", r.cosine_distance},
                              {"recall_at_1", r.recall_at_1},
                              {"mrr", r.mrr},
                              {"temporal_loss", r.temporal_loss},
                              {"queries", r.queries}}
                   .dump()
            << '\n';
    }
    if (!out) throw IoError("failed writing report " + path.string());
}

}  // namespace facedit
