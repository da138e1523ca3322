#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "facedit/call_log.hpp"
#include "facedit/config.hpp"
#include "facedit/ddim.hpp"
#include "facedit/evaluation.hpp"
#include "facedit/feature_cache.hpp"
#include "facedit/frame_io.hpp"
#include "facedit/keyframes.hpp"
#include "facedit/toy_denoiser.hpp"

namespace facedit {

// The denoisers of one run. `inversion()` is the identity branch used for
// inversion and feature recording; `editing()` the branch that edits
// keyframes. The ablation flags swap in the base model (no identity
// guidance) or reuse the identity branch (no directional branch).
class Branches {
public:
    static Branches load(const PipelineConfig& cfg);
    // Explicit models, mainly for tests.
    Branches(ToyDenoiser base, std::unique_ptr<ToyDenoiser> identity, std::unique_ptr<ToyDenoiser> directional,
             bool identity_guidance, bool directional_branch);

    const ToyDenoiser& inversion() const;
    const ToyDenoiser& editing() const;
    // Stable description of inversion(), stored with preprocess artifacts.
    const std::string& inversion_id() const noexcept { return inversion_id_; }

private:
    ToyDenoiser base_;
    std::unique_ptr<ToyDenoiser> identity_;
    std::unique_ptr<ToyDenoiser> directional_;
    bool identity_guidance_;
    bool directional_branch_;
    std::string inversion_id_;
};

struct PreprocessResult {
    std::map<int, LatentTrajectory> trajectories;
    FeatureCache cache;
    int n_frames = 0;
    double fps = 25.0;
};

// DDIM-inverts every frame with the identity branch, then reconstructs it
// from the inverted noise while recording self-attention features at the
// configured layers and sampling timesteps. Frames run in parallel.
PreprocessResult preprocess(const FrameSequence& video, const Denoiser& identity_branch,
                            const PipelineConfig& cfg, const std::string& denoiser_id = "base",
                            CallLog* log = nullptr);

// Writes the feature cache (manifest + records) and the trajectories under
// `cache_dir`. An existing cache is replaced only with `overwrite`;
// otherwise WriteOnceViolation.
void save_preprocess(const PreprocessResult& result, const std::filesystem::path& cache_dir, bool overwrite);

// Loads artifacts written by save_preprocess and checks they were produced
// with settings compatible with `cfg` and `denoiser_id` (VersionError
// otherwise). A missing cache raises MissingArtifactError.
PreprocessResult load_preprocess(const std::filesystem::path& cache_dir, const PipelineConfig& cfg,
                                 const std::string& denoiser_id);

struct EditResult {
    FrameSequence video;
    KeyframeSet keyframes;
};

// Edits the keyframes jointly with `editing_branch` under `prompt`,
// injecting the cached identity features, then fills every other frame by
// token propagation of the edited keyframe latents.
EditResult edit(const PreprocessResult& artifacts, const Denoiser& editing_branch, const std::string& prompt,
                const PipelineConfig& cfg, CallLog* log = nullptr);

// Training set on disk: `dataset.txt` lines of
//   <image.npy> TAB <caption> [TAB <edit prompt> | <edit prompt> ...]
// with image paths relative to the directory.
CaptionedDataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const CaptionedDataset& dataset, const std::filesystem::path& dir, bool overwrite);

// Retrieval database manifest: lines of `<video id> <frame directory>`,
// directories relative to the manifest's own directory. '#' starts a comment.
struct DatabaseEntry {
    std::string id;
    std::filesystem::path dir;
};
std::vector<DatabaseEntry> load_database_manifest(const std::filesystem::path& path);

// One row of the evaluation report.
struct EvaluationRow {
    std::string method;
    double cosine_distance = 0.0;  // mean identity distance, edited vs original
    double recall_at_1 = 0.0;
    double mrr = 0.0;
    double temporal_loss = 0.0;
    std::size_t queries = 0;
};

struct EditedVideo {
    std::string original_id;  // must name an entry of the database
    FrameSequence edited;
    FrameSequence original;
};

EvaluationRow evaluate_method(const std::string& method, std::span<const EditedVideo> videos,
                              std::span<const VideoEmbedding> database, const FaceEmbedder& embedder,
                              const FlowProvider& flow, Similarity similarity = Similarity::Cosine);

std::string format_report_table(std::span<const EvaluationRow> rows);
void write_report_jsonl(std::span<const EvaluationRow> rows, const std::filesystem::path& path);

}  // namespace facedit
