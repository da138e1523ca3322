// Command-line front end: preprocess -> edit -> evaluate, the two
// fine-tuning loops, report aggregation and synthetic data generation.
//
// Exit codes: 0 success, 1 other failure, 2 configuration or usage error,
// 3 missing artifact (cache, checkpoint, frames), 4 numerical failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "facedit/call_log.hpp"
#include "facedit/checkpoint.hpp"
#include "facedit/config.hpp"
#include "facedit/errors.hpp"
#include "facedit/finetune.hpp"
#include "facedit/frame_io.hpp"
#include "facedit/pipeline.hpp"
#include "facedit/random.hpp"
#include "facedit/toy_models.hpp"

namespace fs = std::filesystem;
using namespace facedit;

namespace {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kConfig = 2,
    kMissingArtifact = 3,
    kNumerical = 4,
};

struct GlobalOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string cache_dir;
    bool overwrite = false;
    bool log_calls = false;
    std::vector<std::string> set;  // key=value overrides
};

PipelineConfig resolve_config(const GlobalOptions& g) {
    PipelineConfig cfg = g.config_path.empty() ? PipelineConfig{} : load_config(g.config_path);
    for (const auto& kv : g.set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (g.seed) cfg.seed = *g.seed;
    if (!g.cache_dir.empty()) cfg.cache_dir = g.cache_dir;
    cfg.validate();
    return cfg;
}

std::unique_ptr<FlowProvider> make_flow(const PipelineConfig& cfg) {
    if (cfg.flow_backend == "zero") return std::make_unique<ZeroFlowProvider>();
    return std::make_unique<GlobalShiftFlowProvider>();
}

void log_line(const std::string& msg) { std::cerr << "[facedit] " << msg << '\n'; }

// ------------------------------------------------------------------ verbs

int run_preprocess(const GlobalOptions& g, const std::string& input) {
    const PipelineConfig cfg = resolve_config(g);
    if (has_manifest(cfg.cache_dir) && !g.overwrite) {
        throw WriteOnceViolation("cache directory " + cfg.cache_dir.string() +
                                 " already holds preprocess artifacts; pass --overwrite to rebuild it");
    }
    const FrameSequence video = read_frames(input, cfg.fps);
    const Branches branches = Branches::load(cfg);
    CallLog calls;
    const PreprocessResult result =
        preprocess(video, branches.inversion(), cfg, branches.inversion_id(), g.log_calls ? &calls : nullptr);
    save_preprocess(result, cfg.cache_dir, g.overwrite);
    if (g.log_calls) calls.write_jsonl(cfg.cache_dir / "calls_preprocess.jsonl");
    std::cout << "preprocessed " << result.n_frames << " frames: " << result.cache.size()
              << " feature records in " << cfg.cache_dir.string() << '\n';
    return kOk;
}

int run_edit(const GlobalOptions& g, const std::string& prompt, const std::string& output) {
    const PipelineConfig cfg = resolve_config(g);
    const Branches branches = Branches::load(cfg);
    const PreprocessResult artifacts = load_preprocess(cfg.cache_dir, cfg, branches.inversion_id());
    CallLog calls;
    const EditResult result = edit(artifacts, branches.editing(), prompt, cfg, g.log_calls ? &calls : nullptr);
    write_frames(result.video, output, g.overwrite);
    std::cout << "edited " << result.video.frames.size() << " frames (" << result.keyframes.indices.size()
              << " keyframes) into " << output << '\n';
    if (g.log_calls) {
        const fs::path path = cfg.cache_dir / "calls.jsonl";
        calls.write_jsonl(path);
        const CallAccounting acc = denoiser_call_accounting(calls);
        std::cout << "editing-phase denoiser calls: " << acc.keyframe_calls << " (log: " << path.string() << ")\n";
    }
    return kOk;
}

int run_evaluate(const GlobalOptions& g, const std::vector<std::string>& edited,
                 const std::vector<std::string>& originals, const std::string& database_path,
                 const std::string& method, const std::string& report_path) {
    const PipelineConfig cfg = resolve_config(g);
    if (edited.size() != originals.size()) {
        throw ConfigError("evaluate needs one --original per --edited");
    }
    const ToyImageEmbedder embedder;
    const auto flow = make_flow(cfg);

    std::vector<DatabaseEntry> entries;
    if (!database_path.empty()) entries = load_database_manifest(database_path);
    std::vector<VideoEmbedding> database;
    for (const auto& e : entries) {
        database.push_back(video_embedding(read_frames(e.dir, cfg.fps).frames, embedder, e.id));
    }

    std::vector<EditedVideo> videos;
    for (std::size_t i = 0; i < edited.size(); ++i) {
        EditedVideo v;
        v.edited = read_frames(edited[i], cfg.fps);
        v.original = read_frames(originals[i], cfg.fps);
        // Identify the original by its database entry; unknown originals join
        // the database under their path.
        const fs::path orig = fs::weakly_canonical(originals[i]);
        for (const auto& e : entries) {
            if (fs::weakly_canonical(e.dir) == orig) v.original_id = e.id;
        }
        if (v.original_id.empty()) {
            v.original_id = originals[i];
            database.push_back(video_embedding(v.original.frames, embedder, v.original_id));
        }
        videos.push_back(std::move(v));
    }

    const EvaluationRow row = evaluate_method(method, videos, database, embedder, *flow, cfg.retrieval_similarity);
    const std::vector<EvaluationRow> rows{row};
    std::cout << format_report_table(rows);
    if (!report_path.empty()) write_report_jsonl(rows, report_path);
    return kOk;
}

enum class Branch { Identity, Directional };

int run_finetune(const GlobalOptions& g, Branch branch, const std::string& data_dir, const std::string& init,
                 const std::string& out, const std::string& loss_log) {
    const PipelineConfig cfg = resolve_config(g);
    if (fs::exists(out) && !g.overwrite) {
        throw WriteOnceViolation("checkpoint " + out + " already exists; pass --overwrite to replace it");
    }
    CaptionedDataset dataset = load_dataset(data_dir);
    if (dataset.prompt_bank.empty()) dataset.prompt_bank = cfg.prompt_bank;

    ToyDenoiser denoiser = init.empty() ? Branches::load(cfg).inversion() : load_checkpoint(init);
    TrainConfig tc = cfg.train_config();
    const Shape3 shape = dataset.samples.front().image.shape();
    tc.height = shape.height;
    tc.width = shape.width;
    if (tc.height != cfg.height || tc.width != cfg.width) {
        log_line("training at the dataset resolution " + std::to_string(shape.height) + "x" +
                 std::to_string(shape.width));
    }

    const auto schedule = cfg.schedule();
    FinetuneHooks hooks;
    const int every = std::max(1, tc.iterations / 10);
    hooks.on_step = [&](const TrainStep& s) {
        if ((s.step + 1) % every == 0 || s.step == 0) {
            std::ostringstream os;
            os << "step " << s.step + 1 << "/" << tc.iterations << " loss " << s.loss;
            log_line(os.str());
        }
    };
    const ToyImageEmbedder image;
    const ToyTextEmbedder text;
    std::vector<TrainStep> curve;
    if (branch == Branch::Identity) {
        curve = finetune_identity_branch(denoiser, dataset, tc, schedule, image, hooks);
    } else {
        curve = finetune_directional_branch(denoiser, dataset, tc, schedule, ImageTextEmbedder{image, text}, hooks);
    }
    save_checkpoint(denoiser, out);
    if (!loss_log.empty()) write_loss_log(curve, loss_log);
    const DecileMeans d = decile_means(curve);
    std::cout << "trained " << curve.size() << " steps; first-decile loss " << d.first << ", last-decile loss "
              << d.last << "; checkpoint " << out << '\n';
    return kOk;
}

std::vector<double> read_scores(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("no score file at " + path);
    std::vector<double> out;
    std::string tok;
    while (in >> tok) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw InvalidArgument(path + ": '" + tok + "' is not a score");
        }
    }
    return out;
}

int run_report(const std::vector<std::string>& scores, const std::string& calls_path) {
    if (scores.empty() && calls_path.empty()) throw ConfigError("report needs --scores and/or --calls");
    if (!scores.empty()) {
        std::printf("%-24s %8s %8s %6s\n", "method", "MOS", "stddev", "n");
        for (const auto& spec : scores) {
            const auto eq = spec.find('=');
            const std::string name = eq == std::string::npos ? fs::path(spec).stem().string() : spec.substr(0, eq);
            const std::string file = eq == std::string::npos ? spec : spec.substr(eq + 1);
            const auto values = read_scores(file);
            const ScoreSummary s = summarize_scores(values);
            std::printf("%-24s %8.3f %8.3f %6zu\n", name.c_str(), s.mean, s.stddev, s.count);
        }
    }
    if (!calls_path.empty()) {
        const CallLog log = CallLog::read_jsonl(calls_path);
        const CallAccounting acc = denoiser_call_accounting(log);
        std::cout << "frames " << acc.total_frames << ", keyframes " << acc.keyframes << ", steps " << acc.steps
                  << '\n';
        std::cout << "editing-phase denoiser calls " << acc.keyframe_calls << '\n';
        for (const auto& [phase, n] : acc.calls_by_phase) std::cout << "  " << phase << ": " << n << '\n';
    }
    return kOk;
}

int run_synth_video(const GlobalOptions& g, const std::string& out, int frames, double shift_x, double shift_y,
                    std::uint64_t identity, int size) {
    const PipelineConfig cfg = resolve_config(g);
    SyntheticVideoParams p;
    p.n_frames = frames;
    p.shift_x = shift_x;
    p.shift_y = shift_y;
    p.identity_seed = identity;
    p.shape = Shape3{4, size, size};
    const SyntheticVideo v = make_synthetic_video(p);
    write_frames(FrameSequence{v.frames, cfg.fps}, out, g.overwrite);
    std::cout << "wrote " << frames << " frames to " << out << '\n';
    return kOk;
}

int run_synth_dataset(const GlobalOptions& g, const std::string& out, int count, int size) {
    const PipelineConfig cfg = resolve_config(g);
    if (count < 1) throw ConfigError("--count must be >= 1");
    CaptionedDataset ds;
    for (int i = 0; i < count; ++i) {
        CaptionedSample s;
        s.image = synthetic_face(cfg.seed * 1000 + static_cast<std::uint64_t>(i) + 1, Shape3{4, size, size});
        s.caption = cfg.inversion_prompt;
        ds.samples.push_back(std::move(s));
    }
    save_dataset(ds, out, g.overwrite);
    std::cout << "wrote " << count << " captioned images to " << out << '\n';
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"facedit: identity-preserving face video editing with keyframe propagation"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    app.add_option("--config", g.config_path, "Configuration file (key = value lines)");
    app.add_option("--seed", g.seed, "Override the configured random seed");
    app.add_option("--cache-dir", g.cache_dir, "Directory holding preprocess artifacts");
    app.add_flag("--overwrite", g.overwrite, "Replace existing outputs instead of refusing");
    app.add_flag("--log-calls", g.log_calls, "Log every denoiser call to <cache-dir>/calls*.jsonl");
    app.add_option("--set", g.set, "Override one config key (key=value); repeatable");

    std::string input, prompt, output, database, method = "ours", report, data, init, ckpt, loss_log, calls;
    std::vector<std::string> edited, originals, scores;

    auto* pre = app.add_subcommand("preprocess", "Invert a video and record identity features");
    pre->add_option("--input", input, "Frame directory")->required();

    auto* ed = app.add_subcommand("edit", "Edit a preprocessed video with a text prompt");
    ed->add_option("--prompt", prompt, "Edit prompt (may combine several edits)")->required();
    ed->add_option("--output", output, "Output frame directory")->required();

    auto* ev = app.add_subcommand("evaluate", "Identity retrieval and temporal consistency metrics");
    ev->add_option("--edited", edited, "Edited frame directory; repeatable")->required();
    ev->add_option("--original", originals, "Original frame directory, paired with --edited")->required();
    ev->add_option("--database", database, "Manifest of '<id> <dir>' lines");
    ev->add_option("--method", method, "Method name in the report");
    ev->add_option("--report", report, "Write line-delimited JSON records here");

    auto* fid = app.add_subcommand("finetune-id", "Fine-tune the identity branch");
    auto* fdir = app.add_subcommand("finetune-dir", "Fine-tune the directional branch");
    for (auto* sub : {fid, fdir}) {
        sub->add_option("--data", data, "Dataset directory with dataset.txt")->required();
        sub->add_option("--init", init, "Start from this checkpoint instead of the base model");
        sub->add_option("--out", ckpt, "Checkpoint to write")->required();
        sub->add_option("--loss-log", loss_log, "Write the loss curve as line-delimited JSON");
    }

    auto* rep = app.add_subcommand("report", "Summarise opinion scores and call logs");
    rep->add_option("--scores", scores, "[name=]file of whitespace-separated scores; repeatable");
    rep->add_option("--calls", calls, "Call log written by edit --log-calls");

    int frames = 8, count = 8, size = 16;
    double shift_x = 1.0, shift_y = 0.0;
    std::uint64_t identity = 0;
    auto* synth = app.add_subcommand("synth", "Generate synthetic test data");
    synth->require_subcommand(1);
    auto* sv = synth->add_subcommand("video", "Write a translating synthetic face video");
    sv->add_option("--out", output, "Frame directory")->required();
    sv->add_option("--frames", frames, "Number of frames")->check(CLI::Range(2, 100000));
    sv->add_option("--shift-x", shift_x, "Horizontal shift per frame (pixels)");
    sv->add_option("--shift-y", shift_y, "Vertical shift per frame (pixels)");
    sv->add_option("--identity", identity, "Identity seed");
    sv->add_option("--size", size, "Frame height and width")->check(CLI::Range(2, 4096));
    auto* sd = synth->add_subcommand("dataset", "Write a captioned synthetic face dataset");
    sd->add_option("--out", output, "Dataset directory")->required();
    sd->add_option("--count", count, "Number of images");
    sd->add_option("--size", size, "Image height and width")->check(CLI::Range(2, 4096));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }

    try {
        if (*pre) return run_preprocess(g, input);
        if (*ed) return run_edit(g, prompt, output);
        if (*ev) return run_evaluate(g, edited, originals, database, method, report);
        if (*fid) return run_finetune(g, Branch::Identity, data, init, ckpt, loss_log);
        if (*fdir) return run_finetune(g, Branch::Directional, data, init, ckpt, loss_log);
        if (*rep) {
            resolve_config(g);  // reject a bad --config even though report needs no settings
            return run_report(scores, calls);
        }
        if (*sv) return run_synth_video(g, output, frames, shift_x, shift_y, identity, size);
        if (*sd) return run_synth_dataset(g, output, count, size);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const WriteOnceViolation& e) {
        std::cerr << "refusing to overwrite: " << e.what() << '\n';
        return kConfig;
    } catch (const MissingArtifactError& e) {
        std::cerr << "missing artifact: " << e.what() << '\n';
        if (const auto* mf = dynamic_cast<const MissingFeatureError*>(&e)) {
            for (const auto& gap : mf->gaps()) std::cerr << "  missing " << gap << '\n';
        }
        return kMissingArtifact;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return kNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kFailure;
}
