#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "facedit/denoiser.hpp"

namespace facedit {

// One noise prediction for one latent.
struct CallRecord {
    std::string phase;
    int frame = -1;  // -1 when the caller did not say
    int timestep = 0;
};

// Shape of the run a log belongs to.
struct RunInfo {
    int total_frames = 0;
    int steps = 0;
    int keyframes = 0;
};

// Thread-safe append-only log of denoiser invocations.
class CallLog {
public:
    CallLog() = default;
    CallLog(CallLog&& other) noexcept;
    CallLog& operator=(CallLog&&) = delete;

    void add(CallRecord record);
    void set_run_info(const RunInfo& info);

    std::vector<CallRecord> records() const;
    RunInfo run_info() const;

    // Line-delimited JSON: one {"event":"run",...} line, then one
    // {"event":"call","phase":..,"frame":..,"timestep":..} line per call.
    void write_jsonl(const std::filesystem::path& path) const;
    static CallLog read_jsonl(const std::filesystem::path& path);

private:
    mutable std::mutex mutex_;
    std::vector<CallRecord> records_;
    RunInfo info_;
};

// Forwards to another denoiser and logs one record per latent per call.
class LoggingDenoiser final : public Denoiser {
public:
    LoggingDenoiser(const Denoiser& inner, CallLog& log) : inner_(inner), log_(log) {}

    std::vector<Tensor3> predict_batch(const DenoiseRequest& request) const override;
    const std::vector<LayerId>& attention_layers() const override { return inner_.attention_layers(); }

private:
    const Denoiser& inner_;
    CallLog& log_;
};

inline constexpr const char* kEditPhase = "edit";

struct CallAccounting {
    long keyframe_calls = 0;  // calls tagged with the editing phase
    int total_frames = 0;
    int steps = 0;
    int keyframes = 0;
    std::map<std::string, long> calls_by_phase;
};

CallAccounting denoiser_call_accounting(const CallLog& log);

}  // namespace facedit
