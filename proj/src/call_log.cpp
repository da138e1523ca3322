#include "facedit/call_log.hpp"

#include <fstream>

#include "json.hpp"

#include "facedit/errors.hpp"

namespace facedit {

CallLog::CallLog(CallLog&& other) noexcept {
    std::lock_guard lock(other.mutex_);
    records_ = std::move(other.records_);
    info_ = other.info_;
}

void CallLog::add(CallRecord record) {
    std::lock_guard lock(mutex_);
    records_.push_back(std::move(record));
}

void CallLog::set_run_info(const RunInfo& info) {
    std::lock_guard lock(mutex_);
    info_ = info;
}

std::vector<CallRecord> CallLog::records() const {
    std::lock_guard lock(mutex_);
    return records_;
}

RunInfo CallLog::run_info() const {
    std::lock_guard lock(mutex_);
    return info_;
}

void CallLog::write_jsonl(const std::filesystem::path& path) const {
    std::lock_guard lock(mutex_);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write call log " + path.string());
    out << nlohmann::json{{"event", "run"},
                          {"frames", info_.total_frames},
                          {"steps", info_.steps},
                          {"keyframes", info_.keyframes}}
               .dump()
        << '\n';
    for (const auto& r : records_) {
        out << nlohmann::json{{"event", "call"}, {"phase", r.phase}, {"frame", r.frame}, {"timestep", r.timestep}}
                   .dump()
            << '\n';
    }
    if (!out) throw IoError("failed writing call log " + path.string());
}

CallLog CallLog::read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("no call log at " + path.string() + " (run edit with --log-calls)");
    CallLog log;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            const auto event = j.at("event").get<std::string>();
            if (event == "run") {
                log.info_ = RunInfo{j.at("frames").get<int>(), j.at("steps").get<int>(), j.at("keyframes").get<int>()};
            } else if (event == "call") {
                log.records_.push_back(
                    CallRecord{j.at("phase").get<std::string>(), j.at("frame").get<int>(), j.at("timestep").get<int>()});
            }
        } catch (const nlohmann::json::exception& e) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return log;
}

std::vector<Tensor3> LoggingDenoiser::predict_batch(const DenoiseRequest& request) const {
    auto out = inner_.predict_batch(request);
    for (std::size_t b = 0; b < request.latents.size(); ++b) {
        const int frame = b < request.frames.size() ? request.frames[b] : -1;
        log_.add(CallRecord{request.phase, frame, request.timestep});
    }
    return out;
}

CallAccounting denoiser_call_accounting(const CallLog& log) {
    CallAccounting acc;
    const RunInfo info = log.run_info();
    acc.total_frames = info.total_frames;
    acc.steps = info.steps;
    acc.keyframes = info.keyframes;
    for (const auto& r : log.records()) {
        ++acc.calls_by_phase[r.phase];
        if (r.phase == kEditPhase) ++acc.keyframe_calls;
    }
    return acc;
}

}  // namespace facedit
