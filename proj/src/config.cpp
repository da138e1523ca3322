#include "facedit/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "facedit/errors.hpp"
#include "facedit/toy_denoiser.hpp"

namespace facedit {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
    return s;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

long parse_int(const std::string& key, const std::string& v) {
    long out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an integer");
    return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an unsigned integer");
    return out;
}

double parse_real(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) bad_value(key, v, "a finite number");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    bad_value(key, v, "a boolean");
}

std::vector<std::string> parse_list(const std::string& v) {
    std::vector<std::string> out;
    if (trim(v).empty()) return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = unquote(trim(item));
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string format_real(double v) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
    return out;
}

struct Field {
    std::function<void(PipelineConfig&, const std::string& key, const std::string& value)> set;
    std::function<std::string(const PipelineConfig&)> get;
};

template <typename T>
Field int_field(T PipelineConfig::*m) {
    return {[m](PipelineConfig& c, const std::string& k, const std::string& v) {
                c.*m = static_cast<T>(parse_int(k, v));
            },
            [m](const PipelineConfig& c) { return std::to_string(c.*m); }};
}

Field u64_field(std::uint64_t PipelineConfig::*m) {
    return {[m](PipelineConfig& c, const std::string& k, const std::string& v) { c.*m = parse_u64(k, v); },
            [m](const PipelineConfig& c) { return std::to_string(c.*m); }};
}

Field real_field(double PipelineConfig::*m) {
    return {[m](PipelineConfig& c, const std::string& k, const std::string& v) { c.*m = parse_real(k, v); },
            [m](const PipelineConfig& c) { return format_real(c.*m); }};
}

Field bool_field(bool PipelineConfig::*m) {
    return {[m](PipelineConfig& c, const std::string& k, const std::string& v) { c.*m = parse_bool(k, v); },
            [m](const PipelineConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

Field string_field(std::string PipelineConfig::*m) {
    return {[m](PipelineConfig& c, const std::string&, const std::string& v) { c.*m = unquote(v); },
            [m](const PipelineConfig& c) { return c.*m; }};
}

Field path_field(std::filesystem::path PipelineConfig::*m) {
    return {[m](PipelineConfig& c, const std::string&, const std::string& v) { c.*m = unquote(v); },
            [m](const PipelineConfig& c) { return (c.*m).string(); }};
}

Field list_field(std::vector<std::string> PipelineConfig::*m) {
    return {[m](PipelineConfig& c, const std::string&, const std::string& v) { c.*m = parse_list(v); },
            [m](const PipelineConfig& c) { return join(c.*m); }};
}

// Ordered so that to_text() groups related keys.
const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table = {
        {"schedule.num_train_steps", int_field(&PipelineConfig::num_train_steps)},
        {"schedule.beta_start", real_field(&PipelineConfig::beta_start)},
        {"schedule.beta_end", real_field(&PipelineConfig::beta_end)},
        {"steps", int_field(&PipelineConfig::steps)},
        {"guidance_scale", real_field(&PipelineConfig::guidance_scale)},
        {"negative_prompt", string_field(&PipelineConfig::negative_prompt)},
        {"inversion_prompt", string_field(&PipelineConfig::inversion_prompt)},
        {"keyframe_stride", int_field(&PipelineConfig::keyframe_stride)},
        {"injection_layers", list_field(&PipelineConfig::injection_layers)},
        {"editing_layers", list_field(&PipelineConfig::editing_layers)},
        {"correspondence_layer", string_field(&PipelineConfig::correspondence_layer)},
        {"correspondence_timestep", int_field(&PipelineConfig::correspondence_timestep)},
        {"record_layers", list_field(&PipelineConfig::record_layers)},
        {"record_stride", int_field(&PipelineConfig::record_stride)},
        {"lambda1", real_field(&PipelineConfig::lambda1)},
        {"lambda2", real_field(&PipelineConfig::lambda2)},
        {"learning_rate", real_field(&PipelineConfig::learning_rate)},
        {"batch_size", int_field(&PipelineConfig::batch_size)},
        {"iterations", int_field(&PipelineConfig::iterations)},
        {"resolution",
         {[](PipelineConfig& c, const std::string& k, const std::string& v) {
              const auto x = v.find('x');
              if (x == std::string::npos) bad_value(k, v, "HEIGHTxWIDTH");
              c.height = static_cast<int>(parse_int(k, trim(v.substr(0, x))));
              c.width = static_cast<int>(parse_int(k, trim(v.substr(x + 1))));
          },
          [](const PipelineConfig& c) { return std::to_string(c.height) + "x" + std::to_string(c.width); }}},
        {"truncated_steps", int_field(&PipelineConfig::truncated_steps)},
        {"trainable", list_field(&PipelineConfig::trainable)},
        {"prompt_bank", list_field(&PipelineConfig::prompt_bank)},
        {"denoiser_backend", string_field(&PipelineConfig::denoiser_backend)},
        {"denoiser_seed", u64_field(&PipelineConfig::denoiser_seed)},
        {"embedder_backend", string_field(&PipelineConfig::embedder_backend)},
        {"flow_backend", string_field(&PipelineConfig::flow_backend)},
        {"identity_checkpoint", path_field(&PipelineConfig::identity_checkpoint)},
        {"directional_checkpoint", path_field(&PipelineConfig::directional_checkpoint)},
        {"identity_guidance", bool_field(&PipelineConfig::identity_guidance)},
        {"directional_branch", bool_field(&PipelineConfig::directional_branch)},
        {"retrieval_similarity",
         {[](PipelineConfig& c, const std::string& k, const std::string& v) {
              if (v == "cosine") {
                  c.retrieval_similarity = Similarity::Cosine;
              } else if (v == "euclidean") {
                  c.retrieval_similarity = Similarity::Euclidean;
              } else {
                  bad_value(k, v, "'cosine' or 'euclidean'");
              }
          },
          [](const PipelineConfig& c) {
              return std::string(c.retrieval_similarity == Similarity::Cosine ? "cosine" : "euclidean");
          }}},
        {"fps", real_field(&PipelineConfig::fps)},
        {"seed", u64_field(&PipelineConfig::seed)},
        {"cache_dir", path_field(&PipelineConfig::cache_dir)},
    };
    return table;
}

const Field* find_field(const std::string& key) {
    for (const auto& [name, f] : fields()) {
        if (name == key) return &f;
    }
    return nullptr;
}

void require_sites(const std::vector<LayerId>& layers, const char* key) {
    const auto& known = ToyDenoiser::site_names();
    for (const auto& l : layers) {
        if (std::find(known.begin(), known.end(), l) == known.end()) {
            throw ConfigError(std::string("config key '") + key + "': unknown self-attention layer '" + l + "'");
        }
    }
}

}  // namespace

void apply_setting(PipelineConfig& cfg, const std::string& key, const std::string& value) {
    const Field* f = find_field(key);
    if (f == nullptr) throw ConfigError("unknown config key '" + key + "'");
    f->set(cfg, key, trim(value));
}

void PipelineConfig::validate() const {
    if (num_train_steps < 1) throw ConfigError("schedule.num_train_steps must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw ConfigError("schedule betas must satisfy 0 < beta_start <= beta_end < 1");
    }
    if (steps < 1 || steps > num_train_steps) {
        throw ConfigError("steps must lie in [1, schedule.num_train_steps]");
    }
    if (inversion_prompt.empty()) throw ConfigError("inversion_prompt must not be empty");
    if (keyframe_stride < 1) throw ConfigError("keyframe_stride must be >= 1");
    if (record_stride < 1) throw ConfigError("record_stride must be >= 1");
    if (!(fps > 0.0)) throw ConfigError("fps must be positive");

    if (denoiser_backend != "toy") {
        throw ConfigError("denoiser_backend '" + denoiser_backend +
                          "' is not available in this build (supported: toy)");
    }
    if (embedder_backend != "toy") {
        throw ConfigError("embedder_backend '" + embedder_backend +
                          "' is not available in this build (supported: toy)");
    }
    if (flow_backend != "global-search" && flow_backend != "zero") {
        throw ConfigError("flow_backend '" + flow_backend +
                          "' is not available in this build (supported: global-search, zero)");
    }
    require_sites(injection_layers, "injection_layers");
    require_sites(editing_layers, "editing_layers");
    require_sites(record_layers, "record_layers");
    require_sites({correspondence_layer}, "correspondence_layer");

    const LayerSet recorded = recorded_layers();
    for (const auto& l : injection_layers) {
        if (!recorded.count(l)) throw ConfigError("injection layer '" + l + "' is not in record_layers");
    }
    if (!recorded.count(correspondence_layer)) {
        throw ConfigError("correspondence_layer '" + correspondence_layer + "' is not in record_layers");
    }
    resolved_correspondence_timestep();

    try {
        train_config().validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("fine-tuning settings: ") + e.what());
    }
}

NoiseSchedule PipelineConfig::schedule() const {
    return NoiseSchedule::linear_beta(num_train_steps, beta_start, beta_end);
}

TrainConfig PipelineConfig::train_config() const {
    TrainConfig t;
    t.learning_rate = learning_rate;
    t.batch_size = batch_size;
    t.iterations = iterations;
    t.height = height;
    t.width = width;
    t.loss_weights = LossWeights{lambda1, lambda2};
    t.inversion_steps = steps;
    t.truncated_steps = truncated_steps;
    t.seed = seed;
    t.trainable = trainable;
    return t;
}

LayerSet PipelineConfig::recorded_layers() const {
    if (!record_layers.empty()) return LayerSet(record_layers.begin(), record_layers.end());
    LayerSet out(injection_layers.begin(), injection_layers.end());
    out.insert(correspondence_layer);
    return out;
}

std::vector<int> PipelineConfig::recorded_timesteps() const {
    const auto grid = schedule().timestep_grid(steps);
    std::vector<int> out;
    for (int k = 1; k <= steps; ++k) {
        if ((steps - k) % record_stride == 0) out.push_back(grid[k]);
    }
    return out;
}

int PipelineConfig::resolved_correspondence_timestep() const {
    const auto ts = recorded_timesteps();
    if (correspondence_timestep == -1) return ts.back();
    if (std::find(ts.begin(), ts.end(), correspondence_timestep) == ts.end()) {
        std::ostringstream os;
        os << "correspondence_timestep " << correspondence_timestep
           << " is not a recorded timestep (recorded: " << ts.front() << " .. " << ts.back() << ")";
        throw ConfigError(os.str());
    }
    return correspondence_timestep;
}

PipelineConfig parse_config(const std::string& text, const std::string& origin) {
    PipelineConfig cfg;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = origin + ":" + std::to_string(lineno);
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
        try {
            apply_setting(cfg, key, line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(where + ": " + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
}

std::string to_text(const PipelineConfig& cfg) {
    std::string out;
    for (const auto& [name, f] : fields()) out += name + " = " + f.get(cfg) + "\n";
    return out;
}

}  // namespace facedit
