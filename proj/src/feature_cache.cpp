#include "facedit/feature_cache.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>

#include <zlib.h>

#include "facedit/errors.hpp"

namespace facedit {

namespace fs = std::filesystem;

std::string FeatureKey::str() const {
    std::ostringstream os;
    os << "(frame " << frame_index << ", " << layer_id << ", t=" << timestep << ")";
    return os.str();
}

FeatureCache::FeatureCache(FeatureCache&& other) noexcept {
    std::unique_lock lock(other.mutex_);
    records_ = std::move(other.records_);
    tokens_per_layer_ = std::move(other.tokens_per_layer_);
    metadata_ = std::move(other.metadata_);
}

FeatureCache& FeatureCache::operator=(FeatureCache&& other) noexcept {
    if (this != &other) {
        std::scoped_lock lock(mutex_, other.mutex_);
        records_ = std::move(other.records_);
        tokens_per_layer_ = std::move(other.tokens_per_layer_);
        metadata_ = std::move(other.metadata_);
    }
    return *this;
}

void FeatureCache::record(const FeatureKey& key, FeatureRecord tokens) {
    if (!tokens.allFinite()) {
        throw InvalidArgument("feature record " + key.str() + " has non-finite entries");
    }
    std::unique_lock lock(mutex_);
    if (records_.count(key) != 0) {
        throw WriteOnceViolation("feature " + key.str() + " is already recorded");
    }
    auto [it, inserted] = tokens_per_layer_.try_emplace(key.layer_id, tokens.rows());
    if (!inserted && it->second != tokens.rows()) {
        std::ostringstream os;
        os << "feature " << key.str() << " has " << tokens.rows() << " tokens but layer "
           << key.layer_id << " records " << it->second;
        throw InvalidArgument(os.str());
    }
    records_.emplace(key, std::make_unique<const FeatureRecord>(std::move(tokens)));
}

const FeatureRecord* FeatureCache::find(const FeatureKey& key) const {
    std::shared_lock lock(mutex_);
    auto it = records_.find(key);
    return it == records_.end() ? nullptr : it->second.get();
}

const FeatureRecord& FeatureCache::lookup(const FeatureKey& key) const {
    if (const auto* rec = find(key)) return *rec;
    throw MissingFeatureError("feature " + key.str() + " is not in the cache", {key.str()});
}

bool FeatureCache::contains(const FeatureKey& key) const { return find(key) != nullptr; }

std::size_t FeatureCache::size() const {
    std::shared_lock lock(mutex_);
    return records_.size();
}

std::vector<FeatureKey> FeatureCache::keys() const {
    std::shared_lock lock(mutex_);
    std::vector<FeatureKey> out;
    out.reserve(records_.size());
    for (const auto& [k, v] : records_) out.push_back(k);
    return out;
}

void FeatureCache::set_metadata(const std::string& key, const std::string& value) {
    if (key.empty() || key.find_first_of(" \t\n") != std::string::npos ||
        value.find('\n') != std::string::npos) {
        throw InvalidArgument("metadata keys must be single tokens and values single lines");
    }
    std::unique_lock lock(mutex_);
    metadata_[key] = value;
}

std::string FeatureCache::metadata(const std::string& key, const std::string& fallback) const {
    std::shared_lock lock(mutex_);
    auto it = metadata_.find(key);
    return it == metadata_.end() ? fallback : it->second;
}

std::map<std::string, std::string> FeatureCache::all_metadata() const {
    std::shared_lock lock(mutex_);
    return metadata_;
}

CacheRecorder::CacheRecorder(FeatureCache& cache, std::vector<int> frame_of_batch, LayerSet layers,
                             std::vector<int> timesteps)
    : cache_(cache),
      frame_of_batch_(std::move(frame_of_batch)),
      layers_(std::move(layers)),
      timesteps_(std::move(timesteps)) {}

void CacheRecorder::on_features(const LayerId& layer, int batch_index, int timestep,
                                const FeatureMatrix& tokens) {
    if (!layers_.empty() && layers_.count(layer) == 0) return;
    if (!timesteps_.empty() &&
        std::find(timesteps_.begin(), timesteps_.end(), timestep) == timesteps_.end()) {
        return;
    }
    if (batch_index < 0 || batch_index >= static_cast<int>(frame_of_batch_.size())) {
        throw ContractViolation("CacheRecorder: batch index without a frame mapping");
    }
    cache_.record(FeatureKey{frame_of_batch_[batch_index], layer, timestep}, tokens);
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr const char* kManifestName = "manifest.txt";
constexpr const char* kManifestMagic = "# facedit feature cache";
constexpr int kFormatVersion = 1;
constexpr std::int32_t kDtypeFloat32 = 0;
constexpr std::size_t kHeaderBytes = 3 * sizeof(std::int32_t);

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint32_t crc_of(const std::string& bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    return static_cast<std::uint32_t>(
        crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::string encode_record(const FeatureRecord& rec) {
    std::string buf;
    buf.reserve(kHeaderBytes + rec.size() * 4);
    put_u32(buf, static_cast<std::uint32_t>(rec.rows()));
    put_u32(buf, static_cast<std::uint32_t>(rec.cols()));
    put_u32(buf, static_cast<std::uint32_t>(kDtypeFloat32));
    for (Eigen::Index i = 0; i < rec.size(); ++i) put_u32(buf, std::bit_cast<std::uint32_t>(rec.data()[i]));
    return buf;
}

std::string sanitize(const std::string& s) {
    std::string out = s;
    for (char& c : out) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                        c == '.' || c == '-';
        if (!ok) c = '-';
    }
    return out;
}

std::string read_file(const fs::path& path, bool& ok) {
    std::ifstream in(path, std::ios::binary);
    ok = static_cast<bool>(in);
    if (!ok) return {};
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

bool has_manifest(const fs::path& directory) { return fs::exists(directory / kManifestName); }

Manifest persist(const FeatureCache& cache, const fs::path& directory) {
    std::error_code ec;
    fs::create_directories(directory / "records", ec);
    if (ec) throw IoError("cannot create cache directory " + directory.string() + ": " + ec.message());

    Manifest manifest;
    for (const auto& key : cache.keys()) {
        if (key.layer_id.empty() || key.layer_id.find_first_of(" \t\n") != std::string::npos) {
            throw InvalidArgument("layer id " + key.str() + " cannot be written to a manifest");
        }
        const FeatureRecord& rec = cache.lookup(key);
        const std::string bytes = encode_record(rec);
        std::ostringstream name;
        name << "records/" << key.frame_index << "_" << sanitize(key.layer_id) << "_" << key.timestep
             << ".bin";
        std::ofstream out(directory / name.str(), std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("failed to write " + (directory / name.str()).string());
        manifest.entries.push_back(ManifestEntry{key, rec.rows(), rec.cols(), crc_of(bytes), name.str()});
    }

    std::ofstream mf(directory / kManifestName, std::ios::trunc);
    mf << kManifestMagic << "\n";
    mf << "format " << kFormatVersion << "\n";
    mf << "checksum " << manifest.checksum_algorithm << "\n";
    for (const auto& [k, v] : cache.all_metadata()) mf << "meta " << k << " " << v << "\n";
    mf << "entries " << manifest.entries.size() << "\n";
    for (const auto& e : manifest.entries) {
        mf << "entry " << e.key.frame_index << " " << e.key.layer_id << " " << e.key.timestep << " "
           << e.rows << " " << e.cols << " " << std::hex << std::setw(8) << std::setfill('0')
           << e.checksum << std::dec << std::setfill(' ') << " " << e.file << "\n";
    }
    if (!mf) throw IoError("failed to write manifest in " + directory.string());
    return manifest;
}

FeatureCache load_cache(const fs::path& directory) {
    const fs::path manifest_path = directory / kManifestName;
    std::ifstream mf(manifest_path);
    if (!mf) throw MissingArtifactError("no feature cache manifest at " + manifest_path.string());

    std::string line;
    if (!std::getline(mf, line) || line != kManifestMagic) {
        throw IntegrityError(manifest_path.string() + " is not a feature cache manifest");
    }

    FeatureCache cache;
    long declared = -1;
    long seen = 0;
    int lineno = 1;
    while (std::getline(mf, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "format") {
            int version = 0;
            ls >> version;
            if (version != kFormatVersion) {
                throw VersionError("unsupported feature cache format " + std::to_string(version));
            }
        } else if (tag == "checksum") {
            std::string algo;
            ls >> algo;
            if (algo != "crc32") throw IntegrityError("unsupported checksum algorithm " + algo);
        } else if (tag == "meta") {
            std::string key;
            ls >> key;
            std::string value;
            std::getline(ls, value);
            if (!value.empty() && value.front() == ' ') value.erase(0, 1);
            cache.set_metadata(key, value);
        } else if (tag == "entries") {
            ls >> declared;
        } else if (tag == "entry") {
            FeatureKey key;
            long rows = 0;
            long cols = 0;
            std::string crc_hex;
            std::string file;
            ls >> key.frame_index >> key.layer_id >> key.timestep >> rows >> cols >> crc_hex >> file;
            if (!ls) {
                throw IntegrityError("malformed manifest entry on line " + std::to_string(lineno));
            }
            bool ok = false;
            const std::string bytes = read_file(directory / file, ok);
            if (!ok) throw IntegrityError("record file " + file + " for " + key.str() + " is missing");
            const std::size_t expected = kHeaderBytes + static_cast<std::size_t>(rows * cols) * 4;
            if (bytes.size() != expected) {
                throw IntegrityError("record for " + key.str() + " is truncated or oversized (" +
                                     std::to_string(bytes.size()) + " of " + std::to_string(expected) +
                                     " bytes)");
            }
            const std::uint32_t want = static_cast<std::uint32_t>(std::stoul(crc_hex, nullptr, 16));
            if (crc_of(bytes) != want) throw IntegrityError("checksum mismatch for " + key.str());
            const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
            if (get_u32(p) != static_cast<std::uint32_t>(rows) ||
                get_u32(p + 4) != static_cast<std::uint32_t>(cols) ||
                get_u32(p + 8) != static_cast<std::uint32_t>(kDtypeFloat32)) {
                throw IntegrityError("record header for " + key.str() + " disagrees with the manifest");
            }
            FeatureRecord rec(rows, cols);
            for (long i = 0; i < rows * cols; ++i) {
                rec.data()[i] = std::bit_cast<float>(get_u32(p + kHeaderBytes + 4 * i));
            }
            cache.record(key, std::move(rec));
            ++seen;
        } else {
            throw IntegrityError("unknown manifest tag '" + tag + "' on line " + std::to_string(lineno));
        }
    }
    if (declared >= 0 && declared != seen) {
        throw IntegrityError("manifest declares " + std::to_string(declared) + " entries but lists " +
                             std::to_string(seen));
    }
    return cache;
}

}  // namespace facedit
