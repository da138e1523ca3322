#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <vector>

#include "facedit/denoiser.hpp"

namespace facedit {

struct FeatureKey {
    int frame_index = 0;
    LayerId layer_id;
    int timestep = 0;

    auto operator<=>(const FeatureKey&) const = default;
    std::string str() const;
};

using FeatureRecord = FeatureMatrix;

// Write-once store of self-attention features keyed by (frame, layer, timestep).
//
// Recording distinct keys from several threads is safe, and lookups may run
// concurrently with recording. Records are never overwritten or erased, so
// references returned by lookup() stay valid for the cache's lifetime.
class FeatureCache {
public:
    FeatureCache() = default;
    FeatureCache(const FeatureCache&) = delete;
    FeatureCache& operator=(const FeatureCache&) = delete;
    FeatureCache(FeatureCache&& other) noexcept;
    FeatureCache& operator=(FeatureCache&& other) noexcept;

    // Throws WriteOnceViolation on a duplicate key, InvalidArgument on
    // non-finite entries or a token count differing from earlier records of
    // the same layer.
    void record(const FeatureKey& key, FeatureRecord tokens);

    const FeatureRecord& lookup(const FeatureKey& key) const;
    const FeatureRecord* find(const FeatureKey& key) const;
    bool contains(const FeatureKey& key) const;

    std::size_t size() const;
    std::vector<FeatureKey> keys() const;

    // Free-form string metadata carried through persist/load.
    void set_metadata(const std::string& key, const std::string& value);
    std::string metadata(const std::string& key, const std::string& fallback = {}) const;
    std::map<std::string, std::string> all_metadata() const;

private:
    mutable std::shared_mutex mutex_;
    std::map<FeatureKey, std::unique_ptr<const FeatureRecord>> records_;
    std::map<LayerId, long> tokens_per_layer_;
    std::map<std::string, std::string> metadata_;
};

// Sink that records every observed site feature under a fixed frame index,
// optionally restricted to a layer subset and a timestep subset.
class CacheRecorder : public FeatureSink {
public:
    CacheRecorder(FeatureCache& cache, std::vector<int> frame_of_batch, LayerSet layers = {},
                  std::vector<int> timesteps = {});

    void on_features(const LayerId& layer, int batch_index, int timestep,
                     const FeatureMatrix& tokens) override;

private:
    FeatureCache& cache_;
    std::vector<int> frame_of_batch_;
    LayerSet layers_;
    std::vector<int> timesteps_;
};

struct ManifestEntry {
    FeatureKey key;
    long rows = 0;
    long cols = 0;
    std::uint32_t checksum = 0;
    std::string file;  // relative to the cache directory
};

struct Manifest {
    std::string checksum_algorithm = "crc32";
    std::vector<ManifestEntry> entries;
};

// Writes `manifest.txt` plus `records/<frame>_<layer>_<t>.bin` under
// `directory`. Each record is a little-endian header {rows, cols, dtype}
// of int32 followed by row-major float32 payload.
Manifest persist(const FeatureCache& cache, const std::filesystem::path& directory);

// Throws MissingArtifactError when no manifest exists and IntegrityError
// naming the key when a record is missing, truncated or fails its checksum.
FeatureCache load_cache(const std::filesystem::path& directory);

bool has_manifest(const std::filesystem::path& directory);

}  // namespace facedit
