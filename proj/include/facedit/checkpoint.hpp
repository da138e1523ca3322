#pragma once

#include <filesystem>

#include "facedit/toy_denoiser.hpp"

namespace facedit {

// Binary checkpoint: magic "FDCK", uint32 format version, the toy denoiser
// configuration, then named float64 parameter blobs (little-endian).
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ToyDenoiser& denoiser, const std::filesystem::path& path);

// Throws MissingArtifactError when the file is absent, VersionError on a
// foreign magic, unknown version or parameter layout mismatch, and
// IntegrityError on truncation.
ToyDenoiser load_checkpoint(const std::filesystem::path& path);

}  // namespace facedit
