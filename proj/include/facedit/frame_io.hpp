#pragma once

#include <filesystem>
#include <vector>

#include "facedit/tensor.hpp"

namespace facedit {

// Ordered frames of one clip plus its frame rate. On disk: a directory of
// frame_00000.npy, frame_00001.npy, ... (float64, shape (C, H, W)) and a
// video.json sidecar {"fps", "frames", "shape"}.
struct FrameSequence {
    std::vector<Tensor3> frames;
    double fps = 25.0;

    // Non-empty, uniform shape, finite pixels. Throws InvalidArgument.
    void validate() const;
};

// Lossless array files. Reads float64 or float32 little-endian C-order
// arrays of rank 2 (one channel) or 3.
Tensor3 read_npy(const std::filesystem::path& path);
void write_npy(const Tensor3& tensor, const std::filesystem::path& path);

std::filesystem::path frame_path(const std::filesystem::path& dir, int index);

// Missing directory -> MissingArtifactError; a gap in the numbering, an
// unreadable frame or a resolution change -> IoError naming the frame.
// Without a sidecar the frame rate is `default_fps`.
FrameSequence read_frames(const std::filesystem::path& dir, double default_fps = 25.0);

// Refuses to write into a directory that already holds frames unless
// `overwrite`, in which case stale frames are removed first.
void write_frames(const FrameSequence& sequence, const std::filesystem::path& dir, bool overwrite);

}  // namespace facedit
