#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "facedit/tensor.hpp"

namespace facedit {

using Rng = std::mt19937_64;

// 64-bit FNV-1a; stable across platforms, used to seed prompt embeddings.
constexpr std::uint64_t fnv1a64(std::string_view s, std::uint64_t salt = 0) {
    std::uint64_t h = 0xcbf29ce484222325ull ^ salt;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

Tensor3 gaussian_tensor(Shape3 shape, Rng& rng, double stddev = 1.0);
MatrixX gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev = 1.0);
VectorX gaussian_vector(Eigen::Index n, Rng& rng, double stddev = 1.0);

}  // namespace facedit
