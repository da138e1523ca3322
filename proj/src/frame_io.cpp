#include "facedit/frame_io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>

#include "json.hpp"

#include "facedit/errors.hpp"

namespace facedit {

static_assert(std::endian::native == std::endian::little, "array files assume a little-endian host");

namespace fs = std::filesystem;

void FrameSequence::validate() const {
    if (frames.empty()) throw InvalidArgument("a frame sequence needs at least one frame");
    for (std::size_t i = 0; i < frames.size(); ++i) {
        if (frames[i].shape() != frames.front().shape()) {
            throw InvalidArgument("frame " + std::to_string(i) + " has shape " + frames[i].shape().str() +
                                  ", expected " + frames.front().shape().str());
        }
        if (!frames[i].all_finite()) {
            throw InvalidArgument("frame " + std::to_string(i) + " has non-finite pixels");
        }
    }
    if (!(fps > 0.0)) throw InvalidArgument("frame rate must be positive");
}

Tensor3 read_npy(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0) throw IoError(path.string() + " is not an .npy file");
    const int major = static_cast<unsigned char>(magic[6]);
    std::uint32_t header_len = 0;
    if (major == 1) {
        std::uint16_t h = 0;
        in.read(reinterpret_cast<char*>(&h), 2);
        header_len = h;
    } else if (major == 2 || major == 3) {
        in.read(reinterpret_cast<char*>(&header_len), 4);
    } else {
        throw IoError(path.string() + ": unsupported .npy version " + std::to_string(major));
    }
    std::string header(header_len, '\0');
    in.read(header.data(), header_len);
    if (!in) throw IoError(path.string() + ": truncated .npy header");

    std::smatch m;
    static const std::regex descr_re(R"('descr'\s*:\s*'([<>|=]?)([fi])(\d)')");
    static const std::regex order_re(R"('fortran_order'\s*:\s*(True|False))");
    static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
    if (!std::regex_search(header, m, descr_re)) throw IoError(path.string() + ": missing dtype");
    const std::string endian = m[1], kind = m[2], width = m[3];
    if (endian == ">" || kind != "f" || (width != "8" && width != "4")) {
        throw IoError(path.string() + ": only little-endian float32/float64 arrays are supported");
    }
    if (!std::regex_search(header, m, order_re) || m[1] == "True") {
        throw IoError(path.string() + ": Fortran-order arrays are not supported");
    }
    if (!std::regex_search(header, m, shape_re)) throw IoError(path.string() + ": missing shape");
    std::vector<int> dims;
    {
        std::stringstream ss(m[1].str());
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (item.find_first_not_of(" ") == std::string::npos) continue;
            dims.push_back(std::stoi(item));
        }
    }
    Shape3 shape;
    if (dims.size() == 3) {
        shape = {dims[0], dims[1], dims[2]};
    } else if (dims.size() == 2) {
        shape = {1, dims[0], dims[1]};
    } else {
        throw IoError(path.string() + ": expected a rank-2 or rank-3 array");
    }
    if (shape.channels < 1 || shape.height < 1 || shape.width < 1) {
        throw IoError(path.string() + ": empty array");
    }

    std::vector<double> data(shape.numel());
    if (width == "8") {
        in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * 8));
    } else {
        std::vector<float> tmp(shape.numel());
        in.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(tmp.size() * 4));
        std::copy(tmp.begin(), tmp.end(), data.begin());
    }
    if (!in) throw IoError(path.string() + ": truncated array payload");
    return Tensor3(shape, std::move(data));
}

void write_npy(const Tensor3& tensor, const fs::path& path) {
    std::ostringstream h;
    h << "{'descr': '<f8', 'fortran_order': False, 'shape': (" << tensor.channels() << ", "
      << tensor.height() << ", " << tensor.width() << "), }";
    std::string header = h.str();
    const std::size_t unpadded = 10 + header.size() + 1;
    header.append((64 - unpadded % 64) % 64, ' ');
    header.push_back('\n');

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write("\x93NUMPY\x01\x00", 8);
    const auto len = static_cast<std::uint16_t>(header.size());
    out.write(reinterpret_cast<const char*>(&len), 2);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(tensor.data().data()),
              static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
    if (!out) throw IoError("failed writing " + path.string());
}

fs::path frame_path(const fs::path& dir, int index) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%05d.npy", index);
    return dir / name;
}

namespace {

std::vector<int> frame_indices(const fs::path& dir) {
    static const std::regex name_re(R"(frame_(\d{5})\.npy)");
    std::vector<int> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, m, name_re)) out.push_back(std::stoi(m[1]));
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

FrameSequence read_frames(const fs::path& dir, double default_fps) {
    if (!fs::is_directory(dir)) throw MissingArtifactError("frame directory " + dir.string() + " does not exist");
    const auto indices = frame_indices(dir);
    FrameSequence seq;
    seq.fps = default_fps;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] != static_cast<int>(i)) {
            throw IoError("frame numbering in " + dir.string() + " has a gap: frame " + std::to_string(i) +
                          " is missing");
        }
        Tensor3 f;
        try {
            f = read_npy(frame_path(dir, static_cast<int>(i)));
        } catch (const IoError& e) {
            throw IoError("frame " + std::to_string(i) + ": " + e.what());
        }
        if (!seq.frames.empty() && f.shape() != seq.frames.front().shape()) {
            throw IoError("frame " + std::to_string(i) + " has resolution " + f.shape().str() + ", expected " +
                          seq.frames.front().shape().str());
        }
        seq.frames.push_back(std::move(f));
    }

    const fs::path sidecar = dir / "video.json";
    if (fs::exists(sidecar)) {
        std::ifstream in(sidecar);
        nlohmann::json meta;
        try {
            in >> meta;
            seq.fps = meta.at("fps").get<double>();
            if (meta.contains("frames") && meta["frames"].get<std::size_t>() != seq.frames.size()) {
                throw IoError(sidecar.string() + " lists " + meta["frames"].dump() + " frames but " +
                              std::to_string(seq.frames.size()) + " are present");
            }
        } catch (const nlohmann::json::exception& e) {
            throw IoError("malformed " + sidecar.string() + ": " + e.what());
        }
    }
    return seq;
}

void write_frames(const FrameSequence& sequence, const fs::path& dir, bool overwrite) {
    sequence.validate();
    if (fs::exists(dir)) {
        const auto existing = frame_indices(dir);
        if (!existing.empty()) {
            if (!overwrite) {
                throw WriteOnceViolation(dir.string() + " already holds frames; pass --overwrite to replace them");
            }
            for (int i : existing) fs::remove(frame_path(dir, i));
        }
    }
    fs::create_directories(dir);
    for (std::size_t i = 0; i < sequence.frames.size(); ++i) {
        write_npy(sequence.frames[i], frame_path(dir, static_cast<int>(i)));
    }
    const auto& s = sequence.frames.front().shape();
    nlohmann::json meta{{"fps", sequence.fps},
                        {"frames", sequence.frames.size()},
                        {"shape", {s.channels, s.height, s.width}}};
    std::ofstream out(dir / "video.json");
    out << meta.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + (dir / "video.json").string());
}

}  // namespace facedit
