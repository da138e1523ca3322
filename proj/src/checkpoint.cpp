#include "facedit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "facedit/errors.hpp"

namespace facedit {

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

namespace {

constexpr char kMagic[4] = {'F', 'D', 'C', 'K'};

template <typename T>
void put(std::ofstream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

class Reader {
public:
    Reader(std::ifstream& in, const std::filesystem::path& path) : in_(in), path_(path) {}

    template <typename T>
    T get() {
        T value{};
        bytes(reinterpret_cast<char*>(&value), sizeof(T));
        return value;
    }

    void bytes(char* dst, std::size_t n) {
        in_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw IntegrityError("checkpoint " + path_.string() + " is truncated");
        }
    }

private:
    std::ifstream& in_;
    const std::filesystem::path& path_;
};

}  // namespace

void save_checkpoint(const ToyDenoiser& denoiser, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    const auto& cfg = denoiser.config();
    out.write(kMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::int32_t>(out, cfg.channels);
    put<std::int32_t>(out, cfg.dim);
    put<std::int32_t>(out, cfg.hidden);
    put<std::int32_t>(out, cfg.text_dim);
    put<std::uint64_t>(out, cfg.seed);
    put<std::int32_t>(out, cfg.prior_steps);
    put<double>(out, cfg.prior_beta_start);
    put<double>(out, cfg.prior_beta_end);
    put<double>(out, cfg.residual_scale);
    put<std::uint8_t>(out, cfg.quantize_sites ? 1 : 0);

    const auto& params = denoiser.parameters();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, m] : params) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::int32_t>(out, static_cast<std::int32_t>(m.rows()));
        put<std::int32_t>(out, static_cast<std::int32_t>(m.cols()));
        out.write(reinterpret_cast<const char*>(m.data()),
                  static_cast<std::streamsize>(m.size() * sizeof(double)));
    }
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

ToyDenoiser load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw MissingArtifactError("checkpoint " + path.string() + " does not exist");
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    Reader r(in, path);

    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw VersionError(path.string() + " is not a denoiser checkpoint");
    }
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw VersionError("checkpoint " + path.string() + " has format version " + std::to_string(version) +
                           ", expected " + std::to_string(kCheckpointVersion));
    }
    ToyDenoiserConfig cfg;
    cfg.channels = r.get<std::int32_t>();
    cfg.dim = r.get<std::int32_t>();
    cfg.hidden = r.get<std::int32_t>();
    cfg.text_dim = r.get<std::int32_t>();
    cfg.seed = r.get<std::uint64_t>();
    cfg.prior_steps = r.get<std::int32_t>();
    cfg.prior_beta_start = r.get<double>();
    cfg.prior_beta_end = r.get<double>();
    cfg.residual_scale = r.get<double>();
    cfg.quantize_sites = r.get<std::uint8_t>() != 0;
    if (cfg.channels < 1 || cfg.dim < 2 || cfg.hidden < 1 || cfg.text_dim < 1 || cfg.dim > 4096 ||
        cfg.hidden > 4096 || cfg.text_dim > 4096 || cfg.channels > 4096 ||
        cfg.prior_steps < 1 || cfg.prior_steps > 100000) {
        throw VersionError("checkpoint " + path.string() + " has an implausible configuration");
    }

    ParameterSet params;
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = r.get<std::uint32_t>();
        if (len > 1024) throw IntegrityError("checkpoint " + path.string() + " has a corrupt parameter name");
        std::string name(len, '\0');
        r.bytes(name.data(), len);
        const auto rows = r.get<std::int32_t>();
        const auto cols = r.get<std::int32_t>();
        if (rows < 0 || cols < 0 || static_cast<long>(rows) * cols > (1L << 26)) {
            throw IntegrityError("checkpoint parameter '" + name + "' has a corrupt shape");
        }
        MatrixX m(rows, cols);
        r.bytes(reinterpret_cast<char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
        params.emplace(std::move(name), std::move(m));
    }
    return ToyDenoiser(cfg, std::move(params));
}

}  // namespace facedit
