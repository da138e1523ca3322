#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace facedit {

using MatrixX = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VectorX = Eigen::VectorXd;

struct Shape3 {
    int channels = 0;
    int height = 0;
    int width = 0;

    std::size_t numel() const noexcept {
        return static_cast<std::size_t>(channels) * height * width;
    }
    bool operator==(const Shape3&) const = default;
    std::string str() const;
};

// Dense (channels, height, width) array of doubles, channel-major.
// Images and latents share this representation; at toy scale the latent
// autoencoder is the identity so pixels are latents.
class Tensor3 {
public:
    Tensor3() = default;
    explicit Tensor3(Shape3 shape, double fill = 0.0);
    Tensor3(Shape3 shape, std::vector<double> data);

    const Shape3& shape() const noexcept { return shape_; }
    int channels() const noexcept { return shape_.channels; }
    int height() const noexcept { return shape_.height; }
    int width() const noexcept { return shape_.width; }
    std::size_t numel() const noexcept { return data_.size(); }

    double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
    double at(int c, int y, int x) const { return data_[index(c, y, x)]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& values() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    bool all_finite() const noexcept;

    // Token view: one row per pixel (row-major over y, x), one column per channel.
    MatrixX to_tokens() const;
    static Tensor3 from_tokens(const MatrixX& tokens, Shape3 shape);

    bool operator==(const Tensor3&) const = default;

private:
    std::size_t index(int c, int y, int x) const noexcept {
        return (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x;
    }

    Shape3 shape_{};
    std::vector<double> data_;
};

void require_same_shape(const Tensor3& a, const Tensor3& b, const char* what);

// out = a * x + b * y, elementwise.
Tensor3 axpby(double a, const Tensor3& x, double b, const Tensor3& y);

double mean_abs_diff(const Tensor3& a, const Tensor3& b);

}  // namespace facedit
