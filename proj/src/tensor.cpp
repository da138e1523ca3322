#include "facedit/tensor.hpp"

#include <cmath>
#include <sstream>

#include "facedit/errors.hpp"

namespace facedit {

std::string Shape3::str() const {
    std::ostringstream os;
    os << "(" << channels << ", " << height << ", " << width << ")";
    return os.str();
}

Tensor3::Tensor3(Shape3 shape, double fill) : shape_(shape), data_(shape.numel(), fill) {
    if (shape.channels <= 0 || shape.height <= 0 || shape.width <= 0) {
        throw InvalidArgument("tensor shape must be positive, got " + shape.str());
    }
}

Tensor3::Tensor3(Shape3 shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (shape.channels <= 0 || shape.height <= 0 || shape.width <= 0) {
        throw InvalidArgument("tensor shape must be positive, got " + shape.str());
    }
    if (data_.size() != shape.numel()) {
        throw InvalidArgument("tensor data size does not match shape " + shape.str());
    }
}

bool Tensor3::all_finite() const noexcept {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

MatrixX Tensor3::to_tokens() const {
    const int n = shape_.height * shape_.width;
    MatrixX tokens(n, shape_.channels);
    for (int c = 0; c < shape_.channels; ++c) {
        const double* plane = data_.data() + static_cast<std::size_t>(c) * n;
        for (int p = 0; p < n; ++p) tokens(p, c) = plane[p];
    }
    return tokens;
}

Tensor3 Tensor3::from_tokens(const MatrixX& tokens, Shape3 shape) {
    const int n = shape.height * shape.width;
    if (tokens.rows() != n || tokens.cols() != shape.channels) {
        throw InvalidArgument("token matrix does not match shape " + shape.str());
    }
    Tensor3 out(shape);
    for (int c = 0; c < shape.channels; ++c) {
        double* plane = out.data_.data() + static_cast<std::size_t>(c) * n;
        for (int p = 0; p < n; ++p) plane[p] = tokens(p, c);
    }
    return out;
}

void require_same_shape(const Tensor3& a, const Tensor3& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw InvalidArgument(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                              b.shape().str());
    }
}

Tensor3 axpby(double a, const Tensor3& x, double b, const Tensor3& y) {
    require_same_shape(x, y, "axpby");
    Tensor3 out(x.shape());
    auto o = out.data();
    auto xs = x.data();
    auto ys = y.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a * xs[i] + b * ys[i];
    return out;
}

double mean_abs_diff(const Tensor3& a, const Tensor3& b) {
    require_same_shape(a, b, "mean_abs_diff");
    double acc = 0.0;
    auto as = a.data();
    auto bs = b.data();
    for (std::size_t i = 0; i < as.size(); ++i) acc += std::abs(as[i] - bs[i]);
    return acc / static_cast<double>(as.size());
}

}  // namespace facedit
