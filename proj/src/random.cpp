#include "facedit/random.hpp"

namespace facedit {

Tensor3 gaussian_tensor(Shape3 shape, Rng& rng, double stddev) {
    Tensor3 out(shape);
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : out.values()) v = dist(rng);
    return out;
}

MatrixX gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev) {
    MatrixX m(rows, cols);
    std::normal_distribution<double> dist(0.0, stddev);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

VectorX gaussian_vector(Eigen::Index n, Rng& rng, double stddev) {
    VectorX v(n);
    std::normal_distribution<double> dist(0.0, stddev);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = dist(rng);
    return v;
}

}  // namespace facedit
