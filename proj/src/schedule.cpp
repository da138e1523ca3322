#include "facedit/schedule.hpp"

#include <cmath>
#include <sstream>

#include "facedit/errors.hpp"

namespace facedit {

NoiseSchedule::NoiseSchedule(std::vector<double> alphas, std::string id)
    : alpha_(std::move(alphas)), id_(std::move(id)) {
    if (alpha_.empty()) throw InvalidArgument("noise schedule needs at least one step");
    alpha_bar_.resize(alpha_.size() + 1);
    alpha_bar_[0] = 1.0;
    for (std::size_t t = 0; t < alpha_.size(); ++t) {
        const double a = alpha_[t];
        if (!(a > 0.0 && a < 1.0)) {
            std::ostringstream os;
            os << "alpha(" << t + 1 << ") = " << a << " is outside (0, 1)";
            throw InvalidArgument(os.str());
        }
        alpha_bar_[t + 1] = alpha_bar_[t] * a;
    }
}

NoiseSchedule NoiseSchedule::from_alphas(std::vector<double> alphas) {
    std::ostringstream os;
    os << "custom/" << alphas.size();
    return NoiseSchedule(std::move(alphas), os.str());
}

NoiseSchedule NoiseSchedule::linear_beta(int num_steps, double beta_start, double beta_end) {
    if (num_steps < 1) throw InvalidArgument("num_steps must be >= 1");
    if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
        throw InvalidArgument("linear beta schedule needs 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> alphas(num_steps);
    for (int i = 0; i < num_steps; ++i) {
        const double frac = num_steps == 1 ? 0.0 : static_cast<double>(i) / (num_steps - 1);
        alphas[i] = 1.0 - (beta_start + frac * (beta_end - beta_start));
    }
    std::ostringstream os;
    os << "linear/" << num_steps << "/" << beta_start << "/" << beta_end;
    return NoiseSchedule(std::move(alphas), os.str());
}

double NoiseSchedule::alpha(int t) const {
    if (t < 1 || t > num_steps()) throw InvalidArgument("alpha: timestep out of range [1, T]");
    return alpha_[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t > num_steps()) throw InvalidArgument("alpha_bar: timestep out of range [0, T]");
    return alpha_bar_[t];
}

std::vector<int> NoiseSchedule::timestep_grid(int steps) const {
    if (steps < 0 || steps > num_steps()) {
        std::ostringstream os;
        os << "step count " << steps << " outside [0, " << num_steps() << "]";
        throw InvalidArgument(os.str());
    }
    std::vector<int> grid(steps + 1);
    for (int k = 0; k <= steps; ++k) {
        grid[k] = steps == 0 ? 0
                             : static_cast<int>((static_cast<long long>(k) * num_steps()) / steps);
    }
    return grid;
}

}  // namespace facedit
