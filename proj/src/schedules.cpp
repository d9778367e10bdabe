#include "scorelab/schedules.hpp"

namespace scorelab {

void TimeMode::validate() const {
    check_arg(eps > 0.0, "TimeMode: eps must be positive");
    check_arg(eps < horizon_T, "TimeMode: eps must be below the horizon");
    check_arg(grid_size >= 1, "TimeMode: grid size must be >= 1");
}

double draw_time(const TimeMode& mode, Rng& rng) {
    mode.validate();
    if (mode.mode == TimeModeKind::Continuous) {
        return mode.eps + (mode.horizon_T - mode.eps) * rng.uniform();
    }
    const auto idx = rng.uniform_index(static_cast<std::uint64_t>(mode.grid_size) + 1);
    if (idx == 0) return mode.eps;
    return mode.horizon_T * static_cast<double>(idx) / static_cast<double>(mode.grid_size);
}

void VsSchedule::validate() const {
    check_arg(total_iterations >= 1, "VsSchedule: M must be >= 1");
    check_arg(sigma_max_target > 0.0, "VsSchedule: target must be positive");
    check_arg(sigma_max_target <= sigma_max_initial,
              "VsSchedule: target must not exceed the initial sigma_max");
}

double vs_sigma_max(const VsSchedule& s, long long n) {
    s.validate();
    check_arg(n >= 0, "vs_sigma_max: iteration must be nonnegative");
    if (n >= s.total_iterations) return s.sigma_max_target;
    if (n == 0) return s.sigma_max_initial;
    const double M = static_cast<double>(s.total_iterations);
    const double num = M * s.sigma_max_target * s.sigma_max_initial;
    const double den =
        static_cast<double>(n) * (s.sigma_max_initial - s.sigma_max_target) + M * s.sigma_max_target;
    return num / den;
}

}  // namespace scorelab
