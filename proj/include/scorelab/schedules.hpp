#pragma once

#include <cstdint>

#include "scorelab/common.hpp"
#include "scorelab/rng.hpp"

namespace scorelab {

enum class TimeModeKind { Continuous, Discrete };

// Training-time distribution over t. Continuous: uniform on [eps, T].
// Discrete: uniform over the N+1 grid points {eps, T/N, 2T/N, ..., T}.
struct TimeMode {
    TimeModeKind mode = TimeModeKind::Discrete;
    int grid_size = 1000;     // N
    double eps = 1e-5;        // lower cutoff; keeps the transition kernel nonsingular
    double horizon_T = 1.0;

    void validate() const;
};

double draw_time(const TimeMode& mode, Rng& rng);

// Decaying sigma_max schedule for the condition block:
//   sigma_max^(n) = M * s_t * s_0 / (n * (s_0 - s_t) + M * s_t)
// with s_0 = sigma_max_initial, s_t = sigma_max_target. Endpoints are exact;
// iterations past M clamp to the target.
struct VsSchedule {
    long long total_iterations = 125000;  // M
    double sigma_max_initial = 50.0;
    double sigma_max_target = 1.0;

    void validate() const;
};

double vs_sigma_max(const VsSchedule& s, long long n);

}  // namespace scorelab
