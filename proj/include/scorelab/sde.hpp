#pragma once

#include <cstdint>
#include <vector>

#include "scorelab/common.hpp"
#include "scorelab/rng.hpp"

namespace scorelab {

// Variance-exploding noise schedule sigma(t) = sigma_min * (sigma_max/sigma_min)^(t/T),
// zero drift. sigma_max == sigma_min is allowed and means the block is frozen
// (never perturbed); several reduction identities in this project rely on that
// degenerate case.
struct VeSdeSpec {
    double sigma_min = 0.01;
    double sigma_max = 50.0;
    double horizon_T = 1.0;

    void validate() const;
    bool frozen() const { return sigma_max == sigma_min; }
};

// sigma(t); exact at both endpoints.
double noise_scale(const VeSdeSpec& spec, double t);

// Variance of p(x_t | x_0): sigma(t)^2 - sigma_min^2. Exactly zero at t = 0.
double marginal_variance(const VeSdeSpec& spec, double t);

// g(t) in dx = g(t) dw, with g(t)^2 = d/dt sigma(t)^2.
double instantaneous_diffusion(const VeSdeSpec& spec, double t);

// x_0 + sqrt(marginal_variance(t)) * z.
VectorXd transition_sample(const VeSdeSpec& spec, const VectorXd& x0, double t, Rng& rng);
VectorXd transition_sample(const VeSdeSpec& spec, const VectorXd& x0, double t, std::uint64_t seed);

// grad_{x_t} ln p(x_t | x_0) = -(x_t - x_0) / marginal_variance(t). Requires
// positive variance; t = 0 (or a frozen spec) is a singular kernel.
VectorXd transition_score(const VeSdeSpec& spec, const VectorXd& x0, const VectorXd& xt, double t);

struct SdeBlock {
    int dim = 0;
    VeSdeSpec spec;
};

// Ordered blocks diffusing with independent speeds over a concatenated state.
// Two blocks (x, y) is the multi-speed setting; equal specs reduce to a
// single-speed joint diffusion.
struct MultiBlockSdeSpec {
    std::vector<SdeBlock> blocks;

    void validate() const;
    int total_dim() const;
    double horizon_T() const { return blocks.front().spec.horizon_T; }
    int block_offset(int b) const;
};

// Moments of p(z_t | z_0): the mean equals z_0 (zero drift) and each block
// carries its own transition std.
struct TransitionMoments {
    VectorXd mean;
    std::vector<double> std_per_block;
};

TransitionMoments transition_moments(const MultiBlockSdeSpec& mspec, const VectorXd& z0, double t);

// Blockwise transition sampling; block b draws from substream(seed, "block", b),
// so the per-block results do not depend on the other blocks' sizes or order
// of evaluation.
VectorXd joint_transition_sample(const MultiBlockSdeSpec& mspec, const VectorXd& z0, double t,
                                 std::uint64_t seed);

// Per block: N(0, sigma_max^2 I).
VectorXd prior_sample(const MultiBlockSdeSpec& mspec, std::uint64_t seed);

}  // namespace scorelab
