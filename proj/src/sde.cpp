#include "scorelab/sde.hpp"

#include <cmath>

namespace scorelab {

void VeSdeSpec::validate() const {
    check_arg(sigma_min > 0.0, "VeSdeSpec: sigma_min must be positive");
    check_arg(sigma_max >= sigma_min, "VeSdeSpec: sigma_max must be >= sigma_min");
    check_arg(horizon_T > 0.0, "VeSdeSpec: horizon_T must be positive");
}

namespace {
void check_time(const VeSdeSpec& spec, double t) {
    check_domain(t >= 0.0 && t <= spec.horizon_T, "time outside [0, T]");
}
}  // namespace

double noise_scale(const VeSdeSpec& spec, double t) {
    check_time(spec, t);
    // endpoints returned exactly, by contract
    if (t == 0.0) return spec.sigma_min;
    if (t == spec.horizon_T) return spec.sigma_max;
    return spec.sigma_min * std::pow(spec.sigma_max / spec.sigma_min, t / spec.horizon_T);
}

double marginal_variance(const VeSdeSpec& spec, double t) {
    check_time(spec, t);
    if (spec.frozen()) return 0.0;
    // sigma_min^2 * ((sigma_max/sigma_min)^(2t/T) - 1), via expm1 to avoid
    // cancellation near t = 0. Exactly zero at t = 0.
    const double log_ratio = std::log(spec.sigma_max / spec.sigma_min);
    return spec.sigma_min * spec.sigma_min * std::expm1(2.0 * log_ratio * t / spec.horizon_T);
}

double instantaneous_diffusion(const VeSdeSpec& spec, double t) {
    check_time(spec, t);
    const double log_ratio = std::log(spec.sigma_max / spec.sigma_min);
    return noise_scale(spec, t) * std::sqrt(2.0 * log_ratio / spec.horizon_T);
}

VectorXd transition_sample(const VeSdeSpec& spec, const VectorXd& x0, double t, Rng& rng) {
    check_time(spec, t);
    const double std_dev = std::sqrt(marginal_variance(spec, t));
    if (std_dev == 0.0) return x0;
    return x0 + std_dev * rng.normal_vector(static_cast<int>(x0.size()));
}

VectorXd transition_sample(const VeSdeSpec& spec, const VectorXd& x0, double t, std::uint64_t seed) {
    Rng rng(seed);
    return transition_sample(spec, x0, t, rng);
}

VectorXd transition_score(const VeSdeSpec& spec, const VectorXd& x0, const VectorXd& xt, double t) {
    check_arg(x0.size() == xt.size(), "transition_score: x0/x_t dimension mismatch");
    const double var = marginal_variance(spec, t);
    check_domain(var > 0.0, "transition_score: singular kernel (zero variance)");
    return -(xt - x0) / var;
}

void MultiBlockSdeSpec::validate() const {
    check_arg(!blocks.empty(), "MultiBlockSdeSpec: needs at least one block");
    for (const auto& b : blocks) {
        check_arg(b.dim >= 1, "MultiBlockSdeSpec: block dims must be >= 1");
        b.spec.validate();
        check_arg(b.spec.horizon_T == blocks.front().spec.horizon_T,
                  "MultiBlockSdeSpec: all blocks must share horizon_T");
    }
}

int MultiBlockSdeSpec::total_dim() const {
    int n = 0;
    for (const auto& b : blocks) n += b.dim;
    return n;
}

int MultiBlockSdeSpec::block_offset(int b) const {
    int off = 0;
    for (int i = 0; i < b; ++i) off += blocks[i].dim;
    return off;
}

TransitionMoments transition_moments(const MultiBlockSdeSpec& mspec, const VectorXd& z0, double t) {
    check_arg(z0.size() == mspec.total_dim(), "transition_moments: dimension mismatch");
    TransitionMoments m;
    m.mean = z0;
    m.std_per_block.reserve(mspec.blocks.size());
    for (const auto& blk : mspec.blocks) {
        m.std_per_block.push_back(std::sqrt(marginal_variance(blk.spec, t)));
    }
    return m;
}

VectorXd joint_transition_sample(const MultiBlockSdeSpec& mspec, const VectorXd& z0, double t,
                                 std::uint64_t seed) {
    check_arg(z0.size() == mspec.total_dim(), "joint_transition_sample: dimension mismatch");
    VectorXd out(z0.size());
    int off = 0;
    for (std::size_t b = 0; b < mspec.blocks.size(); ++b) {
        const auto& blk = mspec.blocks[b];
        Rng rng(substream(seed, "block", b));
        out.segment(off, blk.dim) = transition_sample(blk.spec, z0.segment(off, blk.dim), t, rng);
        off += blk.dim;
    }
    return out;
}

VectorXd prior_sample(const MultiBlockSdeSpec& mspec, std::uint64_t seed) {
    VectorXd out(mspec.total_dim());
    int off = 0;
    for (std::size_t b = 0; b < mspec.blocks.size(); ++b) {
        const auto& blk = mspec.blocks[b];
        Rng rng(substream(seed, "prior", b));
        out.segment(off, blk.dim) = blk.spec.sigma_max * rng.normal_vector(blk.dim);
        off += blk.dim;
    }
    return out;
}

}  // namespace scorelab
