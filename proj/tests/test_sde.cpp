#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "scorelab/sde.hpp"
#include "test_support.hpp"

using namespace scorelab;
using namespace scorelab::testing;

namespace {
const VeSdeSpec kSpec{0.01, 50.0, 1.0};
}

TEST_CASE("noise_scale endpoints are exact") {
    CHECK(noise_scale(kSpec, 0.0) == 0.01);
    CHECK(noise_scale(kSpec, 1.0) == 50.0);
}

TEST_CASE("noise_scale midpoint against an independent exp/log evaluation") {
    const double mid = noise_scale(kSpec, 0.5);
    CHECK(mid == doctest::Approx(0.7071068).epsilon(1e-6));
    const double via_log = std::exp(std::log(0.01) + 0.5 * (std::log(50.0) - std::log(0.01)));
    CHECK(rel_error(mid, via_log) < 1e-12);
}

TEST_CASE("noise_scale is strictly increasing and rejects out-of-range t") {
    double prev = noise_scale(kSpec, 0.0);
    for (int i = 1; i <= 100; ++i) {
        const double cur = noise_scale(kSpec, i / 100.0);
        CHECK(cur > prev);
        prev = cur;
    }
    CHECK_THROWS_AS(noise_scale(kSpec, -0.01), std::domain_error);
    CHECK_THROWS_AS(noise_scale(kSpec, 1.01), std::domain_error);
}

TEST_CASE("marginal_variance endpoints and growth") {
    CHECK(marginal_variance(kSpec, 0.0) == 0.0);
    CHECK(marginal_variance(kSpec, 1.0) == doctest::Approx(2499.9999).epsilon(1e-10));
    CHECK(std::sqrt(marginal_variance(kSpec, 1.0)) == doctest::Approx(49.999999).epsilon(1e-9));
    double prev = 0.0;
    for (int i = 1; i <= 100; ++i) {
        const double cur = marginal_variance(kSpec, i / 100.0);
        CHECK(cur > prev);
        prev = cur;
    }
}

TEST_CASE("frozen spec has constant scale and zero variance") {
    const VeSdeSpec frozen{0.01, 0.01, 1.0};
    frozen.validate();
    CHECK(frozen.frozen());
    CHECK(noise_scale(frozen, 0.37) == 0.01);
    CHECK(marginal_variance(frozen, 0.37) == 0.0);
    CHECK(instantaneous_diffusion(frozen, 0.37) == 0.0);
}

TEST_CASE("instantaneous_diffusion value and finite-difference consistency") {
    CHECK(instantaneous_diffusion(kSpec, 0.0) == doctest::Approx(0.0412727).epsilon(1e-5));
    // g(t)^2 must equal d/dt of the marginal variance.
    const double h = 1e-6;
    for (int i = 1; i < 100; ++i) {
        const double t = i / 100.0;
        const double g2 = std::pow(instantaneous_diffusion(kSpec, t), 2);
        const double fd = (marginal_variance(kSpec, t + h) - marginal_variance(kSpec, t - h)) /
                          (2.0 * h);
        CHECK(rel_error(g2, fd) < 1e-5);
    }
    double prev = instantaneous_diffusion(kSpec, 0.0);
    for (int i = 1; i <= 100; ++i) {
        const double cur = instantaneous_diffusion(kSpec, i / 100.0);
        CHECK(cur > prev);
        prev = cur;
    }
}

TEST_CASE("transition_sample: exactness at t=0, determinism, moments") {
    const VectorXd x0 = VectorXd::LinSpaced(3, -1.0, 2.0);
    CHECK(transition_sample(kSpec, x0, 0.0, std::uint64_t{9}) == x0);
    CHECK(transition_sample(kSpec, x0, 0.5, std::uint64_t{9}) ==
          transition_sample(kSpec, x0, 0.5, std::uint64_t{9}));

    const double t = 0.5;
    const int n = 100000;
    Rng rng(11);
    MatrixXd draws(n, 3);
    for (int i = 0; i < n; ++i) draws.row(i) = transition_sample(kSpec, x0, t, rng).transpose();
    const auto stats = moments(draws);
    const double var = marginal_variance(kSpec, t);
    for (int c = 0; c < 3; ++c) {
        CHECK(std::abs(stats.mean[c] - x0[c]) < 4.0 * stats.mean_stderr()[c]);
        CHECK(rel_error(stats.var[c], var) < 0.05);
    }
}

TEST_CASE("transition_score formula, singularity, and finite-difference oracle") {
    const VectorXd x0 = VectorXd::Constant(1, 1.0);
    const VectorXd xt = VectorXd::Constant(1, 2.0);
    // variance 4 at the probed time for a hand-made spec
    const VeSdeSpec spec{1.0, std::sqrt(5.0), 1.0};  // var(T) = 5 - 1 = 4
    CHECK(transition_score(spec, x0, xt, 1.0)[0] == doctest::Approx(-0.25).epsilon(1e-12));
    CHECK(transition_score(kSpec, x0, x0, 0.5).norm() == 0.0);
    CHECK_THROWS_AS(transition_score(kSpec, x0, xt, 0.0), std::domain_error);

    // score vs central difference of the Gaussian log density
    Rng rng(13);
    for (int rep = 0; rep < 50; ++rep) {
        const double t = 0.05 + 0.9 * rng.uniform();
        const double var = marginal_variance(kSpec, t);
        const VectorXd a = rng.normal_vector(2);
        const VectorXd b = a + std::sqrt(var) * rng.normal_vector(2);
        auto logpdf = [&](const VectorXd& p) {
            return -0.5 * (p - a).squaredNorm() / var;
        };
        const VectorXd analytic = transition_score(kSpec, a, b, t);
        const VectorXd fd = central_diff_gradient(logpdf, b, 1e-5 * std::sqrt(var));
        for (int c = 0; c < 2; ++c) {
            CHECK(std::abs(analytic[c] - fd[c]) <=
                  1e-6 * std::max(1.0, std::abs(analytic[c])));
        }
        // exact-gradient comparison, same arithmetic as the analytic gradient
        const VectorXd exact = -(b - a) / var;
        CHECK((analytic - exact).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("joint_transition_sample: blockwise behavior") {
    MultiBlockSdeSpec mspec;
    mspec.blocks = {{2, kSpec}, {2, kSpec}};
    mspec.validate();
    CHECK(mspec.total_dim() == 4);

    VectorXd z0(4);
    z0 << 0.5, -0.5, 1.5, -1.5;
    CHECK_THROWS_AS(joint_transition_sample(mspec, VectorXd::Zero(3), 0.5, 1),
                    std::invalid_argument);

    // identical specs: per-coordinate variance equal across blocks
    const int n = 100000;
    MatrixXd draws(n, 4);
    for (int i = 0; i < n; ++i) {
        draws.row(i) = joint_transition_sample(mspec, z0, 0.5, substream(99, "mc", i)).transpose();
    }
    const auto stats = moments(draws);
    const double var = marginal_variance(kSpec, 0.5);
    for (int c = 0; c < 4; ++c) CHECK(rel_error(stats.var[c], var) < 0.05);

    // frozen y block passes through unchanged
    MultiBlockSdeSpec frozen = mspec;
    frozen.blocks[1].spec = {0.01, 0.01, 1.0};
    const VectorXd out = joint_transition_sample(frozen, z0, 0.7, 5);
    CHECK(out.tail(2) == z0.tail(2));

    // distinct speeds: per-block std approx 50 and 1 at t = 1
    MultiBlockSdeSpec two_speed = mspec;
    two_speed.blocks[1].spec = {0.01, 1.0, 1.0};
    MatrixXd d2(n, 4);
    for (int i = 0; i < n; ++i) {
        d2.row(i) = joint_transition_sample(two_speed, z0, 1.0, substream(7, "mc", i)).transpose();
    }
    const auto s2 = moments(d2);
    CHECK(rel_error(std::sqrt(s2.var[0]), 50.0) < 0.05);
    CHECK(rel_error(std::sqrt(s2.var[1]), 50.0) < 0.05);
    CHECK(rel_error(std::sqrt(s2.var[2]), 1.0) < 0.05);
    CHECK(rel_error(std::sqrt(s2.var[3]), 1.0) < 0.05);
}

TEST_CASE("block draws decompose: each block equals its standalone sub-stream draw") {
    MultiBlockSdeSpec mspec;
    mspec.blocks = {{2, kSpec}, {3, VeSdeSpec{0.01, 1.0, 1.0}}};
    VectorXd z0(5);
    z0 << 0.1, 0.2, 0.3, 0.4, 0.5;
    const std::uint64_t seed = 1234;
    const VectorXd joint = joint_transition_sample(mspec, z0, 0.6, seed);

    Rng rng0(substream(seed, "block", 0));
    Rng rng1(substream(seed, "block", 1));
    const VectorXd b0 = transition_sample(mspec.blocks[0].spec, z0.head(2), 0.6, rng0);
    const VectorXd b1 = transition_sample(mspec.blocks[1].spec, z0.tail(3), 0.6, rng1);
    CHECK(joint.head(2) == b0);
    CHECK(joint.tail(3) == b1);

    // Swapping block order while carrying each block's sub-stream index along
    // permutes the output accordingly.
    MultiBlockSdeSpec swapped;
    swapped.blocks = {mspec.blocks[1], mspec.blocks[0]};
    VectorXd z0s(5);
    z0s << 0.3, 0.4, 0.5, 0.1, 0.2;
    const VectorXd joint_swapped = joint_transition_sample(swapped, z0s, 0.6, seed);
    Rng rng0s(substream(seed, "block", 0));
    Rng rng1s(substream(seed, "block", 1));
    CHECK(joint_swapped.head(3) ==
          transition_sample(swapped.blocks[0].spec, z0s.head(3), 0.6, rng0s));
    CHECK(joint_swapped.tail(2) ==
          transition_sample(swapped.blocks[1].spec, z0s.tail(2), 0.6, rng1s));
}

TEST_CASE("transition moments: mean is the clean point, per-block std vanishes at t=0") {
    MultiBlockSdeSpec mspec;
    mspec.blocks = {{2, kSpec}, {1, VeSdeSpec{0.01, 1.0, 1.0}}};
    VectorXd z0(3);
    z0 << 0.3, -0.1, 2.0;
    const TransitionMoments at0 = transition_moments(mspec, z0, 0.0);
    CHECK(at0.mean == z0);
    CHECK(at0.std_per_block[0] == 0.0);
    CHECK(at0.std_per_block[1] == 0.0);

    const TransitionMoments mid = transition_moments(mspec, z0, 0.5);
    CHECK(mid.mean == z0);
    CHECK(mid.std_per_block[0] ==
          doctest::Approx(std::sqrt(marginal_variance(kSpec, 0.5))).epsilon(1e-15));
    CHECK(mid.std_per_block[1] ==
          doctest::Approx(std::sqrt(marginal_variance(mspec.blocks[1].spec, 0.5))).epsilon(1e-15));
}

TEST_CASE("prior_sample moments and determinism") {
    MultiBlockSdeSpec mspec;
    mspec.blocks = {{2, kSpec}, {2, VeSdeSpec{0.01, 1.0, 1.0}}};
    CHECK(prior_sample(mspec, 5) == prior_sample(mspec, 5));

    const int n = 100000;
    MatrixXd draws(n, 4);
    for (int i = 0; i < n; ++i) draws.row(i) = prior_sample(mspec, substream(3, "mc", i)).transpose();
    const auto stats = moments(draws);
    for (int c = 0; c < 4; ++c) {
        CHECK(std::abs(stats.mean[c]) < 4.0 * stats.mean_stderr()[c]);
    }
    CHECK(rel_error(std::sqrt(stats.var[0]), 50.0) < 0.05);
    CHECK(rel_error(std::sqrt(stats.var[2]), 1.0) < 0.05);
}

TEST_CASE("spec validation rejects bad parameters") {
    const VeSdeSpec negative{-1.0, 50.0, 1.0};
    CHECK_THROWS_AS(negative.validate(), std::invalid_argument);
    const VeSdeSpec inverted{0.01, 0.005, 1.0};
    CHECK_THROWS_AS(inverted.validate(), std::invalid_argument);
    MultiBlockSdeSpec empty;
    CHECK_THROWS_AS(empty.validate(), std::invalid_argument);
    MultiBlockSdeSpec mixed;
    mixed.blocks = {{1, VeSdeSpec{0.01, 50.0, 1.0}}, {1, VeSdeSpec{0.01, 50.0, 2.0}}};
    CHECK_THROWS_AS(mixed.validate(), std::invalid_argument);
}
