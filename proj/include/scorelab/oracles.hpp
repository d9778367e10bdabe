#pragma once

#include <cstdint>
#include <vector>

#include "scorelab/common.hpp"
#include "scorelab/rng.hpp"
#include "scorelab/sde.hpp"

namespace scorelab {

struct GaussianSpec {
    VectorXd mean;
    MatrixXd covariance;

    void validate() const;
    int dim() const { return static_cast<int>(mean.size()); }
};

// Gaussian over the concatenated (x, y) with a recorded block split.
struct JointGaussianSpec {
    GaussianSpec joint;
    int n_x = 0;
    int n_y = 0;

    void validate() const;
    VectorXd mu_x() const { return joint.mean.head(n_x); }
    VectorXd mu_y() const { return joint.mean.tail(n_y); }
    MatrixXd sigma_xx() const { return joint.covariance.topLeftCorner(n_x, n_x); }
    MatrixXd sigma_xy() const { return joint.covariance.topRightCorner(n_x, n_y); }
    MatrixXd sigma_yx() const { return joint.covariance.bottomLeftCorner(n_y, n_x); }
    MatrixXd sigma_yy() const { return joint.covariance.bottomRightCorner(n_y, n_y); }
    GaussianSpec x_marginal() const { return {mu_x(), sigma_xx()}; }
};

struct GmmComponent {
    double weight = 1.0;
    GaussianSpec gaussian;
};

struct GmmSpec {
    std::vector<GmmComponent> components;

    void validate() const;
    int dim() const { return components.front().gaussian.dim(); }
};

// Symmetric-eigendecomposition linear algebra with eigenvalue floor 1e-12.
// Eigenvalues below the floor are treated as exact zeros (pseudo-inverse),
// which makes conditioning on degenerate observations (e.g. masked
// coordinates) well defined.
MatrixXd psd_inverse(const MatrixXd& m);
MatrixXd psd_sqrt(const MatrixXd& m);

// Symmetric square root of the covariance; sample = mean + sqrt * z.
VectorXd sample_gaussian(const GaussianSpec& g, Rng& rng);
VectorXd sample_gmm(const GmmSpec& m, Rng& rng);

// Diffusing N(mu, Sigma) under a VE schedule gives N(mu, Sigma + v(t) I).
VectorXd gaussian_diffused_score(const GaussianSpec& g, const VeSdeSpec& spec, double t,
                                 const VectorXd& point);
double gaussian_diffused_logpdf(const GaussianSpec& g, const VeSdeSpec& spec, double t,
                                const VectorXd& point);

// A diffused mixture stays a mixture; score via responsibility-weighted
// component scores, responsibilities computed with log-sum-exp.
VectorXd gmm_diffused_score(const GmmSpec& m, const VeSdeSpec& spec, double t, const VectorXd& point);
double gmm_diffused_logpdf(const GmmSpec& m, const VeSdeSpec& spec, double t, const VectorXd& point);

// Standard Gaussian conditioning: p(x | y).
GaussianSpec joint_conditional(const JointGaussianSpec& j, const VectorXd& y);

// grad_{x_t} ln p(x_t | y): condition on clean y first, then diffuse the x block.
VectorXd conditional_score_given_clean_y(const JointGaussianSpec& j, const MultiBlockSdeSpec& mspec,
                                         double t, const VectorXd& x_t, const VectorXd& y);

// grad_{x_t} ln p(x_t | y_t): x block of the jointly diffused score. With an
// undiffused y block this delegates to the clean-y route, so the frozen
// reduction is exact to the last bit.
VectorXd conditional_score_given_diffused_y(const JointGaussianSpec& j,
                                            const MultiBlockSdeSpec& mspec, double t,
                                            const VectorXd& x_t, const VectorXd& y_t);

struct Theorem3Point {
    double sigma_y_max = 0.0;
    double mse = 0.0;
    double mc_stderr = 0.0;
};

// Monte-Carlo estimate of E_{y_t ~ p(y_t|y)} ||grad ln p(x_t|y_t) - grad ln p(x_t|y)||^2
// over a grid of y-block sigma_max values. Common random numbers across grid
// entries keep adjacent estimates comparable.
std::vector<Theorem3Point> theorem3_error_curve(const JointGaussianSpec& j,
                                                const MultiBlockSdeSpec& mspec_template, double t,
                                                const VectorXd& x_t, const VectorXd& y,
                                                const std::vector<double>& sigma_y_max_grid,
                                                int n_mc, std::uint64_t seed);

// Dataset for the affine-fit equivalence check: rows of (x_t, y) with both the
// transition-score target and the true conditional-score target.
struct AffineFitDataset {
    MatrixXd inputs;
    MatrixXd cde_targets;
    MatrixXd true_cond_targets;
};

AffineFitDataset make_affine_fit_dataset(const JointGaussianSpec& j, const MultiBlockSdeSpec& mspec,
                                         double t, int n, std::uint64_t seed);

enum class AffineTarget { CdeTarget, TrueConditionalTarget };

// Exact least-squares minimizer of s(u) = coeff * u + intercept against the
// selected target, via the normal equations.
struct AffineFit {
    MatrixXd coeff;
    VectorXd intercept;
};

AffineFit fit_affine_score(const AffineFitDataset& ds, AffineTarget target);

}  // namespace scorelab
