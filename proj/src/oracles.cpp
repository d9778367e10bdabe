#include "scorelab/oracles.hpp"

#include <cmath>

namespace scorelab {

namespace {
constexpr double kEigenFloor = 1e-12;
}

void GaussianSpec::validate() const {
    check_arg(mean.size() >= 1, "GaussianSpec: empty mean");
    check_arg(covariance.rows() == mean.size() && covariance.cols() == mean.size(),
              "GaussianSpec: covariance shape mismatch");
    const double asym = (covariance - covariance.transpose()).cwiseAbs().maxCoeff();
    check_arg(asym <= 1e-12, "GaussianSpec: covariance not symmetric");
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(covariance);
    check_arg(eig.eigenvalues().minCoeff() >= 0.0, "GaussianSpec: covariance not PSD");
}

void JointGaussianSpec::validate() const {
    joint.validate();
    check_arg(n_x >= 1 && n_y >= 1, "JointGaussianSpec: block dims must be >= 1");
    check_arg(n_x + n_y == joint.dim(), "JointGaussianSpec: block split inconsistent with dimension");
}

void GmmSpec::validate() const {
    check_arg(!components.empty(), "GmmSpec: needs at least one component");
    double total = 0.0;
    for (const auto& c : components) {
        check_arg(c.weight > 0.0, "GmmSpec: weights must be positive");
        c.gaussian.validate();
        check_arg(c.gaussian.dim() == dim(), "GmmSpec: component dimension mismatch");
        total += c.weight;
    }
    check_arg(std::abs(total - 1.0) <= 1e-12, "GmmSpec: weights must sum to 1");
}

MatrixXd psd_inverse(const MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(m);
    check_numeric(eig.info() == Eigen::Success, "psd_inverse: eigendecomposition failed");
    VectorXd inv = eig.eigenvalues();
    for (int i = 0; i < inv.size(); ++i) inv[i] = inv[i] > kEigenFloor ? 1.0 / inv[i] : 0.0;
    return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

MatrixXd psd_sqrt(const MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(m);
    check_numeric(eig.info() == Eigen::Success, "psd_sqrt: eigendecomposition failed");
    VectorXd s = eig.eigenvalues();
    for (int i = 0; i < s.size(); ++i) s[i] = s[i] > 0.0 ? std::sqrt(s[i]) : 0.0;
    return eig.eigenvectors() * s.asDiagonal() * eig.eigenvectors().transpose();
}

VectorXd sample_gaussian(const GaussianSpec& g, Rng& rng) {
    return g.mean + psd_sqrt(g.covariance) * rng.normal_vector(g.dim());
}

VectorXd sample_gmm(const GmmSpec& m, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (const auto& c : m.components) {
        acc += c.weight;
        if (u < acc) return sample_gaussian(c.gaussian, rng);
    }
    return sample_gaussian(m.components.back().gaussian, rng);
}

namespace {

double gaussian_logpdf_shifted(const VectorXd& mean, const MatrixXd& cov, const VectorXd& point) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
    check_numeric(eig.info() == Eigen::Success, "gaussian logpdf: eigendecomposition failed");
    const VectorXd w = eig.eigenvectors().transpose() * (point - mean);
    double logdet = 0.0;
    double quad = 0.0;
    for (int i = 0; i < w.size(); ++i) {
        const double lambda = eig.eigenvalues()[i];
        check_numeric(lambda > kEigenFloor, "gaussian logpdf: singular covariance");
        logdet += std::log(lambda);
        quad += w[i] * w[i] / lambda;
    }
    const double d = static_cast<double>(point.size());
    return -0.5 * (d * std::log(2.0 * M_PI) + logdet + quad);
}

}  // namespace

VectorXd gaussian_diffused_score(const GaussianSpec& g, const VeSdeSpec& spec, double t,
                                 const VectorXd& point) {
    check_arg(point.size() == g.mean.size(), "gaussian_diffused_score: dimension mismatch");
    const double v = marginal_variance(spec, t);
    MatrixXd cov = g.covariance;
    cov.diagonal().array() += v;
    return -(psd_inverse(cov) * (point - g.mean));
}

double gaussian_diffused_logpdf(const GaussianSpec& g, const VeSdeSpec& spec, double t,
                                const VectorXd& point) {
    const double v = marginal_variance(spec, t);
    MatrixXd cov = g.covariance;
    cov.diagonal().array() += v;
    return gaussian_logpdf_shifted(g.mean, cov, point);
}

VectorXd gmm_diffused_score(const GmmSpec& m, const VeSdeSpec& spec, double t, const VectorXd& point) {
    const int k = static_cast<int>(m.components.size());
    VectorXd logp(k);
    for (int i = 0; i < k; ++i) {
        logp[i] = std::log(m.components[i].weight) +
                  gaussian_diffused_logpdf(m.components[i].gaussian, spec, t, point);
    }
    const double lmax = logp.maxCoeff();
    VectorXd resp = (logp.array() - lmax).exp();
    resp /= resp.sum();
    VectorXd score = VectorXd::Zero(point.size());
    for (int i = 0; i < k; ++i) {
        score += resp[i] * gaussian_diffused_score(m.components[i].gaussian, spec, t, point);
    }
    return score;
}

double gmm_diffused_logpdf(const GmmSpec& m, const VeSdeSpec& spec, double t, const VectorXd& point) {
    const int k = static_cast<int>(m.components.size());
    VectorXd logp(k);
    for (int i = 0; i < k; ++i) {
        logp[i] = std::log(m.components[i].weight) +
                  gaussian_diffused_logpdf(m.components[i].gaussian, spec, t, point);
    }
    const double lmax = logp.maxCoeff();
    return lmax + std::log((logp.array() - lmax).exp().sum());
}

GaussianSpec joint_conditional(const JointGaussianSpec& j, const VectorXd& y) {
    check_arg(y.size() == j.n_y, "joint_conditional: condition dimension mismatch");
    const MatrixXd gain = j.sigma_xy() * psd_inverse(j.sigma_yy());
    GaussianSpec out;
    out.mean = j.mu_x() + gain * (y - j.mu_y());
    MatrixXd cov = j.sigma_xx() - gain * j.sigma_yx();
    out.covariance = 0.5 * (cov + cov.transpose());
    return out;
}

VectorXd conditional_score_given_clean_y(const JointGaussianSpec& j, const MultiBlockSdeSpec& mspec,
                                         double t, const VectorXd& x_t, const VectorXd& y) {
    check_arg(mspec.blocks.size() == 2, "conditional score: expected a two-block SDE spec");
    const GaussianSpec cond = joint_conditional(j, y);
    return gaussian_diffused_score(cond, mspec.blocks[0].spec, t, x_t);
}

VectorXd conditional_score_given_diffused_y(const JointGaussianSpec& j,
                                            const MultiBlockSdeSpec& mspec, double t,
                                            const VectorXd& x_t, const VectorXd& y_t) {
    check_arg(mspec.blocks.size() == 2, "conditional score: expected a two-block SDE spec");
    const double v_y = marginal_variance(mspec.blocks[1].spec, t);
    if (v_y == 0.0) return conditional_score_given_clean_y(j, mspec, t, x_t, y_t);
    const double v_x = marginal_variance(mspec.blocks[0].spec, t);
    MatrixXd cov = j.joint.covariance;
    cov.diagonal().head(j.n_x).array() += v_x;
    cov.diagonal().tail(j.n_y).array() += v_y;
    VectorXd z(j.n_x + j.n_y);
    z << x_t, y_t;
    const VectorXd full_score = -(psd_inverse(cov) * (z - j.joint.mean));
    return full_score.head(j.n_x);
}

std::vector<Theorem3Point> theorem3_error_curve(const JointGaussianSpec& j,
                                                const MultiBlockSdeSpec& mspec_template, double t,
                                                const VectorXd& x_t, const VectorXd& y,
                                                const std::vector<double>& sigma_y_max_grid,
                                                int n_mc, std::uint64_t seed) {
    check_arg(!sigma_y_max_grid.empty(), "theorem3_error_curve: empty grid");
    for (std::size_t i = 1; i < sigma_y_max_grid.size(); ++i) {
        check_arg(sigma_y_max_grid[i] > sigma_y_max_grid[i - 1],
                  "theorem3_error_curve: grid must be ascending");
    }
    check_arg(n_mc >= 10000, "theorem3_error_curve: n_mc must be >= 10^4");
    check_arg(mspec_template.blocks.size() == 2, "theorem3_error_curve: two-block spec required");

    const VectorXd clean_score = conditional_score_given_clean_y(j, mspec_template, t, x_t, y);
    std::vector<Theorem3Point> curve;
    curve.reserve(sigma_y_max_grid.size());

    for (const double sigma_y_max : sigma_y_max_grid) {
        MultiBlockSdeSpec mspec = mspec_template;
        mspec.blocks[1].spec.sigma_max = sigma_y_max;
        mspec.validate();
        const double v_y = marginal_variance(mspec.blocks[1].spec, t);

        Theorem3Point pt;
        pt.sigma_y_max = sigma_y_max;
        if (v_y == 0.0) {
            // Frozen condition: y_t == y, and the diffused-y score delegates to
            // the clean-y score, so the gap is identically zero.
            const VectorXd diff =
                conditional_score_given_diffused_y(j, mspec, t, x_t, y) - clean_score;
            pt.mse = diff.squaredNorm();
            pt.mc_stderr = 0.0;
            curve.push_back(pt);
            continue;
        }

        // Hoist the diffused-joint solve; only the evaluation point varies.
        const double v_x = marginal_variance(mspec.blocks[0].spec, t);
        MatrixXd cov = j.joint.covariance;
        cov.diagonal().head(j.n_x).array() += v_x;
        cov.diagonal().tail(j.n_y).array() += v_y;
        const MatrixXd precision_x_rows = psd_inverse(cov).topRows(j.n_x);
        const double sd_y = std::sqrt(v_y);

        // Same substream for every grid entry: common random numbers.
        Rng rng(substream(seed, "theorem3"));
        double sum = 0.0;
        double sum_sq = 0.0;
        VectorXd z(j.n_x + j.n_y);
        z.head(j.n_x) = x_t;
        for (int i = 0; i < n_mc; ++i) {
            z.tail(j.n_y) = y + sd_y * rng.normal_vector(j.n_y);
            const VectorXd diffused_score = -(precision_x_rows * (z - j.joint.mean));
            const double err = (diffused_score - clean_score).squaredNorm();
            sum += err;
            sum_sq += err * err;
        }
        const double n = static_cast<double>(n_mc);
        pt.mse = sum / n;
        const double var = (sum_sq - n * pt.mse * pt.mse) / (n - 1.0);
        pt.mc_stderr = std::sqrt(std::max(var, 0.0) / n);
        curve.push_back(pt);
    }
    return curve;
}

AffineFitDataset make_affine_fit_dataset(const JointGaussianSpec& j, const MultiBlockSdeSpec& mspec,
                                         double t, int n, std::uint64_t seed) {
    check_arg(n >= 1, "make_affine_fit_dataset: n must be >= 1");
    check_arg(mspec.blocks.size() == 2, "make_affine_fit_dataset: two-block spec required");
    const int n_x = j.n_x;
    const int n_y = j.n_y;
    const double v_x = marginal_variance(mspec.blocks[0].spec, t);
    check_domain(v_x > 0.0, "make_affine_fit_dataset: x block must be diffused at t");
    const double sd_x = std::sqrt(v_x);

    // Hoisted conditional-score pieces: score = -P (x_t - mu_x - gain (y - mu_y)).
    const MatrixXd gain = j.sigma_xy() * psd_inverse(j.sigma_yy());
    MatrixXd cond_cov = j.sigma_xx() - gain * j.sigma_yx();
    cond_cov = 0.5 * (cond_cov + cond_cov.transpose());
    cond_cov.diagonal().array() += v_x;
    const MatrixXd precision = psd_inverse(cond_cov);

    const MatrixXd joint_sqrt = psd_sqrt(j.joint.covariance);
    AffineFitDataset ds;
    ds.inputs.resize(n, n_x + n_y);
    ds.cde_targets.resize(n, n_x);
    ds.true_cond_targets.resize(n, n_x);

    Rng rng(substream(seed, "affine_fit"));
    for (int i = 0; i < n; ++i) {
        const VectorXd z0 = j.joint.mean + joint_sqrt * rng.normal_vector(n_x + n_y);
        const VectorXd x0 = z0.head(n_x);
        const VectorXd y = z0.tail(n_y);
        const VectorXd noise = rng.normal_vector(n_x);
        const VectorXd x_t = x0 + sd_x * noise;
        ds.inputs.row(i).head(n_x) = x_t;
        ds.inputs.row(i).tail(n_y) = y;
        ds.cde_targets.row(i) = -noise / sd_x;
        ds.true_cond_targets.row(i) = -(precision * (x_t - j.mu_x() - gain * (y - j.mu_y())));
    }
    return ds;
}

AffineFit fit_affine_score(const AffineFitDataset& ds, AffineTarget target) {
    const MatrixXd& targets =
        target == AffineTarget::CdeTarget ? ds.cde_targets : ds.true_cond_targets;
    const int n = static_cast<int>(ds.inputs.rows());
    const int d = static_cast<int>(ds.inputs.cols());
    check_arg(targets.rows() == n, "fit_affine_score: target row count mismatch");

    MatrixXd design(n, d + 1);
    design.leftCols(d) = ds.inputs;
    design.col(d).setOnes();
    const MatrixXd gram = design.transpose() * design;
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(gram);
    check_numeric(eig.eigenvalues().minCoeff() > 1e-10 * eig.eigenvalues().maxCoeff(),
                  "fit_affine_score: singular normal system");
    const MatrixXd solution = eig.eigenvectors() *
                              eig.eigenvalues().cwiseInverse().asDiagonal() *
                              eig.eigenvectors().transpose() * (design.transpose() * targets);

    AffineFit fit;
    fit.coeff = solution.topRows(d).transpose();
    fit.intercept = solution.row(d).transpose();
    return fit;
}

}  // namespace scorelab
