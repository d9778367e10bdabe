#include "scorelab/metrics.hpp"

#include <cmath>
#include <cstdio>

namespace scorelab {

GaussianSpec fit_gaussian(const MatrixXd& samples) {
    const int n = static_cast<int>(samples.rows());
    const int d = static_cast<int>(samples.cols());
    check_arg(n > d, "fit_gaussian: need more samples than dimensions");
    GaussianSpec g;
    g.mean = samples.colwise().mean();
    const MatrixXd centered = samples.rowwise() - g.mean.transpose();
    MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
    g.covariance = 0.5 * (cov + cov.transpose());
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(g.covariance);
    if (eig.eigenvalues().minCoeff() < 1e-12) {
        std::fprintf(stderr, "fit_gaussian: rank-deficient covariance, regularizing by 1e-9 I\n");
        g.covariance.diagonal().array() += 1e-9;
    }
    return g;
}

double frechet_gaussian(const GaussianSpec& a, const GaussianSpec& b) {
    check_arg(a.dim() == b.dim(), "frechet_gaussian: dimension mismatch");
    const MatrixXd root_a = psd_sqrt(a.covariance);
    MatrixXd inner = root_a * b.covariance * root_a;
    inner = 0.5 * (inner + inner.transpose());
    const double cross = psd_sqrt(inner).trace();
    const double dist = (a.mean - b.mean).squaredNorm() + a.covariance.trace() +
                        b.covariance.trace() - 2.0 * cross;
    return std::max(dist, 0.0);
}

double psnr_from_mse(double mse, double data_range) {
    check_arg(data_range > 0.0, "psnr: data_range must be positive");
    if (mse <= 0.0) return 200.0;
    return std::min(10.0 * std::log10(data_range * data_range / mse), 200.0);
}

ReconstructionMetrics reconstruction_metrics(
    const MatrixXd& x_true, const MatrixXd& y_obs, const std::vector<MatrixXd>& reconstructions,
    const std::function<VectorXd(int, const VectorXd&)>& apply, double data_range) {
    const int n_obs = static_cast<int>(x_true.rows());
    const int n_x = static_cast<int>(x_true.cols());
    check_arg(n_obs >= 1, "reconstruction_metrics: no observations");
    check_arg(static_cast<int>(reconstructions.size()) == n_obs,
              "reconstruction_metrics: one reconstruction set per observation");
    check_arg(y_obs.rows() == n_obs, "reconstruction_metrics: y row count mismatch");
    const int k = static_cast<int>(reconstructions.front().rows());
    check_arg(k >= 2, "reconstruction_metrics: need k >= 2 reconstructions for diversity");

    ReconstructionMetrics m;
    double psnr_sum = 0.0;
    double psnr_k_sum = 0.0;
    double cons_sum = 0.0;
    double mse_sum = 0.0;
    double mse_sq_sum = 0.0;
    double div_sum = 0.0;
    double div_sq_sum = 0.0;
    for (int i = 0; i < n_obs; ++i) {
        const MatrixXd& recon = reconstructions[i];
        check_arg(recon.rows() == k && recon.cols() == n_x,
                  "reconstruction_metrics: reconstruction shape mismatch");
        const double mse_first =
            (recon.row(0) - x_true.row(i)).squaredNorm() / static_cast<double>(n_x);
        if (mse_first <= 0.0) m.psnr_capped = true;
        psnr_sum += psnr_from_mse(mse_first, data_range);
        mse_sum += mse_first;
        mse_sq_sum += mse_first * mse_first;

        const double mse_k =
            (recon.rowwise() - x_true.row(i)).squaredNorm() / static_cast<double>(n_x * k);
        psnr_k_sum += psnr_from_mse(mse_k, data_range);

        const VectorXd y_hat = apply(i, recon.row(0).transpose());
        const double mse_c =
            (y_hat.transpose() - y_obs.row(i)).squaredNorm() / static_cast<double>(y_obs.cols());
        cons_sum += psnr_from_mse(mse_c, data_range);

        // mean over coordinates of the across-k sample standard deviation
        double coord_std_sum = 0.0;
        for (int c = 0; c < n_x; ++c) {
            const double mean = recon.col(c).mean();
            const double var =
                (recon.col(c).array() - mean).square().sum() / static_cast<double>(k - 1);
            coord_std_sum += std::sqrt(std::max(var, 0.0));
        }
        const double diversity = coord_std_sum / static_cast<double>(n_x);
        div_sum += diversity;
        div_sq_sum += diversity * diversity;
    }

    const double n = static_cast<double>(n_obs);
    m.psnr = psnr_sum / n;
    m.psnr_mean_over_k = psnr_k_sum / n;
    m.consistency_psnr = cons_sum / n;
    m.mse = mse_sum / n;
    m.diversity = div_sum / n;
    if (n_obs > 1) {
        const double mse_var = (mse_sq_sum - n * m.mse * m.mse) / (n - 1.0);
        const double div_var = (div_sq_sum - n * m.diversity * m.diversity) / (n - 1.0);
        m.mse_stderr = std::sqrt(std::max(mse_var, 0.0) / n);
        m.diversity_stderr = std::sqrt(std::max(div_var, 0.0) / n);
    }
    return m;
}

}  // namespace scorelab
