#pragma once

#include <functional>
#include <vector>

#include "scorelab/common.hpp"
#include "scorelab/oracles.hpp"

namespace scorelab {

// Sample mean and unbiased covariance, symmetrized. A rank-deficient
// covariance is regularized by 1e-9 I (with a warning on stderr).
GaussianSpec fit_gaussian(const MatrixXd& samples);

// Exact Frechet (squared 2-Wasserstein) distance between two Gaussians:
// ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2).
double frechet_gaussian(const GaussianSpec& a, const GaussianSpec& b);

double psnr_from_mse(double mse, double data_range);  // capped at 200 dB

struct ReconstructionMetrics {
    double psnr = 0.0;              // first reconstruction vs truth
    double mse = 0.0;
    double psnr_mean_over_k = 0.0;  // PSNR of the k-averaged MSE
    double consistency_psnr = 0.0;  // A x_hat vs y
    double diversity = 0.0;         // mean per-coordinate std across the k draws
    double mse_stderr = 0.0;        // across observations
    double diversity_stderr = 0.0;
    bool psnr_capped = false;
};

// x_true: one row per observation; reconstructions[i]: k rows for observation i;
// apply: the (noiseless) forward operator for observation i.
ReconstructionMetrics reconstruction_metrics(
    const MatrixXd& x_true, const MatrixXd& y_obs, const std::vector<MatrixXd>& reconstructions,
    const std::function<VectorXd(int, const VectorXd&)>& apply, double data_range);

}  // namespace scorelab
