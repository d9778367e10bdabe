#include "scorelab/samplers.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace scorelab {

void SamplerConfig::validate(double horizon_T) const {
    check_arg(n_steps >= 1, "SamplerConfig: n_steps must be >= 1");
    check_arg(corrector_steps_per_predictor >= 0, "SamplerConfig: corrector steps must be >= 0");
    check_arg(corrector_snr > 0.0, "SamplerConfig: corrector_snr must be positive");
    check_arg(t_end > 0.0 && t_end < horizon_T, "SamplerConfig: t_end must lie in (0, T)");
}

ScoreSource network_score_source(const MlpSpec& spec, const VectorXd& params,
                                 const ObjectiveConfig& cfg, const MultiBlockSdeSpec& mspec) {
    check_arg(params.size() == param_count(spec), "network_score_source: params length mismatch");
    check_arg(spec.output_dim == diffused_dim(cfg, mspec),
              "network_score_source: output span does not match the objective");
    ScoreSource src;
    src.input_dim = spec.input_dim;
    src.score_dim = spec.output_dim;
    src.eval = [spec, params, cfg, mspec](const MatrixXd& inputs, double t) -> MatrixXd {
        MatrixXd out = forward_batch(spec, params, inputs, t);
        const VectorXd scales = score_scales(cfg, mspec, t);
        for (int i = 0; i < out.cols(); ++i) out.col(i) /= scales[i];
        return out;
    };
    return src;
}

ScoreSource oracle_unconditional_source(const GaussianSpec& g, const VeSdeSpec& spec) {
    g.validate();
    ScoreSource src;
    src.input_dim = g.dim();
    src.score_dim = g.dim();
    src.eval = [g, spec](const MatrixXd& inputs, double t) -> MatrixXd {
        MatrixXd cov = g.covariance;
        cov.diagonal().array() += marginal_variance(spec, t);
        const MatrixXd precision = psd_inverse(cov);
        return -((inputs.rowwise() - g.mean.transpose()) * precision);
    };
    return src;
}

ScoreSource oracle_gmm_source(const GmmSpec& m, const VeSdeSpec& spec) {
    m.validate();
    ScoreSource src;
    src.input_dim = m.dim();
    src.score_dim = m.dim();
    src.eval = [m, spec](const MatrixXd& inputs, double t) {
        MatrixXd scores(inputs.rows(), inputs.cols());
        for (int r = 0; r < inputs.rows(); ++r) {
            scores.row(r) = gmm_diffused_score(m, spec, t, inputs.row(r).transpose()).transpose();
        }
        return scores;
    };
    return src;
}

namespace {

// Shared clean-y evaluation so the diffused source's frozen-y branch is
// bit-identical to the clean source.
MatrixXd eval_clean_conditional(const JointGaussianSpec& j, const MatrixXd& gain,
                                const MatrixXd& cond_cov, const VeSdeSpec& x_spec,
                                const MatrixXd& inputs, double t) {
    MatrixXd cov = cond_cov;
    cov.diagonal().array() += marginal_variance(x_spec, t);
    const MatrixXd precision = psd_inverse(cov);
    const int n_x = j.n_x;
    const int n_y = j.n_y;
    const MatrixXd x_centered = inputs.leftCols(n_x).rowwise() - j.mu_x().transpose();
    const MatrixXd y_centered = inputs.rightCols(n_y).rowwise() - j.mu_y().transpose();
    return -((x_centered - y_centered * gain.transpose()) * precision);
}

}  // namespace

ScoreSource oracle_conditional_clean_source(const JointGaussianSpec& j,
                                            const MultiBlockSdeSpec& mspec) {
    j.validate();
    check_arg(mspec.blocks.size() == 2, "oracle source: two-block spec required");
    check_arg(mspec.blocks[0].dim == j.n_x && mspec.blocks[1].dim == j.n_y,
              "oracle source: block dims must match the joint spec");
    const MatrixXd gain = j.sigma_xy() * psd_inverse(j.sigma_yy());
    MatrixXd cond_cov = j.sigma_xx() - gain * j.sigma_yx();
    cond_cov = 0.5 * (cond_cov + cond_cov.transpose());
    const VeSdeSpec x_spec = mspec.blocks[0].spec;

    ScoreSource src;
    src.input_dim = j.n_x + j.n_y;
    src.score_dim = j.n_x;
    src.eval = [j, gain, cond_cov, x_spec](const MatrixXd& inputs, double t) {
        return eval_clean_conditional(j, gain, cond_cov, x_spec, inputs, t);
    };
    return src;
}

ScoreSource oracle_conditional_diffused_source(const JointGaussianSpec& j,
                                               const MultiBlockSdeSpec& mspec) {
    j.validate();
    check_arg(mspec.blocks.size() == 2, "oracle source: two-block spec required");
    check_arg(mspec.blocks[0].dim == j.n_x && mspec.blocks[1].dim == j.n_y,
              "oracle source: block dims must match the joint spec");
    const MatrixXd gain = j.sigma_xy() * psd_inverse(j.sigma_yy());
    MatrixXd cond_cov = j.sigma_xx() - gain * j.sigma_yx();
    cond_cov = 0.5 * (cond_cov + cond_cov.transpose());
    const VeSdeSpec x_spec = mspec.blocks[0].spec;
    const VeSdeSpec y_spec = mspec.blocks[1].spec;

    ScoreSource src;
    src.input_dim = j.n_x + j.n_y;
    src.score_dim = j.n_x;
    src.eval = [j, gain, cond_cov, x_spec, y_spec](const MatrixXd& inputs, double t) {
        const double v_y = marginal_variance(y_spec, t);
        if (v_y == 0.0) return eval_clean_conditional(j, gain, cond_cov, x_spec, inputs, t);
        MatrixXd cov = j.joint.covariance;
        cov.diagonal().head(j.n_x).array() += marginal_variance(x_spec, t);
        cov.diagonal().tail(j.n_y).array() += v_y;
        const MatrixXd precision_x_cols = psd_inverse(cov).topRows(j.n_x).transpose();
        return MatrixXd(-((inputs.rowwise() - j.joint.mean.transpose()) * precision_x_cols));
    };
    return src;
}

VectorXd predictor_step(const VectorXd& score, const VectorXd& x, const VeSdeSpec& spec, double t,
                        double dt, const VectorXd& z) {
    check_domain(dt > 0.0, "predictor_step: dt must be positive");
    check_arg(score.size() == x.size() && z.size() == x.size(), "predictor_step: shape mismatch");
    const double g = instantaneous_diffusion(spec, t);
    return x + g * g * dt * score + g * std::sqrt(dt) * z;
}

VectorXd predictor_step(const VectorXd& score, const VectorXd& x, const VeSdeSpec& spec, double t,
                        double dt, std::uint64_t seed) {
    Rng rng(seed);
    return predictor_step(score, x, spec, t, dt, rng.normal_vector(static_cast<int>(x.size())));
}

VectorXd corrector_step(const VectorXd& score, const VectorXd& x, double snr, const VectorXd& z) {
    check_arg(score.size() == x.size() && z.size() == x.size(), "corrector_step: shape mismatch");
    check_numeric(score.allFinite(), "corrector_step: non-finite score");
    const double score_norm = score.norm();
    if (score_norm == 0.0) return x;
    const double ratio = snr * z.norm() / score_norm;
    const double delta = 2.0 * ratio * ratio;
    return x + delta * score + std::sqrt(2.0 * delta) * z;
}

VectorXd corrector_step(const VectorXd& score, const VectorXd& x, double snr, std::uint64_t seed) {
    Rng rng(seed);
    return corrector_step(score, x, snr, rng.normal_vector(static_cast<int>(x.size())));
}

namespace {

void fill_normal_rows(MatrixXd& z, std::vector<Rng>& rngs) {
    for (int c = 0; c < z.rows(); ++c) {
        for (int i = 0; i < z.cols(); ++i) z(c, i) = rngs[c].normal();
    }
}

double mean_row_norm(const MatrixXd& m) {
    double total = 0.0;
    for (int r = 0; r < m.rows(); ++r) total += m.row(r).norm();
    return total / static_cast<double>(m.rows());
}

// Langevin sweep over all chains. The step size uses batch-mean norms (the
// predictor-corrector convention this rule is adopted from); with one chain it
// reduces to corrector_step.
template <typename StateBlock>
void corrector_sweep(StateBlock&& x, const MatrixXd& scores, double snr, MatrixXd& z,
                     std::vector<Rng>& rngs) {
    fill_normal_rows(z, rngs);
    const double score_norm = mean_row_norm(scores);
    if (score_norm == 0.0) return;
    const double ratio = snr * mean_row_norm(z) / score_norm;
    const double delta = 2.0 * ratio * ratio;
    x += delta * scores + std::sqrt(2.0 * delta) * z;
}

void check_chains_finite(const MatrixXd& x, const std::string& what) {
    if (x.allFinite()) return;
    std::string bad;
    for (int c = 0; c < x.rows(); ++c) {
        if (!x.row(c).allFinite()) {
            if (!bad.empty()) bad += ", ";
            bad += std::to_string(c);
            if (bad.size() > 64) break;
        }
    }
    check_numeric(false, what + ": non-finite state in chains " + bad);
}

}  // namespace

MatrixXd langevin_ensemble(const ScoreSource& source, const MatrixXd& x0, double t, double snr,
                           int n_sweeps, std::uint64_t seed) {
    check_arg(x0.cols() == source.input_dim, "langevin_ensemble: dimension mismatch");
    check_arg(n_sweeps >= 1, "langevin_ensemble: n_sweeps must be >= 1");
    MatrixXd x = x0;
    std::vector<Rng> rngs;
    rngs.reserve(x.rows());
    for (int c = 0; c < x.rows(); ++c) rngs.emplace_back(substream(seed, "chain", c));
    MatrixXd z(x.rows(), x.cols());
    for (int i = 0; i < n_sweeps; ++i) {
        const MatrixXd scores = source.eval(x, t);
        corrector_sweep(x, scores, snr, z, rngs);
    }
    check_chains_finite(x, "langevin_ensemble");
    return x;
}

MatrixXd sample_unconditional(const ScoreSource& source, const MultiBlockSdeSpec& mspec,
                              const SamplerConfig& cfg, int n_samples, std::uint64_t seed) {
    mspec.validate();
    cfg.validate(mspec.horizon_T());
    check_arg(n_samples >= 1, "sample_unconditional: n_samples must be >= 1");
    const int dim = mspec.total_dim();
    check_arg(source.input_dim == dim && source.score_dim == dim,
              "sample_unconditional: source must span the full space");

    MatrixXd x(n_samples, dim);
    std::vector<Rng> pred_rng;
    std::vector<Rng> corr_rng;
    pred_rng.reserve(n_samples);
    corr_rng.reserve(n_samples);
    for (int c = 0; c < n_samples; ++c) {
        const std::uint64_t chain_seed = substream(seed, "chain", c);
        x.row(c) = prior_sample(mspec, chain_seed).transpose();
        pred_rng.emplace_back(substream(chain_seed, "pred"));
        corr_rng.emplace_back(substream(chain_seed, "corr"));
    }

    const double T = mspec.horizon_T();
    const double dt = (T - cfg.t_end) / static_cast<double>(cfg.n_steps);
    MatrixXd z(n_samples, dim);
    for (int i = 0; i < cfg.n_steps; ++i) {
        const double t = T - static_cast<double>(i) * dt;
        for (int k = 0; k < cfg.corrector_steps_per_predictor; ++k) {
            const MatrixXd scores = source.eval(x, t);
            corrector_sweep(x, scores, cfg.corrector_snr, z, corr_rng);
        }
        const MatrixXd scores = source.eval(x, t);
        fill_normal_rows(z, pred_rng);
        int off = 0;
        for (const auto& blk : mspec.blocks) {
            const double g = instantaneous_diffusion(blk.spec, t);
            x.middleCols(off, blk.dim) += g * g * dt * scores.middleCols(off, blk.dim) +
                                          g * std::sqrt(dt) * z.middleCols(off, blk.dim);
            off += blk.dim;
        }
    }
    if (cfg.denoise_final) {
        const MatrixXd scores = source.eval(x, cfg.t_end);
        int off = 0;
        for (const auto& blk : mspec.blocks) {
            x.middleCols(off, blk.dim) +=
                marginal_variance(blk.spec, cfg.t_end) * scores.middleCols(off, blk.dim);
            off += blk.dim;
        }
    }
    check_chains_finite(x, "sample_unconditional");
    return x;
}

MatrixXd sample_conditional(const ScoreSource& source, const MultiBlockSdeSpec& mspec,
                            const VectorXd& y, const SamplerConfig& cfg, EstimatorKind kind,
                            int n_samples, std::uint64_t seed) {
    mspec.validate();
    cfg.validate(mspec.horizon_T());
    check_arg(kind != EstimatorKind::Dsm, "sample_conditional: Dsm is unconditional");
    check_arg(mspec.blocks.size() == 2, "sample_conditional: two-block spec required");
    check_arg(n_samples >= 1, "sample_conditional: n_samples must be >= 1");
    const int n_x = mspec.blocks[0].dim;
    const int n_y = mspec.blocks[1].dim;
    check_arg(y.size() == n_y, "sample_conditional: condition dimension mismatch");
    check_arg(source.input_dim == n_x + n_y, "sample_conditional: source input mismatch");
    check_arg(source.score_dim >= n_x, "sample_conditional: source must cover the x block");
    const VeSdeSpec& x_spec = mspec.blocks[0].spec;
    const VeSdeSpec& y_spec = mspec.blocks[1].spec;
    const bool diffuse_y = kind != EstimatorKind::Cde;

    MatrixXd state(n_samples, n_x + n_y);
    state.rightCols(n_y) = y.transpose().replicate(n_samples, 1);
    std::vector<Rng> pred_rng;
    std::vector<Rng> corr_rng;
    std::vector<Rng> ycond_rng;
    pred_rng.reserve(n_samples);
    corr_rng.reserve(n_samples);
    ycond_rng.reserve(n_samples);
    for (int c = 0; c < n_samples; ++c) {
        const std::uint64_t chain_seed = substream(seed, "chain", c);
        Rng prior(substream(chain_seed, "prior", 0));
        state.row(c).head(n_x) = x_spec.sigma_max * prior.normal_vector(n_x).transpose();
        pred_rng.emplace_back(substream(chain_seed, "pred"));
        corr_rng.emplace_back(substream(chain_seed, "corr"));
        ycond_rng.emplace_back(substream(chain_seed, "ycond"));
    }

    auto resample_y = [&](double t) {
        if (!diffuse_y) return;
        const double v_y = marginal_variance(y_spec, t);
        if (v_y == 0.0) {
            // Frozen condition: y_t == y, nothing drawn.
            return;
        }
        const double sd = std::sqrt(v_y);
        for (int c = 0; c < n_samples; ++c) {
            for (int i = 0; i < n_y; ++i) {
                state(c, n_x + i) = y[i] + sd * ycond_rng[c].normal();
            }
        }
    };

    const double T = mspec.horizon_T();
    const double dt = (T - cfg.t_end) / static_cast<double>(cfg.n_steps);
    auto x = state.leftCols(n_x);
    MatrixXd z(n_samples, n_x);
    for (int i = 0; i < cfg.n_steps; ++i) {
        const double t = T - static_cast<double>(i) * dt;
        bool y_drawn = false;
        for (int k = 0; k < cfg.corrector_steps_per_predictor; ++k) {
            if (cfg.resample_y_in_corrector || !y_drawn) {
                resample_y(t);
                y_drawn = true;
            }
            const MatrixXd scores = source.eval(state, t).leftCols(n_x);
            corrector_sweep(x, scores, cfg.corrector_snr, z, corr_rng);
        }
        if (cfg.resample_y_in_corrector || !y_drawn) resample_y(t);
        const MatrixXd scores = source.eval(state, t).leftCols(n_x);
        fill_normal_rows(z, pred_rng);
        const double g = instantaneous_diffusion(x_spec, t);
        x += g * g * dt * scores + g * std::sqrt(dt) * z;
    }
    if (cfg.denoise_final) {
        resample_y(cfg.t_end);
        const MatrixXd scores = source.eval(state, cfg.t_end).leftCols(n_x);
        x += marginal_variance(x_spec, cfg.t_end) * scores;
    }
    MatrixXd out = state.leftCols(n_x);
    check_chains_finite(out, "sample_conditional");
    return out;
}

}  // namespace scorelab
