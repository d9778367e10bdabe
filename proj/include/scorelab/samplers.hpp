#pragma once

#include <cstdint>
#include <functional>

#include "scorelab/common.hpp"
#include "scorelab/network.hpp"
#include "scorelab/objectives.hpp"
#include "scorelab/oracles.hpp"
#include "scorelab/sde.hpp"

namespace scorelab {

struct SamplerConfig {
    int n_steps = 1000;
    int corrector_steps_per_predictor = 1;
    double corrector_snr = 0.16;
    double t_end = 1e-5;
    bool use_ema = true;
    // Redraw y_t before every corrector sub-step (not just every predictor).
    bool resample_y_in_corrector = true;
    // Replace the final state by x + var * score. Off by default.
    bool denoise_final = false;

    void validate(double horizon_T) const;
};

// Batch score evaluator: one row per chain, shared t. For conditional model
// sources the first n_x output columns are the x-block score.
struct ScoreSource {
    std::function<MatrixXd(const MatrixXd& inputs, double t)> eval;
    int input_dim = 0;
    int score_dim = 0;
};

// Trained-model source: forward pass plus the blockwise output-to-score
// rescale the network is trained under.
ScoreSource network_score_source(const MlpSpec& spec, const VectorXd& params,
                                 const ObjectiveConfig& cfg, const MultiBlockSdeSpec& mspec);
ScoreSource oracle_unconditional_source(const GaussianSpec& g, const VeSdeSpec& spec);
ScoreSource oracle_gmm_source(const GmmSpec& m, const VeSdeSpec& spec);
// Exact grad ln p(x_t | y); input rows are (x, y).
ScoreSource oracle_conditional_clean_source(const JointGaussianSpec& j,
                                            const MultiBlockSdeSpec& mspec);
// Exact grad ln p(x_t | y_t); input rows are (x, y_t). Degenerates to the
// clean-y source when the y block is frozen.
ScoreSource oracle_conditional_diffused_source(const JointGaussianSpec& j,
                                               const MultiBlockSdeSpec& mspec);

// One reverse-time Euler-Maruyama step of size dt (zero drift):
// x + g(t)^2 * score * dt + g(t) * sqrt(dt) * z.
VectorXd predictor_step(const VectorXd& score, const VectorXd& x, const VeSdeSpec& spec, double t,
                        double dt, const VectorXd& z);
VectorXd predictor_step(const VectorXd& score, const VectorXd& x, const VeSdeSpec& spec, double t,
                        double dt, std::uint64_t seed);

// Langevin step with signal-to-noise step sizing:
// delta = 2 (snr ||z|| / ||score||)^2;  x + delta * score + sqrt(2 delta) * z.
// A zero score skips the step.
VectorXd corrector_step(const VectorXd& score, const VectorXd& x, double snr, const VectorXd& z);
VectorXd corrector_step(const VectorXd& score, const VectorXd& x, double snr, std::uint64_t seed);

// Corrector-only Langevin dynamics at a fixed time: n_sweeps batched
// refinements of the given states. Stationarity harness for the corrector.
MatrixXd langevin_ensemble(const ScoreSource& source, const MatrixXd& x0, double t, double snr,
                           int n_sweeps, std::uint64_t seed);

// n_samples independent chains from the prior, integrated from T down to
// t_end on a uniform grid; one row per chain. Chain c derives every draw from
// substream(seed, "chain", c), so results are independent of scheduling.
MatrixXd sample_unconditional(const ScoreSource& source, const MultiBlockSdeSpec& mspec,
                              const SamplerConfig& cfg, int n_samples, std::uint64_t seed);

// Posterior sampling in x-space. Cde holds y fixed in the model input;
// Cdiffe/Cmde redraw y_t from the y-block transition kernel at every
// evaluation and use the x block of the joint score. The y state is never
// integrated.
MatrixXd sample_conditional(const ScoreSource& source, const MultiBlockSdeSpec& mspec,
                            const VectorXd& y, const SamplerConfig& cfg, EstimatorKind kind,
                            int n_samples, std::uint64_t seed);

}  // namespace scorelab
