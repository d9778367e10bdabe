#pragma once

#include <cstdint>
#include <vector>

#include "scorelab/common.hpp"
#include "scorelab/schedules.hpp"
#include "scorelab/sde.hpp"

namespace scorelab {

// Dsm:    unconditional denoising score matching on a single block.
// Cde:    conditional denoising estimator; x diffuses, y rides along clean.
// Cdiffe: joint score over (x_t, y_t), both blocks diffusing at equal speed.
// Cmde:   joint score with an independently scheduled (slower) y block.
//
// Cdiffe and Cmde share one arithmetic path, and a Cmde with a frozen y block
// degenerates to Cde; the reduction identities in the test suite check both
// at the bit level.
enum class EstimatorKind { Dsm, Cde, Cdiffe, Cmde };

enum class WeightingKind { Unit, Mle };

struct ObjectiveConfig {
    EstimatorKind estimator = EstimatorKind::Dsm;
    WeightingKind weighting = WeightingKind::Mle;
    TimeMode time_mode;
};

// Config/spec consistency: block counts, frozen-y for Cde, equal specs for
// Cdiffe, diffusing x everywhere.
void validate_objective(const ObjectiveConfig& cfg, const MultiBlockSdeSpec& mspec);

// Scalar weighting lambda(t). Unit -> 1; Mle -> the marginal variance
// sigma(t)^2 - sigma_min^2, which makes weighted transition-score targets
// O(1) in magnitude.
double dsm_weight(WeightingKind kind, const VeSdeSpec& spec, double t);

// Blockwise-diagonal likelihood weighting for the two-block joint objective.
struct WeightMatrix {
    VectorXd diagonal;
};

WeightMatrix mle_weight_matrix(const MultiBlockSdeSpec& mspec, double t);

// Blocks whose coordinates carry loss terms: the x block for Dsm/Cde, every
// non-frozen block for the joint estimators.
std::vector<int> diffused_blocks(const ObjectiveConfig& cfg, const MultiBlockSdeSpec& mspec);
int diffused_dim(const ObjectiveConfig& cfg, const MultiBlockSdeSpec& mspec);

// Weight per diffused coordinate at time t. One code path serves every
// estimator so the reduction identities hold exactly.
VectorXd loss_weight_vector(const ObjectiveConfig& cfg, const MultiBlockSdeSpec& mspec, double t);

// 1/2 * v^T W v with v = (transition scores of the diffused blocks) - model_out.
double per_sample_loss(const ObjectiveConfig& cfg, const MultiBlockSdeSpec& mspec, double t,
                       const VectorXd& clean, const VectorXd& noised, const VectorXd& model_out);

struct TrainingSample {
    double t = 0.0;
    VectorXd clean;   // (x0, y) over all blocks
    VectorXd noised;  // fed to the model; undiffused blocks stay clean
    VectorXd target;  // transition scores over the diffused coordinates
};

// Draws t and the blockwise perturbation for one (x0, y) pair. Sub-streams are
// derived per block, so the x draw is independent of whether y diffuses.
TrainingSample make_training_sample(const ObjectiveConfig& cfg, const MultiBlockSdeSpec& mspec,
                                    const VectorXd& x0, const VectorXd& y, std::uint64_t seed);

}  // namespace scorelab
