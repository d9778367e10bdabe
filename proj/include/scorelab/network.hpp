#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scorelab/common.hpp"
#include "scorelab/objectives.hpp"
#include "scorelab/rng.hpp"

namespace scorelab {

// Dense feed-forward model behind s_theta(input, t). Time enters through
// sinusoidal features [sin(2^k pi t), cos(2^k pi t)] concatenated to the
// input; hidden activations are SiLU, the output layer is linear.
// Differentiation is hand-rolled reverse mode over this fixed architecture.
//
// The raw network predicts the noise-scale-normalized score: the score
// estimate is the output divided blockwise by the transition std
// sqrt(marginal_variance(t)). Transition-score targets are O(1) in that
// parameterization at every t, which keeps VE training conditioned across
// noise scales (the image-scale backbones this stands in for predict noise
// for the same reason).
struct MlpSpec {
    int input_dim = 0;
    std::vector<int> hidden_widths = {128, 128, 128};
    int output_dim = 0;
    int time_features = 8;  // sinusoidal frequency pairs

    void validate() const;
    int feature_dim() const { return input_dim + 2 * time_features; }
    std::vector<int> layer_widths() const;  // feature_dim, hidden..., output_dim
};

int param_count(const MlpSpec& spec);

// Weights N(0, 2/fan_in), biases zero.
VectorXd init_params(const MlpSpec& spec, std::uint64_t seed);

VectorXd time_embedding(double t, int pairs);

VectorXd forward(const MlpSpec& spec, const VectorXd& params, const VectorXd& input, double t);

// All rows share one t; used by the samplers.
MatrixXd forward_batch(const MlpSpec& spec, const VectorXd& params, const MatrixXd& inputs, double t);

// Per-coordinate scale mapping raw network output to a score estimate:
// score_i = output_i / scale_i with scale_i = sqrt(marginal_variance) of the
// coordinate's block at time t.
VectorXd score_scales(const ObjectiveConfig& cfg, const MultiBlockSdeSpec& mspec, double t);

// Score estimate of the model at one input: forward, then blockwise rescale.
VectorXd model_score(const MlpSpec& spec, const VectorXd& params, const ObjectiveConfig& cfg,
                     const MultiBlockSdeSpec& mspec, const VectorXd& input, double t);

// Mean objective loss over the batch; `noised` is the model input and
// `target`/weights span the diffused coordinates.
double batch_loss(const MlpSpec& spec, const VectorXd& params,
                  const std::vector<TrainingSample>& batch, const ObjectiveConfig& cfg,
                  const MultiBlockSdeSpec& mspec);

struct LossGrad {
    double loss = 0.0;
    VectorXd grad;
};

LossGrad loss_and_grad(const MlpSpec& spec, const VectorXd& params,
                       const std::vector<TrainingSample>& batch, const ObjectiveConfig& cfg,
                       const MultiBlockSdeSpec& mspec);

// Central differences (L(p + h e_i) - L(p - h e_i)) / 2h on selected coordinates.
VectorXd finite_diff_grad(const MlpSpec& spec, const VectorXd& params,
                          const std::vector<TrainingSample>& batch, const ObjectiveConfig& cfg,
                          const MultiBlockSdeSpec& mspec, const std::vector<int>& coords, double h);

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct OptimizerState {
    VectorXd m;
    VectorXd v;
    long long step = 0;
    AdamConfig adam;
    VectorXd ema;
    double ema_rate = 0.999;
};

OptimizerState make_optimizer_state(const VectorXd& initial_params, const AdamConfig& adam,
                                    double ema_rate);

// Standard bias-corrected Adam. A non-finite gradient refuses the step and
// leaves both state and params untouched.
void adam_step(OptimizerState& state, VectorXd& params, const VectorXd& grad);

void ema_update(OptimizerState& state, const VectorXd& params);

// Checkpoint file: one JSON header line, then the parameter and EMA arrays as
// little-endian 64-bit reals. Round-trips byte-exactly.
struct Checkpoint {
    MlpSpec spec;
    AdamConfig adam;
    double ema_rate = 0.999;
    long long step = 0;
    std::uint64_t master_seed = 0;
    VectorXd params;
    VectorXd ema;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace scorelab
