#pragma once

#include <cstdint>
#include <string>
#include <variant>

#include <json.hpp>

#include "scorelab/common.hpp"
#include "scorelab/oracles.hpp"
#include "scorelab/rng.hpp"

namespace scorelab {

// Desk-scale forward operators y = A x.
//   Mask:   zero a contiguous block of ceil(0.25 n) coordinates at a
//           seeded-uniform offset; y keeps full dimension and the zero
//           pattern itself conveys the mask.
//   Pool:   blockwise means with block size k (k must divide n).
//   Linear: explicit matrix plus optional Gaussian observation noise.
enum class OperatorKind { Mask, Pool, Linear };

struct ForwardOperator {
    OperatorKind kind = OperatorKind::Mask;
    int input_dim = 0;
    int pool_block = 2;      // Pool
    MatrixXd matrix;         // Linear, shape (n_y, n_x)
    double noise_std = 0.0;  // Linear

    void validate() const;
    int output_dim() const;
};

int mask_hidden_len(int n);
int mask_offset(const ForwardOperator& op, std::uint64_t seed);

VectorXd apply_operator(const ForwardOperator& op, const VectorXd& x, std::uint64_t seed);

// The concrete linear map behind the operator (mask offset resolved from the
// seed; noise excluded). Links every task to the Gaussian posterior oracle.
MatrixXd operator_matrix(const ForwardOperator& op, std::uint64_t seed);

using BaseDistribution = std::variant<GaussianSpec, GmmSpec>;

int base_dim(const BaseDistribution& base);
VectorXd sample_base(const BaseDistribution& base, Rng& rng);

struct TaskDataset {
    MatrixXd xs;  // rows = samples
    MatrixXd ys;
    BaseDistribution base;
    ForwardOperator op;
    std::uint64_t seed = 0;

    int size() const { return static_cast<int>(xs.rows()); }
    // The seed apply_operator used for sample i; re-derives mask offsets and
    // noise draws.
    std::uint64_t sample_op_seed(int i) const { return substream(seed, "op", i); }
};

TaskDataset make_dataset(const BaseDistribution& base, const ForwardOperator& op, int n,
                         std::uint64_t seed);

// For Linear operators on a Gaussian base, (x, y) is jointly Gaussian:
// cross-covariance Sigma A^T, observation covariance A Sigma A^T + s^2 I.
JointGaussianSpec linear_task_joint(const GaussianSpec& base, const MatrixXd& a, double noise_std);

// Dataset file: one JSON header line, then the x and y arrays as
// little-endian 64-bit reals. Round-trips byte-exactly.
void save_dataset(const std::string& path, const TaskDataset& ds);
TaskDataset load_dataset(const std::string& path);

// JSON encodings shared with the experiment config.
nlohmann::json gaussian_to_json(const GaussianSpec& g);
GaussianSpec gaussian_from_json(const nlohmann::json& j);
nlohmann::json base_to_json(const BaseDistribution& base);
BaseDistribution base_from_json(const nlohmann::json& j);
nlohmann::json operator_to_json(const ForwardOperator& op);
ForwardOperator operator_from_json(const nlohmann::json& j);

}  // namespace scorelab
