#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "scorelab/metrics.hpp"
#include "scorelab/network.hpp"
#include "scorelab/objectives.hpp"
#include "scorelab/samplers.hpp"
#include "scorelab/schedules.hpp"
#include "scorelab/tasks.hpp"

namespace scorelab {

struct ScheduleConfig {
    TimeMode time_mode;
    bool vs_enabled = false;
    VsSchedule vs;
};

struct NetworkConfig {
    std::vector<int> hidden_widths = {128, 128, 128};
    int time_features = 8;
};

struct OptimizerConfig {
    AdamConfig adam;
    double ema_rate = 0.999;
    int batch_size = 50;
    int train_steps = 5000;
};

struct ExperimentConfig {
    ForwardOperator task;
    BaseDistribution base;
    EstimatorKind estimator = EstimatorKind::Cde;
    WeightingKind weighting = WeightingKind::Mle;
    MultiBlockSdeSpec mspec;  // two blocks: x then y
    ScheduleConfig schedule;
    NetworkConfig network;
    OptimizerConfig optimizer;
    SamplerConfig sampler;
    int n_train = 10000;
    int n_eval = 100;
    int k_reconstructions = 5;
    double data_range = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

// Strict config file: field names mirror ExperimentConfig, unknown keys are
// errors.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_experiment_config(const std::string& path);

// "vs-cmde" when the variance schedule is active, the estimator name otherwise.
std::string estimator_label(const ExperimentConfig& cfg);
EstimatorKind estimator_from_label(const std::string& label, bool& vs_enabled);

// Estimator-normalized SDE spec: Cde freezes the y block, Cdiffe copies the x
// schedule onto y, Dsm keeps only the x block. With the variance schedule
// active the y block carries the target sigma_max (the sampling-phase value).
MultiBlockSdeSpec effective_mspec(const ExperimentConfig& cfg);

struct TrainedModel {
    MlpSpec spec;
    VectorXd params;
    OptimizerState opt;
    ObjectiveConfig objective;
    MultiBlockSdeSpec mspec;  // sampling-phase spec
    double final_loss = 0.0;
};

// Deterministic given (config, data): same seed, same batches, bit-identical
// parameters. Throws on training divergence (non-finite loss) with the step
// and recent loss history in the message.
TrainedModel train_estimator(const ExperimentConfig& cfg, const TaskDataset& data);

ScoreSource trained_score_source(const TrainedModel& model, bool use_ema);

struct MetricsReport {
    std::string task;
    std::string estimator;
    double sigma_y_max = 0.0;
    std::uint64_t seed = 0;
    ReconstructionMetrics recon;
    double ufid = 0.0;
    double jfid = 0.0;
    int n_eval = 0;
    int k = 0;
    double train_seconds = 0.0;
    double eval_seconds = 0.0;
    double final_train_loss = 0.0;
};

// Fixed schema; every numeric value printed with 17 significant digits.
std::string metrics_csv(const MetricsReport& report);
void write_metrics_csv(const std::string& path, const MetricsReport& report);
std::string theorem3_csv(const std::vector<Theorem3Point>& curve);
void write_theorem3_csv(const std::string& path, const std::vector<Theorem3Point>& curve);

// Reconstruction pass shared by run_experiment and the evaluate subcommand:
// k posterior samples per held-out observation, then the full metric suite.
MetricsReport evaluate_model(const ExperimentConfig& cfg, const TrainedModel& model,
                             const TaskDataset& data);

// Same pass with an arbitrary per-observation score source (index into the
// held-out set). Substituting exact oracles isolates sampler error from
// learning error.
using SourceProvider = std::function<ScoreSource(int eval_index)>;
MetricsReport evaluate_with_sources(const ExperimentConfig& cfg, const MultiBlockSdeSpec& mspec,
                                    const SourceProvider& provider, const TaskDataset& data);

// Dataset build, training, evaluation and persistence (metrics.csv plus a
// checkpoint when out_dir is non-empty). Fully deterministic per master seed.
MetricsReport run_experiment(const ExperimentConfig& cfg, const std::string& out_dir = "");

// 17-significant-digit numeric formatting used for all file output.
std::string format_g17(double v);

}  // namespace scorelab
