// Command-line front end: train/sample/evaluate subcommands, the score-gap
// curve runner, the sigma_max schedule printer, and the full experiment
// pipeline.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scorelab/experiment.hpp"

namespace {

using namespace scorelab;

struct CommonOpts {
    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
    std::optional<std::string> estimator;
    std::optional<double> sigma_y_max;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required) {
    auto* c = cmd->add_option("--config", opts.config_path, "experiment config file");
    if (config_required) c->required();
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_option("--seed", opts.seed, "master seed override");
    cmd->add_option("--estimator", opts.estimator, "estimator: dse|cde|cdiffe|cmde|vs-cmde");
    cmd->add_option("--sigma-y-max", opts.sigma_y_max, "y-block sigma_max override");
}

ExperimentConfig load_with_overrides(const CommonOpts& opts) {
    ExperimentConfig cfg = load_experiment_config(opts.config_path);
    if (opts.seed) cfg.seed = *opts.seed;
    if (opts.sigma_y_max) cfg.mspec.blocks[1].spec.sigma_max = *opts.sigma_y_max;
    if (opts.estimator) {
        bool vs = false;
        const bool config_had_vs = cfg.schedule.vs_enabled;
        cfg.estimator = estimator_from_label(*opts.estimator, vs);
        cfg.schedule.vs_enabled = vs;
        if (vs && !config_had_vs) {
            // the config was not written for the decaying schedule; decay from
            // the x speed down to the configured y sigma_max over training
            cfg.schedule.vs.total_iterations = cfg.optimizer.train_steps;
            cfg.schedule.vs.sigma_max_initial = cfg.mspec.blocks[0].spec.sigma_max;
            cfg.schedule.vs.sigma_max_target = cfg.mspec.blocks[1].spec.sigma_max;
        }
    }
    cfg.validate();
    return cfg;
}

Checkpoint model_checkpoint(const ExperimentConfig& cfg, const TrainedModel& model) {
    Checkpoint ckpt;
    ckpt.spec = model.spec;
    ckpt.adam = cfg.optimizer.adam;
    ckpt.ema_rate = cfg.optimizer.ema_rate;
    ckpt.step = model.opt.step;
    ckpt.master_seed = cfg.seed;
    ckpt.params = model.params;
    ckpt.ema = model.opt.ema;
    return ckpt;
}

TrainedModel model_from_checkpoint(const ExperimentConfig& cfg, const std::string& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    TrainedModel model;
    model.mspec = effective_mspec(cfg);
    model.objective = {cfg.estimator, cfg.weighting, cfg.schedule.time_mode};
    model.spec = ckpt.spec;
    model.params = ckpt.params;
    model.opt = make_optimizer_state(ckpt.params, ckpt.adam, ckpt.ema_rate);
    model.opt.ema = ckpt.ema;
    model.opt.step = ckpt.step;
    check_arg(model.spec.input_dim == model.mspec.total_dim(),
              "checkpoint does not match the configured task/estimator");
    check_arg(model.spec.output_dim == diffused_dim(model.objective, model.mspec),
              "checkpoint output span does not match the configured estimator");
    return model;
}

int cmd_run(const CommonOpts& opts) {
    const ExperimentConfig cfg = load_with_overrides(opts);
    const MetricsReport report = run_experiment(cfg, opts.out_dir);
    std::cout << metrics_csv(report);
    std::cout << "# train " << format_g17(report.train_seconds) << " s, eval "
              << format_g17(report.eval_seconds) << " s\n";
    return 0;
}

int cmd_train(const CommonOpts& opts) {
    const ExperimentConfig cfg = load_with_overrides(opts);
    const TaskDataset data =
        make_dataset(cfg.base, cfg.task, cfg.n_train + cfg.n_eval, substream(cfg.seed, "data"));
    const TrainedModel model = train_estimator(cfg, data);
    std::filesystem::create_directories(opts.out_dir);
    save_checkpoint(opts.out_dir + "/checkpoint.bin", model_checkpoint(cfg, model));
    save_dataset(opts.out_dir + "/dataset.bin", data);
    std::cout << "final training loss " << format_g17(model.final_loss) << "\n";
    std::cout << "wrote " << opts.out_dir << "/checkpoint.bin and dataset.bin\n";
    return 0;
}

int cmd_evaluate(const CommonOpts& opts, const std::string& checkpoint) {
    const ExperimentConfig cfg = load_with_overrides(opts);
    const std::string path =
        checkpoint.empty() ? opts.out_dir + "/checkpoint.bin" : checkpoint;
    const TrainedModel model = model_from_checkpoint(cfg, path);
    const TaskDataset data =
        make_dataset(cfg.base, cfg.task, cfg.n_train + cfg.n_eval, substream(cfg.seed, "data"));
    const MetricsReport report = evaluate_model(cfg, model, data);
    std::filesystem::create_directories(opts.out_dir);
    write_metrics_csv(opts.out_dir + "/metrics.csv", report);
    std::cout << metrics_csv(report);
    return 0;
}

int cmd_sample(const CommonOpts& opts, const std::string& checkpoint, int n_samples, int obs) {
    const ExperimentConfig cfg = load_with_overrides(opts);
    const std::string path =
        checkpoint.empty() ? opts.out_dir + "/checkpoint.bin" : checkpoint;
    const TrainedModel model = model_from_checkpoint(cfg, path);
    const ScoreSource source = trained_score_source(model, cfg.sampler.use_ema);

    MatrixXd samples;
    if (cfg.estimator == EstimatorKind::Dsm) {
        samples = sample_unconditional(source, model.mspec, cfg.sampler, n_samples,
                                       substream(cfg.seed, "sample"));
    } else {
        const TaskDataset data = make_dataset(cfg.base, cfg.task, cfg.n_train + cfg.n_eval,
                                              substream(cfg.seed, "data"));
        check_arg(obs >= 0 && obs < cfg.n_eval, "sample: --obs out of range");
        samples = sample_conditional(source, model.mspec,
                                     data.ys.row(cfg.n_train + obs).transpose(), cfg.sampler,
                                     cfg.estimator, n_samples, substream(cfg.seed, "sample"));
    }

    std::filesystem::create_directories(opts.out_dir);
    std::ofstream out(opts.out_dir + "/samples.csv", std::ios::trunc);
    for (int r = 0; r < samples.rows(); ++r) {
        for (int c = 0; c < samples.cols(); ++c) {
            if (c) out << ",";
            out << format_g17(samples(r, c));
        }
        out << "\n";
    }
    std::cout << "wrote " << samples.rows() << " samples to " << opts.out_dir << "/samples.csv\n";
    return 0;
}

int cmd_theorem3(const std::string& out_dir, std::uint64_t seed, int n_mc, double rho, double t,
                 double x_t, double y, std::vector<double> grid) {
    JointGaussianSpec j;
    j.n_x = 1;
    j.n_y = 1;
    j.joint.mean = VectorXd::Zero(2);
    j.joint.covariance.resize(2, 2);
    j.joint.covariance << 1.0, rho, rho, 1.0;
    j.validate();

    MultiBlockSdeSpec mspec;
    mspec.blocks = {{1, VeSdeSpec{0.01, 50.0, 1.0}}, {1, VeSdeSpec{0.01, 50.0, 1.0}}};
    if (grid.empty()) grid = {0.01, 0.1, 0.5, 1.0, 5.0, 50.0};

    const auto curve = theorem3_error_curve(j, mspec, t, VectorXd::Constant(1, x_t),
                                            VectorXd::Constant(1, y), grid, n_mc, seed);
    std::filesystem::create_directories(out_dir);
    write_theorem3_csv(out_dir + "/theorem3.csv", curve);
    std::cout << theorem3_csv(curve);
    return 0;
}

int cmd_schedule(long long m, double initial, double target, int points) {
    VsSchedule s{m, initial, target};
    s.validate();
    std::cout << "n,sigma_max\n";
    for (int i = 0; i <= points; ++i) {
        const long long n = m * i / points;
        std::cout << n << "," << format_g17(vs_sigma_max(s, n)) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"conditional score-based diffusion laboratory"};
    app.require_subcommand(1);

    CommonOpts run_opts, train_opts, eval_opts, sample_opts;
    std::string eval_checkpoint, sample_checkpoint;
    int sample_n = 16;
    int sample_obs = 0;

    auto* run = app.add_subcommand("run", "train, evaluate and write metrics.csv");
    add_common(run, run_opts, true);

    auto* train = app.add_subcommand("train", "train and write a checkpoint");
    add_common(train, train_opts, true);

    auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint and write metrics.csv");
    add_common(evaluate, eval_opts, true);
    evaluate->add_option("--checkpoint", eval_checkpoint, "checkpoint path");

    auto* sample = app.add_subcommand("sample", "draw samples from a trained model");
    add_common(sample, sample_opts, true);
    sample->add_option("--checkpoint", sample_checkpoint, "checkpoint path");
    sample->add_option("--n", sample_n, "number of samples");
    sample->add_option("--obs", sample_obs, "held-out observation index for the condition");

    std::string t3_out = "out";
    std::uint64_t t3_seed = 0;
    int t3_nmc = 100000;
    double t3_rho = 0.8, t3_t = 0.5, t3_xt = 0.5, t3_y = 1.0;
    std::vector<double> t3_grid;
    auto* theorem3 = app.add_subcommand("theorem3-curve", "score-gap curve over sigma_y_max");
    theorem3->add_option("--out", t3_out, "output directory");
    theorem3->add_option("--seed", t3_seed, "master seed");
    theorem3->add_option("--n-mc", t3_nmc, "Monte-Carlo draws per grid entry");
    theorem3->add_option("--rho", t3_rho, "correlation of the bivariate joint");
    theorem3->add_option("--t", t3_t, "diffusion time");
    theorem3->add_option("--x-t", t3_xt, "evaluation point");
    theorem3->add_option("--y", t3_y, "clean condition");
    theorem3->add_option("--grid", t3_grid, "ascending sigma_y_max grid");

    long long sch_m = 125000;
    double sch_initial = 50.0, sch_target = 1.0;
    int sch_points = 10;
    auto* schedule = app.add_subcommand("schedule", "print the decaying sigma_max schedule");
    schedule->add_option("--M", sch_m, "total scheduled iterations");
    schedule->add_option("--sigma-max-initial", sch_initial, "initial sigma_max");
    schedule->add_option("--sigma-max-target", sch_target, "target sigma_max");
    schedule->add_option("--points", sch_points, "rows to print");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(run_opts);
        if (train->parsed()) return cmd_train(train_opts);
        if (evaluate->parsed()) return cmd_evaluate(eval_opts, eval_checkpoint);
        if (sample->parsed()) return cmd_sample(sample_opts, sample_checkpoint, sample_n, sample_obs);
        if (theorem3->parsed())
            return cmd_theorem3(t3_out, t3_seed, t3_nmc, t3_rho, t3_t, t3_xt, t3_y, t3_grid);
        if (schedule->parsed()) return cmd_schedule(sch_m, sch_initial, sch_target, sch_points);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
