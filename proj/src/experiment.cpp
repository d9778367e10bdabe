#include "scorelab/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace scorelab {

namespace {

void check_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                const std::string& context) {
    check_arg(j.is_object(), "config: expected an object at " + context);
    for (const auto& item : j.items()) {
        bool known = false;
        for (const auto& key : allowed) {
            if (item.key() == key) {
                known = true;
                break;
            }
        }
        check_arg(known, "config: unknown key '" + item.key() + "' in " + context);
    }
}

VeSdeSpec sde_from_json(const nlohmann::json& j, const std::string& context) {
    check_keys(j, {"sigma_min", "sigma_max", "horizon_T"}, context);
    VeSdeSpec s;
    s.sigma_min = j.at("sigma_min").get<double>();
    s.sigma_max = j.at("sigma_max").get<double>();
    s.horizon_T = j.value("horizon_T", 1.0);
    s.validate();
    return s;
}

nlohmann::json sde_to_json(const VeSdeSpec& s) {
    return {{"sigma_min", s.sigma_min}, {"sigma_max", s.sigma_max}, {"horizon_T", s.horizon_T}};
}

}  // namespace

void ExperimentConfig::validate() const {
    task.validate();
    check_arg(base_dim(base) == task.input_dim, "config: base/task dimension mismatch");
    check_arg(mspec.blocks.size() == 2, "config: mspec must have x and y blocks");
    check_arg(mspec.blocks[0].dim == task.input_dim, "config: x block must match the task");
    check_arg(mspec.blocks[1].dim == task.output_dim(), "config: y block must match the task");
    schedule.time_mode.validate();
    if (schedule.vs_enabled) {
        schedule.vs.validate();
        check_arg(schedule.vs.sigma_max_target > mspec.blocks[1].spec.sigma_min,
                  "config: variance schedule target must stay above the y sigma_min");
    }
    check_arg(optimizer.batch_size >= 1, "config: batch_size must be >= 1");
    check_arg(optimizer.train_steps >= 1, "config: train_steps must be >= 1");
    check_arg(n_train >= 1, "config: n_train must be >= 1");
    check_arg(n_eval >= 1, "config: n_eval must be >= 1");
    check_arg(k_reconstructions >= 2, "config: k_reconstructions must be >= 2 for diversity");
    check_arg(data_range > 0.0, "config: data_range must be positive");
    sampler.validate(mspec.horizon_T());
}

std::string estimator_label(const ExperimentConfig& cfg) {
    if (cfg.estimator == EstimatorKind::Cmde && cfg.schedule.vs_enabled) return "vs-cmde";
    switch (cfg.estimator) {
        case EstimatorKind::Dsm:
            return "dse";
        case EstimatorKind::Cde:
            return "cde";
        case EstimatorKind::Cdiffe:
            return "cdiffe";
        case EstimatorKind::Cmde:
            return "cmde";
    }
    return "?";
}

EstimatorKind estimator_from_label(const std::string& label, bool& vs_enabled) {
    vs_enabled = false;
    if (label == "dse" || label == "dsm") return EstimatorKind::Dsm;
    if (label == "cde") return EstimatorKind::Cde;
    if (label == "cdiffe") return EstimatorKind::Cdiffe;
    if (label == "cmde") return EstimatorKind::Cmde;
    if (label == "vs-cmde") {
        vs_enabled = true;
        return EstimatorKind::Cmde;
    }
    check_arg(false, "unknown estimator '" + label + "' (expected dse|cde|cdiffe|cmde|vs-cmde)");
    return EstimatorKind::Cde;
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    check_keys(j,
               {"task", "base", "estimator", "weighting", "mspec", "schedule", "network",
                "optimizer", "sampler", "n_train", "n_eval", "k_reconstructions", "data_range",
                "seed"},
               "config");
    ExperimentConfig cfg;
    cfg.task = operator_from_json(j.at("task"));
    cfg.base = base_from_json(j.at("base"));

    bool vs_from_label = false;
    cfg.estimator = estimator_from_label(j.at("estimator").get<std::string>(), vs_from_label);
    const std::string weighting = j.value("weighting", std::string("mle"));
    check_arg(weighting == "mle" || weighting == "unit", "config: weighting must be mle or unit");
    cfg.weighting = weighting == "mle" ? WeightingKind::Mle : WeightingKind::Unit;

    const auto& jm = j.at("mspec");
    check_keys(jm, {"x", "y"}, "mspec");
    cfg.mspec.blocks = {{cfg.task.input_dim, sde_from_json(jm.at("x"), "mspec.x")},
                        {cfg.task.output_dim(), sde_from_json(jm.at("y"), "mspec.y")}};

    const auto& js = j.at("schedule");
    check_keys(js, {"time_mode", "vs_enabled", "vs"}, "schedule");
    const auto& jt = js.at("time_mode");
    check_keys(jt, {"mode", "N", "eps", "T"}, "schedule.time_mode");
    const std::string mode = jt.at("mode").get<std::string>();
    check_arg(mode == "continuous" || mode == "discrete",
              "config: time mode must be continuous or discrete");
    cfg.schedule.time_mode.mode =
        mode == "continuous" ? TimeModeKind::Continuous : TimeModeKind::Discrete;
    cfg.schedule.time_mode.grid_size = jt.value("N", 1000);
    cfg.schedule.time_mode.eps = jt.value("eps", 1e-5);
    cfg.schedule.time_mode.horizon_T = jt.value("T", 1.0);
    cfg.schedule.vs_enabled = js.value("vs_enabled", false) || vs_from_label;
    if (js.contains("vs")) {
        const auto& jv = js.at("vs");
        check_keys(jv, {"M", "sigma_max_initial", "sigma_max_target"}, "schedule.vs");
        cfg.schedule.vs.total_iterations = jv.at("M").get<long long>();
        cfg.schedule.vs.sigma_max_initial = jv.at("sigma_max_initial").get<double>();
        cfg.schedule.vs.sigma_max_target = jv.at("sigma_max_target").get<double>();
    } else if (cfg.schedule.vs_enabled) {
        cfg.schedule.vs.total_iterations = j.at("optimizer").at("train_steps").get<long long>();
        cfg.schedule.vs.sigma_max_initial = cfg.mspec.blocks[0].spec.sigma_max;
        cfg.schedule.vs.sigma_max_target = cfg.mspec.blocks[1].spec.sigma_max;
    }

    const auto& jn = j.at("network");
    check_keys(jn, {"hidden_widths", "time_features"}, "network");
    cfg.network.hidden_widths = jn.at("hidden_widths").get<std::vector<int>>();
    cfg.network.time_features = jn.value("time_features", 8);

    const auto& jo = j.at("optimizer");
    check_keys(jo, {"lr", "beta1", "beta2", "eps_adam", "ema_rate", "batch_size", "train_steps"},
               "optimizer");
    cfg.optimizer.adam.lr = jo.value("lr", 2e-4);
    cfg.optimizer.adam.beta1 = jo.value("beta1", 0.9);
    cfg.optimizer.adam.beta2 = jo.value("beta2", 0.999);
    cfg.optimizer.adam.eps = jo.value("eps_adam", 1e-8);
    cfg.optimizer.ema_rate = jo.value("ema_rate", 0.999);
    cfg.optimizer.batch_size = jo.value("batch_size", 50);
    cfg.optimizer.train_steps = jo.at("train_steps").get<int>();

    const auto& jsamp = j.at("sampler");
    check_keys(jsamp,
               {"n_steps", "corrector_steps_per_predictor", "corrector_snr", "t_end", "use_ema",
                "resample_y_in_corrector", "denoise_final"},
               "sampler");
    cfg.sampler.n_steps = jsamp.value("n_steps", 1000);
    cfg.sampler.corrector_steps_per_predictor = jsamp.value("corrector_steps_per_predictor", 1);
    cfg.sampler.corrector_snr = jsamp.value("corrector_snr", 0.16);
    cfg.sampler.t_end = jsamp.value("t_end", 1e-5);
    cfg.sampler.use_ema = jsamp.value("use_ema", true);
    cfg.sampler.resample_y_in_corrector = jsamp.value("resample_y_in_corrector", true);
    cfg.sampler.denoise_final = jsamp.value("denoise_final", false);

    cfg.n_train = j.at("n_train").get<int>();
    cfg.n_eval = j.at("n_eval").get<int>();
    cfg.k_reconstructions = j.value("k_reconstructions", 5);
    cfg.data_range = j.value("data_range", 1.0);
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.validate();
    return cfg;
}

nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["task"] = operator_to_json(cfg.task);
    j["base"] = base_to_json(cfg.base);
    j["estimator"] = cfg.estimator == EstimatorKind::Cmde && cfg.schedule.vs_enabled
                         ? "cmde"
                         : estimator_label(cfg);
    j["weighting"] = cfg.weighting == WeightingKind::Mle ? "mle" : "unit";
    j["mspec"] = {{"x", sde_to_json(cfg.mspec.blocks[0].spec)},
                  {"y", sde_to_json(cfg.mspec.blocks[1].spec)}};
    j["schedule"] = {
        {"time_mode",
         {{"mode", cfg.schedule.time_mode.mode == TimeModeKind::Continuous ? "continuous"
                                                                           : "discrete"},
          {"N", cfg.schedule.time_mode.grid_size},
          {"eps", cfg.schedule.time_mode.eps},
          {"T", cfg.schedule.time_mode.horizon_T}}},
        {"vs_enabled", cfg.schedule.vs_enabled},
    };
    if (cfg.schedule.vs_enabled) {
        j["schedule"]["vs"] = {{"M", cfg.schedule.vs.total_iterations},
                               {"sigma_max_initial", cfg.schedule.vs.sigma_max_initial},
                               {"sigma_max_target", cfg.schedule.vs.sigma_max_target}};
    }
    j["network"] = {{"hidden_widths", cfg.network.hidden_widths},
                    {"time_features", cfg.network.time_features}};
    j["optimizer"] = {{"lr", cfg.optimizer.adam.lr},
                      {"beta1", cfg.optimizer.adam.beta1},
                      {"beta2", cfg.optimizer.adam.beta2},
                      {"eps_adam", cfg.optimizer.adam.eps},
                      {"ema_rate", cfg.optimizer.ema_rate},
                      {"batch_size", cfg.optimizer.batch_size},
                      {"train_steps", cfg.optimizer.train_steps}};
    j["sampler"] = {{"n_steps", cfg.sampler.n_steps},
                    {"corrector_steps_per_predictor", cfg.sampler.corrector_steps_per_predictor},
                    {"corrector_snr", cfg.sampler.corrector_snr},
                    {"t_end", cfg.sampler.t_end},
                    {"use_ema", cfg.sampler.use_ema},
                    {"resample_y_in_corrector", cfg.sampler.resample_y_in_corrector},
                    {"denoise_final", cfg.sampler.denoise_final}};
    j["n_train"] = cfg.n_train;
    j["n_eval"] = cfg.n_eval;
    j["k_reconstructions"] = cfg.k_reconstructions;
    j["data_range"] = cfg.data_range;
    j["seed"] = cfg.seed;
    return j;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    check_arg(in.good(), "config: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return experiment_config_from_json(j);
}

MultiBlockSdeSpec effective_mspec(const ExperimentConfig& cfg) {
    MultiBlockSdeSpec m = cfg.mspec;
    switch (cfg.estimator) {
        case EstimatorKind::Dsm:
            m.blocks.resize(1);
            break;
        case EstimatorKind::Cde:
            m.blocks[1].spec.sigma_max = m.blocks[1].spec.sigma_min;
            break;
        case EstimatorKind::Cdiffe:
            m.blocks[1].spec = m.blocks[0].spec;
            break;
        case EstimatorKind::Cmde:
            if (cfg.schedule.vs_enabled) {
                // Sampling runs on the final (target) schedule.
                m.blocks[1].spec.sigma_max = cfg.schedule.vs.sigma_max_target;
            }
            break;
    }
    m.validate();
    return m;
}

TrainedModel train_estimator(const ExperimentConfig& cfg, const TaskDataset& data) {
    cfg.validate();
    check_arg(data.size() >= 1, "train_estimator: empty dataset");

    TrainedModel model;
    model.mspec = effective_mspec(cfg);
    model.objective = {cfg.estimator, cfg.weighting, cfg.schedule.time_mode};
    validate_objective(model.objective, model.mspec);

    model.spec.input_dim = model.mspec.total_dim();
    model.spec.hidden_widths = cfg.network.hidden_widths;
    model.spec.output_dim = diffused_dim(model.objective, model.mspec);
    model.spec.time_features = cfg.network.time_features;
    model.spec.validate();

    model.params = init_params(model.spec, substream(cfg.seed, "init"));
    model.opt = make_optimizer_state(model.params, cfg.optimizer.adam, cfg.optimizer.ema_rate);

    const int b_size = cfg.optimizer.batch_size;
    const bool has_y = cfg.estimator != EstimatorKind::Dsm;
    std::vector<TrainingSample> batch;
    batch.reserve(b_size);
    std::vector<double> recent_losses;

    for (int step = 0; step < cfg.optimizer.train_steps; ++step) {
        MultiBlockSdeSpec step_mspec = model.mspec;
        if (cfg.schedule.vs_enabled) {
            step_mspec.blocks[1].spec.sigma_max = vs_sigma_max(cfg.schedule.vs, step);
        }

        batch.clear();
        Rng batch_rng(substream(cfg.seed, "batch", step));
        for (int j = 0; j < b_size; ++j) {
            const int idx =
                static_cast<int>(batch_rng.uniform_index(static_cast<std::uint64_t>(data.size())));
            const VectorXd x0 = data.xs.row(idx);
            const VectorXd y = has_y ? VectorXd(data.ys.row(idx)) : VectorXd(0);
            batch.push_back(make_training_sample(
                model.objective, step_mspec, x0, y,
                substream(cfg.seed, "noise",
                          static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(b_size) +
                              static_cast<std::uint64_t>(j))));
        }

        const LossGrad lg = loss_and_grad(model.spec, model.params, batch, model.objective,
                                          step_mspec);
        if (!std::isfinite(lg.loss)) {
            std::string tail;
            for (double l : recent_losses) tail += format_g17(l) + " ";
            check_numeric(false, "training diverged at step " + std::to_string(step) +
                                     "; recent losses: " + tail);
        }
        recent_losses.push_back(lg.loss);
        if (recent_losses.size() > 8) recent_losses.erase(recent_losses.begin());
        adam_step(model.opt, model.params, lg.grad);
        ema_update(model.opt, model.params);
        model.final_loss = lg.loss;
    }
    return model;
}

ScoreSource trained_score_source(const TrainedModel& model, bool use_ema) {
    return network_score_source(model.spec, use_ema ? model.opt.ema : model.params,
                                model.objective, model.mspec);
}

std::string format_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string metrics_csv(const MetricsReport& r) {
    std::string out =
        "task,estimator,sigma_y_max,seed,psnr,mse,consistency_psnr,diversity,ufid,jfid,n_eval,k\n";
    out += r.task + "," + r.estimator + "," + format_g17(r.sigma_y_max) + "," +
           std::to_string(r.seed) + "," + format_g17(r.recon.psnr) + "," +
           format_g17(r.recon.mse) + "," + format_g17(r.recon.consistency_psnr) + "," +
           format_g17(r.recon.diversity) + "," + format_g17(r.ufid) + "," + format_g17(r.jfid) +
           "," + std::to_string(r.n_eval) + "," + std::to_string(r.k) + "\n";
    return out;
}

void write_metrics_csv(const std::string& path, const MetricsReport& report) {
    std::ofstream out(path, std::ios::trunc);
    check_numeric(out.good(), "metrics: cannot open " + path);
    out << metrics_csv(report);
}

std::string theorem3_csv(const std::vector<Theorem3Point>& curve) {
    std::string out = "sigma_y_max,mse,mc_stderr\n";
    for (const auto& p : curve) {
        out += format_g17(p.sigma_y_max) + "," + format_g17(p.mse) + "," +
               format_g17(p.mc_stderr) + "\n";
    }
    return out;
}

void write_theorem3_csv(const std::string& path, const std::vector<Theorem3Point>& curve) {
    std::ofstream out(path, std::ios::trunc);
    check_numeric(out.good(), "theorem3: cannot open " + path);
    out << theorem3_csv(curve);
}

MetricsReport evaluate_model(const ExperimentConfig& cfg, const TrainedModel& model,
                             const TaskDataset& data) {
    const ScoreSource source = trained_score_source(model, cfg.sampler.use_ema);
    MetricsReport report =
        evaluate_with_sources(cfg, model.mspec, [&](int) { return source; }, data);
    report.final_train_loss = model.final_loss;
    return report;
}

MetricsReport evaluate_with_sources(const ExperimentConfig& cfg, const MultiBlockSdeSpec& mspec,
                                    const SourceProvider& provider, const TaskDataset& data) {
    check_arg(cfg.estimator != EstimatorKind::Dsm,
              "evaluate: reconstruction requires a conditional estimator");
    check_arg(data.size() >= cfg.n_train + cfg.n_eval, "evaluate: dataset too small");
    const auto t0 = std::chrono::steady_clock::now();

    const int n_x = cfg.task.input_dim;
    const int k = cfg.k_reconstructions;

    MatrixXd x_true(cfg.n_eval, n_x);
    MatrixXd y_obs(cfg.n_eval, cfg.task.output_dim());
    std::vector<MatrixXd> recons(cfg.n_eval);
    MatrixXd x_hat_first(cfg.n_eval, n_x);
    for (int i = 0; i < cfg.n_eval; ++i) {
        const int row = cfg.n_train + i;
        x_true.row(i) = data.xs.row(row);
        y_obs.row(i) = data.ys.row(row);
        recons[i] = sample_conditional(provider(i), mspec, data.ys.row(row).transpose(),
                                       cfg.sampler, cfg.estimator, k,
                                       substream(cfg.seed, "eval", i));
        x_hat_first.row(i) = recons[i].row(0);
    }

    auto apply_noiseless = [&](int i, const VectorXd& x) {
        const MatrixXd a = operator_matrix(cfg.task, data.sample_op_seed(cfg.n_train + i));
        return VectorXd(a * x);
    };

    MetricsReport report;
    report.recon =
        reconstruction_metrics(x_true, y_obs, recons, apply_noiseless, cfg.data_range);
    report.ufid = frechet_gaussian(fit_gaussian(x_true), fit_gaussian(x_hat_first));
    MatrixXd joint_true(cfg.n_eval, n_x + cfg.task.output_dim());
    joint_true << x_true, y_obs;
    MatrixXd joint_hat(cfg.n_eval, n_x + cfg.task.output_dim());
    joint_hat << x_hat_first, y_obs;
    report.jfid = frechet_gaussian(fit_gaussian(joint_true), fit_gaussian(joint_hat));

    switch (cfg.task.kind) {
        case OperatorKind::Mask:
            report.task = "mask";
            break;
        case OperatorKind::Pool:
            report.task = "pool";
            break;
        case OperatorKind::Linear:
            report.task = "linear";
            break;
    }
    report.estimator = estimator_label(cfg);
    report.sigma_y_max = mspec.blocks[1].spec.sigma_max;
    report.seed = cfg.seed;
    report.n_eval = cfg.n_eval;
    report.k = k;
    report.eval_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

MetricsReport run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    check_arg(cfg.estimator != EstimatorKind::Dsm,
              "run_experiment: reconstruction requires a conditional estimator");
    const TaskDataset data =
        make_dataset(cfg.base, cfg.task, cfg.n_train + cfg.n_eval, substream(cfg.seed, "data"));

    const auto t0 = std::chrono::steady_clock::now();
    TrainedModel model;
    try {
        model = train_estimator(cfg, data);
    } catch (const std::exception& e) {
        // Partial report for an aborted run: the config echo and diagnostics.
        if (!out_dir.empty()) {
            std::filesystem::create_directories(out_dir);
            std::ofstream out(out_dir + "/diverged.txt", std::ios::trunc);
            out << e.what() << "\n" << experiment_config_to_json(cfg).dump(2) << "\n";
        }
        throw;
    }
    const double train_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    MetricsReport report = evaluate_model(cfg, model, data);
    report.train_seconds = train_seconds;

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        write_metrics_csv(out_dir + "/metrics.csv", report);
        Checkpoint ckpt;
        ckpt.spec = model.spec;
        ckpt.adam = cfg.optimizer.adam;
        ckpt.ema_rate = cfg.optimizer.ema_rate;
        ckpt.step = model.opt.step;
        ckpt.master_seed = cfg.seed;
        ckpt.params = model.params;
        ckpt.ema = model.opt.ema;
        save_checkpoint(out_dir + "/checkpoint.bin", ckpt);
    }
    return report;
}

}  // namespace scorelab
