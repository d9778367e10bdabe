#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "scorelab/network.hpp"
#include "scorelab/oracles.hpp"
#include "test_support.hpp"

using namespace scorelab;
using namespace scorelab::testing;

namespace {

const VeSdeSpec kSpec{0.01, 50.0, 1.0};
const TimeMode kTime{TimeModeKind::Discrete, 1000, 1e-5, 1.0};

// Random per-instance schedules with moderate sigma_max: the finite-difference
// oracle's truncation error grows with the likelihood-weight scale, so the
// gradient check probes the regime where the oracle itself is trustworthy.
MultiBlockSdeSpec spec_for(EstimatorKind kind, std::uint64_t instance) {
    Rng rng(substream(instance, "specs"));
    const VeSdeSpec x{0.05, 1.5 + 6.5 * rng.uniform(), 1.0};
    MultiBlockSdeSpec m;
    switch (kind) {
        case EstimatorKind::Dsm:
            m.blocks = {{2, x}};
            break;
        case EstimatorKind::Cde:
            m.blocks = {{2, x}, {2, VeSdeSpec{0.05, 0.05, 1.0}}};
            break;
        case EstimatorKind::Cdiffe:
            m.blocks = {{2, x}, {2, x}};
            break;
        case EstimatorKind::Cmde:
            m.blocks = {{2, x}, {2, VeSdeSpec{0.05, 0.1 + rng.uniform(), 1.0}}};
            break;
    }
    return m;
}

std::vector<TrainingSample> random_batch(const ObjectiveConfig& cfg, const MultiBlockSdeSpec& m,
                                         int size, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TrainingSample> batch;
    for (int i = 0; i < size; ++i) {
        const VectorXd x0 = rng.normal_vector(m.blocks[0].dim);
        const VectorXd y =
            m.blocks.size() > 1 ? rng.normal_vector(m.blocks[1].dim) : VectorXd(0);
        batch.push_back(make_training_sample(cfg, m, x0, y, substream(seed, "sample", i)));
    }
    return batch;
}

}  // namespace

TEST_CASE("init_params: determinism, zero biases, He variance") {
    MlpSpec spec{4, {256, 64}, 4, 8};
    CHECK(init_params(spec, 3) == init_params(spec, 3));
    CHECK(init_params(spec, 3) != init_params(spec, 4));

    const VectorXd p = init_params(spec, 5);
    // bias of the first layer sits right after its 256 x 20 weight block
    const int w0 = 256 * spec.feature_dim();
    CHECK(p.segment(w0, 256).cwiseAbs().maxCoeff() == 0.0);

    // second layer: 64 x 256 weights, fan_in 256
    const int offset1 = w0 + 256;
    const VectorXd w1 = p.segment(offset1, 64 * 256);
    const double var = w1.squaredNorm() / static_cast<double>(w1.size());
    CHECK(rel_error(var, 2.0 / 256.0) < 0.2);

    MlpSpec bad{4, {0}, 4, 8};
    CHECK_THROWS_AS(init_params(bad, 1), std::invalid_argument);
}

TEST_CASE("forward: zero params give zero output, shapes respected") {
    MlpSpec spec{3, {16, 16}, 5, 8};
    const VectorXd zeros = VectorXd::Zero(param_count(spec));
    Rng rng(9);
    for (int rep = 0; rep < 10; ++rep) {
        const VectorXd out = forward(spec, zeros, rng.normal_vector(3), rng.uniform());
        CHECK(out.size() == 5);
        CHECK(out.cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK_THROWS_AS(forward(spec, zeros, VectorXd::Zero(2), 0.5), std::invalid_argument);
}

TEST_CASE("forward: single linear layer equals a direct matrix multiply") {
    MlpSpec spec{3, {}, 2, 4};
    Rng rng(11);
    VectorXd params = init_params(spec, 21);
    // fill the bias too
    params.tail(2) = rng.normal_vector(2);

    const int d0 = spec.feature_dim();
    const Eigen::Map<const MatrixXd> w(params.data(), 2, d0);
    const Eigen::Map<const VectorXd> b(params.data() + 2 * d0, 2);
    for (int rep = 0; rep < 20; ++rep) {
        const VectorXd input = rng.normal_vector(3);
        const double t = rng.uniform();
        VectorXd features(d0);
        features.head(3) = input;
        features.tail(8) = time_embedding(t, 4);
        const VectorXd direct = w * features + b;
        const VectorXd out = forward(spec, params, input, t);
        CHECK((out - direct).cwiseAbs().maxCoeff() < 1e-14);
    }
}

TEST_CASE("forward_batch matches row-by-row forward") {
    MlpSpec spec{4, {32, 32}, 4, 8};
    const VectorXd params = init_params(spec, 31);
    Rng rng(13);
    MatrixXd inputs(7, 4);
    for (int i = 0; i < inputs.size(); ++i) inputs.data()[i] = rng.normal();
    const MatrixXd batch = forward_batch(spec, params, inputs, 0.37);
    for (int r = 0; r < 7; ++r) {
        const VectorXd single = forward(spec, params, inputs.row(r).transpose(), 0.37);
        CHECK((batch.row(r).transpose() - single).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("gradient matches central finite differences for every objective kind") {
    const EstimatorKind kinds[] = {EstimatorKind::Dsm, EstimatorKind::Cde, EstimatorKind::Cdiffe,
                                   EstimatorKind::Cmde};
    for (const auto kind : kinds) {
        CAPTURE(static_cast<int>(kind));
        for (int instance = 0; instance < 10; ++instance) {
            const MultiBlockSdeSpec mspec = spec_for(kind, instance);
            const ObjectiveConfig cfg{kind, instance % 2 == 0 ? WeightingKind::Mle
                                                              : WeightingKind::Unit,
                                      kTime};
            MlpSpec spec{mspec.total_dim(), {24, 16}, diffused_dim(cfg, mspec), 4};
            const VectorXd params = init_params(spec, substream(50, "init", instance));
            const auto batch = random_batch(cfg, mspec, 8, substream(51, "batch", instance));

            const LossGrad lg = loss_and_grad(spec, params, batch, cfg, mspec);
            CHECK(lg.loss >= 0.0);

            Rng rng(substream(52, "coords", instance));
            std::vector<int> coords;
            for (int i = 0; i < 50; ++i) {
                coords.push_back(static_cast<int>(rng.uniform_index(param_count(spec))));
            }
            const VectorXd fd = finite_diff_grad(spec, params, batch, cfg, mspec, coords, 1e-5);
            for (std::size_t i = 0; i < coords.size(); ++i) {
                const double analytic = lg.grad[coords[i]];
                const double denom = std::max(std::abs(fd[i]), 1e-4);
                CHECK(std::abs(analytic - fd[i]) / denom < 1e-4);
            }
        }
    }
}

TEST_CASE("halving the step preserves the finite-difference agreement") {
    const MultiBlockSdeSpec mspec = spec_for(EstimatorKind::Cmde, 3);
    const ObjectiveConfig cfg{EstimatorKind::Cmde, WeightingKind::Mle, kTime};
    MlpSpec spec{mspec.total_dim(), {24}, diffused_dim(cfg, mspec), 4};
    const VectorXd params = init_params(spec, 77);
    const auto batch = random_batch(cfg, mspec, 8, 78);
    const LossGrad lg = loss_and_grad(spec, params, batch, cfg, mspec);

    std::vector<int> coords;
    for (int i = 0; i < 30; ++i) coords.push_back(i * 7 % param_count(spec));
    for (const double h : {1e-4, 1e-5}) {
        const VectorXd fd = finite_diff_grad(spec, params, batch, cfg, mspec, coords, h);
        for (std::size_t i = 0; i < coords.size(); ++i) {
            const double denom = std::max(std::abs(fd[i]), 1e-4);
            CHECK(std::abs(lg.grad[coords[i]] - fd[i]) / denom < 1e-4);
        }
    }
}

TEST_CASE("central differences are exact on quadratics") {
    auto f = [](const VectorXd& p) { return p[0] * p[0]; };
    CHECK(std::abs(central_diff(f, VectorXd::Constant(1, 3.0), 0, 1e-5) - 6.0) < 1e-6);
}

TEST_CASE("batch loss equals the mean of per-sample losses exactly") {
    const MultiBlockSdeSpec mspec = spec_for(EstimatorKind::Cmde, 5);
    const ObjectiveConfig cfg{EstimatorKind::Cmde, WeightingKind::Mle, kTime};
    MlpSpec spec{mspec.total_dim(), {16}, diffused_dim(cfg, mspec), 4};
    const VectorXd params = init_params(spec, 81);
    const auto batch = random_batch(cfg, mspec, 16, 82);

    double total = 0.0;
    for (const auto& s : batch) {
        const VectorXd score = model_score(spec, params, cfg, mspec, s.noised, s.t);
        total += per_sample_loss(cfg, mspec, s.t, s.clean, s.noised, score);
    }
    const double expected = total / static_cast<double>(batch.size());
    CHECK(batch_loss(spec, params, batch, cfg, mspec) == expected);
    CHECK(loss_and_grad(spec, params, batch, cfg, mspec).loss == expected);
}

TEST_CASE("affine net at the exact conditional score is near-minimal; perturbations hurt") {
    // rho = 0.5 bivariate joint at fixed t with v_x = 0.25: the conditional
    // score -(x_t - 0.5 y) / 1.0 is exactly affine in (x_t, y).
    JointGaussianSpec j;
    j.n_x = 1;
    j.n_y = 1;
    j.joint.mean = VectorXd::Zero(2);
    j.joint.covariance.resize(2, 2);
    j.joint.covariance << 1.0, 0.5, 0.5, 1.0;

    MultiBlockSdeSpec mspec;
    mspec.blocks = {{1, VeSdeSpec{1.0, std::sqrt(1.25), 1.0}},  // v(1) = 0.25
                    {1, VeSdeSpec{0.01, 0.01, 1.0}}};
    const ObjectiveConfig cfg{EstimatorKind::Cde, WeightingKind::Unit, kTime};

    const double t = 0.3;  // no sinusoidal feature vanishes here
    const double v = marginal_variance(mspec.blocks[0].spec, t);
    const MatrixXd gain = j.sigma_xy() * psd_inverse(j.sigma_yy());
    const double cond_var = (j.sigma_xx() - gain * j.sigma_yx())(0, 0);

    const int n = 4000;
    Rng rng(91);
    const MatrixXd joint_sqrt = psd_sqrt(j.joint.covariance);
    std::vector<TrainingSample> batch;
    for (int i = 0; i < n; ++i) {
        const VectorXd z0 = joint_sqrt * rng.normal_vector(2);
        TrainingSample s;
        s.t = t;
        s.clean = z0;
        s.noised = z0;
        s.noised[0] += std::sqrt(v) * rng.normal();
        s.target = transition_score(mspec.blocks[0].spec, s.clean.head(1), s.noised.head(1), t);
        batch.push_back(s);
    }

    // The raw net predicts sqrt(v) * score, so the exact affine score maps to
    // sqrt(v)-scaled affine weights.
    MlpSpec spec{2, {}, 1, 4};
    const int d0 = spec.feature_dim();
    const double sd = std::sqrt(v);
    VectorXd exact_params = VectorXd::Zero(param_count(spec));
    exact_params[0] = -sd / (cond_var + v);          // weight on x_t
    exact_params[1] = sd * gain(0, 0) / (cond_var + v);    // weight on y
    const double exact_loss = batch_loss(spec, exact_params, batch, cfg, mspec);

    // batch-optimal affine fit (time features are constants at fixed t, so the
    // affine family over (x_t, y) is exactly representable)
    AffineFitDataset ds;
    ds.inputs.resize(n, 2);
    ds.cde_targets.resize(n, 1);
    ds.true_cond_targets.resize(n, 1);
    for (int i = 0; i < n; ++i) {
        ds.inputs.row(i) = batch[i].noised.transpose();
        ds.cde_targets(i, 0) = batch[i].target[0];
        ds.true_cond_targets(i, 0) = batch[i].target[0];
    }
    const AffineFit fit = fit_affine_score(ds, AffineTarget::CdeTarget);
    VectorXd fit_params = VectorXd::Zero(param_count(spec));
    fit_params[0] = sd * fit.coeff(0, 0);
    fit_params[1] = sd * fit.coeff(0, 1);
    fit_params[d0] = sd * fit.intercept[0];  // bias follows the 1 x d0 weight block
    const double fit_loss = batch_loss(spec, fit_params, batch, cfg, mspec);

    CHECK(exact_loss <= fit_loss * 1.05);

    // From the finite-sample minimizer every perturbation raises the loss
    // (the loss is convex quadratic in the parameters of a linear net). The
    // exact-score initialization sits an O(1/sqrt(n)) gap away, so it only
    // gets a near-minimality bound.
    Rng dir_rng(97);
    for (int rep = 0; rep < 20; ++rep) {
        VectorXd d = dir_rng.normal_vector(param_count(spec));
        d *= 0.1 / d.norm();
        CHECK(batch_loss(spec, fit_params + d, batch, cfg, mspec) > fit_loss);
        CHECK(batch_loss(spec, exact_params + d, batch, cfg, mspec) > exact_loss * 0.995);
    }
}

TEST_CASE("adam: no-op on zero gradient, hand-checked first step, refusal") {
    AdamConfig adam;
    adam.lr = 1e-3;
    VectorXd params = VectorXd::Constant(1, 0.7);
    OptimizerState st = make_optimizer_state(params, adam, 0.999);

    adam_step(st, params, VectorXd::Zero(1));
    CHECK(params[0] == 0.7);  // bias-corrected moments stay zero

    // first real step with g = 1: bias-corrected update is lr / (1 + eps)
    st = make_optimizer_state(params, adam, 0.999);
    adam_step(st, params, VectorXd::Constant(1, 1.0));
    CHECK(params[0] == doctest::Approx(0.7 - 1e-3).epsilon(1e-7));
    CHECK(st.step == 1);

    VectorXd bad = VectorXd::Constant(1, std::nan(""));
    const VectorXd before = params;
    const OptimizerState st_before = st;
    CHECK_THROWS_AS(adam_step(st, params, bad), std::runtime_error);
    CHECK(params == before);
    CHECK(st.step == st_before.step);
    CHECK(st.m == st_before.m);
}

TEST_CASE("ema: fixed point, one-step value, geometric contraction") {
    VectorXd params = VectorXd::Constant(1, 1.0);
    OptimizerState st = make_optimizer_state(params, AdamConfig{}, 0.999);
    ema_update(st, params);
    CHECK(st.ema[0] == 1.0);

    st.ema = VectorXd::Zero(1);
    ema_update(st, params);
    CHECK(st.ema[0] == doctest::Approx(0.001).epsilon(1e-12));

    st.ema = VectorXd::Zero(1);
    double gap = 1.0;
    for (int k = 0; k < 50; ++k) {
        ema_update(st, params);
        gap *= 0.999;
        CHECK(rel_error(1.0 - st.ema[0], gap) < 1e-10);
    }
}

TEST_CASE("training is deterministic and makes progress on the 2-D Gaussian task") {
    MultiBlockSdeSpec mspec;
    mspec.blocks = {{2, kSpec}};
    const ObjectiveConfig cfg{EstimatorKind::Dsm, WeightingKind::Mle, kTime};
    MlpSpec spec{2, {128, 128, 128}, 2, 8};

    GaussianSpec base;
    base.mean = VectorXd::Zero(2);
    base.covariance = MatrixXd::Identity(2, 2);

    auto draw_batch = [&](std::uint64_t seed, int size) {
        Rng rng(seed);
        std::vector<TrainingSample> batch;
        for (int i = 0; i < size; ++i) {
            const VectorXd x0 = sample_gaussian(base, rng);
            batch.push_back(make_training_sample(cfg, mspec, x0, VectorXd(0),
                                                 substream(seed, "noise", i)));
        }
        return batch;
    };

    auto train = [&](std::uint64_t seed, int steps) {
        VectorXd params = init_params(spec, substream(seed, "init"));
        OptimizerState st = make_optimizer_state(params, AdamConfig{}, 0.999);
        for (int step = 0; step < steps; ++step) {
            const auto batch = draw_batch(substream(seed, "batch", step), 50);
            const LossGrad lg = loss_and_grad(spec, params, batch, cfg, mspec);
            adam_step(st, params, lg.grad);
            ema_update(st, params);
        }
        return params;
    };

    // bit-identical trajectories under the same seed
    const VectorXd run_a = train(123, 60);
    const VectorXd run_b = train(123, 60);
    CHECK(run_a == run_b);

    // 2000 steps cut the fixed validation loss by at least half, 5/5 seeds
    const auto val_batch = draw_batch(substream(7777, "val"), 512);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const VectorXd initial = init_params(spec, substream(seed, "init"));
        const double loss0 = batch_loss(spec, initial, val_batch, cfg, mspec);
        const VectorXd trained = train(seed, 2000);
        const double loss1 = batch_loss(spec, trained, val_batch, cfg, mspec);
        CAPTURE(seed);
        CHECK(loss1 < 0.5 * loss0);
    }
}

TEST_CASE("checkpoint round-trips byte-exactly") {
    MlpSpec spec{3, {8, 8}, 3, 4};
    Checkpoint ckpt;
    ckpt.spec = spec;
    ckpt.adam = AdamConfig{3e-4, 0.91, 0.995, 1e-7};
    ckpt.ema_rate = 0.997;
    ckpt.step = 1234;
    ckpt.master_seed = 0xdeadbeefcafef00dULL;
    ckpt.params = init_params(spec, 5);
    ckpt.ema = init_params(spec, 6);

    const std::string dir = std::filesystem::temp_directory_path() / "scorelab_ckpt_test";
    std::filesystem::create_directories(dir);
    const std::string path_a = dir + "/a.bin";
    const std::string path_b = dir + "/b.bin";
    save_checkpoint(path_a, ckpt);
    const Checkpoint loaded = load_checkpoint(path_a);
    CHECK(loaded.params == ckpt.params);
    CHECK(loaded.ema == ckpt.ema);
    CHECK(loaded.step == ckpt.step);
    CHECK(loaded.master_seed == ckpt.master_seed);
    CHECK(loaded.adam.lr == ckpt.adam.lr);
    CHECK(loaded.spec.hidden_widths == spec.hidden_widths);

    save_checkpoint(path_b, loaded);
    std::ifstream fa(path_a, std::ios::binary), fb(path_b, std::ios::binary);
    const std::string bytes_a((std::istreambuf_iterator<char>(fa)),
                              std::istreambuf_iterator<char>());
    const std::string bytes_b((std::istreambuf_iterator<char>(fb)),
                              std::istreambuf_iterator<char>());
    CHECK(bytes_a == bytes_b);
    CHECK(!bytes_a.empty());
}
