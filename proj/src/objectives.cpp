#include "scorelab/objectives.hpp"

namespace scorelab {

void validate_objective(const ObjectiveConfig& cfg, const MultiBlockSdeSpec& mspec) {
    mspec.validate();
    cfg.time_mode.validate();
    switch (cfg.estimator) {
        case EstimatorKind::Dsm:
            check_arg(mspec.blocks.size() == 1, "Dsm objective expects a single-block SDE spec");
            break;
        case EstimatorKind::Cde:
            check_arg(mspec.blocks.size() == 2, "Cde objective expects a two-block SDE spec");
            check_arg(mspec.blocks[1].spec.frozen(), "Cde requires an undiffused y block");
            break;
        case EstimatorKind::Cdiffe: {
            check_arg(mspec.blocks.size() == 2, "Cdiffe objective expects a two-block SDE spec");
            const auto& x = mspec.blocks[0].spec;
            const auto& y = mspec.blocks[1].spec;
            check_arg(x.sigma_min == y.sigma_min && x.sigma_max == y.sigma_max,
                      "Cdiffe requires x and y to diffuse at the same speed");
            break;
        }
        case EstimatorKind::Cmde:
            check_arg(mspec.blocks.size() == 2, "Cmde objective expects a two-block SDE spec");
            break;
    }
    check_arg(!mspec.blocks[0].spec.frozen(), "objective requires a diffusing x block");
}

double dsm_weight(WeightingKind kind, const VeSdeSpec& spec, double t) {
    return kind == WeightingKind::Unit ? 1.0 : marginal_variance(spec, t);
}

WeightMatrix mle_weight_matrix(const MultiBlockSdeSpec& mspec, double t) {
    check_arg(mspec.blocks.size() == 2, "mle_weight_matrix: expected a two-block SDE spec");
    WeightMatrix w;
    w.diagonal.resize(mspec.total_dim());
    int off = 0;
    for (const auto& blk : mspec.blocks) {
        w.diagonal.segment(off, blk.dim).setConstant(dsm_weight(WeightingKind::Mle, blk.spec, t));
        off += blk.dim;
    }
    return w;
}

std::vector<int> diffused_blocks(const ObjectiveConfig& cfg, const MultiBlockSdeSpec& mspec) {
    if (cfg.estimator == EstimatorKind::Dsm || cfg.estimator == EstimatorKind::Cde) return {0};
    std::vector<int> blocks;
    for (int b = 0; b < static_cast<int>(mspec.blocks.size()); ++b) {
        if (!mspec.blocks[b].spec.frozen()) blocks.push_back(b);
    }
    return blocks;
}

int diffused_dim(const ObjectiveConfig& cfg, const MultiBlockSdeSpec& mspec) {
    int n = 0;
    for (int b : diffused_blocks(cfg, mspec)) n += mspec.blocks[b].dim;
    return n;
}

VectorXd loss_weight_vector(const ObjectiveConfig& cfg, const MultiBlockSdeSpec& mspec, double t) {
    VectorXd w(diffused_dim(cfg, mspec));
    int off = 0;
    for (int b : diffused_blocks(cfg, mspec)) {
        const auto& blk = mspec.blocks[b];
        w.segment(off, blk.dim).setConstant(dsm_weight(cfg.weighting, blk.spec, t));
        off += blk.dim;
    }
    return w;
}

double per_sample_loss(const ObjectiveConfig& cfg, const MultiBlockSdeSpec& mspec, double t,
                       const VectorXd& clean, const VectorXd& noised, const VectorXd& model_out) {
    check_arg(clean.size() == mspec.total_dim() && noised.size() == mspec.total_dim(),
              "per_sample_loss: clean/noised dimension mismatch");
    check_arg(model_out.size() == diffused_dim(cfg, mspec),
              "per_sample_loss: model output must span the diffused coordinates");
    if (cfg.estimator == EstimatorKind::Cde) {
        const int n_y = mspec.blocks[1].dim;
        check_arg(noised.tail(n_y) == clean.tail(n_y),
                  "per_sample_loss: Cde requires the y part of `noised` to equal clean y");
    }

    double loss = 0.0;
    int out_off = 0;
    for (int b : diffused_blocks(cfg, mspec)) {
        const auto& blk = mspec.blocks[b];
        const int z_off = mspec.block_offset(b);
        const VectorXd target = transition_score(blk.spec, clean.segment(z_off, blk.dim),
                                                 noised.segment(z_off, blk.dim), t);
        const double w = dsm_weight(cfg.weighting, blk.spec, t);
        const VectorXd v = target - model_out.segment(out_off, blk.dim);
        for (int i = 0; i < blk.dim; ++i) loss += 0.5 * w * v[i] * v[i];
        out_off += blk.dim;
    }
    return loss;
}

TrainingSample make_training_sample(const ObjectiveConfig& cfg, const MultiBlockSdeSpec& mspec,
                                    const VectorXd& x0, const VectorXd& y, std::uint64_t seed) {
    check_arg(x0.size() == mspec.blocks[0].dim, "make_training_sample: x dimension mismatch");
    const int expected_y = mspec.blocks.size() > 1 ? mspec.blocks[1].dim : 0;
    check_arg(y.size() == expected_y, "make_training_sample: y dimension mismatch");

    TrainingSample s;
    Rng time_rng(substream(seed, "time"));
    s.t = draw_time(cfg.time_mode, time_rng);

    s.clean.resize(mspec.total_dim());
    s.clean.head(x0.size()) = x0;
    if (expected_y > 0) s.clean.tail(expected_y) = y;

    s.noised = s.clean;
    s.target.resize(diffused_dim(cfg, mspec));
    int out_off = 0;
    for (int b : diffused_blocks(cfg, mspec)) {
        const auto& blk = mspec.blocks[b];
        const int z_off = mspec.block_offset(b);
        Rng rng(substream(seed, "block", static_cast<std::uint64_t>(b)));
        s.noised.segment(z_off, blk.dim) =
            transition_sample(blk.spec, s.clean.segment(z_off, blk.dim), s.t, rng);
        s.target.segment(out_off, blk.dim) = transition_score(
            blk.spec, s.clean.segment(z_off, blk.dim), s.noised.segment(z_off, blk.dim), s.t);
        out_off += blk.dim;
    }
    return s;
}

}  // namespace scorelab
