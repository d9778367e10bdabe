#include "scorelab/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace scorelab {

void MlpSpec::validate() const {
    check_arg(input_dim >= 1, "MlpSpec: input_dim must be >= 1");
    check_arg(output_dim >= 1, "MlpSpec: output_dim must be >= 1");
    check_arg(time_features >= 0, "MlpSpec: time_features must be >= 0");
    for (int w : hidden_widths) check_arg(w >= 1, "MlpSpec: zero-width hidden layer");
}

std::vector<int> MlpSpec::layer_widths() const {
    std::vector<int> widths;
    widths.push_back(feature_dim());
    widths.insert(widths.end(), hidden_widths.begin(), hidden_widths.end());
    widths.push_back(output_dim);
    return widths;
}

int param_count(const MlpSpec& spec) {
    const auto widths = spec.layer_widths();
    int n = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += widths[l + 1] * (widths[l] + 1);
    return n;
}

namespace {

// Flat layout per layer: weight matrix (column-major, out x in), then bias.
struct LayerMap {
    Eigen::Map<const MatrixXd> w;
    Eigen::Map<const VectorXd> b;
};

std::vector<LayerMap> map_layers(const MlpSpec& spec, const VectorXd& params) {
    check_arg(params.size() == param_count(spec), "parameter vector length mismatch");
    const auto widths = spec.layer_widths();
    std::vector<LayerMap> layers;
    const double* p = params.data();
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const int rows = widths[l + 1];
        const int cols = widths[l];
        layers.push_back({Eigen::Map<const MatrixXd>(p, rows, cols),
                          Eigen::Map<const VectorXd>(p + rows * cols, rows)});
        p += rows * (cols + 1);
    }
    return layers;
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double silu_prime(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

}  // namespace

VectorXd init_params(const MlpSpec& spec, std::uint64_t seed) {
    spec.validate();
    VectorXd params = VectorXd::Zero(param_count(spec));
    const auto widths = spec.layer_widths();
    Rng rng(substream(seed, "init"));
    double* p = params.data();
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const int rows = widths[l + 1];
        const int cols = widths[l];
        const double sd = std::sqrt(2.0 / static_cast<double>(cols));
        for (int i = 0; i < rows * cols; ++i) p[i] = sd * rng.normal();
        // biases stay zero
        p += rows * (cols + 1);
    }
    return params;
}

VectorXd time_embedding(double t, int pairs) {
    VectorXd f(2 * pairs);
    double freq = M_PI;
    for (int k = 0; k < pairs; ++k) {
        f[2 * k] = std::sin(freq * t);
        f[2 * k + 1] = std::cos(freq * t);
        freq *= 2.0;
    }
    return f;
}

VectorXd forward(const MlpSpec& spec, const VectorXd& params, const VectorXd& input, double t) {
    check_arg(input.size() == spec.input_dim, "forward: input dimension mismatch");
    check_numeric(input.allFinite(), "forward: non-finite input");
    const auto layers = map_layers(spec, params);
    VectorXd h(spec.feature_dim());
    h.head(spec.input_dim) = input;
    h.tail(2 * spec.time_features) = time_embedding(t, spec.time_features);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        VectorXd a = layers[l].w * h + layers[l].b;
        if (l + 1 < layers.size()) {
            for (int i = 0; i < a.size(); ++i) a[i] = silu(a[i]);
        }
        h = std::move(a);
    }
    return h;
}

MatrixXd forward_batch(const MlpSpec& spec, const VectorXd& params, const MatrixXd& inputs,
                       double t) {
    check_arg(inputs.cols() == spec.input_dim, "forward_batch: input dimension mismatch");
    check_numeric(inputs.allFinite(), "forward_batch: non-finite input");
    const auto layers = map_layers(spec, params);
    MatrixXd h(inputs.rows(), spec.feature_dim());
    h.leftCols(spec.input_dim) = inputs;
    h.rightCols(2 * spec.time_features) =
        time_embedding(t, spec.time_features).transpose().replicate(inputs.rows(), 1);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        MatrixXd a = (h * layers[l].w.transpose()).rowwise() + layers[l].b.transpose();
        if (l + 1 < layers.size()) {
            for (int i = 0; i < a.size(); ++i) a.data()[i] = silu(a.data()[i]);
        }
        h = std::move(a);
    }
    return h;
}

VectorXd score_scales(const ObjectiveConfig& cfg, const MultiBlockSdeSpec& mspec, double t) {
    VectorXd s(diffused_dim(cfg, mspec));
    int off = 0;
    for (int b : diffused_blocks(cfg, mspec)) {
        const auto& blk = mspec.blocks[b];
        s.segment(off, blk.dim).setConstant(std::sqrt(marginal_variance(blk.spec, t)));
        off += blk.dim;
    }
    return s;
}

VectorXd model_score(const MlpSpec& spec, const VectorXd& params, const ObjectiveConfig& cfg,
                     const MultiBlockSdeSpec& mspec, const VectorXd& input, double t) {
    const VectorXd scales = score_scales(cfg, mspec, t);
    VectorXd out = forward(spec, params, input, t);
    check_arg(out.size() == scales.size(), "model_score: output/diffused-dim mismatch");
    for (int i = 0; i < out.size(); ++i) out[i] /= scales[i];
    return out;
}

namespace {

// Shared forward pass over a batch with per-sample times. Activations are kept
// when the caller needs the backward pass.
struct BatchTrace {
    MatrixXd features;
    std::vector<MatrixXd> pre_act;    // A_l
    std::vector<MatrixXd> post_act;   // H_l (post SiLU; last layer linear)
    std::vector<VectorXd> weights;    // per-sample loss weights over diffused coords
    std::vector<VectorXd> scales;     // per-sample output-to-score scales
    double loss = 0.0;
};

BatchTrace run_batch(const MlpSpec& spec, const VectorXd& params,
                     const std::vector<TrainingSample>& batch, const ObjectiveConfig& cfg,
                     const MultiBlockSdeSpec& mspec, bool keep_activations) {
    check_arg(!batch.empty(), "loss: empty batch");
    check_arg(spec.input_dim == mspec.total_dim(), "loss: network input must span all blocks");
    check_arg(spec.output_dim == diffused_dim(cfg, mspec),
              "loss: network output must span the diffused coordinates");
    const int b_size = static_cast<int>(batch.size());
    const auto layers = map_layers(spec, params);

    BatchTrace trace;
    trace.features.resize(b_size, spec.feature_dim());
    for (int b = 0; b < b_size; ++b) {
        check_arg(batch[b].noised.size() == spec.input_dim, "loss: sample dimension mismatch");
        check_arg(batch[b].target.size() == spec.output_dim, "loss: target dimension mismatch");
        trace.features.row(b).head(spec.input_dim) = batch[b].noised;
        trace.features.row(b).tail(2 * spec.time_features) =
            time_embedding(batch[b].t, spec.time_features);
    }

    MatrixXd h = trace.features;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        MatrixXd a = (h * layers[l].w.transpose()).rowwise() + layers[l].b.transpose();
        if (keep_activations) trace.pre_act.push_back(a);
        if (l + 1 < layers.size()) {
            for (int i = 0; i < a.size(); ++i) a.data()[i] = silu(a.data()[i]);
        }
        if (keep_activations) trace.post_act.push_back(a);
        h = std::move(a);
    }

    // Same per-coordinate arithmetic as objectives::per_sample_loss applied to
    // the rescaled outputs, so the batch loss is exactly the mean of the
    // per-sample losses of the model's score estimates.
    double total = 0.0;
    trace.weights.reserve(b_size);
    trace.scales.reserve(b_size);
    for (int b = 0; b < b_size; ++b) {
        const VectorXd w = loss_weight_vector(cfg, mspec, batch[b].t);
        const VectorXd s = score_scales(cfg, mspec, batch[b].t);
        double sample_loss = 0.0;
        for (int i = 0; i < spec.output_dim; ++i) {
            const double v = batch[b].target[i] - h(b, i) / s[i];
            sample_loss += 0.5 * w[i] * v * v;
        }
        total += sample_loss;
        trace.weights.push_back(w);
        trace.scales.push_back(s);
    }
    trace.loss = total / static_cast<double>(b_size);
    return trace;
}

}  // namespace

double batch_loss(const MlpSpec& spec, const VectorXd& params,
                  const std::vector<TrainingSample>& batch, const ObjectiveConfig& cfg,
                  const MultiBlockSdeSpec& mspec) {
    return run_batch(spec, params, batch, cfg, mspec, false).loss;
}

LossGrad loss_and_grad(const MlpSpec& spec, const VectorXd& params,
                       const std::vector<TrainingSample>& batch, const ObjectiveConfig& cfg,
                       const MultiBlockSdeSpec& mspec) {
    BatchTrace trace = run_batch(spec, params, batch, cfg, mspec, true);
    const int b_size = static_cast<int>(batch.size());
    const auto widths = spec.layer_widths();
    const int n_layers = static_cast<int>(widths.size()) - 1;

    LossGrad result;
    result.loss = trace.loss;
    result.grad = VectorXd::Zero(param_count(spec));

    // dLoss/dOut, row per sample (chain rule through the output rescale).
    MatrixXd delta(b_size, spec.output_dim);
    const MatrixXd& out = trace.post_act.back();
    for (int b = 0; b < b_size; ++b) {
        for (int i = 0; i < spec.output_dim; ++i) {
            const double s = trace.scales[b][i];
            delta(b, i) = trace.weights[b][i] * (out(b, i) / s - batch[b].target[i]) /
                          (s * static_cast<double>(b_size));
        }
    }

    // Segment offsets mirror map_layers.
    std::vector<int> offsets(n_layers);
    int off = 0;
    for (int l = 0; l < n_layers; ++l) {
        offsets[l] = off;
        off += widths[l + 1] * (widths[l] + 1);
    }

    const auto layers = map_layers(spec, params);
    for (int l = n_layers - 1; l >= 0; --l) {
        const MatrixXd& below = l == 0 ? trace.features : trace.post_act[l - 1];
        Eigen::Map<MatrixXd> grad_w(result.grad.data() + offsets[l], widths[l + 1], widths[l]);
        Eigen::Map<VectorXd> grad_b(result.grad.data() + offsets[l] + widths[l + 1] * widths[l],
                                    widths[l + 1]);
        grad_w = delta.transpose() * below;
        grad_b = delta.colwise().sum().transpose();
        if (l > 0) {
            MatrixXd next = delta * layers[l].w;
            const MatrixXd& a = trace.pre_act[l - 1];
            for (int i = 0; i < next.size(); ++i) next.data()[i] *= silu_prime(a.data()[i]);
            delta = std::move(next);
        }
    }
    return result;
}

VectorXd finite_diff_grad(const MlpSpec& spec, const VectorXd& params,
                          const std::vector<TrainingSample>& batch, const ObjectiveConfig& cfg,
                          const MultiBlockSdeSpec& mspec, const std::vector<int>& coords, double h) {
    check_arg(h > 0.0, "finite_diff_grad: step must be positive");
    VectorXd p = params;
    VectorXd partials(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const int c = coords[i];
        check_arg(c >= 0 && c < params.size(), "finite_diff_grad: coordinate out of range");
        const double saved = p[c];
        p[c] = saved + h;
        const double up = batch_loss(spec, p, batch, cfg, mspec);
        p[c] = saved - h;
        const double down = batch_loss(spec, p, batch, cfg, mspec);
        p[c] = saved;
        partials[i] = (up - down) / (2.0 * h);
    }
    return partials;
}

OptimizerState make_optimizer_state(const VectorXd& initial_params, const AdamConfig& adam,
                                    double ema_rate) {
    check_arg(ema_rate > 0.0 && ema_rate < 1.0, "OptimizerState: EMA rate must lie in (0, 1)");
    OptimizerState st;
    st.m = VectorXd::Zero(initial_params.size());
    st.v = VectorXd::Zero(initial_params.size());
    st.adam = adam;
    st.ema = initial_params;
    st.ema_rate = ema_rate;
    return st;
}

void adam_step(OptimizerState& state, VectorXd& params, const VectorXd& grad) {
    check_arg(params.size() == state.m.size() && grad.size() == state.m.size(),
              "adam_step: shape mismatch");
    check_numeric(grad.allFinite(), "adam_step: non-finite gradient, step refused");
    state.step += 1;
    const auto& a = state.adam;
    state.m = a.beta1 * state.m + (1.0 - a.beta1) * grad;
    state.v.array() = a.beta2 * state.v.array() + (1.0 - a.beta2) * grad.array().square();
    const double bias1 = 1.0 - std::pow(a.beta1, static_cast<double>(state.step));
    const double bias2 = 1.0 - std::pow(a.beta2, static_cast<double>(state.step));
    params.array() -=
        a.lr * (state.m.array() / bias1) / ((state.v.array() / bias2).sqrt() + a.eps);
}

void ema_update(OptimizerState& state, const VectorXd& params) {
    check_arg(params.size() == state.ema.size(), "ema_update: shape mismatch");
    state.ema = state.ema_rate * state.ema + (1.0 - state.ema_rate) * params;
}

namespace {

void append_doubles_le(std::string& out, const VectorXd& v) {
    static_assert(sizeof(double) == 8);
    const std::size_t start = out.size();
    out.resize(start + 8 * static_cast<std::size_t>(v.size()));
    std::memcpy(out.data() + start, v.data(), 8 * static_cast<std::size_t>(v.size()));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = start; i < out.size(); i += 8) {
            std::reverse(out.begin() + i, out.begin() + i + 8);
        }
    }
}

VectorXd read_doubles_le(const std::string& buf, std::size_t offset, int count) {
    check_numeric(offset + 8 * static_cast<std::size_t>(count) <= buf.size(),
                  "checkpoint: truncated payload");
    VectorXd v(count);
    std::memcpy(v.data(), buf.data() + offset, 8 * static_cast<std::size_t>(count));
    if constexpr (std::endian::native == std::endian::big) {
        for (int i = 0; i < count; ++i) {
            char* p = reinterpret_cast<char*>(v.data()) + 8 * i;
            std::reverse(p, p + 8);
        }
    }
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    check_arg(ckpt.params.size() == param_count(ckpt.spec), "checkpoint: params length mismatch");
    check_arg(ckpt.ema.size() == ckpt.params.size(), "checkpoint: EMA length mismatch");
    nlohmann::json header = {
        {"format", "scorelab-checkpoint-v1"},
        {"input_dim", ckpt.spec.input_dim},
        {"hidden_widths", ckpt.spec.hidden_widths},
        {"output_dim", ckpt.spec.output_dim},
        {"time_features", ckpt.spec.time_features},
        {"lr", ckpt.adam.lr},
        {"beta1", ckpt.adam.beta1},
        {"beta2", ckpt.adam.beta2},
        {"eps_adam", ckpt.adam.eps},
        {"ema_rate", ckpt.ema_rate},
        {"step", ckpt.step},
        {"master_seed", ckpt.master_seed},
        {"param_count", ckpt.params.size()},
    };
    std::string blob = header.dump();
    blob.push_back('\n');
    append_doubles_le(blob, ckpt.params);
    append_doubles_le(blob, ckpt.ema);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    check_numeric(out.good(), "checkpoint: cannot open " + path + " for writing");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    check_numeric(out.good(), "checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check_numeric(in.good(), "checkpoint: cannot open " + path);
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t newline = blob.find('\n');
    check_numeric(newline != std::string::npos, "checkpoint: missing header line");
    const nlohmann::json header = nlohmann::json::parse(blob.substr(0, newline));
    check_numeric(header.at("format") == "scorelab-checkpoint-v1", "checkpoint: unknown format");

    Checkpoint ckpt;
    ckpt.spec.input_dim = header.at("input_dim").get<int>();
    ckpt.spec.hidden_widths = header.at("hidden_widths").get<std::vector<int>>();
    ckpt.spec.output_dim = header.at("output_dim").get<int>();
    ckpt.spec.time_features = header.at("time_features").get<int>();
    ckpt.adam.lr = header.at("lr").get<double>();
    ckpt.adam.beta1 = header.at("beta1").get<double>();
    ckpt.adam.beta2 = header.at("beta2").get<double>();
    ckpt.adam.eps = header.at("eps_adam").get<double>();
    ckpt.ema_rate = header.at("ema_rate").get<double>();
    ckpt.step = header.at("step").get<long long>();
    ckpt.master_seed = header.at("master_seed").get<std::uint64_t>();
    const int count = header.at("param_count").get<int>();
    check_numeric(count == param_count(ckpt.spec), "checkpoint: parameter count mismatch");
    ckpt.params = read_doubles_le(blob, newline + 1, count);
    ckpt.ema = read_doubles_le(blob, newline + 1 + 8 * static_cast<std::size_t>(count), count);
    return ckpt;
}

}  // namespace scorelab
