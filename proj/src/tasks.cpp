#include "scorelab/tasks.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace scorelab {

void ForwardOperator::validate() const {
    check_arg(input_dim >= 1, "ForwardOperator: input_dim must be >= 1");
    switch (kind) {
        case OperatorKind::Mask:
            check_arg(mask_hidden_len(input_dim) < input_dim,
                      "ForwardOperator: mask would hide every coordinate");
            break;
        case OperatorKind::Pool:
            check_arg(pool_block >= 1, "ForwardOperator: pool block must be >= 1");
            check_arg(input_dim % pool_block == 0,
                      "ForwardOperator: pool block must divide the dimension");
            break;
        case OperatorKind::Linear:
            check_arg(matrix.cols() == input_dim, "ForwardOperator: matrix shape mismatch");
            check_arg(matrix.rows() >= 1, "ForwardOperator: empty matrix");
            check_arg(noise_std >= 0.0, "ForwardOperator: noise_std must be >= 0");
            break;
    }
}

int ForwardOperator::output_dim() const {
    switch (kind) {
        case OperatorKind::Mask:
            return input_dim;
        case OperatorKind::Pool:
            return input_dim / pool_block;
        case OperatorKind::Linear:
            return static_cast<int>(matrix.rows());
    }
    return 0;
}

int mask_hidden_len(int n) { return static_cast<int>(std::ceil(0.25 * n)); }

int mask_offset(const ForwardOperator& op, std::uint64_t seed) {
    check_arg(op.kind == OperatorKind::Mask, "mask_offset: not a mask operator");
    const int span = op.input_dim - mask_hidden_len(op.input_dim);
    Rng rng(substream(seed, "mask"));
    return static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(span) + 1));
}

VectorXd apply_operator(const ForwardOperator& op, const VectorXd& x, std::uint64_t seed) {
    op.validate();
    check_arg(x.size() == op.input_dim, "apply_operator: input dimension mismatch");
    switch (op.kind) {
        case OperatorKind::Mask: {
            VectorXd y = x;
            y.segment(mask_offset(op, seed), mask_hidden_len(op.input_dim)).setZero();
            return y;
        }
        case OperatorKind::Pool: {
            VectorXd y(op.output_dim());
            for (int i = 0; i < y.size(); ++i) {
                y[i] = x.segment(i * op.pool_block, op.pool_block).mean();
            }
            return y;
        }
        case OperatorKind::Linear: {
            VectorXd y = op.matrix * x;
            if (op.noise_std > 0.0) {
                Rng rng(substream(seed, "noise"));
                y += op.noise_std * rng.normal_vector(static_cast<int>(y.size()));
            }
            return y;
        }
    }
    check_arg(false, "apply_operator: unknown operator kind");
    return {};
}

MatrixXd operator_matrix(const ForwardOperator& op, std::uint64_t seed) {
    op.validate();
    switch (op.kind) {
        case OperatorKind::Mask: {
            VectorXd diag = VectorXd::Ones(op.input_dim);
            diag.segment(mask_offset(op, seed), mask_hidden_len(op.input_dim)).setZero();
            return diag.asDiagonal();
        }
        case OperatorKind::Pool: {
            MatrixXd m = MatrixXd::Zero(op.output_dim(), op.input_dim);
            const double w = 1.0 / static_cast<double>(op.pool_block);
            for (int i = 0; i < m.rows(); ++i) {
                m.row(i).segment(i * op.pool_block, op.pool_block).setConstant(w);
            }
            return m;
        }
        case OperatorKind::Linear:
            return op.matrix;
    }
    return {};
}

int base_dim(const BaseDistribution& base) {
    return std::visit([](const auto& b) { return b.dim(); }, base);
}

VectorXd sample_base(const BaseDistribution& base, Rng& rng) {
    if (const auto* g = std::get_if<GaussianSpec>(&base)) return sample_gaussian(*g, rng);
    return sample_gmm(std::get<GmmSpec>(base), rng);
}

TaskDataset make_dataset(const BaseDistribution& base, const ForwardOperator& op, int n,
                         std::uint64_t seed) {
    check_arg(n >= 1, "make_dataset: size must be >= 1");
    op.validate();
    check_arg(base_dim(base) == op.input_dim, "make_dataset: base/operator dimension mismatch");
    TaskDataset ds;
    ds.base = base;
    ds.op = op;
    ds.seed = seed;
    ds.xs.resize(n, op.input_dim);
    ds.ys.resize(n, op.output_dim());
    for (int i = 0; i < n; ++i) {
        Rng rng(substream(seed, "sample", i));
        const VectorXd x = sample_base(base, rng);
        ds.xs.row(i) = x;
        ds.ys.row(i) = apply_operator(op, x, ds.sample_op_seed(i));
    }
    return ds;
}

JointGaussianSpec linear_task_joint(const GaussianSpec& base, const MatrixXd& a, double noise_std) {
    base.validate();
    check_arg(a.cols() == base.dim(), "linear_task_joint: matrix shape mismatch");
    const int n_x = base.dim();
    const int n_y = static_cast<int>(a.rows());
    JointGaussianSpec j;
    j.n_x = n_x;
    j.n_y = n_y;
    j.joint.mean.resize(n_x + n_y);
    j.joint.mean << base.mean, a * base.mean;
    const MatrixXd cross = base.covariance * a.transpose();
    MatrixXd obs = a * base.covariance * a.transpose();
    obs.diagonal().array() += noise_std * noise_std;
    j.joint.covariance.resize(n_x + n_y, n_x + n_y);
    j.joint.covariance.topLeftCorner(n_x, n_x) = base.covariance;
    j.joint.covariance.topRightCorner(n_x, n_y) = cross;
    j.joint.covariance.bottomLeftCorner(n_y, n_x) = cross.transpose();
    j.joint.covariance.bottomRightCorner(n_y, n_y) = 0.5 * (obs + obs.transpose());
    j.validate();
    return j;
}

namespace {

nlohmann::json matrix_to_json(const MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

MatrixXd matrix_from_json(const nlohmann::json& j) {
    check_arg(j.is_array() && !j.empty(), "matrix: expected a non-empty array of rows");
    const int rows = static_cast<int>(j.size());
    const int cols = static_cast<int>(j.at(0).size());
    MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        check_arg(static_cast<int>(j.at(r).size()) == cols, "matrix: ragged rows");
        for (int c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
    }
    return m;
}

void append_doubles_le(std::string& out, const double* data, std::size_t count) {
    const std::size_t start = out.size();
    out.resize(start + 8 * count);
    std::memcpy(out.data() + start, data, 8 * count);
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = start; i < out.size(); i += 8) {
            std::reverse(out.begin() + i, out.begin() + i + 8);
        }
    }
}

void read_doubles_le(const std::string& buf, std::size_t offset, double* data, std::size_t count) {
    check_numeric(offset + 8 * count <= buf.size(), "dataset: truncated payload");
    std::memcpy(data, buf.data() + offset, 8 * count);
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < count; ++i) {
            char* p = reinterpret_cast<char*>(data) + 8 * i;
            std::reverse(p, p + 8);
        }
    }
}

}  // namespace

nlohmann::json gaussian_to_json(const GaussianSpec& g) {
    return {{"mean", std::vector<double>(g.mean.data(), g.mean.data() + g.mean.size())},
            {"covariance", matrix_to_json(g.covariance)}};
}

GaussianSpec gaussian_from_json(const nlohmann::json& j) {
    GaussianSpec g;
    const auto mean = j.at("mean").get<std::vector<double>>();
    g.mean = Eigen::Map<const VectorXd>(mean.data(), static_cast<int>(mean.size()));
    g.covariance = matrix_from_json(j.at("covariance"));
    g.validate();
    return g;
}

nlohmann::json base_to_json(const BaseDistribution& base) {
    if (const auto* g = std::get_if<GaussianSpec>(&base)) {
        nlohmann::json j = gaussian_to_json(*g);
        j["kind"] = "gaussian";
        return j;
    }
    const auto& m = std::get<GmmSpec>(base);
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& c : m.components) {
        nlohmann::json jc = gaussian_to_json(c.gaussian);
        jc["weight"] = c.weight;
        comps.push_back(jc);
    }
    return {{"kind", "gmm"}, {"components", comps}};
}

BaseDistribution base_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "gaussian") {
        nlohmann::json g = j;
        g.erase("kind");
        return gaussian_from_json(g);
    }
    check_arg(kind == "gmm", "base distribution: unknown kind '" + kind + "'");
    GmmSpec m;
    for (const auto& jc : j.at("components")) {
        GmmComponent c;
        c.weight = jc.at("weight").get<double>();
        nlohmann::json g = jc;
        g.erase("weight");
        c.gaussian = gaussian_from_json(g);
        m.components.push_back(c);
    }
    m.validate();
    return m;
}

nlohmann::json operator_to_json(const ForwardOperator& op) {
    switch (op.kind) {
        case OperatorKind::Mask:
            return {{"kind", "mask"}, {"input_dim", op.input_dim}};
        case OperatorKind::Pool:
            return {{"kind", "pool"}, {"input_dim", op.input_dim}, {"pool_block", op.pool_block}};
        case OperatorKind::Linear:
            return {{"kind", "linear"},
                    {"input_dim", op.input_dim},
                    {"matrix", matrix_to_json(op.matrix)},
                    {"noise_std", op.noise_std}};
    }
    return {};
}

ForwardOperator operator_from_json(const nlohmann::json& j) {
    ForwardOperator op;
    const std::string kind = j.at("kind").get<std::string>();
    op.input_dim = j.at("input_dim").get<int>();
    if (kind == "mask") {
        op.kind = OperatorKind::Mask;
    } else if (kind == "pool") {
        op.kind = OperatorKind::Pool;
        op.pool_block = j.at("pool_block").get<int>();
    } else if (kind == "linear") {
        op.kind = OperatorKind::Linear;
        op.matrix = matrix_from_json(j.at("matrix"));
        op.noise_std = j.value("noise_std", 0.0);
    } else {
        check_arg(false, "operator: unknown kind '" + kind + "'");
    }
    op.validate();
    return op;
}

void save_dataset(const std::string& path, const TaskDataset& ds) {
    nlohmann::json header = {
        {"format", "scorelab-dataset-v1"},
        {"base", base_to_json(ds.base)},
        {"operator", operator_to_json(ds.op)},
        {"seed", ds.seed},
        {"n", ds.size()},
        {"x_dim", ds.xs.cols()},
        {"y_dim", ds.ys.cols()},
    };
    std::string blob = header.dump();
    blob.push_back('\n');
    // Row-major so the file layout is sample-after-sample.
    for (int i = 0; i < ds.xs.rows(); ++i) {
        const VectorXd row = ds.xs.row(i);
        append_doubles_le(blob, row.data(), static_cast<std::size_t>(row.size()));
    }
    for (int i = 0; i < ds.ys.rows(); ++i) {
        const VectorXd row = ds.ys.row(i);
        append_doubles_le(blob, row.data(), static_cast<std::size_t>(row.size()));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    check_numeric(out.good(), "dataset: cannot open " + path + " for writing");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    check_numeric(out.good(), "dataset: write failed for " + path);
}

TaskDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check_numeric(in.good(), "dataset: cannot open " + path);
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t newline = blob.find('\n');
    check_numeric(newline != std::string::npos, "dataset: missing header line");
    const nlohmann::json header = nlohmann::json::parse(blob.substr(0, newline));
    check_numeric(header.at("format") == "scorelab-dataset-v1", "dataset: unknown format");

    TaskDataset ds;
    ds.base = base_from_json(header.at("base"));
    ds.op = operator_from_json(header.at("operator"));
    ds.seed = header.at("seed").get<std::uint64_t>();
    const int n = header.at("n").get<int>();
    const int x_dim = header.at("x_dim").get<int>();
    const int y_dim = header.at("y_dim").get<int>();
    ds.xs.resize(n, x_dim);
    ds.ys.resize(n, y_dim);
    std::size_t off = newline + 1;
    VectorXd row(x_dim);
    for (int i = 0; i < n; ++i) {
        read_doubles_le(blob, off, row.data(), static_cast<std::size_t>(x_dim));
        ds.xs.row(i) = row;
        off += 8 * static_cast<std::size_t>(x_dim);
    }
    VectorXd yrow(y_dim);
    for (int i = 0; i < n; ++i) {
        read_doubles_le(blob, off, yrow.data(), static_cast<std::size_t>(y_dim));
        ds.ys.row(i) = yrow;
        off += 8 * static_cast<std::size_t>(y_dim);
    }
    return ds;
}

}  // namespace scorelab
