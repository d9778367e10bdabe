#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace scorelab {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Argument/shape violations. Thrown eagerly so misconfiguration fails at the
// call site instead of producing silently wrong numbers downstream.
inline void check_arg(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

inline void check_domain(bool ok, const std::string& msg) {
    if (!ok) throw std::domain_error(msg);
}

inline void check_numeric(bool ok, const std::string& msg) {
    if (!ok) throw std::runtime_error(msg);
}

}  // namespace scorelab
