#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace mlvamp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Inconsistent shapes, layer ordering or parameter ranges.
class ModelError : public Error {
public:
    using Error::Error;
};

// Malformed model / observation / config documents.
class ParseError : public Error {
public:
    using Error::Error;
};

// A message became NaN or infinite during a run.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, int half_iteration, int node)
        : Error(what), half_iteration_(half_iteration), node_(node) {}

    int half_iteration() const noexcept { return half_iteration_; }
    int node() const noexcept { return node_; }

private:
    int half_iteration_;
    int node_;
};

// The requested operation is not defined for this network structure.
class UnsupportedError : public Error {
public:
    using Error::Error;
};

inline bool all_finite(const Vec& v) { return v.allFinite(); }

// 10 log10(err/ref); exact recovery maps to -inf.
inline double ratio_db(double err, double ref) {
    if (err <= 0.0) return -kInf;
    return 10.0 * std::log10(err / ref);
}

} // namespace mlvamp
