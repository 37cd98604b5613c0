#pragma once

// Multi-layer stochastic network: definition, sampling, SVD form and the
// synthetic random-network generator.

#include "mlvamp/common.hpp"
#include "mlvamp/random.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace mlvamp {

enum class Activation { relu, identity };

inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

inline double activate(Activation a, double x) { return a == Activation::relu ? std::max(0.0, x) : x; }

// z_out = W z_in + b + xi, xi ~ N(0, 1/noise_precision). noise_precision = inf is noiseless.
struct LinearLayer {
    Mat weights;
    Vec bias;
    double noise_precision = kInf;

    Index in_dim() const { return weights.cols(); }
    Index out_dim() const { return weights.rows(); }
    bool noiseless() const { return std::isinf(noise_precision); }
};

// Deterministic componentwise activation.
struct NonlinearLayer {
    Activation activation = Activation::relu;
    Index dim = 0;
};

using Layer = std::variant<LinearLayer, NonlinearLayer>;

struct GaussianPrior {
    double precision = 1.0;
};

// Ordered alternating layer list: layer 1 (index 0) is linear, layer 2 is
// nonlinear, and so on; the layer count is even. Immutable once built.
class Network {
public:
    Network(Index input_dim, GaussianPrior prior, std::vector<Layer> layers)
        : input_dim_(input_dim), prior_(prior), layers_(std::move(layers)) {
        validate();
    }

    Index input_dim() const { return input_dim_; }
    const GaussianPrior& prior() const { return prior_; }
    const std::vector<Layer>& layers() const { return layers_; }
    std::size_t num_layers() const { return layers_.size(); }

    // 1-based layer index, matching z_l = layer_l(z_{l-1}).
    const Layer& layer(std::size_t l) const { return layers_.at(l - 1); }
    const LinearLayer& linear(std::size_t l) const { return std::get<LinearLayer>(layer(l)); }
    const NonlinearLayer& nonlinear(std::size_t l) const { return std::get<NonlinearLayer>(layer(l)); }

    // N_0 ... N_L
    std::vector<Index> dims() const {
        std::vector<Index> d{input_dim_};
        for (const auto& layer : layers_) {
            if (auto* lin = std::get_if<LinearLayer>(&layer))
                d.push_back(lin->out_dim());
            else
                d.push_back(std::get<NonlinearLayer>(layer).dim);
        }
        return d;
    }

    Index output_dim() const { return dims().back(); }

    std::size_t num_linear() const { return layers_.size() / 2; }

private:
    void validate() const {
        if (input_dim_ <= 0) throw ModelError("network: input_dim must be positive");
        if (!(prior_.precision > 0.0) || !std::isfinite(prior_.precision))
            throw ModelError("network: prior precision must be positive and finite");
        if (layers_.empty() || layers_.size() % 2 != 0)
            throw ModelError("network: layer count must be even and nonzero, got " + std::to_string(layers_.size()));
        Index dim = input_dim_;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const std::size_t l = i + 1;
            const std::string tag = "layer " + std::to_string(l);
            if (l % 2 == 1) {
                auto* lin = std::get_if<LinearLayer>(&layers_[i]);
                if (!lin) throw ModelError(tag + ": expected a linear layer at an odd position");
                if (lin->in_dim() != dim)
                    throw ModelError(tag + ": weights have " + std::to_string(lin->in_dim()) + " columns, expected " +
                                     std::to_string(dim));
                if (lin->out_dim() <= 0) throw ModelError(tag + ": weights must have at least one row");
                if (lin->bias.size() != lin->out_dim())
                    throw ModelError(tag + ": bias length " + std::to_string(lin->bias.size()) + " does not match " +
                                     std::to_string(lin->out_dim()) + " rows");
                if (!(lin->noise_precision > 0.0))
                    throw ModelError(tag + ": noise precision must be positive or infinite");
                if (!lin->weights.allFinite() || !lin->bias.allFinite())
                    throw ModelError(tag + ": non-finite weights or bias");
                dim = lin->out_dim();
            } else {
                auto* nl = std::get_if<NonlinearLayer>(&layers_[i]);
                if (!nl) throw ModelError(tag + ": expected a nonlinear layer at an even position");
                if (nl->dim != dim)
                    throw ModelError(tag + ": dim " + std::to_string(nl->dim) + " does not match input " +
                                     std::to_string(dim));
            }
        }
    }

    Index input_dim_;
    GaussianPrior prior_;
    std::vector<Layer> layers_;
};

// W = v_out * Sigma * v_in with Sigma = [diag(s) 0; 0 0] (N_out x N_in).
struct LinearLayerSVD {
    Mat v_out;  // N_out x N_out
    Mat v_in;   // N_in x N_in
    Vec sbar;   // length N_out, descending, zero beyond rank
    Index rank = 0;
    Vec bbar;   // v_out^T b
    double noise_precision = kInf;

    Index in_dim() const { return v_in.rows(); }
    Index out_dim() const { return v_out.rows(); }
    bool noiseless() const { return std::isinf(noise_precision); }

    // singular value paired with transformed coordinate n (0 where one side is missing)
    double s(Index n) const { return n < sbar.size() && n < in_dim() ? sbar[n] : 0.0; }

    Mat weights() const {
        const Index m = std::min(in_dim(), out_dim());
        return v_out.leftCols(m) * sbar.head(m).asDiagonal() * v_in.topRows(m);
    }
};

inline double max_orthogonality_error(const Mat& v) {
    return (v * v.transpose() - Mat::Identity(v.rows(), v.rows())).cwiseAbs().maxCoeff();
}

inline LinearLayerSVD decompose_linear(const LinearLayer& layer) {
    const Mat& w = layer.weights;
    Eigen::BDCSVD<Mat> svd(w, Eigen::ComputeFullU | Eigen::ComputeFullV);
    if (svd.info() != Eigen::Success) throw Error("decompose_linear: SVD did not converge");

    LinearLayerSVD out;
    out.v_out = svd.matrixU();
    out.v_in = svd.matrixV().transpose();
    out.noise_precision = layer.noise_precision;

    const Vec& sv = svd.singularValues();  // descending
    out.sbar = Vec::Zero(w.rows());
    const double smax = sv.size() > 0 ? sv[0] : 0.0;
    const double tol = static_cast<double>(std::max(w.rows(), w.cols())) * std::numeric_limits<double>::epsilon() * smax;
    for (Index i = 0; i < sv.size(); ++i) {
        if (sv[i] > tol && sv[i] > 0.0) {
            out.sbar[i] = sv[i];
            out.rank = i + 1;
        }
    }
    out.bbar = out.v_out.transpose() * layer.bias;
    return out;
}

// Factors already known (e.g. built from Haar matrices): no decomposition needed.
inline LinearLayerSVD linear_svd_from_factors(Mat v_out, Mat v_in, const Vec& s, const Vec& bias,
                                              double noise_precision) {
    LinearLayerSVD out;
    const Index n_out = v_out.rows();
    out.sbar = Vec::Zero(n_out);
    out.sbar.head(s.size()) = s;
    out.rank = (s.array() > 0.0).count();
    out.bbar = v_out.transpose() * bias;
    out.v_out = std::move(v_out);
    out.v_in = std::move(v_in);
    out.noise_precision = noise_precision;
    return out;
}

// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
// signs of diag(R) folded into Q.
inline Mat haar_orthogonal(Index n, Rng& rng) {
    Mat g = rng.normal_mat(n, n);
    Eigen::HouseholderQR<Mat> qr(g);
    Mat q = qr.householderQ();
    const Mat& r = qr.matrixQR();
    for (Index j = 0; j < n; ++j)
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    return q;
}

struct ConditionedMatrix {
    Mat matrix;  // rows x cols
    Mat u;       // rows x rows
    Mat v;       // cols x cols, matrix = u * diag(s) * v^T
    Vec s;       // min(rows, cols), descending
};

// Log-spaced singular values with max/min = kappa and unit mean square.
inline Vec log_spaced_singular_values(Index m, double kappa) {
    Vec s(m);
    for (Index i = 0; i < m; ++i) {
        const double t = m > 1 ? static_cast<double>(i) / static_cast<double>(m - 1) : 0.0;
        s[i] = std::pow(kappa, -t);
    }
    s *= std::sqrt(static_cast<double>(m) / s.squaredNorm());
    return s;
}

inline ConditionedMatrix build_conditioned_matrix(Index rows, Index cols, double kappa, std::uint64_t seed) {
    if (rows <= 0 || cols <= 0) throw ModelError("build_conditioned_matrix: dims must be positive");
    if (!(kappa >= 1.0)) throw ModelError("build_conditioned_matrix: kappa must be >= 1");
    Rng rng(seed);
    ConditionedMatrix out;
    out.u = haar_orthogonal(rows, rng);
    out.v = haar_orthogonal(cols, rng);
    const Index m = std::min(rows, cols);
    out.s = log_spaced_singular_values(m, kappa);
    out.matrix = out.u.leftCols(m) * out.s.asDiagonal() * out.v.leftCols(m).transpose();
    return out;
}

enum class HiddenWeights {
    gaussian,    // i.i.d. N(0, 1/N_in) entries
    rotational,  // Haar factors with log-spaced singular values, SVD known by construction
};

struct SyntheticConfig {
    Index n0 = 20;
    std::vector<Index> hidden{100, 500};
    Index ny = 300;
    double rho = 0.4;          // target fraction of active ReLUs
    double kappa = 10.0;       // condition number of the measurement matrix
    double snr_db = 20.0;      // output SNR
    double prior_precision = 1.0;
    double bias_std_scale = 1.0;  // bias std = scale / sqrt(N_in)
    HiddenWeights hidden_weights = HiddenWeights::gaussian;
    double hidden_kappa = 10.0;   // rotational hidden weights only
    Activation activation = Activation::relu;  // hidden activations
};

inline double normal_quantile(double p) {
    return boost::math::quantile(boost::math::normal_distribution<double>(0.0, 1.0), p);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

// E[max(0,u)^2] for u ~ N(mean, var)
inline double relu_second_moment(double mean, double var) {
    const double sd = std::sqrt(var);
    const double a = mean / sd;
    return (mean * mean + var) * normal_cdf(a) + mean * sd * normal_pdf(a);
}

// Bias mean so that P(W z + b > 0) = rho when the input components have second moment m2.
inline double bias_mean_for_fraction(double rho, double m2, double bias_var) {
    if (!(rho > 0.0 && rho < 1.0)) throw ModelError("rho must lie in (0,1)");
    return std::sqrt(m2 + bias_var) * normal_quantile(rho);
}

struct FactoredNetwork {
    Network network;
    std::vector<LinearLayerSVD> svds;  // one per linear layer, in order
};

namespace detail {

inline void validate_config(const SyntheticConfig& cfg) {
    if (cfg.n0 <= 0 || cfg.ny <= 0) throw ModelError("synthetic config: dims must be positive");
    for (Index h : cfg.hidden)
        if (h <= 0) throw ModelError("synthetic config: hidden dims must be positive");
    if (!(cfg.prior_precision > 0.0)) throw ModelError("synthetic config: prior precision must be positive");
    if (!(cfg.kappa >= 1.0)) throw ModelError("synthetic config: kappa must be >= 1");
}

template <class MakeHidden>
FactoredNetwork build_synthetic(const SyntheticConfig& cfg, std::uint64_t seed, MakeHidden make_hidden) {
    detail::validate_config(cfg);
    std::vector<Layer> layers;
    std::vector<LinearLayerSVD> svds;
    double m2 = 1.0 / cfg.prior_precision;
    Index in = cfg.n0;
    for (std::size_t h = 0; h < cfg.hidden.size(); ++h) {
        const Index out = cfg.hidden[h];
        Rng rng(derive_seed(seed, {1, h}));
        const double bias_sd = cfg.bias_std_scale / std::sqrt(static_cast<double>(in));
        const double mu = bias_mean_for_fraction(cfg.rho, m2, bias_sd * bias_sd);
        Vec bias = Vec::Constant(out, mu) + rng.normal_vec(out, bias_sd);
        auto [w, svd] = make_hidden(out, in, rng, bias);
        layers.emplace_back(LinearLayer{std::move(w), bias, kInf});
        layers.emplace_back(NonlinearLayer{cfg.activation, out});
        if (svd) svds.push_back(std::move(*svd));
        const double var = m2 + bias_sd * bias_sd;
        m2 = cfg.activation == Activation::relu ? relu_second_moment(mu, var) : mu * mu + var;
        in = out;
    }
    auto a = build_conditioned_matrix(cfg.ny, in, cfg.kappa, derive_seed(seed, {2}));
    const double snr = std::pow(10.0, cfg.snr_db / 10.0);
    const double signal = a.s.squaredNorm() * m2;  // E||A z||^2
    const double nu = snr * static_cast<double>(cfg.ny) / signal;
    Vec bias = Vec::Zero(cfg.ny);
    svds.push_back(linear_svd_from_factors(a.u, a.v.transpose(), a.s, bias, nu));
    layers.emplace_back(LinearLayer{std::move(a.matrix), bias, nu});
    layers.emplace_back(NonlinearLayer{Activation::identity, cfg.ny});
    return {Network(cfg.n0, GaussianPrior{cfg.prior_precision}, std::move(layers)), std::move(svds)};
}

} // namespace detail

// Hidden layers: Gaussian weights, biases tuned to an active fraction rho, ReLU.
// Final stage: y = A z + xi with a kappa-conditioned A followed by an identity
// activation, so the observed y is the network output.
inline Network build_random_network(const SyntheticConfig& cfg, std::uint64_t seed) {
    return detail::build_synthetic(cfg, seed, [](Index out, Index in, Rng& rng, const Vec&) {
               Mat w = rng.normal_mat(out, in, 1.0 / std::sqrt(static_cast<double>(in)));
               return std::pair<Mat, std::optional<LinearLayerSVD>>{std::move(w), std::nullopt};
           })
        .network;
}

// Same architecture with rotationally invariant hidden weights whose SVD is
// known by construction; avoids decomposing large matrices.
inline FactoredNetwork build_rotational_network(const SyntheticConfig& cfg, std::uint64_t seed) {
    return detail::build_synthetic(cfg, seed, [&cfg](Index out, Index in, Rng& rng, const Vec& bias) {
        Mat u = haar_orthogonal(out, rng);
        Mat v = haar_orthogonal(in, rng);
        const Index m = std::min(out, in);
        // match the Frobenius norm of an N(0, 1/in) matrix
        Vec s = log_spaced_singular_values(m, cfg.hidden_kappa) *
                std::sqrt(static_cast<double>(out) / static_cast<double>(m));
        Mat w = u.leftCols(m) * s.asDiagonal() * v.leftCols(m).transpose();
        auto svd = linear_svd_from_factors(std::move(u), v.transpose(), s, bias, kInf);
        return std::pair<Mat, std::optional<LinearLayerSVD>>{std::move(w), std::move(svd)};
    });
}

// z[0] = input, z[l] = output of layer l, z[L] = y.
struct Trajectory {
    std::vector<Vec> z;
    std::vector<Vec> p0;
    std::vector<Vec> q0;

    const Vec& y() const { return z.back(); }
};

inline Trajectory forward_sample(const Network& net, const Vec& z0, std::uint64_t seed) {
    if (z0.size() != net.input_dim())
        throw ModelError("forward_sample: input has length " + std::to_string(z0.size()) + ", network expects " +
                         std::to_string(net.input_dim()));
    Rng rng(seed);
    Trajectory t;
    t.z.reserve(net.num_layers() + 1);
    t.z.push_back(z0);
    for (std::size_t l = 1; l <= net.num_layers(); ++l) {
        const Vec& prev = t.z.back();
        Vec next;
        if (auto* lin = std::get_if<LinearLayer>(&net.layer(l))) {
            if (prev.size() != lin->in_dim())
                throw ModelError("forward_sample: layer " + std::to_string(l) + " expects input length " +
                                 std::to_string(lin->in_dim()));
            next = lin->weights * prev + lin->bias;
            if (!lin->noiseless()) next += rng.normal_vec(next.size(), 1.0 / std::sqrt(lin->noise_precision));
        } else {
            const auto& nl = std::get<NonlinearLayer>(net.layer(l));
            if (prev.size() != nl.dim)
                throw ModelError("forward_sample: layer " + std::to_string(l) + " expects input length " +
                                 std::to_string(nl.dim));
            next = prev.unaryExpr([a = nl.activation](double x) { return activate(a, x); });
        }
        t.z.push_back(std::move(next));
    }
    return t;
}

inline Vec sample_input(const Network& net, Rng& rng) {
    return rng.normal_vec(net.input_dim(), 1.0 / std::sqrt(net.prior().precision));
}

inline std::vector<LinearLayerSVD> decompose_network(const Network& net) {
    std::vector<LinearLayerSVD> out;
    out.reserve(net.num_linear());
    for (std::size_t l = 1; l <= net.num_layers(); l += 2) out.push_back(decompose_linear(net.linear(l)));
    return out;
}

// Fills p0/q0: nonlinear-output nodes keep q0 = z and rotate p0 = V z with the
// input factor of the next linear layer; linear-output nodes keep p0 = z and
// rotate q0 = V^T z with the layer's output factor.
inline Trajectory transform_signals(const Network& net, const std::vector<LinearLayerSVD>& svds, Trajectory t) {
    const std::size_t L = net.num_layers();
    if (t.z.size() != L + 1) throw ModelError("transform_signals: trajectory has no states for every layer");
    if (svds.size() != net.num_linear())
        throw ModelError("transform_signals: missing SVD factors (" + std::to_string(svds.size()) + " of " +
                         std::to_string(net.num_linear()) + ")");
    t.p0.assign(L + 1, Vec());
    t.q0.assign(L + 1, Vec());
    for (std::size_t l = 0; l <= L; ++l) {
        const Vec& z = t.z[l];
        if (l % 2 == 0) {
            t.q0[l] = z;
            if (l < L) {
                const auto& svd = svds[l / 2];
                if (svd.in_dim() != z.size())
                    throw ModelError("transform_signals: SVD of layer " + std::to_string(l + 1) + " has wrong size");
                t.p0[l] = svd.v_in * z;
            } else {
                t.p0[l] = z;
            }
        } else {
            const auto& svd = svds[l / 2];
            if (svd.out_dim() != z.size())
                throw ModelError("transform_signals: SVD of layer " + std::to_string(l) + " has wrong size");
            t.p0[l] = z;
            t.q0[l] = svd.v_out.transpose() * z;
        }
    }
    return t;
}

} // namespace mlvamp
