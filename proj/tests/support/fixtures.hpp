#pragma once

// Small networks and measurement helpers shared by the unit and acceptance tests.

#include "mlvamp.hpp"

#include <cmath>
#include <vector>

namespace fixture {

using namespace mlvamp;

// Lin(8->12, noiseless) -> act -> Lin(12->10, nu=5) -> identity
inline Network toy_network(Activation act, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Layer> layers;
    layers.emplace_back(LinearLayer{rng.normal_mat(12, 8, 0.35), rng.normal_vec(12, 0.3), kInf});
    layers.emplace_back(NonlinearLayer{act, 12});
    layers.emplace_back(LinearLayer{rng.normal_mat(10, 12, 0.3), rng.normal_vec(10, 0.1), 5.0});
    layers.emplace_back(NonlinearLayer{Activation::identity, 10});
    return Network(8, GaussianPrior{1.0}, std::move(layers));
}

// Identity activations and finite noise everywhere: the posterior is Gaussian.
inline Network gaussian_network(std::uint64_t seed, std::vector<Index> dims = {10, 25, 30},
                                std::vector<double> nus = {20.0, 10.0}) {
    Rng rng(seed);
    std::vector<Layer> layers;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        const Index in = dims[i], out = dims[i + 1];
        layers.emplace_back(LinearLayer{rng.normal_mat(out, in, 1.0 / std::sqrt(static_cast<double>(in))),
                                        rng.normal_vec(out, 0.5), nus[i]});
        layers.emplace_back(NonlinearLayer{Activation::identity, out});
    }
    return Network(dims[0], GaussianPrior{1.0}, std::move(layers));
}

// Deterministic linear hidden layers and a noisy conditioned measurement: the
// baseline objective is a convex quadratic in z0.
inline Network quadratic_network(std::uint64_t seed, Index n0 = 20, Index hidden = 50, Index ny = 100,
                                 double nu = 1.0) {
    Rng rng(seed);
    std::vector<Layer> layers;
    layers.emplace_back(LinearLayer{rng.normal_mat(hidden, n0, 1.0 / std::sqrt(static_cast<double>(n0))),
                                    rng.normal_vec(hidden, 0.3), kInf});
    layers.emplace_back(NonlinearLayer{Activation::identity, hidden});
    auto a = build_conditioned_matrix(ny, hidden, 10.0, derive_seed(seed, {9}));
    layers.emplace_back(LinearLayer{std::move(a.matrix), rng.normal_vec(ny, 0.1), nu});
    layers.emplace_back(NonlinearLayer{Activation::identity, ny});
    return Network(n0, GaussianPrior{1.0}, std::move(layers));
}

// Composite affine map z0 -> A z0 + c of an all-linear network, measurement included.
inline std::pair<Mat, Vec> composite_affine(const Network& net) {
    Mat a = Mat::Identity(net.input_dim(), net.input_dim());
    Vec c = Vec::Zero(net.input_dim());
    for (std::size_t l = 1; l <= net.num_layers(); l += 2) {
        const auto& lin = net.linear(l);
        a = lin.weights * a;
        c = lin.weights * c + lin.bias;
    }
    return {a, c};
}

// Closed-form minimizer of the baseline objective for an all-linear network.
inline Vec quadratic_minimizer(const Network& net, const Vec& y) {
    const auto [a, c] = composite_affine(net);
    const double nu = net.linear(net.num_layers() - 1).noise_precision;
    const double lambda = net.prior().precision;
    const Mat h = lambda * Mat::Identity(a.cols(), a.cols()) + nu * a.transpose() * a;
    return h.ldlt().solve(nu * a.transpose() * (y - c));
}

// Uncentered normalized cross moment <a, b> / (|a| |b|).
inline double correlation(const Vec& a, const Vec& b) {
    const double d = a.norm() * b.norm();
    return d > 0.0 ? a.dot(b) / d : 0.0;
}

// For every forward half-iteration k and stage l, the correlation between the
// input-side message error p+_{k,l-1} and the output-side message error q-_{kl},
// both expressed in the coordinates where the stage acts componentwise.
// Returns corr[k][l-1].
inline std::vector<std::vector<double>> stage_error_correlations(const InferenceModel& model, const Trajectory& truth,
                                                                 const RunOptions& opts) {
    const std::size_t M = model.num_nodes();
    std::vector<std::vector<double>> out;
    auto observer = [&](const BeliefState& st, Half half) {
        if (half != Half::forward) return;
        std::vector<double> row;
        for (std::size_t l = 1; l < M; ++l) {
            Vec p = st.r_plus[l - 1] - truth.z[l - 1];
            Vec q = st.r_minus[l] - truth.z[l];
            if (model.stage(l).kind == StageKind::linear) {
                const auto& svd = model.stage_svd(l);
                p = svd.v_in * p;
                q = svd.v_out.transpose() * q;
                const Index m = std::min(p.size(), q.size());
                row.push_back(correlation(p.head(m), q.head(m)));
            } else {
                row.push_back(correlation(p, q));
            }
        }
        out.push_back(std::move(row));
    };
    const Trajectory* t = &truth;
    run(model, truth.y(), t, opts, observer);
    return out;
}

} // namespace fixture
