#pragma once

// Direct MAP estimation over the network input: the negative log posterior of
// the composed deterministic network, its reverse-mode gradient, and Adam.

#include "mlvamp/common.hpp"
#include "mlvamp/model.hpp"
#include "mlvamp/random.hpp"

#include <string>
#include <vector>

namespace mlvamp {

struct OptimizerOptions {
    double step_size = 0.01;
    int iters = 500;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int restarts = 1;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(step_size >= 0.0)) throw Error("optimizer: step_size must be nonnegative");
        if (iters < 1) throw Error("optimizer: iters must be >= 1");
        if (restarts < 1) throw Error("optimizer: restarts must be >= 1");
    }
};

struct BaselineResult {
    Vec z0hat;
    double objective = kInf;
    std::vector<double> objective_trace;  // best-so-far objective per step of the winning restart
    int restart = 0;
};

namespace detail {

// Hidden layers must be deterministic and the observation a linear-Gaussian
// measurement of the last hidden output.
inline void check_baseline_network(const Network& net) {
    const std::size_t L = net.num_layers();
    if (net.nonlinear(L).activation != Activation::identity)
        throw UnsupportedError("baseline: the final activation must be the identity");
    for (std::size_t l = 1; l + 2 < L; l += 2)
        if (!net.linear(l).noiseless())
            throw UnsupportedError("baseline: hidden layer " + std::to_string(l) + " is noisy");
    const auto& out = net.linear(L - 1);
    if (out.noiseless()) throw UnsupportedError("baseline: the measurement layer must have finite noise precision");
}

} // namespace detail

// Hidden states z_0 .. z_{L-2} of the noiseless network.
inline std::vector<Vec> hidden_forward(const Network& net, const Vec& z0) {
    if (z0.size() != net.input_dim()) throw ModelError("baseline: input has the wrong length");
    std::vector<Vec> z{z0};
    for (std::size_t l = 1; l + 1 < net.num_layers(); ++l) {
        if (auto* lin = std::get_if<LinearLayer>(&net.layer(l))) {
            z.push_back(lin->weights * z.back() + lin->bias);
        } else {
            const auto act = net.nonlinear(l).activation;
            z.push_back(z.back().unaryExpr([act](double v) { return activate(act, v); }));
        }
    }
    return z;
}

inline double objective(const Network& net, const Vec& z0, const Vec& y) {
    detail::check_baseline_network(net);
    const auto z = hidden_forward(net, z0);
    const auto& out = net.linear(net.num_layers() - 1);
    const Vec res = y - out.weights * z.back() - out.bias;
    return 0.5 * net.prior().precision * z0.squaredNorm() + 0.5 * out.noise_precision * res.squaredNorm();
}

inline Vec gradient(const Network& net, const Vec& z0, const Vec& y) {
    detail::check_baseline_network(net);
    const auto z = hidden_forward(net, z0);
    const std::size_t L = net.num_layers();
    const auto& out = net.linear(L - 1);
    Vec g = -out.noise_precision * out.weights.transpose() * (y - out.weights * z.back() - out.bias);
    for (std::size_t l = L - 2; l >= 1; --l) {
        if (auto* lin = std::get_if<LinearLayer>(&net.layer(l))) {
            g = lin->weights.transpose() * g;
        } else if (net.nonlinear(l).activation == Activation::relu) {
            // z[l-1] is the pre-activation; subgradient 0 at the kink
            g = (z[l - 1].array() > 0.0).select(g, 0.0);
        }
    }
    return g + net.prior().precision * z0;
}

inline BaselineResult minimize(const Network& net, const Vec& y, const OptimizerOptions& opts = {}) {
    opts.validate();
    detail::check_baseline_network(net);
    BaselineResult best;
    for (int rs = 0; rs < opts.restarts; ++rs) {
        Rng rng(derive_seed(opts.seed, {static_cast<std::uint64_t>(rs)}));
        Vec z = rng.normal_vec(net.input_dim());
        Vec m = Vec::Zero(z.size()), v = Vec::Zero(z.size());
        BaselineResult cur;
        cur.restart = rs;
        cur.z0hat = z;
        cur.objective = objective(net, z, y);
        double b1t = 1.0, b2t = 1.0;
        for (int t = 0; t < opts.iters; ++t) {
            const Vec g = gradient(net, z, y);
            m = opts.beta1 * m + (1.0 - opts.beta1) * g;
            v = opts.beta2 * v + (1.0 - opts.beta2) * g.cwiseProduct(g);
            b1t *= opts.beta1;
            b2t *= opts.beta2;
            const Vec mhat = m / (1.0 - b1t);
            const Vec vhat = v / (1.0 - b2t);
            z -= opts.step_size * (mhat.array() / (vhat.array().sqrt() + opts.epsilon)).matrix();
            const double f = objective(net, z, y);
            if (!std::isfinite(f)) throw Error("baseline: objective became non-finite at step " + std::to_string(t));
            if (f < cur.objective) {
                cur.objective = f;
                cur.z0hat = z;
            }
            cur.objective_trace.push_back(cur.objective);
        }
        if (cur.objective < best.objective) best = std::move(cur);
    }
    return best;
}

} // namespace mlvamp
