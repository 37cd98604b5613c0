#pragma once

// ML-VAMP driver: forward and reverse passes over the inference chain with
// extrinsic message updates, adaptive or fixed precisions and damping.

#include "mlvamp/chain.hpp"
#include "mlvamp/common.hpp"
#include "mlvamp/denoise.hpp"
#include "mlvamp/model.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mlvamp {

struct NodeGammas {
    double plus = 1.0;
    double minus = 1.0;
};

enum class PrecisionMode { adaptive, fixed };

struct RunOptions {
    int max_iters = 500;
    double damping = 0.8;
    double gamma_min = 1e-8;
    double gamma_max = 1e8;
    double alpha_min = kAlphaMin;
    double gamma_init = 1e-2;  // gamma^- of the initial messages
    std::vector<Vec> r_minus_init;  // initial reverse messages per node; empty: zeros
    PrecisionMode mode = PrecisionMode::adaptive;
    std::vector<NodeGammas> fixed_gammas;  // one per node in fixed mode
    double tol = 1e-8;
    std::uint64_t seed = 0;

    void validate(std::size_t nodes) const {
        if (max_iters < 1) throw Error("run options: max_iters must be >= 1");
        if (!(damping > 0.0 && damping <= 1.0)) throw Error("run options: damping must lie in (0,1]");
        if (!(gamma_min > 0.0) || !(gamma_max >= gamma_min)) throw Error("run options: bad gamma bounds");
        if (!(alpha_min > 0.0 && alpha_min < 0.5)) throw Error("run options: alpha_min must lie in (0,0.5)");
        if (!(gamma_init > 0.0)) throw Error("run options: gamma_init must be positive");
        if (!r_minus_init.empty() && r_minus_init.size() != nodes)
            throw Error("run options: r_minus_init needs one vector per node");
        if (mode == PrecisionMode::fixed) {
            if (fixed_gammas.size() != nodes)
                throw Error("run options: fixed mode needs " + std::to_string(nodes) + " gamma pairs");
            for (const auto& g : fixed_gammas)
                if (!(g.plus > 0.0) || !(g.minus > 0.0)) throw Error("run options: fixed gammas must be positive");
        }
    }
};

// Messages at every node after the most recent half-iteration.
struct BeliefState {
    std::vector<Vec> r_plus, r_minus, zhat_plus, zhat_minus;
    std::vector<double> gamma_plus, gamma_minus, alpha_plus, alpha_minus, eta_plus, eta_minus;
    int iteration = 0;

    std::size_t num_nodes() const { return r_plus.size(); }
};

struct RunResult {
    // [half-iteration][node]; forward halves score zhat_plus, reverse halves zhat_minus
    std::vector<std::vector<double>> nmse_db;
    std::vector<std::vector<double>> gamma_trace;
    std::vector<std::vector<double>> alpha_trace;
    BeliefState state;
    bool converged = false;
    int iterations = 0;
    double last_change = kInf;
    double primal_gap = kInf;
    Index kinks = 0;

    int half_iterations() const { return 2 * iterations; }
};

enum class Half { forward, reverse };

// called after every half-iteration with the current state
using RunObserver = std::function<void(const BeliefState&, Half)>;

inline std::pair<double, double> update_gamma(double gamma_other, double alpha, double gamma_min, double gamma_max) {
    const double eta = gamma_other / alpha;
    return {eta, std::clamp(eta - gamma_other, gamma_min, gamma_max)};
}

inline double nmse_db(const Vec& zhat, const Vec& z0) {
    if (zhat.size() != z0.size()) throw Error("nmse_db: length mismatch");
    const double ref = z0.squaredNorm();
    if (!(ref > 0.0)) throw Error("nmse_db: truth has zero norm");
    return ratio_db((z0 - zhat).squaredNorm(), ref);
}

inline Vec extrinsic(const Vec& zhat, double alpha, const Vec& r_in) { return (zhat - alpha * r_in) / (1.0 - alpha); }

namespace detail {

inline void check_finite(const Vec& v, int half, std::size_t node, const char* what) {
    if (!v.allFinite())
        throw DivergenceError(std::string("ML-VAMP diverged: non-finite ") + what + " at node " + std::to_string(node) +
                                  ", half-iteration " + std::to_string(half),
                              half, static_cast<int>(node));
}

inline void check_finite(double v, int half, std::size_t node, const char* what) {
    if (!std::isfinite(v))
        throw DivergenceError(std::string("ML-VAMP diverged: non-finite ") + what + " at node " + std::to_string(node) +
                                  ", half-iteration " + std::to_string(half),
                              half, static_cast<int>(node));
}

inline double rel_change(const Vec& a, const Vec& b) {
    const double n = a.norm();
    return n > 0.0 ? (a - b).norm() / n : (a - b).norm();
}

} // namespace detail

inline RunResult run(const InferenceModel& model, const Vec& y, const Trajectory* truth, const RunOptions& opts,
                     const RunObserver& observer = {}) {
    const std::size_t M = model.num_nodes();
    opts.validate(M);
    if (y.size() != model.network().output_dim())
        throw ModelError("run: observation has length " + std::to_string(y.size()) + ", network output is " +
                         std::to_string(model.network().output_dim()));
    if (truth && truth->z.size() < M) throw ModelError("run: truth trajectory is too short");

    const bool fixed = opts.mode == PrecisionMode::fixed;
    const double rho = fixed ? 1.0 : opts.damping;
    const double lambda = model.prior_precision();

    BeliefState st;
    st.r_plus.resize(M);
    st.zhat_plus.resize(M);
    st.zhat_minus.resize(M);
    st.r_minus.resize(M);
    st.gamma_plus.assign(M, 1.0);
    st.gamma_minus.assign(M, opts.gamma_init);
    st.alpha_plus.assign(M, 0.5);
    st.alpha_minus.assign(M, 0.5);
    st.eta_plus.assign(M, 0.0);
    st.eta_minus.assign(M, 0.0);
    for (std::size_t l = 0; l < M && !opts.r_minus_init.empty(); ++l)
        if (opts.r_minus_init[l].size() != model.node_dim(l))
            throw ModelError("run: r_minus_init[" + std::to_string(l) + "] has the wrong length");
    for (std::size_t l = 0; l < M; ++l) {
        st.r_minus[l] = opts.r_minus_init.empty() ? Vec::Zero(model.node_dim(l)) : opts.r_minus_init[l];
        st.r_plus[l] = Vec::Zero(model.node_dim(l));
        st.zhat_minus[l] = Vec::Zero(model.node_dim(l));
    }
    if (fixed) {
        for (std::size_t l = 0; l < M; ++l) {
            const auto& g = opts.fixed_gammas[l];
            st.gamma_plus[l] = g.plus;
            st.gamma_minus[l] = g.minus;
            st.eta_plus[l] = st.eta_minus[l] = g.plus + g.minus;
            st.alpha_plus[l] = g.minus / (g.plus + g.minus);
            st.alpha_minus[l] = g.plus / (g.plus + g.minus);
        }
    }

    RunResult res;
    auto record = [&](Half half) {
        const auto& zh = half == Half::forward ? st.zhat_plus : st.zhat_minus;
        if (truth) {
            std::vector<double> row(M);
            for (std::size_t l = 0; l < M; ++l) row[l] = nmse_db(zh[l], truth->z[l]);
            res.nmse_db.push_back(std::move(row));
        }
        res.gamma_trace.push_back(half == Half::forward ? st.gamma_plus : st.gamma_minus);
        res.alpha_trace.push_back(half == Half::forward ? st.alpha_plus : st.alpha_minus);
        if (observer) observer(st, half);
    };

    // damped message and precision update; the first iteration is taken as is
    auto commit = [&](Vec& r, double& gamma, Vec cand, double gamma_cand, int k) {
        if (k == 0 || rho >= 1.0) {
            r = std::move(cand);
            gamma = gamma_cand;
        } else {
            r = rho * cand + (1.0 - rho) * r;
            gamma = std::exp(rho * std::log(gamma_cand) + (1.0 - rho) * std::log(gamma));
        }
    };

    std::vector<Vec> prev_zhat_plus;
    for (int k = 0; k < opts.max_iters; ++k) {
        st.iteration = k;
        const int fwd_half = 2 * k, rev_half = 2 * k + 1;
        res.kinks = 0;

        // forward pass
        {
            auto p = prox_input(st.r_minus[0], st.gamma_minus[0], lambda);
            st.zhat_plus[0] = std::move(p.zhat);
            detail::check_finite(st.zhat_plus[0], fwd_half, 0, "estimate");
            if (!fixed) st.alpha_plus[0] = clamp_alpha(p.alpha, opts.alpha_min);
            double gamma_cand = st.gamma_plus[0];
            if (!fixed) {
                auto [eta, g] = update_gamma(st.gamma_minus[0], st.alpha_plus[0], opts.gamma_min, opts.gamma_max);
                st.eta_plus[0] = eta;
                gamma_cand = g;
            }
            commit(st.r_plus[0], st.gamma_plus[0], extrinsic(st.zhat_plus[0], st.alpha_plus[0], st.r_minus[0]),
                   gamma_cand, k);
            detail::check_finite(st.r_plus[0], fwd_half, 0, "message");
        }
        for (std::size_t l = 1; l < M; ++l) {
            const PrecisionPair theta{st.gamma_plus[l - 1], st.gamma_minus[l]};
            auto d = model.stage_denoise(l, st.r_plus[l - 1], st.r_minus[l], theta, Side::cur);
            res.kinks += d.kinks;
            st.zhat_plus[l] = std::move(d.zhat_cur);
            detail::check_finite(st.zhat_plus[l], fwd_half, l, "estimate");
            double gamma_cand = st.gamma_plus[l];
            if (!fixed) {
                st.alpha_plus[l] = clamp_alpha(d.alpha_plus, opts.alpha_min);
                auto [eta, g] = update_gamma(st.gamma_minus[l], st.alpha_plus[l], opts.gamma_min, opts.gamma_max);
                st.eta_plus[l] = eta;
                gamma_cand = g;
            }
            commit(st.r_plus[l], st.gamma_plus[l], extrinsic(st.zhat_plus[l], st.alpha_plus[l], st.r_minus[l]),
                   gamma_cand, k);
            detail::check_finite(st.r_plus[l], fwd_half, l, "message");
        }
        record(Half::forward);

        // reverse pass
        {
            const std::size_t l = M - 1;
            auto p = model.output_denoise(st.r_plus[l], y, st.gamma_plus[l]);
            st.zhat_minus[l] = std::move(p.zhat);
            detail::check_finite(st.zhat_minus[l], rev_half, l, "estimate");
            double gamma_cand = st.gamma_minus[l];
            if (!fixed) {
                st.alpha_minus[l] = clamp_alpha(p.alpha, opts.alpha_min);
                auto [eta, g] = update_gamma(st.gamma_plus[l], st.alpha_minus[l], opts.gamma_min, opts.gamma_max);
                st.eta_minus[l] = eta;
                gamma_cand = g;
            }
            commit(st.r_minus[l], st.gamma_minus[l], extrinsic(st.zhat_minus[l], st.alpha_minus[l], st.r_plus[l]),
                   gamma_cand, k);
            detail::check_finite(st.r_minus[l], rev_half, l, "message");
        }
        for (std::size_t l = M - 1; l-- > 0;) {
            const PrecisionPair theta{st.gamma_plus[l], st.gamma_minus[l + 1]};
            auto d = model.stage_denoise(l + 1, st.r_plus[l], st.r_minus[l + 1], theta, Side::prev);
            res.kinks += d.kinks;
            st.zhat_minus[l] = std::move(d.zhat_prev);
            detail::check_finite(st.zhat_minus[l], rev_half, l, "estimate");
            double gamma_cand = st.gamma_minus[l];
            if (!fixed) {
                st.alpha_minus[l] = clamp_alpha(d.alpha_minus, opts.alpha_min);
                auto [eta, g] = update_gamma(st.gamma_plus[l], st.alpha_minus[l], opts.gamma_min, opts.gamma_max);
                st.eta_minus[l] = eta;
                gamma_cand = g;
            }
            commit(st.r_minus[l], st.gamma_minus[l], extrinsic(st.zhat_minus[l], st.alpha_minus[l], st.r_plus[l]),
                   gamma_cand, k);
            detail::check_finite(st.r_minus[l], rev_half, l, "message");
        }
        record(Half::reverse);

        res.iterations = k + 1;
        double gap = 0.0;
        for (std::size_t l = 0; l < M; ++l) gap = std::max(gap, detail::rel_change(st.zhat_plus[l], st.zhat_minus[l]));
        res.primal_gap = gap;
        if (!prev_zhat_plus.empty()) {
            double change = 0.0;
            for (std::size_t l = 0; l < M; ++l)
                change = std::max(change, detail::rel_change(st.zhat_plus[l], prev_zhat_plus[l]));
            res.last_change = change;
            if (change <= opts.tol && gap <= opts.tol) {
                res.converged = true;
                break;
            }
        }
        prev_zhat_plus = st.zhat_plus;
    }
    res.state = std::move(st);
    return res;
}

inline RunResult run(const Network& net, const Vec& y, const Trajectory* truth, const RunOptions& opts) {
    return run(InferenceModel(net), y, truth, opts);
}

} // namespace mlvamp
