#pragma once

// Fixed-precision ML-VAMP seen as an ADMM-type splitting: dual extraction, an
// independent reference stepper built from dense Lagrangian minimizations, the
// augmented Lagrangian itself and a KKT check of fixed points.

#include "mlvamp/chain.hpp"
#include "mlvamp/common.hpp"
#include "mlvamp/message_passing.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <vector>

namespace mlvamp {

struct DualState {
    std::vector<Vec> s_plus, s_minus;
    std::vector<double> eta;
};

// Primal and dual iterates of one full iteration k: zhat_plus_k, s_plus_k,
// zhat_minus_k and s_minus_{k+1}.
struct AdmmState {
    std::vector<Vec> zhat_plus, zhat_minus, s_plus, s_minus;

    static AdmmState zeros(const InferenceModel& model) {
        AdmmState s;
        for (std::size_t l = 0; l < model.num_nodes(); ++l) {
            const Vec z = Vec::Zero(model.node_dim(l));
            s.zhat_plus.push_back(z);
            s.zhat_minus.push_back(z);
            s.s_plus.push_back(z);
            s.s_minus.push_back(z);
        }
        return s;
    }
};

struct FixedRun {
    RunResult result;
    DualState duals;
    std::vector<AdmmState> history;  // one entry per iteration when requested
};

inline std::vector<double> fixed_etas(const std::vector<NodeGammas>& g) {
    std::vector<double> eta;
    for (const auto& x : g) eta.push_back(x.plus + x.minus);
    return eta;
}

inline FixedRun run_fixed(const InferenceModel& model, const Vec& y, const std::vector<NodeGammas>& gammas, int iters,
                          const Trajectory* truth = nullptr, bool keep_history = false, double tol = 1e-8) {
    RunOptions opts;
    opts.mode = PrecisionMode::fixed;
    opts.fixed_gammas = gammas;
    opts.max_iters = iters;
    opts.damping = 1.0;
    opts.tol = tol;

    const std::size_t M = model.num_nodes();
    FixedRun out;
    out.duals.eta = fixed_etas(gammas);
    out.duals.s_plus.assign(M, Vec());
    out.duals.s_minus.assign(M, Vec());
    AdmmState current = AdmmState::zeros(model);

    auto observer = [&](const BeliefState& st, Half half) {
        for (std::size_t l = 0; l < M; ++l) {
            if (half == Half::forward) {
                current.zhat_plus[l] = st.zhat_plus[l];
                current.s_plus[l] = st.alpha_minus[l] * (st.r_plus[l] - st.zhat_plus[l]);
            } else {
                current.zhat_minus[l] = st.zhat_minus[l];
                current.s_minus[l] = st.alpha_plus[l] * (st.zhat_minus[l] - st.r_minus[l]);
            }
        }
        if (half == Half::reverse && keep_history) out.history.push_back(current);
    };
    out.result = run(model, y, truth, opts, observer);
    out.duals.s_plus = current.s_plus;
    out.duals.s_minus = current.s_minus;
    return out;
}

namespace detail {

// argmin over (x, u) of -ln p(u|x) + gx/2 |x|^2 + bx.x + gu/2 |u|^2 + bu.u for one stage
struct StageSolve {
    Vec x, u;
};

inline StageSolve admm_linear(const LinearLayer& layer, double gx, const Vec& bx, double gu, const Vec& bu) {
    const Mat& w = layer.weights;
    const Index n_in = w.cols(), n_out = w.rows();
    StageSolve s;
    if (layer.noiseless()) {
        Mat h = gx * Mat::Identity(n_in, n_in) + gu * w.transpose() * w;
        Vec rhs = -bx - w.transpose() * (gu * layer.bias + bu);
        s.x = h.ldlt().solve(rhs);
        s.u = w * s.x + layer.bias;
        return s;
    }
    const double nu = layer.noise_precision;
    Mat h = Mat::Zero(n_in + n_out, n_in + n_out);
    h.topLeftCorner(n_in, n_in) = gx * Mat::Identity(n_in, n_in) + nu * w.transpose() * w;
    h.topRightCorner(n_in, n_out) = -nu * w.transpose();
    h.bottomLeftCorner(n_out, n_in) = -nu * w;
    h.bottomRightCorner(n_out, n_out) = (gu + nu) * Mat::Identity(n_out, n_out);
    Vec rhs(n_in + n_out);
    rhs.head(n_in) = -bx - nu * w.transpose() * layer.bias;
    rhs.tail(n_out) = -bu + nu * layer.bias;
    Vec sol = h.ldlt().solve(rhs);
    s.x = sol.head(n_in);
    s.u = sol.tail(n_out);
    return s;
}

inline StageSolve admm_activation(Activation act, double gx, const Vec& bx, double gu, const Vec& bu) {
    const Index n = bx.size();
    StageSolve s{Vec(n), Vec(n)};
    for (Index i = 0; i < n; ++i) {
        const double xp = std::max(0.0, -(bx[i] + bu[i]) / (gx + gu));
        if (act == Activation::identity) {
            s.x[i] = s.u[i] = -(bx[i] + bu[i]) / (gx + gu);
            continue;
        }
        const double xn = std::min(0.0, -bx[i] / gx);
        const double e_neg = 0.5 * gx * xn * xn + bx[i] * xn;
        const double e_pos = 0.5 * (gx + gu) * xp * xp + (bx[i] + bu[i]) * xp;
        if (e_pos < e_neg) {
            s.x[i] = s.u[i] = xp;
        } else {
            s.x[i] = xn;
            s.u[i] = 0.0;
        }
    }
    return s;
}

inline StageSolve admm_stage(const InferenceModel& model, std::size_t l, double gx, const Vec& bx, double gu,
                             const Vec& bu) {
    const Stage& st = model.stage(l);
    if (st.kind == StageKind::linear) return admm_linear(model.network().linear(st.layer), gx, bx, gu, bu);
    return admm_activation(st.activation, gx, bx, gu, bu);
}

// argmin over x of -ln p(y|x) + gx/2 |x|^2 + bx.x
inline Vec admm_output(const InferenceModel& model, const Vec& y, double gx, const Vec& bx) {
    if (model.output_kind() == OutputKind::relu) {
        Vec x(bx.size());
        for (Index i = 0; i < x.size(); ++i) x[i] = y[i] > 0.0 ? y[i] : std::min(0.0, -bx[i] / gx);
        return x;
    }
    const LinearLayer& layer = model.output_layer();
    const Mat& w = layer.weights;
    const Index n = w.cols();
    if (layer.noiseless()) {
        Eigen::CompleteOrthogonalDecomposition<Mat> cod(w);
        const Vec xp = cod.solve(y - layer.bias);
        const Vec free = -bx / gx;
        return xp + free - cod.solve(w * free);
    }
    const double nu = layer.noise_precision;
    Mat h = gx * Mat::Identity(n, n) + nu * w.transpose() * w;
    return h.ldlt().solve(-bx + nu * w.transpose() * (y - layer.bias));
}

} // namespace detail

// One full iteration of the Lagrangian form: joint minimizations of each
// L_l followed by the dual ascent steps.
inline AdmmState admm_step_reference(const AdmmState& prev, const InferenceModel& model, const Vec& y,
                                     const std::vector<NodeGammas>& gammas) {
    const std::size_t M = model.num_nodes();
    if (gammas.size() != M) throw Error("admm_step_reference: need one gamma pair per node");
    const auto eta = fixed_etas(gammas);
    auto ap = [&](std::size_t l) { return gammas[l].minus / eta[l]; };
    auto am = [&](std::size_t l) { return gammas[l].plus / eta[l]; };

    AdmmState next = prev;
    // forward: minimize over (z^-_{l-1}, z^+_l), keep z^+_l
    {
        const double lambda = model.prior_precision();
        const double g = gammas[0].minus;
        next.zhat_plus[0] = (g * prev.zhat_minus[0] - eta[0] * prev.s_minus[0]) / (lambda + g);
        next.s_plus[0] = prev.s_minus[0] + ap(0) * (next.zhat_plus[0] - prev.zhat_minus[0]);
    }
    for (std::size_t l = 1; l < M; ++l) {
        const double gx = gammas[l - 1].plus, gu = gammas[l].minus;
        const Vec bx = -eta[l - 1] * next.s_plus[l - 1] - gx * next.zhat_plus[l - 1];
        const Vec bu = eta[l] * prev.s_minus[l] - gu * prev.zhat_minus[l];
        next.zhat_plus[l] = detail::admm_stage(model, l, gx, bx, gu, bu).u;
        next.s_plus[l] = prev.s_minus[l] + ap(l) * (next.zhat_plus[l] - prev.zhat_minus[l]);
    }
    // reverse: minimize again, keep z^-_{l-1}
    {
        const std::size_t l = M - 1;
        const double gx = gammas[l].plus;
        const Vec bx = -eta[l] * next.s_plus[l] - gx * next.zhat_plus[l];
        next.zhat_minus[l] = detail::admm_output(model, y, gx, bx);
        next.s_minus[l] = next.s_plus[l] + am(l) * (next.zhat_plus[l] - next.zhat_minus[l]);
    }
    for (std::size_t l = M - 1; l >= 1; --l) {
        const double gx = gammas[l - 1].plus, gu = gammas[l].minus;
        const Vec bx = -eta[l - 1] * next.s_plus[l - 1] - gx * next.zhat_plus[l - 1];
        const Vec bu = eta[l] * next.s_minus[l] - gu * next.zhat_minus[l];
        next.zhat_minus[l - 1] = detail::admm_stage(model, l, gx, bx, gu, bu).x;
        next.s_minus[l - 1] = next.s_plus[l - 1] + am(l - 1) * (next.zhat_plus[l - 1] - next.zhat_minus[l - 1]);
    }
    return next;
}

inline constexpr double kFeasibilityTol = 1e-9;

namespace detail {

inline bool feasible(const Vec& residual, const Vec& scale) {
    return residual.cwiseAbs().maxCoeff() <= kFeasibilityTol * std::max(1.0, scale.cwiseAbs().maxCoeff());
}

} // namespace detail

// Split objective F(z+, z-): prior on z+_0, each stage links z-_{l-1} to z+_l,
// the observation depends on z-_{M-1}. Additive constants are dropped;
// deterministic relations are indicators.
inline double split_objective(const InferenceModel& model, const Vec& y, const std::vector<Vec>& z_plus,
                              const std::vector<Vec>& z_minus) {
    const std::size_t M = model.num_nodes();
    double f = 0.5 * model.prior_precision() * z_plus[0].squaredNorm();
    for (std::size_t l = 1; l < M; ++l) {
        const Stage& st = model.stage(l);
        const Vec& x = z_minus[l - 1];
        const Vec& u = z_plus[l];
        if (st.kind == StageKind::linear) {
            const auto& layer = model.network().linear(st.layer);
            const Vec res = u - layer.weights * x - layer.bias;
            if (layer.noiseless()) {
                if (!detail::feasible(res, u)) return kInf;
            } else {
                f += 0.5 * layer.noise_precision * res.squaredNorm();
            }
        } else {
            const Vec res = u - x.unaryExpr([a = st.activation](double v) { return activate(a, v); });
            if (!detail::feasible(res, u)) return kInf;
        }
    }
    const Vec& x = z_minus[M - 1];
    if (model.output_kind() == OutputKind::relu) {
        const Vec res = y - x.cwiseMax(0.0);
        if (!detail::feasible(res, y)) return kInf;
    } else {
        const auto& layer = model.output_layer();
        const Vec res = y - layer.weights * x - layer.bias;
        if (layer.noiseless()) {
            if (!detail::feasible(res, y)) return kInf;
        } else {
            f += 0.5 * layer.noise_precision * res.squaredNorm();
        }
    }
    return f;
}

inline double lagrangian(const InferenceModel& model, const Vec& y, const std::vector<Vec>& z_plus,
                         const std::vector<Vec>& z_minus, const std::vector<Vec>& s, const std::vector<double>& eta) {
    double v = split_objective(model, y, z_plus, z_minus);
    for (std::size_t l = 0; l < model.num_nodes(); ++l) {
        const Vec d = z_plus[l] - z_minus[l];
        v += eta[l] * s[l].dot(d) + 0.5 * eta[l] * d.squaredNorm();
    }
    return v;
}

struct KktTolerances {
    double gap = 1e-8;
    double stationarity = 1e-6;
};

struct KktReport {
    std::vector<double> primal_gap;             // per node
    std::vector<double> dual_gap;               // per node
    std::vector<double> stationarity_residual;  // prior, stages 1..M-1, output
    bool passed = false;

    double max_primal() const { return *std::max_element(primal_gap.begin(), primal_gap.end()); }
    double max_dual() const { return *std::max_element(dual_gap.begin(), dual_gap.end()); }
    double max_stationarity() const {
        return *std::max_element(stationarity_residual.begin(), stationarity_residual.end());
    }
};

inline KktReport check_fixed_point(const InferenceModel& model, const Vec& y, const std::vector<Vec>& z_plus,
                                   const std::vector<Vec>& z_minus, const DualState& duals,
                                   const KktTolerances& tol = {}) {
    const std::size_t M = model.num_nodes();
    KktReport rep;
    const auto& s = duals.s_plus;
    const auto& eta = duals.eta;
    for (std::size_t l = 0; l < M; ++l) {
        const double zn = z_plus[l].norm();
        rep.primal_gap.push_back((z_plus[l] - z_minus[l]).norm() / (zn > 0.0 ? zn : 1.0));
        rep.dual_gap.push_back((duals.s_plus[l] - duals.s_minus[l]).norm() / std::max(1.0, duals.s_plus[l].norm()));
    }
    // partial derivatives of the coupling terms
    auto coupling_plus = [&](std::size_t l) -> Vec { return eta[l] * (s[l] + z_plus[l] - z_minus[l]); };
    auto coupling_minus = [&](std::size_t l) -> Vec { return -eta[l] * (s[l] + z_plus[l] - z_minus[l]); };

    rep.stationarity_residual.push_back(
        (model.prior_precision() * z_plus[0] + coupling_plus(0)).norm());

    for (std::size_t l = 1; l < M; ++l) {
        const Stage& st = model.stage(l);
        const Vec& x = z_minus[l - 1];
        const Vec& u = z_plus[l];
        Vec gx = coupling_minus(l - 1);
        Vec gu = coupling_plus(l);
        double r = 0.0;
        if (st.kind == StageKind::linear) {
            const auto& layer = model.network().linear(st.layer);
            const Mat& w = layer.weights;
            const Vec res = u - w * x - layer.bias;
            if (layer.noiseless()) {
                r = std::hypot((gx + w.transpose() * gu).norm(), res.norm());
            } else {
                gx -= layer.noise_precision * w.transpose() * res;
                gu += layer.noise_precision * res;
                r = std::hypot(gx.norm(), gu.norm());
            }
        } else if (st.activation == Activation::identity) {
            r = std::hypot((gx + gu).norm(), (u - x).norm());
        } else {
            double acc = 0.0;
            for (Index i = 0; i < x.size(); ++i) {
                double d;
                if (x[i] > 0.0)
                    d = gx[i] + gu[i];
                else if (x[i] < 0.0)
                    d = gx[i];
                else {
                    const double lo = std::min(gx[i], gx[i] + gu[i]), hi = std::max(gx[i], gx[i] + gu[i]);
                    d = lo > 0.0 ? lo : (hi < 0.0 ? -hi : 0.0);
                }
                const double feas = u[i] - std::max(0.0, x[i]);
                acc += d * d + feas * feas;
            }
            r = std::sqrt(acc);
        }
        rep.stationarity_residual.push_back(r);
    }

    {
        const Vec& x = z_minus[M - 1];
        Vec g = coupling_minus(M - 1);
        double r = 0.0;
        if (model.output_kind() == OutputKind::relu) {
            double acc = 0.0;
            for (Index i = 0; i < x.size(); ++i) {
                double d = 0.0, feas = 0.0;
                if (y[i] > 0.0)
                    feas = x[i] - y[i];
                else if (x[i] < 0.0)
                    d = g[i];
                else if (x[i] == 0.0)
                    d = std::max(g[i], 0.0);
                else
                    feas = x[i];
                acc += d * d + feas * feas;
            }
            r = std::sqrt(acc);
        } else {
            const auto& layer = model.output_layer();
            const Mat& w = layer.weights;
            const Vec res = w * x + layer.bias - y;
            if (layer.noiseless()) {
                Eigen::CompleteOrthogonalDecomposition<Mat> cod(w);
                // only the component of g outside the row space of W is unbalanced
                const Vec in_row = cod.solve(w * g);
                r = std::hypot((g - in_row).norm(), res.norm());
            } else {
                g += layer.noise_precision * w.transpose() * res;
                r = g.norm();
            }
        }
        rep.stationarity_residual.push_back(r);
    }

    rep.passed = rep.max_primal() <= tol.gap && rep.max_dual() <= tol.gap && rep.max_stationarity() <= tol.stationarity;
    return rep;
}

inline KktReport check_fixed_point(const InferenceModel& model, const Vec& y, const FixedRun& fr,
                                   const KktTolerances& tol = {}) {
    return check_fixed_point(model, y, fr.result.state.zhat_plus, fr.result.state.zhat_minus, fr.duals, tol);
}

} // namespace mlvamp
