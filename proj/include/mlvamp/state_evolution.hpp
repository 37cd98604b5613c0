#pragma once

// State evolution: Monte-Carlo scalar recursion that predicts the per-node
// error of ML-VAMP in the large-system limit, plus a PL(2) sample-average check.
//
// Each node carries sample arrays for the true value and the message errors in
// two coordinate systems. The q side is the output domain of the stage that
// produces the node and the p side is the input domain of the stage that
// consumes it; one of the two is the natural domain and the other is rotated
// by the SVD factor of the adjacent linear layer. Linear-stage disturbances
// (s_n, bbar_n) come from a concrete network, cycling through its coordinates.

#include "mlvamp/chain.hpp"
#include "mlvamp/common.hpp"
#include "mlvamp/denoise.hpp"
#include "mlvamp/message_passing.hpp"
#include "mlvamp/random.hpp"

#include <Eigen/Core>

#include <map>
#include <numbers>
#include <string>
#include <vector>

namespace mlvamp {

// Where the nonzero-mean linear bias enters the scalar model.
enum class BiasRouting {
    natural,      // rotated terms are centered; the bias is added back in the natural domain
    transformed,  // bias only as bbar inside the linear stage; natural-domain inputs are zero-mean
};

struct SEOptions {
    int iters = 100;
    Index mc_samples = 100000;
    std::uint64_t seed = 0;
    double gamma_init = 1e-2;
    double gamma_min = 1e-8;
    double gamma_max = 1e8;
    double alpha_min = kAlphaMin;
    double gamma_damping = 1.0;  // on log gamma, 1 = none
    BiasRouting bias = BiasRouting::natural;

    void validate() const {
        if (iters < 1) throw Error("se options: iters must be >= 1");
        if (mc_samples < 10000) throw Error("se options: mc_samples must be >= 10^4");
        if (!(gamma_damping > 0.0 && gamma_damping <= 1.0)) throw Error("se options: gamma_damping must lie in (0,1]");
    }
};

struct SENode {
    Eigen::Matrix2d k_plus = Eigen::Matrix2d::Zero();  // second moments of (Q0, Q+)
    double tau_minus = 0.0;                             // E (P-)^2 produced for this node
    double alpha_bar_plus = 0.0, alpha_bar_minus = 0.0;
    double gamma_plus = 0.0, gamma_minus = 0.0;
    double mse_plus = 0.0, mse_minus = 0.0;
    double nmse_plus_db = 0.0, nmse_minus_db = 0.0;
};

struct SEIteration {
    std::vector<SENode> nodes;
};

struct SEState {
    std::vector<double> tau0;  // E (Q0)^2 per node, natural scale
    std::vector<SEIteration> iterations;
    std::vector<std::string> warnings;
    Index mc_samples = 0;

    std::size_t num_nodes() const { return tau0.size(); }
};

inline double predicted_nmse_db(const SEState& se, std::size_t node, std::size_t iter, Half half = Half::forward) {
    if (iter >= se.iterations.size() || node >= se.num_nodes()) throw Error("predicted_nmse_db: index out of range");
    if (!(se.tau0[node] > 0.0)) throw Error("predicted_nmse_db: node has zero signal energy");
    const auto& n = se.iterations[iter].nodes[node];
    return ratio_db(half == Half::forward ? n.mse_plus : n.mse_minus, se.tau0[node]);
}

namespace detail {

// Monte-Carlo arrays for one node.
struct SENodeSamples {
    Vec q0;       // true value, q domain (linear outputs include bbar)
    Vec q0_core;  // q0 without the bias, what the rotation to the p domain carries
    Vec qm;       // error of r^- in the q domain
    Vec qhat;     // forward estimate, q domain
    Vec qp;       // error of r^+ in the q domain
    Vec p0;       // true value, p domain
    Vec pp;       // error of r^+ in the p domain
    std::vector<char> q_valid, p_valid;  // coordinate exists on that side
};

inline double masked_mean(const Vec& v, const std::vector<char>& mask) {
    double s = 0.0;
    Index n = 0;
    for (Index i = 0; i < v.size(); ++i)
        if (mask[i]) {
            s += v[i];
            ++n;
        }
    return n ? s / static_cast<double>(n) : 0.0;
}

class SERunner {
public:
    SERunner(const InferenceModel& model, const SEOptions& opts)
        : model_(model), opts_(opts), M_(model.num_nodes()), n_(opts.mc_samples), normals_(opts.seed) {
        nodes_.resize(M_);
    }

    SEState run() {
        SEState out;
        out.mc_samples = n_;
        gamma_plus_.assign(M_, 1.0);
        gamma_minus_.assign(M_, opts_.gamma_init);
        alpha_plus_.assign(M_, 0.5);
        alpha_minus_.assign(M_, 0.5);
        std::vector<double> tau_minus(M_, 0.0);

        initial_pass();
        for (std::size_t l = 0; l < M_; ++l)
            out.tau0.push_back(masked_mean(nodes_[l].q0.array().square().matrix(), nodes_[l].q_valid));

        for (int k = 0; k < opts_.iters; ++k) {
            SEIteration it;
            it.nodes.resize(M_);
            // forward
            for (std::size_t l = 0; l < M_; ++l) {
                auto& nd = nodes_[l];
                if (k == 0) nd.qm = -nd.q0;
                else nd.qm = normal(stream(l, kQm), n_) * std::sqrt(tau_minus[l]);
                if (l == 0) forward_prior();
                else forward_stage(l);
                double a = clamp_check(masked_mean(dz_, nd.q_valid), out, "alpha+", k, l);
                alpha_plus_[l] = a;
                set_gamma(gamma_plus_[l], gamma_minus_[l] / a - gamma_minus_[l], k);
                nd.qp = (nd.qhat - nd.q0 - a * nd.qm) / (1.0 - a);
                auto& sn = it.nodes[l];
                sn.alpha_bar_plus = a;
                sn.gamma_plus = gamma_plus_[l];
                sn.mse_plus = masked_mean((nd.qhat - nd.q0).array().square().matrix(), nd.q_valid);
                sn.nmse_plus_db = ratio_db(sn.mse_plus, out.tau0[l]);
                sn.k_plus = draw_p(l);
                check_finite_state(out, k, l);
            }
            // reverse
            for (std::size_t l = M_; l-- > 0;) {
                auto& nd = nodes_[l];
                Vec phat;
                if (l == M_ - 1) phat = reverse_output();
                else phat = reverse_stage(l + 1, tau_minus[l + 1]);
                double a = clamp_check(masked_mean(dx_, nd.p_valid), out, "alpha-", k, l);
                alpha_minus_[l] = a;
                set_gamma(gamma_minus_[l], gamma_plus_[l] / a - gamma_plus_[l], k);
                Vec pm = (phat - nd.p0 - a * nd.pp) / (1.0 - a);
                tau_minus[l] = masked_mean(pm.array().square().matrix(), nd.p_valid);
                auto& sn = it.nodes[l];
                sn.alpha_bar_minus = a;
                sn.gamma_minus = gamma_minus_[l];
                sn.tau_minus = tau_minus[l];
                sn.mse_minus = masked_mean((phat - nd.p0).array().square().matrix(), nd.p_valid);
                sn.nmse_minus_db = ratio_db(sn.mse_minus, out.tau0[l]);
                if (!std::isfinite(tau_minus[l]) || !std::isfinite(sn.mse_minus))
                    throw DivergenceError("state evolution diverged at node " + std::to_string(l), 2 * k + 1,
                                          static_cast<int>(l));
            }
            out.iterations.push_back(std::move(it));
        }
        return out;
    }

private:
    enum Purpose : std::uint64_t { kW = 0, kP1 = 1, kP2 = 2, kQm = 3, kNoise = 4 };

    static std::uint64_t stream(std::size_t node, Purpose p) { return node * 8 + p; }

    // common random numbers: each stream is drawn once and reused every iteration
    const Vec& normal(std::uint64_t s, Index n) {
        auto [it, inserted] = cache_.try_emplace(s);
        if (inserted) it->second = normals_.draw(s, n);
        return it->second;
    }

    bool linear_output(std::size_t l) const { return l > 0 && model_.stage(l).kind == StageKind::linear; }

    Index slots(std::size_t l) const {
        const auto& svd = model_.stage_svd(l);
        return std::max(svd.in_dim(), svd.out_dim());
    }

    double clamp_check(double a, SEState& out, const char* what, int k, std::size_t l) {
        if (!(a > 0.0 && a < 1.0) && out.warnings.size() < 32)
            out.warnings.push_back(std::string(what) + " = " + std::to_string(a) + " outside (0,1) at iteration " +
                                   std::to_string(k) + ", node " + std::to_string(l));
        if (!std::isfinite(a)) throw DivergenceError("state evolution: non-finite divergence", 2 * k, static_cast<int>(l));
        return clamp_alpha(a, opts_.alpha_min);
    }

    void set_gamma(double& g, double cand, int k) const {
        cand = std::clamp(cand, opts_.gamma_min, opts_.gamma_max);
        if (k == 0 || opts_.gamma_damping >= 1.0) g = cand;
        else g = std::exp(opts_.gamma_damping * std::log(cand) + (1.0 - opts_.gamma_damping) * std::log(g));
    }

    void check_finite_state(const SEState&, int k, std::size_t l) const {
        const auto& nd = nodes_[l];
        if (!nd.qp.allFinite() || !nd.pp.allFinite())
            throw DivergenceError("state evolution diverged at node " + std::to_string(l), 2 * k, static_cast<int>(l));
    }

    // true values of every node from the input law and the disturbances
    void initial_pass() {
        const double sd0 = 1.0 / std::sqrt(model_.prior_precision());
        auto& n0 = nodes_[0];
        n0.q0 = normal(stream(0, kW), n_) * sd0;
        n0.q0_core = n0.q0;
        n0.q_valid.assign(n_, 1);
        for (std::size_t l = 0; l < M_; ++l) {
            draw_p0(l);
            if (l + 1 < M_) true_stage(l + 1);
        }
    }

    // p-domain truth of node l from its q-domain second moment
    void draw_p0(std::size_t l) {
        auto& nd = nodes_[l];
        const double k11 = masked_mean(nd.q0_core.array().square().matrix(), nd.q_valid);
        nd.p0 = normal(stream(l, kP1), n_) * std::sqrt(k11);
        add_natural_bias(l);
        nd.p_valid.assign(n_, 1);
    }

    void add_natural_bias(std::size_t l) {
        if (!linear_output(l) || opts_.bias != BiasRouting::natural) return;
        const Vec& b = model_.node_bias(l);
        auto& nd = nodes_[l];
        for (Index i = 0; i < n_; ++i) nd.p0[i] += b[i % b.size()];
    }

    void true_stage(std::size_t l) {
        const auto& in = nodes_[l - 1];
        auto& nd = nodes_[l];
        const Stage& st = model_.stage(l);
        nd.q0.resize(n_);
        nd.q0_core.resize(n_);
        if (st.kind == StageKind::linear) {
            const auto& svd = model_.stage_svd(l);
            const Index ns = slots(l);
            const Vec& xi = normal(stream(l, kNoise), n_);
            const double nsd = svd.noiseless() ? 0.0 : 1.0 / std::sqrt(svd.noise_precision);
            nd.q_valid.assign(n_, 0);
            for (Index i = 0; i < n_; ++i) {
                const Index n = i % ns;
                if (n >= svd.out_dim()) {
                    nd.q0[i] = nd.q0_core[i] = 0.0;
                    continue;
                }
                nd.q_valid[i] = 1;
                const double x = n < svd.in_dim() ? in.p0[i] : 0.0;
                nd.q0_core[i] = svd.s(n) * x + nsd * xi[i];
                nd.q0[i] = nd.q0_core[i] + svd.bbar[n];
                if (opts_.bias == BiasRouting::transformed) nd.q0_core[i] = nd.q0[i];
            }
        } else {
            for (Index i = 0; i < n_; ++i) nd.q0[i] = nd.q0_core[i] = activate(st.activation, in.p0[i]);
            nd.q_valid.assign(n_, 1);
        }
    }

    // (P0, P+) ~ N(0, K) with K the second moments of (Q0, Q+)
    Eigen::Matrix2d draw_p(std::size_t l) {
        auto& nd = nodes_[l];
        double k11 = 0.0, k12 = 0.0, k22 = 0.0;
        Index cnt = 0;
        for (Index i = 0; i < n_; ++i) {
            if (!nd.q_valid[i]) continue;
            k11 += nd.q0_core[i] * nd.q0_core[i];
            k12 += nd.q0_core[i] * nd.qp[i];
            k22 += nd.qp[i] * nd.qp[i];
            ++cnt;
        }
        k11 /= static_cast<double>(cnt);
        k12 /= static_cast<double>(cnt);
        k22 /= static_cast<double>(cnt);
        const double a = std::sqrt(k11);
        const double c = a > 0.0 ? k12 / a : 0.0;
        const double d = std::sqrt(std::max(0.0, k22 - c * c));
        const Vec& e1 = normal(stream(l, kP1), n_);
        const Vec& e2 = normal(stream(l, kP2), n_);
        nd.p0 = a * e1;
        nd.pp = c * e1 + d * e2;
        add_natural_bias(l);
        nd.p_valid.assign(n_, 1);
        // downstream truth follows the redrawn p0
        if (l + 1 < M_) true_stage(l + 1);
        Eigen::Matrix2d k;
        k << k11, k12, k12, k22;
        return k;
    }

    void forward_prior() {
        auto& nd = nodes_[0];
        const double g = gamma_minus_[0], lam = model_.prior_precision();
        nd.qhat = (nd.qm + nd.q0) * (g / (lam + g));
        dz_ = Vec::Constant(n_, scalar::input_slope(g, lam));
    }

    void forward_stage(std::size_t l) {
        const auto& in = nodes_[l - 1];
        auto& nd = nodes_[l];
        nd.qhat.resize(n_);
        dz_.resize(n_);
        const double gp = gamma_plus_[l - 1], gm = gamma_minus_[l];
        const Stage& st = model_.stage(l);
        if (st.kind == StageKind::linear) {
            const auto& svd = model_.stage_svd(l);
            const Index ns = slots(l);
            for (Index i = 0; i < n_; ++i) {
                const Index n = i % ns;
                if (n >= svd.out_dim()) {
                    nd.qhat[i] = dz_[i] = 0.0;
                    continue;
                }
                const double a = n < svd.in_dim() ? in.pp[i] + in.p0[i] : 0.0;
                const auto p = scalar::linear(a, nd.qm[i] + nd.q0[i], svd.s(n), svd.bbar[n], gp, gm,
                                              svd.noise_precision);
                nd.qhat[i] = p.z;
                dz_[i] = p.dz;
            }
        } else {
            for (Index i = 0; i < n_; ++i) {
                const auto p = scalar::activation(st.activation, in.pp[i] + in.p0[i], nd.qm[i] + nd.q0[i], gp, gm);
                nd.qhat[i] = p.z;
                dz_[i] = p.dz;
            }
        }
    }

    Vec reverse_stage(std::size_t l, double tau) {
        auto& in = nodes_[l - 1];
        const auto& nd = nodes_[l];
        Vec phat(n_);
        dx_.resize(n_);
        const double gp = gamma_plus_[l - 1], gm = gamma_minus_[l];
        const Vec qm = normal(stream(l, kQm), n_) * std::sqrt(tau);
        const Stage& st = model_.stage(l);
        in.p_valid.assign(n_, 1);
        if (st.kind == StageKind::linear) {
            const auto& svd = model_.stage_svd(l);
            const Index ns = slots(l);
            for (Index i = 0; i < n_; ++i) {
                const Index n = i % ns;
                if (n >= svd.in_dim()) {
                    in.p_valid[i] = 0;
                    phat[i] = dx_[i] = 0.0;
                    continue;
                }
                const double c = n < svd.out_dim() ? qm[i] + nd.q0[i] : 0.0;
                const double b = n < svd.out_dim() ? svd.bbar[n] : 0.0;
                const auto p = scalar::linear(in.pp[i] + in.p0[i], c, svd.s(n), b, gp, gm, svd.noise_precision);
                phat[i] = p.x;
                dx_[i] = p.dx;
            }
        } else {
            for (Index i = 0; i < n_; ++i) {
                const auto p = scalar::activation(st.activation, in.pp[i] + in.p0[i], qm[i] + nd.q0[i], gp, gm);
                phat[i] = p.x;
                dx_[i] = p.dx;
            }
        }
        return phat;
    }

    Vec reverse_output() {
        auto& nd = nodes_[M_ - 1];
        Vec phat(n_);
        dx_.resize(n_);
        const double gp = gamma_plus_[M_ - 1];
        if (model_.output_kind() == OutputKind::relu) {
            for (Index i = 0; i < n_; ++i) {
                const double y = std::max(0.0, nd.p0[i]);
                const double r = nd.pp[i] + nd.p0[i];
                phat[i] = scalar::output_relu(r, y);
                dx_[i] = scalar::output_relu_slope(r, y);
            }
        } else {
            const auto& svd = model_.output_svd();
            const Vec& xi = normal(stream(M_, kNoise), n_);
            const double nsd = svd.noiseless() ? 0.0 : 1.0 / std::sqrt(svd.noise_precision);
            const Index ns = svd.in_dim();
            for (Index i = 0; i < n_; ++i) {
                const Index n = i % ns;
                const double s = svd.s(n);
                const double b = n < svd.out_dim() ? svd.bbar[n] : 0.0;
                const double y = n < svd.out_dim() ? s * nd.p0[i] + b + nsd * xi[i] : 0.0;
                const double r = nd.pp[i] + nd.p0[i];
                phat[i] = scalar::output_linear(r, y, s, b, gp, svd.noise_precision);
                dx_[i] = scalar::output_linear_slope(s, gp, svd.noise_precision);
            }
        }
        nd.p_valid.assign(n_, 1);
        return phat;
    }

    const InferenceModel& model_;
    SEOptions opts_;
    std::size_t M_;
    Index n_;
    BlockNormals normals_;
    std::map<std::uint64_t, Vec> cache_;
    std::vector<SENodeSamples> nodes_;
    std::vector<double> gamma_plus_, gamma_minus_, alpha_plus_, alpha_minus_;
    Vec dz_, dx_;
};

} // namespace detail

inline SEState run_se(const InferenceModel& model, const SEOptions& opts = {}) {
    opts.validate();
    detail::SERunner runner(model, opts);
    return runner.run();
}

// Built-in pseudo-Lipschitz test functions of order 2.
enum class TestFunction { identity, square, abs, shifted_square, product };

// Gaussian limit law of the samples (and of the paired block for products).
struct GaussianLaw {
    double mean = 0.0;
    double var = 1.0;
    double pair_mean = 0.0;
    double cov = 0.0;  // with the paired block
};

struct PLCheckResult {
    double empirical_mean = 0.0;
    double reference_mean = 0.0;
    double deviation = 0.0;
};

inline PLCheckResult empirical_converge_check(const Vec& x, TestFunction fn, const GaussianLaw& law = {},
                                              double shift = 0.0, const Vec* paired = nullptr) {
    if (x.size() == 0) throw Error("empirical_converge_check: no samples");
    PLCheckResult r;
    const double sd = std::sqrt(law.var);
    switch (fn) {
    case TestFunction::identity:
        r.empirical_mean = x.mean();
        r.reference_mean = law.mean;
        break;
    case TestFunction::square:
        r.empirical_mean = x.squaredNorm() / static_cast<double>(x.size());
        r.reference_mean = law.var + law.mean * law.mean;
        break;
    case TestFunction::abs: {
        r.empirical_mean = x.cwiseAbs().mean();
        const double a = law.mean / sd;
        r.reference_mean = sd * std::sqrt(2.0 / std::numbers::pi) * std::exp(-0.5 * a * a) +
                           law.mean * (1.0 - 2.0 * normal_cdf(-a));
        break;
    }
    case TestFunction::shifted_square:
        r.empirical_mean = (x.array() - shift).square().mean();
        r.reference_mean = law.var + (law.mean - shift) * (law.mean - shift);
        break;
    case TestFunction::product:
        if (!paired || paired->size() != x.size()) throw Error("empirical_converge_check: product needs a paired block");
        r.empirical_mean = x.dot(*paired) / static_cast<double>(x.size());
        r.reference_mean = law.cov + law.mean * law.pair_mean;
        break;
    }
    r.deviation = std::abs(r.empirical_mean - r.reference_mean);
    return r;
}

} // namespace mlvamp
