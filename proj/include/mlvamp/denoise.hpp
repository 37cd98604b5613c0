#pragma once

// MAP estimation functions for each stage of the network, with their mean
// divergences. Scalar kernels are shared with the state evolution.

#include "mlvamp/common.hpp"
#include "mlvamp/model.hpp"

#include <algorithm>
#include <string>

namespace mlvamp {

inline constexpr double kAlphaMin = 1e-4;

inline double clamp_alpha(double a, double amin = kAlphaMin) { return std::clamp(a, amin, 1.0 - amin); }

// theta = (gamma^+ on the stage input, gamma^- on the stage output)
struct PrecisionPair {
    double gamma_prev_plus = 1.0;
    double gamma_cur_minus = 1.0;
};

struct DenoiseResult {
    Vec zhat_prev;
    Vec zhat_cur;
    double alpha_plus = 0.0;   // mean d zhat_cur / d r_cur
    double alpha_minus = 0.0;  // mean d zhat_prev / d r_prev
    Index kinks = 0;           // components that landed on a ReLU kink
};

struct ProxResult {
    Vec zhat;
    double alpha = 0.0;
};

// which outputs a caller needs; the linear stage skips a transform otherwise
enum class Side { both, prev, cur };

namespace scalar {

// Estimates for one component of a stage and their partial derivatives.
struct Pair {
    double x = 0.0;   // input-side estimate
    double z = 0.0;   // output-side estimate
    double dx = 0.0;  // d x / d r_prev
    double dz = 0.0;  // d z / d r_cur
    bool kink = false;
};

inline double input(double r, double gamma, double prior_precision) {
    return gamma * r / (prior_precision + gamma);
}

inline double input_slope(double gamma, double prior_precision) { return gamma / (prior_precision + gamma); }

// min gp/2 (x-a)^2 + gm/2 (relu(x)-c)^2
inline Pair relu(double a, double c, double gp, double gm) {
    const double neg_x = std::min(a, 0.0);
    const double pos_a = std::max(a, 0.0);
    const double e_neg = 0.5 * gp * pos_a * pos_a + 0.5 * gm * c * c;

    const double t = (gp * a + gm * c) / (gp + gm);
    const double pos_x = std::max(0.0, t);
    const double e_pos = 0.5 * gp * (pos_x - a) * (pos_x - a) + 0.5 * gm * (pos_x - c) * (pos_x - c);

    Pair p;
    if (e_pos < e_neg) {
        p.x = p.z = pos_x;
        if (t > 0.0) {
            p.dx = gp / (gp + gm);
            p.dz = gm / (gp + gm);
        } else {
            p.kink = true;
        }
    } else {
        p.x = neg_x;
        p.z = 0.0;
        p.dx = a < 0.0 ? 1.0 : 0.0;
        p.kink = a >= 0.0;
    }
    return p;
}

inline Pair identity(double a, double c, double gp, double gm) {
    Pair p;
    p.x = p.z = (gp * a + gm * c) / (gp + gm);
    p.dx = gp / (gp + gm);
    p.dz = gm / (gp + gm);
    return p;
}

inline Pair activation(Activation act, double a, double c, double gp, double gm) {
    return act == Activation::relu ? relu(a, c, gp, gm) : identity(a, c, gp, gm);
}

// One transformed coordinate of a linear stage:
// min gp/2 (x-a)^2 + gm/2 (u-c)^2 + nu/2 (u - s x - b)^2.
// Coordinates without an input slot use s = 0; without an output slot the u
// part is ignored by the caller.
inline Pair linear(double a, double c, double s, double b, double gp, double gm, double nu) {
    Pair p;
    if (std::isinf(nu)) {
        if (s > 0.0) {
            const double d = gp + gm * s * s;
            p.x = (gp * a + gm * s * (c - b)) / d;
            p.z = s * p.x + b;
            p.dx = gp / d;
            p.dz = gm * s * s / d;
        } else {
            p.x = a;
            p.z = b;
            p.dx = 1.0;
            p.dz = 0.0;
        }
        return p;
    }
    const double h11 = gp + nu * s * s;
    const double h22 = gm + nu;
    const double h12 = -nu * s;
    const double det = h11 * h22 - h12 * h12;
    if (!(det > 0.0)) throw Error("linear denoiser: singular 2x2 system");
    const double f1 = gp * a - nu * s * b;
    const double f2 = gm * c + nu * b;
    p.x = (h22 * f1 - h12 * f2) / det;
    p.z = (h11 * f2 - h12 * f1) / det;
    p.dx = gp * h22 / det;
    p.dz = gm * h11 / det;
    return p;
}

// min gp/2 (x-a)^2 + nu/2 (y - s x - b)^2
inline double output_linear(double a, double y, double s, double b, double gp, double nu) {
    if (std::isinf(nu)) return s > 0.0 ? (y - b) / s : a;
    return (gp * a + nu * s * (y - b)) / (gp + nu * s * s);
}

inline double output_linear_slope(double s, double gp, double nu) {
    if (std::isinf(nu)) return s > 0.0 ? 0.0 : 1.0;
    return gp / (gp + nu * s * s);
}

// min gp/2 (x-r)^2 s.t. relu(x) = y
inline double output_relu(double r, double y) { return y > 0.0 ? y : std::min(r, 0.0); }

inline double output_relu_slope(double r, double y) { return y <= 0.0 && r < 0.0 ? 1.0 : 0.0; }

} // namespace scalar

inline void check_precisions(const PrecisionPair& theta) {
    if (!(theta.gamma_prev_plus > 0.0) || !(theta.gamma_cur_minus > 0.0))
        throw Error("denoiser: precisions must be positive");
}

inline ProxResult prox_input(const Vec& r, double gamma, double prior_precision) {
    if (!(gamma > 0.0)) throw Error("prox_input: gamma must be positive, got " + std::to_string(gamma));
    return {r * (gamma / (prior_precision + gamma)), scalar::input_slope(gamma, prior_precision)};
}

inline DenoiseResult prox_activation_pair(Activation act, const Vec& r_prev, const Vec& r_cur,
                                          const PrecisionPair& theta) {
    if (r_prev.size() != r_cur.size()) throw Error("activation denoiser: input lengths differ");
    check_precisions(theta);
    const Index n = r_prev.size();
    DenoiseResult out;
    out.zhat_prev.resize(n);
    out.zhat_cur.resize(n);
    double sdx = 0.0, sdz = 0.0;
    for (Index i = 0; i < n; ++i) {
        const auto p = scalar::activation(act, r_prev[i], r_cur[i], theta.gamma_prev_plus, theta.gamma_cur_minus);
        out.zhat_prev[i] = p.x;
        out.zhat_cur[i] = p.z;
        sdx += p.dx;
        sdz += p.dz;
        out.kinks += p.kink ? 1 : 0;
    }
    out.alpha_plus = sdz / static_cast<double>(n);
    out.alpha_minus = sdx / static_cast<double>(n);
    return out;
}

inline DenoiseResult prox_relu_pair(const Vec& r_prev, const Vec& r_cur, const PrecisionPair& theta) {
    return prox_activation_pair(Activation::relu, r_prev, r_cur, theta);
}

inline std::pair<double, double> linear_alpha(const LinearLayerSVD& svd, const PrecisionPair& theta) {
    check_precisions(theta);
    const Index n_in = svd.in_dim(), n_out = svd.out_dim();
    double ap = 0.0, am = 0.0;
    for (Index n = 0; n < std::max(n_in, n_out); ++n) {
        const auto p = scalar::linear(0.0, 0.0, svd.s(n), 0.0, theta.gamma_prev_plus, theta.gamma_cur_minus,
                                      svd.noise_precision);
        if (n < n_out) ap += p.dz;
        if (n < n_in) am += p.dx;
    }
    return {ap / static_cast<double>(n_out), am / static_cast<double>(n_in)};
}

inline DenoiseResult linear_denoise(const LinearLayerSVD& svd, const Vec& r_prev, const Vec& r_cur,
                                    const PrecisionPair& theta, Side side = Side::both) {
    const Index n_in = svd.in_dim(), n_out = svd.out_dim();
    if (r_prev.size() != n_in || r_cur.size() != n_out) throw Error("linear_denoise: input lengths do not match layer");
    check_precisions(theta);
    const Vec u_prev = svd.v_in * r_prev;
    const Vec u_cur = svd.v_out.transpose() * r_cur;
    Vec g_prev(n_in), g_cur(n_out);
    double ap = 0.0, am = 0.0;
    for (Index n = 0; n < std::max(n_in, n_out); ++n) {
        const double a = n < n_in ? u_prev[n] : 0.0;
        const double c = n < n_out ? u_cur[n] : 0.0;
        const double b = n < n_out ? svd.bbar[n] : 0.0;
        const auto p = scalar::linear(a, c, svd.s(n), b, theta.gamma_prev_plus, theta.gamma_cur_minus,
                                      svd.noise_precision);
        if (n < n_in) {
            g_prev[n] = p.x;
            am += p.dx;
        }
        if (n < n_out) {
            g_cur[n] = p.z;
            ap += p.dz;
        }
    }
    DenoiseResult out;
    if (side != Side::cur) out.zhat_prev = svd.v_in.transpose() * g_prev;
    if (side != Side::prev) out.zhat_cur = svd.v_out * g_cur;
    out.alpha_plus = ap / static_cast<double>(n_out);
    out.alpha_minus = am / static_cast<double>(n_in);
    return out;
}

// Final linear-Gaussian measurement y = W z + b + noise.
inline ProxResult prox_output_linear(const LinearLayerSVD& svd, const Vec& r_prev, const Vec& y, double gamma) {
    const Index n_in = svd.in_dim(), n_out = svd.out_dim();
    if (r_prev.size() != n_in || y.size() != n_out) throw Error("prox_output_linear: input lengths do not match layer");
    if (!(gamma > 0.0)) throw Error("prox_output_linear: gamma must be positive");
    const Vec u = svd.v_in * r_prev;
    const Vec ybar = svd.v_out.transpose() * y;
    Vec x(n_in);
    double alpha = 0.0;
    for (Index n = 0; n < n_in; ++n) {
        const double s = svd.s(n);
        const double yn = n < n_out ? ybar[n] : 0.0;
        const double bn = n < n_out ? svd.bbar[n] : 0.0;
        x[n] = scalar::output_linear(u[n], yn, s, bn, gamma, svd.noise_precision);
        alpha += scalar::output_linear_slope(s, gamma, svd.noise_precision);
    }
    return {svd.v_in.transpose() * x, alpha / static_cast<double>(n_in)};
}

// Final ReLU observation y = max(0, z).
inline ProxResult prox_output_relu(const Vec& r_prev, const Vec& y) {
    if (r_prev.size() != y.size()) throw Error("prox_output_relu: input lengths differ");
    ProxResult out;
    out.zhat.resize(r_prev.size());
    double alpha = 0.0;
    for (Index i = 0; i < r_prev.size(); ++i) {
        out.zhat[i] = scalar::output_relu(r_prev[i], y[i]);
        alpha += scalar::output_relu_slope(r_prev[i], y[i]);
    }
    out.alpha = alpha / static_cast<double>(r_prev.size());
    return out;
}

} // namespace mlvamp
