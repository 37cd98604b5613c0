#include "fixtures.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace mlvamp;

namespace {

Vec scalar_vec(double v) { return Vec::Constant(1, v); }

} // namespace

TEST(ProxInput, Conjugacy) {
    const auto r = prox_input(scalar_vec(2.0), 3.0, 1.0);
    EXPECT_DOUBLE_EQ(r.zhat[0], 1.5);
    EXPECT_DOUBLE_EQ(r.alpha, 0.75);
}

TEST(ProxInput, PriorDominatesAsGammaVanishes) {
    const auto r = prox_input(scalar_vec(5.0), 1e-12, 1.0);
    EXPECT_NEAR(r.zhat[0], 0.0, 1e-10);
    EXPECT_NEAR(r.alpha, 0.0, 1e-10);
}

TEST(ProxInput, MatchesGridSearch) {
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        const double r = 3 * rng.normal();
        const double x = oracle::grid_minimize([&](double t) { return 0.5 * t * t + 0.5 * (t - r) * (t - r); },
                                               -10, 10);
        EXPECT_NEAR(prox_input(scalar_vec(r), 1.0, 1.0).zhat[0], x, 1e-6);
    }
}

TEST(ProxInput, RejectsNonPositiveGamma) { EXPECT_THROW(prox_input(scalar_vec(1), 0.0, 1.0), Error); }

TEST(ProxReluPair, ConsistentPoint) {
    const auto r = prox_relu_pair(scalar_vec(1), scalar_vec(1), {1, 1});
    EXPECT_DOUBLE_EQ(r.zhat_prev[0], 1.0);
    EXPECT_DOUBLE_EQ(r.zhat_cur[0], 1.0);
}

TEST(ProxReluPair, NegativeBranch) {
    const auto r = prox_relu_pair(scalar_vec(-1), scalar_vec(-1), {1, 1});
    const auto o = oracle::prox_relu_grid(-1, -1, 1, 1);
    EXPECT_NEAR(o.x, -1.0, 1e-8);
    EXPECT_NEAR(r.zhat_prev[0], o.x, 1e-8);
    EXPECT_NEAR(r.zhat_cur[0], o.z, 1e-8);
}

TEST(ProxReluPair, BranchComparison) {
    EXPECT_NEAR(oracle::relu_energy(0.5, 2, -1, 1, 1), 2.25, 1e-12);
    EXPECT_NEAR(oracle::relu_energy(0.0, 2, -1, 1, 1), 2.5, 1e-12);
    const auto o = oracle::prox_relu_grid(2, -1, 1, 1);
    EXPECT_NEAR(o.x, 0.5, 1e-8);
    const auto r = prox_relu_pair(scalar_vec(2), scalar_vec(-1), {1, 1});
    EXPECT_NEAR(r.zhat_prev[0], 0.5, 1e-12);
    EXPECT_NEAR(r.zhat_cur[0], 0.5, 1e-12);
}

TEST(ProxReluPair, RandomAgainstGrid) {
    Rng rng(2);
    for (int i = 0; i < 200; ++i) {
        const double a = 2 * rng.normal(), c = 2 * rng.normal();
        const double gp = std::exp(rng.normal()), gm = std::exp(rng.normal());
        const auto o = oracle::prox_relu_grid(a, c, gp, gm);
        const auto r = prox_relu_pair(scalar_vec(a), scalar_vec(c), {gp, gm});
        EXPECT_NEAR(r.zhat_prev[0], o.x, 1e-6);
        EXPECT_NEAR(r.zhat_cur[0], o.z, 1e-6);
    }
}

TEST(LinearDenoise, ScalarTwoByTwo) {
    // s=1, nu=1, gamma+=gamma-=1, bbar=0, u_prev=2, u_cur=0
    const auto p = scalar::linear(2, 0, 1, 0, 1, 1, 1);
    EXPECT_NEAR(p.x, 4.0 / 3, 1e-14);
    EXPECT_NEAR(p.z, 2.0 / 3, 1e-14);
    // same from a dense solve of the 2x2 system
    const auto [x, z] = oracle::linear_dense(Mat::Ones(1, 1), Vec::Zero(1), 1, scalar_vec(2), scalar_vec(0), 1, 1);
    EXPECT_NEAR(x[0], 4.0 / 3, 1e-14);
    EXPECT_NEAR(z[0], 2.0 / 3, 1e-14);
}

TEST(LinearDenoise, ZeroSingularValue) {
    const auto p = scalar::linear(1.7, -0.6, 0, 0, 1, 1, 1);
    EXPECT_NEAR(p.x, 1.7, 1e-14);
    EXPECT_NEAR(p.z, -0.3, 1e-14);
}

TEST(LinearDenoise, MatchesDenseSolve) {
    Rng rng(3);
    for (auto [rows, cols] : {std::pair<Index, Index>{12, 7}, {7, 12}, {9, 9}, {1, 5}, {5, 1}}) {
        for (double nu : {0.5, 4.0, kInf}) {
            const LinearLayer layer{rng.normal_mat(rows, cols), rng.normal_vec(rows), nu};
            const Vec a = rng.normal_vec(cols), c = rng.normal_vec(rows);
            const double gp = 1.3, gm = 0.7;
            const auto [x, z] = oracle::linear_dense(layer.weights, layer.bias, nu, a, c, gp, gm);
            const auto r = linear_denoise(decompose_linear(layer), a, c, {gp, gm});
            EXPECT_LE((r.zhat_prev - x).cwiseAbs().maxCoeff(), 1e-10) << rows << "x" << cols << " nu=" << nu;
            EXPECT_LE((r.zhat_cur - z).cwiseAbs().maxCoeff(), 1e-10) << rows << "x" << cols << " nu=" << nu;
        }
    }
}

TEST(LinearDenoise, SideSelection) {
    Rng rng(4);
    const LinearLayer layer{rng.normal_mat(6, 4), rng.normal_vec(6), 2.0};
    const auto svd = decompose_linear(layer);
    const Vec a = rng.normal_vec(4), c = rng.normal_vec(6);
    const auto both = linear_denoise(svd, a, c, {1, 1});
    EXPECT_EQ(linear_denoise(svd, a, c, {1, 1}, Side::prev).zhat_prev, both.zhat_prev);
    EXPECT_EQ(linear_denoise(svd, a, c, {1, 1}, Side::cur).zhat_cur, both.zhat_cur);
}

TEST(LinearAlpha, ZeroSingularValues) {
    LinearLayerSVD svd = decompose_linear({Mat::Zero(3, 3), Vec::Zero(3), 1.0});
    const auto [ap, am] = linear_alpha(svd, {1, 1});
    EXPECT_NEAR(ap, 0.5, 1e-14);
    EXPECT_NEAR(am, 1.0, 1e-14);
}

TEST(LinearAlpha, FiniteDifferences) {
    Rng rng(5);
    const LinearLayer layer{rng.normal_mat(8, 5), rng.normal_vec(8), 3.0};
    const auto svd = decompose_linear(layer);
    const Vec a = rng.normal_vec(5), c = rng.normal_vec(8);
    const PrecisionPair th{0.8, 1.6};
    const auto r = linear_denoise(svd, a, c, th);
    const double fd_plus =
        oracle::fd_divergence([&](const Vec& v) { return linear_denoise(svd, a, v, th).zhat_cur; }, c);
    const double fd_minus =
        oracle::fd_divergence([&](const Vec& v) { return linear_denoise(svd, v, c, th).zhat_prev; }, a);
    EXPECT_NEAR(r.alpha_plus, fd_plus, 1e-6);
    EXPECT_NEAR(r.alpha_minus, fd_minus, 1e-6);
}

TEST(LinearAlpha, IncreasesWithGammaMinus) {
    Rng rng(6);
    const auto svd = decompose_linear({rng.normal_mat(6, 6), Vec::Zero(6), 2.0});
    double prev = -1.0;
    for (double gm : {0.1, 1.0, 10.0, 100.0, 1e4}) {
        const auto [ap, am] = linear_alpha(svd, {1.0, gm});
        (void)am;
        EXPECT_GT(ap, prev);
        prev = ap;
        const Vec c = rng.normal_vec(6), a = rng.normal_vec(6);
        const double fd = oracle::fd_divergence(
            [&](const Vec& v) { return linear_denoise(svd, a, v, {1.0, gm}).zhat_cur; }, c);
        EXPECT_NEAR(ap, fd, 1e-6);
    }
}

TEST(OutputLinear, ExactObservation) {
    const auto svd = decompose_linear({Mat::Identity(3, 3), Vec::Zero(3), 1e14});
    const Vec y = (Vec(3) << 1, -2, 0.5).finished();
    const auto r = prox_output_linear(svd, Vec::Zero(3), y, 1.0);
    EXPECT_LE((r.zhat - y).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(r.alpha, 0.0, 1e-12);
}

TEST(OutputLinear, NoInformation) {
    const auto svd = decompose_linear({Mat::Identity(3, 3), Vec::Zero(3), 1e-14});
    const Vec r_prev = (Vec(3) << 1, -2, 0.5).finished();
    const auto r = prox_output_linear(svd, r_prev, Vec::Ones(3), 1.0);
    EXPECT_LE((r.zhat - r_prev).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(r.alpha, 1.0, 1e-12);
}

TEST(OutputLinear, MatchesNormalEquations) {
    Rng rng(7);
    for (auto [rows, cols] : {std::pair<Index, Index>{10, 6}, {6, 10}}) {
        const LinearLayer layer{rng.normal_mat(rows, cols), rng.normal_vec(rows), 2.5};
        const Vec r_prev = rng.normal_vec(cols), y = rng.normal_vec(rows);
        const double g = 0.9;
        const Mat h = g * Mat::Identity(cols, cols) + layer.noise_precision * layer.weights.transpose() * layer.weights;
        const Vec x = h.ldlt().solve(g * r_prev + layer.noise_precision * layer.weights.transpose() * (y - layer.bias));
        const auto r = prox_output_linear(decompose_linear(layer), r_prev, y, g);
        EXPECT_LE((r.zhat - x).cwiseAbs().maxCoeff(), 1e-10);
        const double fd = oracle::fd_divergence(
            [&](const Vec& v) { return prox_output_linear(decompose_linear(layer), v, y, g).zhat; }, r_prev);
        EXPECT_NEAR(r.alpha, fd, 1e-6);
    }
}

TEST(OutputRelu, ObservedComponents) {
    const Vec r = (Vec(3) << -1, 2, 0.5).finished();
    const Vec y = (Vec(3) << 0, 1.5, 0).finished();
    const auto out = prox_output_relu(r, y);
    EXPECT_EQ(out.zhat, (Vec(3) << -1, 1.5, 0).finished());
    EXPECT_NEAR(out.alpha, 1.0 / 3, 1e-15);
}
