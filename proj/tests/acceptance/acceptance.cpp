// Acceptance run: one PASS/FAIL line per criterion with the measured values.
// Exit status is nonzero if any criterion fails.

#include "fixtures.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

using namespace mlvamp;

namespace {

// Tolerances and budgets.
constexpr double kSeAgreementDb = 1.0;
constexpr double kBaselineParityDb = 2.0;
constexpr double kBudgetLongS = 600.0;
constexpr double kAdmmTol = 1e-10;
constexpr double kMapTol = 1e-8;
constexpr double kReluGridTol = 1e-6;
constexpr double kLinearTol = 1e-10;
constexpr double kDivergenceTol = 1e-6;
constexpr double kKinkMargin = 1e-3;
constexpr double kGradientTol = 1e-5;
constexpr double kCorrelationTol = 0.1;
constexpr double kAdamRelGap = 0.01;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median_of(std::vector<double> v) { return median(std::move(v)); }

// ---------------------------------------------------------------------------
// 1 and 2 share one experiment run.

struct SweepData {
    std::vector<SummaryRow> summary;
    double mlvamp_s = 0.0, baseline_s = 0.0, se_s = 0.0;
    int failures = 0, total = 0;
};

SweepData run_sweep() {
    ExperimentConfig cfg = load_experiment_config(std::string(MLVAMP_SOURCE_DIR) + "/configs/reference.cfg");
    cfg.ny_sweep = {100, 200, 300, 500};
    cfg.instances = 40;
    cfg.output.clear();
    const ExperimentResult res = run_experiment(cfg);
    SweepData d;
    d.summary = aggregate(res.records);
    d.failures = static_cast<int>(res.failures.size());
    d.total = res.total_instances;
    double ml = 0.0, bl = 0.0, se = 0.0;
    for (const auto& r : res.records) {
        if (r.layer != 0 || r.half_iter != 0) continue;
        if (r.method == Method::mlvamp) ml += r.wall_ms;
        if (r.method == Method::baseline) bl += r.wall_ms;
        if (r.method == Method::se) se += r.wall_ms;
    }
    d.mlvamp_s = ml / 1e3;
    d.baseline_s = bl / 1e3;
    d.se_s = se / 1e3;
    return d;
}

Outcome se_agreement(const SweepData& d) {
    Outcome o{true, ""};
    for (Index ny : {100, 200, 300, 500}) {
        const auto* ml = find_summary(d.summary, ny, Method::mlvamp);
        const auto* se = find_summary(d.summary, ny, Method::se);
        if (!ml || !se) return {false, fmt("missing summary for ny=%ld", static_cast<long>(ny))};
        const double gap = std::abs(ml->median_nmse_db - se->median_nmse_db);
        o.pass = o.pass && gap <= kSeAgreementDb;
        o.detail += fmt("ny=%ld mlvamp %.2f se %.2f |d| %.2f dB; ", static_cast<long>(ny), ml->median_nmse_db,
                        se->median_nmse_db, gap);
    }
    const double t = d.mlvamp_s + d.se_s;
    o.pass = o.pass && t <= kBudgetLongS;
    o.detail += fmt("failed instances %d/%d; mlvamp+se %.0f s", d.failures, d.total, t);
    return o;
}

Outcome baseline_parity(const SweepData& d) {
    Outcome o{true, ""};
    for (Index ny : {100, 200, 300, 500}) {
        const auto* ml = find_summary(d.summary, ny, Method::mlvamp);
        const auto* bl = find_summary(d.summary, ny, Method::baseline);
        if (!ml || !bl) return {false, fmt("missing summary for ny=%ld", static_cast<long>(ny))};
        const double gap = std::abs(ml->median_nmse_db - bl->median_nmse_db);
        o.pass = o.pass && gap <= kBaselineParityDb;
        o.detail += fmt("ny=%ld baseline %.2f mlvamp %.2f |d| %.2f dB; ", static_cast<long>(ny),
                        bl->median_nmse_db, ml->median_nmse_db, gap);
    }
    o.pass = o.pass && d.baseline_s <= kBudgetLongS;
    o.detail += fmt("baseline %.0f s", d.baseline_s);
    return o;
}

// ---------------------------------------------------------------------------

double max_state_diff(const AdmmState& a, const AdmmState& b) {
    double w = 0.0;
    for (std::size_t l = 0; l < a.zhat_plus.size(); ++l) {
        w = std::max({w, (a.zhat_plus[l] - b.zhat_plus[l]).cwiseAbs().maxCoeff(),
                      (a.zhat_minus[l] - b.zhat_minus[l]).cwiseAbs().maxCoeff(),
                      (a.s_plus[l] - b.s_plus[l]).cwiseAbs().maxCoeff(),
                      (a.s_minus[l] - b.s_minus[l]).cwiseAbs().maxCoeff()});
    }
    return w;
}

Outcome admm_equivalence() {
    Outcome o{true, ""};
    for (auto act : {Activation::identity, Activation::relu}) {
        const Network net = fixture::toy_network(act, 31);
        const InferenceModel model(net);
        Rng rng(32);
        const Trajectory t = forward_sample(net, sample_input(net, rng), 33);
        const std::vector<NodeGammas> g{{1.3, 0.7}, {2.0, 0.5}, {0.9, 1.1}};
        const FixedRun fr = run_fixed(model, t.y(), g, 20, nullptr, true, 0.0);
        if (fr.history.size() != 20) return {false, fmt("%zu iterations recorded", fr.history.size())};
        AdmmState ref = AdmmState::zeros(model);
        double worst = 0.0;
        for (const auto& h : fr.history) {
            ref = admm_step_reference(ref, model, t.y(), g);
            worst = std::max(worst, max_state_diff(ref, h));
        }
        o.pass = o.pass && worst <= kAdmmTol;
        o.detail += fmt("%s max diff %.2e; ", to_string(act), worst);
    }
    return o;
}

Outcome fixed_point_criticality() {
    Outcome o{true, ""};
    for (std::uint64_t seed : {41, 42, 43}) {
        const Network net = fixture::gaussian_network(seed);
        const InferenceModel model(net);
        Rng rng(seed + 100);
        const Trajectory t = forward_sample(net, sample_input(net, rng), seed + 200);
        RunOptions opts;
        opts.tol = 1e-12;
        const RunResult adaptive = run(model, t.y(), nullptr, opts);
        std::vector<NodeGammas> g;
        for (std::size_t l = 0; l < model.num_nodes(); ++l)
            g.push_back({adaptive.state.gamma_plus[l], adaptive.state.gamma_minus[l]});
        const FixedRun fr = run_fixed(model, t.y(), g, 5000, nullptr, false, 1e-12);
        const KktReport rep = check_fixed_point(model, t.y(), fr);
        const auto map = oracle::gaussian_network_map(net, t.y());
        double rel = 0.0;
        for (std::size_t l = 0; l < map.size(); ++l)
            rel = std::max(rel, (fr.result.state.zhat_plus[l] - map[l]).norm() / map[l].norm());
        o.pass = o.pass && rep.passed && rel <= kMapTol;
        o.detail += fmt("seed %lu primal %.1e dual %.1e stat %.1e map %.1e; ", static_cast<unsigned long>(seed),
                        rep.max_primal(), rep.max_dual(), rep.max_stationarity(), rel);
    }
    return o;
}

Outcome denoiser_oracles() {
    Rng rng(51);
    double relu_worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double a = 2 * rng.normal(), c = 2 * rng.normal();
        const double gp = std::exp(rng.normal()), gm = std::exp(rng.normal());
        const auto ref = oracle::prox_relu_grid(a, c, gp, gm);
        const auto got = prox_relu_pair(Vec::Constant(1, a), Vec::Constant(1, c), {gp, gm});
        relu_worst = std::max({relu_worst, std::abs(got.zhat_prev[0] - ref.x), std::abs(got.zhat_cur[0] - ref.z)});
    }
    double lin_worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const Index rows = 1 + static_cast<Index>(rng.uniform() * 200);
        const Index cols = 1 + static_cast<Index>(rng.uniform() * 100);
        const double nu = i % 4 == 0 ? kInf : std::exp(2 * rng.normal());
        const LinearLayer layer{rng.normal_mat(rows, cols, 1.0 / std::sqrt(static_cast<double>(cols))),
                                rng.normal_vec(rows), nu};
        const Vec a = rng.normal_vec(cols), c = rng.normal_vec(rows);
        const double gp = std::exp(rng.normal()), gm = std::exp(rng.normal());
        const auto [x, z] = oracle::linear_dense(layer.weights, layer.bias, nu, a, c, gp, gm);
        const auto got = linear_denoise(decompose_linear(layer), a, c, {gp, gm});
        lin_worst = std::max({lin_worst, (got.zhat_prev - x).cwiseAbs().maxCoeff(),
                              (got.zhat_cur - z).cwiseAbs().maxCoeff()});
    }
    return {relu_worst <= kReluGridTol && lin_worst <= kLinearTol,
            fmt("relu pair max err %.2e over 1000 draws; linear max err %.2e over 100 layers", relu_worst, lin_worst)};
}

// Branch label of the scalar ReLU prox: positive, clamped at zero or negative.
int relu_branch(double a, double c, double gp, double gm) {
    const double x = scalar::relu(a, c, gp, gm).x;
    return x > 0.0 ? 1 : (x < 0.0 ? -1 : 0);
}

// Both inputs can move by the margin without changing branch.
bool away_from_kink(double a, double c, double gp, double gm) {
    const int b = relu_branch(a, c, gp, gm);
    for (double da : {-kKinkMargin, 0.0, kKinkMargin})
        for (double dc : {-kKinkMargin, 0.0, kKinkMargin})
            if (relu_branch(a + da, c + dc, gp, gm) != b) return false;
    return true;
}

Outcome divergence_correctness() {
    Rng rng(61);
    std::vector<double> err;
    std::map<std::string, double> worst;
    auto add = [&](const std::string& name, double analytic, double fd) {
        err.push_back(std::abs(analytic - fd));
        worst[name] = std::max(worst[name], err.back());
    };
    for (int trial = 0; trial < 20; ++trial) {
        const double gp = std::exp(rng.normal()), gm = std::exp(rng.normal());
        {
            const Vec r = rng.normal_vec(50, 2.0);
            const double lambda = std::exp(rng.normal());
            add("input", prox_input(r, gp, lambda).alpha,
                oracle::fd_divergence([&](const Vec& v) { return prox_input(v, gp, lambda).zhat; }, r));
        }
        for (auto act : {Activation::relu, Activation::identity}) {
            Vec a(40), c(40);
            for (Index i = 0; i < a.size(); ++i) {
                do {
                    a[i] = 2 * rng.normal();
                    c[i] = 2 * rng.normal();
                } while (act == Activation::relu && !away_from_kink(a[i], c[i], gp, gm));
            }
            const auto r = prox_activation_pair(act, a, c, {gp, gm});
            const std::string name = std::string(to_string(act)) + " pair";
            add(name, r.alpha_plus, oracle::fd_divergence(
                                        [&](const Vec& v) { return prox_activation_pair(act, a, v, {gp, gm}).zhat_cur; }, c));
            add(name, r.alpha_minus, oracle::fd_divergence(
                                         [&](const Vec& v) { return prox_activation_pair(act, v, c, {gp, gm}).zhat_prev; }, a));
        }
        {
            const Index rows = 5 + trial, cols = 20 - trial / 2;
            const double nu = trial % 3 == 0 ? kInf : std::exp(rng.normal());
            const auto svd = decompose_linear({rng.normal_mat(rows, cols), rng.normal_vec(rows), nu});
            const Vec a = rng.normal_vec(cols), c = rng.normal_vec(rows);
            const auto r = linear_denoise(svd, a, c, {gp, gm});
            add("linear", r.alpha_plus,
                oracle::fd_divergence([&](const Vec& v) { return linear_denoise(svd, a, v, {gp, gm}).zhat_cur; }, c));
            add("linear", r.alpha_minus,
                oracle::fd_divergence([&](const Vec& v) { return linear_denoise(svd, v, c, {gp, gm}).zhat_prev; }, a));
            const Vec y = rng.normal_vec(rows);
            const double nu_out = std::exp(rng.normal());
            const auto osvd = decompose_linear({rng.normal_mat(rows, cols), rng.normal_vec(rows), nu_out});
            add("output linear", prox_output_linear(osvd, a, y, gp).alpha,
                oracle::fd_divergence([&](const Vec& v) { return prox_output_linear(osvd, v, y, gp).zhat; }, a));
        }
        {
            Vec r(40), y(40);
            for (Index i = 0; i < r.size(); ++i) {
                do r[i] = rng.normal(); while (std::abs(r[i]) < kKinkMargin);
                y[i] = std::max(0.0, rng.normal());
            }
            add("output relu", prox_output_relu(r, y).alpha,
                oracle::fd_divergence([&](const Vec& v) { return prox_output_relu(v, y).zhat; }, r));
        }
    }
    double mean = 0.0;
    for (double e : err) mean += e;
    mean /= static_cast<double>(err.size());
    std::string detail = fmt("mean abs err %.2e over %zu checks; worst:", mean, err.size());
    for (const auto& [k, v] : worst) detail += fmt(" %s %.1e", k.c_str(), v);
    return {mean <= kDivergenceTol, detail};
}

Outcome gradient_check() {
    SyntheticConfig cfg;
    cfg.ny = 100;
    const Network net = build_random_network(cfg, 71);
    Rng rng(72);
    const Trajectory t = forward_sample(net, sample_input(net, rng), 73);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
        const Vec z0 = rng.normal_vec(net.input_dim());
        const Vec g = gradient(net, z0, t.y());
        const Vec fd = oracle::fd_gradient([&](const Vec& v) { return objective(net, v, t.y()); }, z0);
        worst = std::max(worst, (g - fd).cwiseAbs().maxCoeff());
    }
    return {worst <= kGradientTol, fmt("max component error %.2e at 20 points", worst)};
}

// Median over seeds of |corr| per (k, stage) on equal-width rotational networks,
// with initial reverse messages carrying independent Gaussian errors.
std::vector<std::vector<double>> correlation_medians(Index n, int seeds, int passes) {
    SyntheticConfig cfg;
    cfg.n0 = n;
    cfg.hidden = {n, n};
    cfg.ny = n;
    cfg.hidden_weights = HiddenWeights::rotational;
    std::vector<std::vector<std::vector<double>>> acc;
    for (int s = 0; s < seeds; ++s) {
        const auto seed = static_cast<std::uint64_t>(s);
        const FactoredNetwork f = build_rotational_network(cfg, derive_seed(81, {seed}));
        const InferenceModel model(f.network, f.svds);
        Rng rng(derive_seed(82, {seed}));
        const Trajectory t = forward_sample(f.network, sample_input(f.network, rng), derive_seed(83, {seed}));
        RunOptions opts;
        opts.max_iters = passes;
        opts.tol = 0.0;
        Rng noise(derive_seed(84, {seed}));
        for (std::size_t l = 0; l < model.num_nodes(); ++l)
            opts.r_minus_init.push_back(t.z[l] + noise.normal_vec(model.node_dim(l), 1.0 / std::sqrt(opts.gamma_init)));
        const auto corr = fixture::stage_error_correlations(model, t, opts);
        acc.resize(corr.size(), std::vector<std::vector<double>>(corr[0].size()));
        for (std::size_t k = 0; k < corr.size(); ++k)
            for (std::size_t l = 0; l < corr[k].size(); ++l) acc[k][l].push_back(std::abs(corr[k][l]));
    }
    std::vector<std::vector<double>> med(acc.size());
    for (std::size_t k = 0; k < acc.size(); ++k)
        for (const auto& v : acc[k]) med[k].push_back(median_of(v));
    return med;
}

double max_entry(const std::vector<std::vector<double>>& m) {
    double w = 0.0;
    for (const auto& row : m)
        for (double v : row) w = std::max(w, v);
    return w;
}

Outcome error_orthogonality() {
    constexpr int kSeeds = 20, kPasses = 6;  // forward passes k = 0..5
    const auto m500 = correlation_medians(500, kSeeds, kPasses);
    std::string detail = "N=500 median |corr| by k (stages 1..4):";
    for (std::size_t k = 0; k < m500.size(); ++k) {
        detail += fmt(" k%zu[", k);
        for (double v : m500[k]) detail += fmt("%.2f ", v);
        detail.back() = ']';
    }
    const double w500 = max_entry(m500);
    const double w200 = max_entry(correlation_medians(200, kSeeds, kPasses));
    const double w2000 = max_entry(correlation_medians(2000, kSeeds, kPasses));
    detail += fmt("; worst N=500 %.3f; worst N=200 %.3f, N=2000 %.3f", w500, w200, w2000);
    return {w500 <= kCorrelationTol && w2000 < w200, detail};
}

Outcome adam_convergence() {
    int ok = 0;
    double worst = 0.0;
    constexpr int kInstances = 100;
    for (int s = 0; s < kInstances; ++s) {
        const auto seed = static_cast<std::uint64_t>(s);
        const Network net = fixture::quadratic_network(derive_seed(91, {seed}));
        Rng rng(derive_seed(92, {seed}));
        const Trajectory t = forward_sample(net, sample_input(net, rng), derive_seed(93, {seed}));
        const double fstar = objective(net, fixture::quadratic_minimizer(net, t.y()), t.y());
        OptimizerOptions opts;  // step 0.01, 500 steps
        opts.seed = derive_seed(94, {seed});
        const double rel = (minimize(net, t.y(), opts).objective - fstar) / fstar;
        worst = std::max(worst, rel);
        if (rel <= kAdamRelGap) ++ok;
    }
    return {ok == kInstances, fmt("%d/%d instances within 1%%, worst relative gap %.2e", ok, kInstances, worst)};
}

Outcome pl_sanity() {
    Rng rng(101);
    const Vec x = rng.normal_vec(1000000);
    const auto r = empirical_converge_check(x, TestFunction::square);
    const double bound = 3 * std::sqrt(2.0 / 1e6);
    return {r.deviation <= bound, fmt("|mean(x^2) - 1| = %.2e, bound %.2e", r.deviation, bound)};
}

} // namespace

int main(int argc, char** argv) {
    // optional arguments: criterion ids to run, default all
    std::vector<int> only;
    for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
    struct Criterion {
        int id;
        const char* name;
        double budget_s;
        std::function<Outcome()> fn;
    };
    SweepData sweep;
    bool have_sweep = false;
    auto sweep_data = [&]() -> const SweepData& {
        if (!have_sweep) {
            sweep = run_sweep();
            have_sweep = true;
        }
        return sweep;
    };
    const std::vector<Criterion> criteria{
        {1, "se-simulation agreement", 0, [&] { return se_agreement(sweep_data()); }},
        {2, "baseline parity", 0, [&] { return baseline_parity(sweep_data()); }},
        {3, "admm equivalence", 5, admm_equivalence},
        {4, "fixed-point criticality", 5, fixed_point_criticality},
        {5, "denoiser oracles", 30, denoiser_oracles},
        {6, "divergence correctness", 10, divergence_correctness},
        {7, "baseline gradient check", 10, gradient_check},
        {8, "error orthogonality", 120, error_orthogonality},
        {9, "adam convergence on quadratics", 5, adam_convergence},
        {10, "pl(2) checker sanity", 1, pl_sanity},
    };
    int failed = 0, ran = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        ++ran;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double s = seconds_since(t0);
        // budgets for 1 and 2 are checked per method inside the criterion
        if (c.budget_s > 0 && s > c.budget_s) {
            o.pass = false;
            o.detail += fmt("; over budget %.0f s", c.budget_s);
        }
        if (!o.pass) ++failed;
        std::printf("[%s] %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), s);
        std::fflush(stdout);
    }
    std::printf("%d/%d criteria passed\n", ran - failed, ran);
    return failed == 0 ? 0 : 1;
}
