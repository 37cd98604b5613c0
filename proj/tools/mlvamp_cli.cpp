#include "mlvamp.hpp"
#include "oracles.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

using namespace mlvamp;

namespace {

struct Overrides {
    std::optional<double> snr_db;
    std::optional<double> damping;
    std::optional<int> max_iters;
    std::optional<Index> mc_samples;
    std::optional<std::uint64_t> seed;

    void add(CLI::App* app) {
        app->add_option("--snr-db", snr_db, "Output SNR in dB");
        app->add_option("--damping", damping, "Message damping in (0,1]");
        app->add_option("--max-iters", max_iters, "ML-VAMP iteration cap");
        app->add_option("--mc-samples", mc_samples, "State-evolution Monte-Carlo samples");
        app->add_option("--seed", seed, "Master seed");
    }

    void apply(ExperimentConfig& c) const {
        if (snr_db) c.network.snr_db = *snr_db;
        if (damping) c.run.damping = *damping;
        if (max_iters) c.run.max_iters = *max_iters;
        if (mc_samples) c.se.mc_samples = *mc_samples;
        if (seed) c.seed = *seed;
    }
};

ExperimentConfig load_or_default(const std::string& path) {
    return path.empty() ? ExperimentConfig{} : load_experiment_config(path);
}

std::string vec_json(const Vec& v) { return detail::vector_text(v); }

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-")
        std::cout << text;
    else
        detail::write_file(path, text);
}

int cmd_gen(const std::string& config, const Overrides& ov, Index ny, int instance, const std::string& model_out,
            const std::string& obs_out) {
    ExperimentConfig c = load_or_default(config);
    ov.apply(c);
    if (ny <= 0) ny = c.ny_sweep.front();
    const Instance inst = make_instance(c, ny, instance);
    save_model(inst.network, model_out);
    save_observation({inst.truth.y(), inst.truth}, obs_out);
    std::printf("wrote %s and %s (ny=%ld, network seed %llu)\n", model_out.c_str(), obs_out.c_str(),
                static_cast<long>(ny), static_cast<unsigned long long>(inst.seed));
    return 0;
}

int cmd_infer(const std::string& model_path, const std::string& obs_path, const std::string& config,
              const Overrides& ov, const std::string& out) {
    ExperimentConfig c = load_or_default(config);
    ov.apply(c);
    const Network net = load_model(model_path);
    const Observation obs = load_observation(obs_path);
    const InferenceModel model(net);
    const Trajectory* truth = obs.truth ? &*obs.truth : nullptr;
    const RunResult r = run(model, obs.y, truth, c.run);

    std::string s = "{\n \"converged\": " + std::string(r.converged ? "true" : "false") +
                    ",\n \"iterations\": " + std::to_string(r.iterations) +
                    ",\n \"primal_gap\": " + detail::fmt17(r.primal_gap) + ",\n \"zhat\": [";
    for (std::size_t l = 0; l < model.num_nodes(); ++l)
        s += (l ? ",\n  " : "\n  ") + vec_json(r.state.zhat_plus[l]);
    s += "\n ]";
    if (truth) {
        s += ",\n \"final_nmse_db\": [";
        const auto& last = r.nmse_db.back();
        for (std::size_t l = 0; l < last.size(); ++l) s += (l ? ", " : "") + detail::fmt6(last[l]);
        s += "]";
    }
    write_text(out, s + "\n}\n");
    if (!out.empty() && out != "-" && truth)
        std::printf("converged=%d iterations=%d layer-0 NMSE %.3f dB\n", r.converged, r.iterations,
                    r.nmse_db.back()[0]);
    return 0;
}

int cmd_predict(const std::string& model_path, const std::string& config, const Overrides& ov, int iters,
                const std::string& out) {
    ExperimentConfig c = load_or_default(config);
    ov.apply(c);
    if (iters > 0) c.se.iters = iters;
    c.se.seed = c.seed;
    const Network net = load_model(model_path);
    const SEState se = run_se(InferenceModel(net), c.se);
    std::string s = "iter,node,nmse_plus_db,nmse_minus_db,gamma_plus,gamma_minus\n";
    char buf[256];
    for (std::size_t k = 0; k < se.iterations.size(); ++k)
        for (std::size_t l = 0; l < se.num_nodes(); ++l) {
            const auto& n = se.iterations[k].nodes[l];
            std::snprintf(buf, sizeof buf, "%zu,%zu,%s,%s,%.6g,%.6g\n", k, l,
                          detail::fmt6(predicted_nmse_db(se, l, k, Half::forward)).c_str(),
                          detail::fmt6(predicted_nmse_db(se, l, k, Half::reverse)).c_str(), n.gamma_plus,
                          n.gamma_minus);
            s += buf;
        }
    write_text(out, s);
    for (const auto& w : se.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    return 0;
}

// Adaptive run to settle the precisions, then a fixed-precision run from
// scratch whose limit is checked against the optimality conditions.
int cmd_verify(const std::string& model_path, const std::string& obs_path, int iters, double tol) {
    const Network net = load_model(model_path);
    const Observation obs = load_observation(obs_path);
    const InferenceModel model(net);
    RunOptions opts;
    opts.max_iters = iters;
    const RunResult adaptive = run(model, obs.y, nullptr, opts);
    std::vector<NodeGammas> g;
    for (std::size_t l = 0; l < model.num_nodes(); ++l)
        g.push_back({adaptive.state.gamma_plus[l], adaptive.state.gamma_minus[l]});
    const FixedRun fr = run_fixed(model, obs.y, g, iters, nullptr, false, tol);
    const KktReport rep = check_fixed_point(model, obs.y, fr);
    std::printf("fixed run: converged=%d iterations=%d\n", fr.result.converged, fr.result.iterations);
    for (std::size_t l = 0; l < rep.primal_gap.size(); ++l)
        std::printf("node %zu: primal gap %.3e  dual gap %.3e\n", l, rep.primal_gap[l], rep.dual_gap[l]);
    for (std::size_t i = 0; i < rep.stationarity_residual.size(); ++i)
        std::printf("block %zu: stationarity %.3e\n", i, rep.stationarity_residual[i]);
    std::printf("max primal %.3e  max dual %.3e  max stationarity %.3e\n", rep.max_primal(), rep.max_dual(),
                rep.max_stationarity());
    std::printf("%s\n", rep.passed ? "PASS" : "FAIL");
    return rep.passed ? 0 : 1;
}

int cmd_experiment(const std::string& config, const Overrides& ov, const std::string& out, int threads, bool quiet) {
    ExperimentConfig c = load_or_default(config);
    ov.apply(c);
    if (!out.empty()) c.output = out;
    if (threads > 0) c.threads = threads;
    const ExperimentResult res =
        run_experiment(c, quiet ? ProgressFn{} : ProgressFn([](const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); }));
    if (!res.records.empty()) {
        std::printf("%6s  %-8s  %12s  %s\n", "ny", "method", "median dB", "instances");
        for (const auto& row : aggregate(res.records))
            std::printf("%6ld  %-8s  %12s  %d\n", static_cast<long>(row.ny), to_string(row.method),
                        detail::fmt6(row.median_nmse_db).c_str(), row.instances);
    }
    for (const auto& f : res.failures) std::fprintf(stderr, "failure: %s\n", f.c_str());
    if (!c.output.empty()) std::printf("wrote %zu records to %s\n", res.records.size(), c.output.c_str());
    if (res.failed()) {
        std::fprintf(stderr, "error: %zu of %d instances failed\n", res.failures.size(), res.total_instances);
        return 1;
    }
    return 0;
}

int cmd_oracle_prox_relu(double r_prev, double r_cur, double gp, double gm) {
    const auto p = oracle::prox_relu_grid(r_prev, r_cur, gp, gm);
    std::printf("x %.10g\nz %.10g\nenergy %.10g\n", p.x, p.z, oracle::relu_energy(p.x, r_prev, r_cur, gp, gm));
    return 0;
}

// Dense joint solve for a random linear stage.
int cmd_oracle_linear(Index rows, Index cols, double nu, double gp, double gm, std::uint64_t seed) {
    Rng rng(seed);
    const Mat w = rng.normal_mat(rows, cols, 1.0 / std::sqrt(static_cast<double>(cols)));
    const Vec b = rng.normal_vec(rows), a = rng.normal_vec(cols), c = rng.normal_vec(rows);
    const auto [x, z] = oracle::linear_dense(w, b, nu, a, c, gp, gm);
    const auto lib = linear_denoise(decompose_linear(LinearLayer{w, b, nu}), a, c, {gp, gm});
    std::printf("x %s\nz %s\nlibrary max abs difference %.3e\n", vec_json(x).c_str(), vec_json(z).c_str(),
                std::max((lib.zhat_prev - x).cwiseAbs().maxCoeff(), (lib.zhat_cur - z).cwiseAbs().maxCoeff()));
    return 0;
}

// Joint-Gaussian MAP of a model file with identity activations and noisy layers.
int cmd_oracle_gaussian_map(const std::string& model_path, const std::string& obs_path) {
    const Network net = load_model(model_path);
    const Observation obs = load_observation(obs_path);
    const auto z = oracle::gaussian_network_map(net, obs.y);
    for (std::size_t l = 0; l < z.size(); ++l) std::printf("z%zu %s\n", l, vec_json(z[l]).c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"MAP inference in multi-layer networks by ML-VAMP"};
    app.require_subcommand(1);

    std::string config, model_path, obs_path, out;
    Overrides ov;
    Index ny = 0;
    int instance = 0, iters = 0, threads = 0;
    double tol = 1e-12;
    bool quiet = false;

    auto* gen = app.add_subcommand("gen", "Write a synthetic model and observation");
    gen->add_option("--config", config, "Experiment config file");
    gen->add_option("--ny", ny, "Output dimension (default: first sweep entry)");
    gen->add_option("--instance", instance, "Instance index");
    gen->add_option("--model", model_path, "Model file to write")->required();
    gen->add_option("--obs", obs_path, "Observation file to write")->required();
    ov.add(gen);

    auto* infer = app.add_subcommand("infer", "Run ML-VAMP on a model and observation");
    infer->add_option("--model", model_path)->required();
    infer->add_option("--obs", obs_path)->required();
    infer->add_option("--config", config, "Config file supplying run options");
    infer->add_option("--out", out, "Result file (default stdout)");
    ov.add(infer);

    auto* predict = app.add_subcommand("predict", "State-evolution NMSE prediction for a model");
    predict->add_option("--model", model_path)->required();
    predict->add_option("--config", config, "Config file supplying SE options");
    predict->add_option("--iters", iters, "SE iterations");
    predict->add_option("--out", out, "CSV file (default stdout)");
    ov.add(predict);

    auto* verify = app.add_subcommand("verify", "Check a fixed-precision run against the optimality conditions");
    verify->add_option("--model", model_path)->required();
    verify->add_option("--obs", obs_path)->required();
    int verify_iters = 5000;
    verify->add_option("--iters", verify_iters, "Iteration cap");
    verify->add_option("--tol", tol, "Fixed-run convergence tolerance");

    auto* experiment = app.add_subcommand("experiment", "Full synthetic sweep");
    experiment->add_option("--config", config, "Experiment config file");
    experiment->add_option("--out", out, "Results CSV");
    experiment->add_option("--threads", threads, "Worker threads (0: all cores)");
    experiment->add_flag("--quiet", quiet, "No per-job progress");
    ov.add(experiment);

    auto* orc = app.add_subcommand("oracle", "Brute-force reference values");
    orc->require_subcommand(1);
    double r_prev = 0, r_cur = 0, gp = 1, gm = 1, nu = kInf;
    Index rows = 8, cols = 5;
    std::uint64_t seed = 0;
    auto* relu = orc->add_subcommand("prox-relu", "Grid-search ReLU stage minimizer");
    relu->add_option("--r-prev", r_prev)->required();
    relu->add_option("--r-cur", r_cur)->required();
    relu->add_option("--gamma-prev", gp);
    relu->add_option("--gamma-cur", gm);
    auto* lin = orc->add_subcommand("linear", "Dense solve of a random linear stage");
    lin->add_option("--rows", rows);
    lin->add_option("--cols", cols);
    lin->add_option("--nu", nu, "Noise precision (default inf)");
    lin->add_option("--gamma-prev", gp);
    lin->add_option("--gamma-cur", gm);
    lin->add_option("--seed", seed);
    auto* gmap = orc->add_subcommand("gaussian-map", "Dense MAP of an all-Gaussian network");
    gmap->add_option("--model", model_path)->required();
    gmap->add_option("--obs", obs_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*gen) return cmd_gen(config, ov, ny, instance, model_path, obs_path);
        if (*infer) return cmd_infer(model_path, obs_path, config, ov, out);
        if (*predict) return cmd_predict(model_path, config, ov, iters, out);
        if (*verify) return cmd_verify(model_path, obs_path, verify_iters, tol);
        if (*experiment) return cmd_experiment(config, ov, out, threads, quiet);
        if (*relu) return cmd_oracle_prox_relu(r_prev, r_cur, gp, gm);
        if (*lin) return cmd_oracle_linear(rows, cols, nu, gp, gm, seed);
        if (*gmap) return cmd_oracle_gaussian_map(model_path, obs_path);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
