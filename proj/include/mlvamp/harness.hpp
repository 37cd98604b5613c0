#pragma once

// Synthetic-network experiment: config, per-instance jobs, CSV records and
// the median summary.

#include "mlvamp/baseline.hpp"
#include "mlvamp/chain.hpp"
#include "mlvamp/common.hpp"
#include "mlvamp/message_passing.hpp"
#include "mlvamp/model.hpp"
#include "mlvamp/model_io.hpp"
#include "mlvamp/random.hpp"
#include "mlvamp/state_evolution.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace mlvamp {

enum class Method { mlvamp, baseline, se };

inline const char* to_string(Method m) {
    switch (m) {
    case Method::mlvamp: return "mlvamp";
    case Method::baseline: return "baseline";
    case Method::se: return "se";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    if (s == "mlvamp") return Method::mlvamp;
    if (s == "baseline") return Method::baseline;
    if (s == "se") return Method::se;
    throw ParseError("unknown method '" + s + "'");
}

struct MethodToggles {
    bool mlvamp = true;
    bool baseline = true;
    bool se = true;
};

struct ExperimentConfig {
    SyntheticConfig network;
    std::vector<Index> ny_sweep{20, 50, 100, 150, 200, 300, 500};
    int instances = 40;
    MethodToggles methods;
    RunOptions run;
    SEOptions se;
    OptimizerOptions baseline;
    std::uint64_t seed = 0;
    std::string output;
    int threads = 0;  // 0: hardware concurrency

    void validate() const {
        if (instances < 1) throw Error("experiment: instances must be >= 1");
        if (ny_sweep.empty()) throw Error("experiment: ny_sweep must be nonempty");
        for (Index ny : ny_sweep)
            if (ny <= 0) throw Error("experiment: ny_sweep entries must be positive");
        if (threads < 0) throw Error("experiment: threads must be >= 0");
        baseline.validate();
        if (se.iters < 1) throw Error("experiment: se.iters must be >= 1");
    }
};

struct RunRecord {
    Index ny = 0;
    std::uint64_t seed = 0;
    Method method = Method::mlvamp;
    Index layer = 0;
    int half_iter = 0;
    double nmse_db = 0.0;
    double wall_ms = 0.0;
    bool converged = false;

    bool operator==(const RunRecord&) const = default;
};

struct ExperimentResult {
    std::vector<RunRecord> records;
    std::vector<std::string> failures;  // one message per failed instance
    int total_instances = 0;

    // more than 10% of instances failed
    bool failed() const { return 10 * failures.size() > static_cast<std::size_t>(total_instances); }
};

// ---------------------------------------------------------------------------
// config file

namespace detail {

inline void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw ParseError(where + ": expected an object");
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key())) throw ParseError(where + ": unknown key '" + it.key() + "'");
}

template <class F>
void maybe(const json& obj, const char* key, F&& f) {
    if (auto it = obj.find(key); it != obj.end()) f(*it);
}

inline int as_int(const json& v, const std::string& where) {
    if (!v.is_number_integer()) throw ParseError(where + ": expected an integer");
    return v.get<int>();
}

inline bool as_bool(const json& v, const std::string& where) {
    if (!v.is_boolean()) throw ParseError(where + ": expected true or false");
    return v.get<bool>();
}

inline std::string as_string(const json& v, const std::string& where) {
    if (!v.is_string()) throw ParseError(where + ": expected a string");
    return v.get<std::string>();
}

inline SyntheticConfig parse_network(const json& j) {
    check_keys(j, {"n0", "hidden", "rho", "kappa", "snr_db", "prior_precision", "bias_std_scale", "activation",
                   "hidden_weights", "hidden_kappa"},
               "network");
    SyntheticConfig c;
    maybe(j, "n0", [&](const json& v) { c.n0 = as_dim(v, "network.n0"); });
    maybe(j, "hidden", [&](const json& v) {
        if (!v.is_array()) throw ParseError("network.hidden: expected an array");
        c.hidden.clear();
        for (const auto& h : v) c.hidden.push_back(as_dim(h, "network.hidden"));
    });
    maybe(j, "rho", [&](const json& v) { c.rho = as_number(v, "network.rho"); });
    maybe(j, "kappa", [&](const json& v) { c.kappa = as_number(v, "network.kappa"); });
    maybe(j, "snr_db", [&](const json& v) { c.snr_db = as_number(v, "network.snr_db"); });
    maybe(j, "prior_precision", [&](const json& v) { c.prior_precision = as_number(v, "network.prior_precision"); });
    maybe(j, "bias_std_scale", [&](const json& v) { c.bias_std_scale = as_number(v, "network.bias_std_scale"); });
    maybe(j, "activation", [&](const json& v) {
        const auto s = as_string(v, "network.activation");
        if (s == "relu") c.activation = Activation::relu;
        else if (s == "identity") c.activation = Activation::identity;
        else throw ParseError("network.activation: expected 'relu' or 'identity'");
    });
    maybe(j, "hidden_weights", [&](const json& v) {
        const auto s = as_string(v, "network.hidden_weights");
        if (s == "gaussian") c.hidden_weights = HiddenWeights::gaussian;
        else if (s == "rotational") c.hidden_weights = HiddenWeights::rotational;
        else throw ParseError("network.hidden_weights: expected 'gaussian' or 'rotational'");
    });
    maybe(j, "hidden_kappa", [&](const json& v) { c.hidden_kappa = as_number(v, "network.hidden_kappa"); });
    return c;
}

} // namespace detail

inline ExperimentConfig experiment_config_from_json(const json& j) {
    using namespace detail;
    check_keys(j, {"network", "ny_sweep", "instances", "methods", "mlvamp", "se", "baseline", "seed", "output", "threads"},
               "config");
    ExperimentConfig c;
    maybe(j, "network", [&](const json& v) { c.network = parse_network(v); });
    maybe(j, "ny_sweep", [&](const json& v) {
        if (!v.is_array()) throw ParseError("config.ny_sweep: expected an array");
        c.ny_sweep.clear();
        for (const auto& n : v) c.ny_sweep.push_back(as_dim(n, "config.ny_sweep"));
    });
    maybe(j, "instances", [&](const json& v) { c.instances = as_int(v, "config.instances"); });
    maybe(j, "methods", [&](const json& v) {
        check_keys(v, {"mlvamp", "baseline", "se"}, "methods");
        maybe(v, "mlvamp", [&](const json& b) { c.methods.mlvamp = as_bool(b, "methods.mlvamp"); });
        maybe(v, "baseline", [&](const json& b) { c.methods.baseline = as_bool(b, "methods.baseline"); });
        maybe(v, "se", [&](const json& b) { c.methods.se = as_bool(b, "methods.se"); });
    });
    maybe(j, "mlvamp", [&](const json& v) {
        check_keys(v, {"max_iters", "damping", "gamma_min", "gamma_max", "alpha_min", "gamma_init", "tol"}, "mlvamp");
        auto& r = c.run;
        maybe(v, "max_iters", [&](const json& x) { r.max_iters = as_int(x, "mlvamp.max_iters"); });
        maybe(v, "damping", [&](const json& x) { r.damping = as_number(x, "mlvamp.damping"); });
        maybe(v, "gamma_min", [&](const json& x) { r.gamma_min = as_number(x, "mlvamp.gamma_min"); });
        maybe(v, "gamma_max", [&](const json& x) { r.gamma_max = as_number(x, "mlvamp.gamma_max"); });
        maybe(v, "alpha_min", [&](const json& x) { r.alpha_min = as_number(x, "mlvamp.alpha_min"); });
        maybe(v, "gamma_init", [&](const json& x) { r.gamma_init = as_number(x, "mlvamp.gamma_init"); });
        maybe(v, "tol", [&](const json& x) { r.tol = as_number(x, "mlvamp.tol"); });
    });
    maybe(j, "se", [&](const json& v) {
        check_keys(v, {"iters", "mc_samples", "gamma_init", "gamma_damping", "bias_routing"}, "se");
        auto& s = c.se;
        maybe(v, "iters", [&](const json& x) { s.iters = as_int(x, "se.iters"); });
        maybe(v, "mc_samples", [&](const json& x) { s.mc_samples = as_dim(x, "se.mc_samples"); });
        maybe(v, "gamma_init", [&](const json& x) { s.gamma_init = as_number(x, "se.gamma_init"); });
        maybe(v, "gamma_damping", [&](const json& x) { s.gamma_damping = as_number(x, "se.gamma_damping"); });
        maybe(v, "bias_routing", [&](const json& x) {
            const auto b = as_string(x, "se.bias_routing");
            if (b == "natural") s.bias = BiasRouting::natural;
            else if (b == "transformed") s.bias = BiasRouting::transformed;
            else throw ParseError("se.bias_routing: expected 'natural' or 'transformed'");
        });
    });
    maybe(j, "baseline", [&](const json& v) {
        check_keys(v, {"step_size", "iters", "restarts", "beta1", "beta2", "epsilon"}, "baseline");
        auto& b = c.baseline;
        maybe(v, "step_size", [&](const json& x) { b.step_size = as_number(x, "baseline.step_size"); });
        maybe(v, "iters", [&](const json& x) { b.iters = as_int(x, "baseline.iters"); });
        maybe(v, "restarts", [&](const json& x) { b.restarts = as_int(x, "baseline.restarts"); });
        maybe(v, "beta1", [&](const json& x) { b.beta1 = as_number(x, "baseline.beta1"); });
        maybe(v, "beta2", [&](const json& x) { b.beta2 = as_number(x, "baseline.beta2"); });
        maybe(v, "epsilon", [&](const json& x) { b.epsilon = as_number(x, "baseline.epsilon"); });
    });
    maybe(j, "seed", [&](const json& v) {
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
            throw ParseError("config.seed: expected a nonnegative integer");
        c.seed = v.get<std::uint64_t>();
    });
    maybe(j, "output", [&](const json& v) { c.output = as_string(v, "config.output"); });
    maybe(j, "threads", [&](const json& v) { c.threads = as_int(v, "config.threads"); });
    try {
        c.validate();
    } catch (const ParseError&) {
        throw;
    } catch (const Error& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    return experiment_config_from_json(detail::parse_text(detail::read_file(path), path));
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr const char* kCsvHeader = "ny,seed,method,layer,half_iter,nmse_db,wall_ms,converged";

namespace detail {

inline std::string fmt6(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline double parse_double(const std::string& s, const std::string& where) {
    if (s == "-inf") return -kInf;
    if (s == "inf") return kInf;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0') throw ParseError(where + ": bad number '" + s + "'");
    return v;
}

inline long long parse_integer(const std::string& s, const std::string& where) {
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (s.empty() || *end != '\0') throw ParseError(where + ": bad integer '" + s + "'");
    return v;
}

} // namespace detail

inline std::string csv_line(const RunRecord& r) {
    return std::to_string(r.ny) + "," + std::to_string(r.seed) + "," + to_string(r.method) + "," +
           std::to_string(r.layer) + "," + std::to_string(r.half_iter) + "," + detail::fmt6(r.nmse_db) + "," +
           detail::fmt6(r.wall_ms) + "," + (r.converged ? "1" : "0");
}

inline std::string emit_csv(const std::vector<RunRecord>& records) {
    std::string out = std::string(kCsvHeader) + "\n";
    for (const auto& r : records) out += csv_line(r) + "\n";
    return out;
}

inline std::vector<RunRecord> parse_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) throw ParseError("csv: missing or wrong header");
    std::vector<RunRecord> out;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string where = "csv line " + std::to_string(lineno);
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 8) throw ParseError(where + ": expected 8 fields");
        RunRecord r;
        r.ny = detail::parse_integer(f[0], where);
        char* end = nullptr;
        r.seed = std::strtoull(f[1].c_str(), &end, 10);
        if (f[1].empty() || *end != '\0') throw ParseError(where + ": bad seed");
        r.method = parse_method(f[2]);
        r.layer = detail::parse_integer(f[3], where);
        r.half_iter = static_cast<int>(detail::parse_integer(f[4], where));
        r.nmse_db = detail::parse_double(f[5], where);
        r.wall_ms = detail::parse_double(f[6], where);
        if (f[7] != "0" && f[7] != "1") throw ParseError(where + ": converged must be 0 or 1");
        r.converged = f[7] == "1";
        out.push_back(r);
    }
    return out;
}

inline void write_csv(const std::vector<RunRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << emit_csv(records);
}

// ---------------------------------------------------------------------------
// aggregation

// Standard median; -inf sorts below every finite value.
inline double median(std::vector<double> v) {
    if (v.empty()) throw Error("median of an empty set");
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

struct SummaryRow {
    Index ny = 0;
    Method method = Method::mlvamp;
    double median_nmse_db = 0.0;
    int instances = 0;
};

// Median over instances of the layer-0 NMSE at each instance's final half-iteration.
inline std::vector<SummaryRow> aggregate(const std::vector<RunRecord>& records) {
    if (records.empty()) throw Error("aggregate: no records");
    std::map<std::tuple<Index, Method, std::uint64_t>, const RunRecord*> last;
    for (const auto& r : records) {
        if (r.layer != 0) continue;
        auto& slot = last[{r.ny, r.method, r.seed}];
        if (!slot || r.half_iter > slot->half_iter) slot = &r;
    }
    std::map<std::pair<Index, Method>, std::vector<double>> groups;
    for (const auto& [key, rec] : last) groups[{std::get<0>(key), std::get<1>(key)}].push_back(rec->nmse_db);
    std::vector<SummaryRow> out;
    for (const auto& [key, vals] : groups)
        out.push_back({key.first, key.second, median(vals), static_cast<int>(vals.size())});
    return out;
}

inline const SummaryRow* find_summary(const std::vector<SummaryRow>& rows, Index ny, Method m) {
    for (const auto& r : rows)
        if (r.ny == ny && r.method == m) return &r;
    return nullptr;
}

// ---------------------------------------------------------------------------
// experiment

// Seed path tags below (ny, instance).
enum SeedTag : std::uint64_t { kTagNetwork = 0, kTagInput = 1, kTagNoise = 2, kTagBaseline = 3, kTagSE = 4 };

struct Instance {
    Network network;
    std::vector<LinearLayerSVD> svds;  // empty: decompose on demand
    Trajectory truth;
    std::uint64_t seed = 0;
};

inline Instance make_instance(const ExperimentConfig& cfg, Index ny, int instance) {
    SyntheticConfig nc = cfg.network;
    nc.ny = ny;
    const auto key = static_cast<std::uint64_t>(ny);
    const auto idx = static_cast<std::uint64_t>(instance);
    const std::uint64_t net_seed = derive_seed(cfg.seed, {key, idx, kTagNetwork});
    std::optional<FactoredNetwork> f;
    if (nc.hidden_weights == HiddenWeights::rotational)
        f = build_rotational_network(nc, net_seed);
    else
        f = FactoredNetwork{build_random_network(nc, net_seed), {}};
    Rng rng(derive_seed(cfg.seed, {key, idx, kTagInput}));
    const Vec z0 = sample_input(f->network, rng);
    Trajectory t = forward_sample(f->network, z0, derive_seed(cfg.seed, {key, idx, kTagNoise}));
    return {std::move(f->network), std::move(f->svds), std::move(t), net_seed};
}

inline InferenceModel make_model(const Instance& inst) {
    return inst.svds.empty() ? InferenceModel(inst.network) : InferenceModel(inst.network, inst.svds);
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Adam has no stopping rule; call it settled when the last tenth of the steps
// improved the objective by less than 1e-4 relative.
inline bool baseline_settled(const BaselineResult& r) {
    const auto& t = r.objective_trace;
    if (t.size() < 10) return false;
    const double early = t[t.size() - 1 - t.size() / 10];
    return early - t.back() <= 1e-4 * std::max(1.0, std::abs(t.back()));
}

struct JobOutput {
    std::vector<RunRecord> records;
    std::string failure;
};

inline JobOutput run_instance_job(const ExperimentConfig& cfg, Index ny, int instance) {
    JobOutput out;
    try {
        const Instance inst = make_instance(cfg, ny, instance);
        const Vec y = inst.truth.y();
        if (cfg.methods.mlvamp) {
            const auto t0 = Clock::now();
            const InferenceModel model = make_model(inst);
            const RunResult res = run(model, y, &inst.truth, cfg.run);
            const double ms = ms_since(t0);
            for (std::size_t h = 0; h < res.nmse_db.size(); ++h)
                for (std::size_t l = 0; l < res.nmse_db[h].size(); ++l)
                    out.records.push_back({ny, inst.seed, Method::mlvamp, static_cast<Index>(l), static_cast<int>(h),
                                           res.nmse_db[h][l], ms, res.converged});
        }
        if (cfg.methods.baseline) {
            OptimizerOptions o = cfg.baseline;
            o.seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(ny), static_cast<std::uint64_t>(instance),
                                            kTagBaseline});
            const auto t0 = Clock::now();
            const BaselineResult b = minimize(inst.network, y, o);
            const double ms = ms_since(t0);
            out.records.push_back(
                {ny, inst.seed, Method::baseline, 0, 0, nmse_db(b.z0hat, inst.truth.z[0]), ms, baseline_settled(b)});
        }
    } catch (const std::exception& e) {
        out.failure = "ny=" + std::to_string(ny) + " instance=" + std::to_string(instance) + ": " + e.what();
    }
    return out;
}

// One SE run per Ny on the first instance's network.
inline JobOutput run_se_job(const ExperimentConfig& cfg, Index ny) {
    JobOutput out;
    try {
        const Instance inst = make_instance(cfg, ny, 0);
        SEOptions o = cfg.se;
        o.seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(ny), 0, kTagSE});
        const auto t0 = Clock::now();
        const InferenceModel model = make_model(inst);
        const SEState se = run_se(model, o);
        const double ms = ms_since(t0);
        const std::size_t K = se.iterations.size();
        bool settled = false;
        if (K >= 2) {
            const double a = se.iterations[K - 1].nodes[0].mse_minus, b = se.iterations[K - 2].nodes[0].mse_minus;
            settled = std::abs(a - b) <= 1e-6 * std::max(a, 1e-300);
        }
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t l = 0; l < se.num_nodes(); ++l)
                for (Half half : {Half::forward, Half::reverse})
                    out.records.push_back({ny, o.seed, Method::se, static_cast<Index>(l),
                                           static_cast<int>(2 * k + (half == Half::reverse ? 1 : 0)),
                                           predicted_nmse_db(se, l, k, half), ms, settled});
        std::stable_sort(out.records.begin(), out.records.end(),
                         [](const RunRecord& a, const RunRecord& b) { return a.half_iter < b.half_iter; });
    } catch (const std::exception& e) {
        out.failure = "ny=" + std::to_string(ny) + " se: " + e.what();
    }
    return out;
}

} // namespace detail

using ProgressFn = std::function<void(const std::string&)>;

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {}) {
    cfg.validate();
    struct Job {
        Index ny;
        int instance;  // -1: SE
    };
    std::vector<Job> jobs;
    for (Index ny : cfg.ny_sweep) {
        for (int i = 0; i < cfg.instances; ++i)
            if (cfg.methods.mlvamp || cfg.methods.baseline) jobs.push_back({ny, i});
        if (cfg.methods.se) jobs.push_back({ny, -1});
    }

    std::vector<detail::JobOutput> outputs(jobs.size());
    std::atomic<std::size_t> next{0};
    std::mutex progress_mutex;
    auto worker = [&] {
        for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) {
            const Job& job = jobs[j];
            outputs[j] = job.instance < 0 ? detail::run_se_job(cfg, job.ny)
                                          : detail::run_instance_job(cfg, job.ny, job.instance);
            if (progress) {
                std::lock_guard lock(progress_mutex);
                progress(outputs[j].failure.empty() ? "done ny=" + std::to_string(job.ny) +
                                                          (job.instance < 0 ? " se" : " instance=" + std::to_string(job.instance))
                                                    : "FAILED " + outputs[j].failure);
            }
        }
    };
    unsigned n = cfg.threads > 0 ? static_cast<unsigned>(cfg.threads) : std::max(1u, std::thread::hardware_concurrency());
    n = std::min<unsigned>(n, static_cast<unsigned>(std::max<std::size_t>(1, jobs.size())));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    ExperimentResult res;
    res.total_instances = static_cast<int>(cfg.ny_sweep.size()) * cfg.instances;
    for (auto& o : outputs) {
        res.records.insert(res.records.end(), o.records.begin(), o.records.end());
        if (!o.failure.empty()) res.failures.push_back(std::move(o.failure));
    }
    if (!cfg.output.empty()) write_csv(res.records, cfg.output);
    return res;
}

} // namespace mlvamp
