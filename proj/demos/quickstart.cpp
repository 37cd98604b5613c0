// Build a random ReLU network, observe one sample, and compare ML-VAMP with the
// state-evolution forecast.

#include "mlvamp.hpp"

#include <cstdio>

using namespace mlvamp;

int main() {
    SyntheticConfig cfg;
    cfg.ny = 300;
    const Network net = build_random_network(cfg, 7);

    Rng rng(11);
    const Trajectory truth = forward_sample(net, sample_input(net, rng), 13);

    const InferenceModel model(net);
    const RunResult res = run(model, truth.y(), &truth, RunOptions{});
    std::printf("ML-VAMP: %d iterations, converged=%d\n", res.iterations, res.converged);
    for (std::size_t l = 0; l < model.num_nodes(); ++l)
        std::printf("  z%zu  NMSE %7.2f dB\n", l, res.nmse_db.back()[l]);

    SEOptions se_opts;
    se_opts.iters = 50;
    const SEState se = run_se(model, se_opts);
    std::printf("SE forecast for z0: %.2f dB\n", predicted_nmse_db(se, 0, se.iterations.size() - 1, Half::reverse));

    const BaselineResult adam = minimize(net, truth.y());
    std::printf("Adam (step 0.01, 500 steps): %.2f dB\n", nmse_db(adam.z0hat, truth.z[0]));
}
