#pragma once

// Inference view of a Network: a chain of hidden nodes z_0 .. z_{M-1}, the
// stages that connect them, and the stage that explains the observation.
//
// A network whose last activation is the identity observes the output of its
// last linear layer directly, so that (linear, identity) pair becomes a
// linear-Gaussian measurement and M = L - 1. With a final ReLU the observation
// is the ReLU output and M = L.

#include "mlvamp/common.hpp"
#include "mlvamp/denoise.hpp"
#include "mlvamp/model.hpp"

#include <optional>
#include <vector>

namespace mlvamp {

enum class StageKind { linear, activation };
enum class OutputKind { linear, relu };

struct Stage {
    StageKind kind = StageKind::linear;
    std::size_t layer = 0;      // 1-based network layer
    std::optional<std::size_t> svd;  // index into InferenceModel::svds() for linear stages
    Activation activation = Activation::identity;
};

class InferenceModel {
public:
    explicit InferenceModel(const Network& net) : InferenceModel(net, decompose_network(net)) {}

    InferenceModel(const Network& net, std::vector<LinearLayerSVD> svds) : net_(net), svds_(std::move(svds)) {
        if (svds_.size() != net_.num_linear())
            throw ModelError("inference model: expected one SVD per linear layer");
        const std::size_t L = net_.num_layers();
        const auto& last = net_.nonlinear(L);
        if (last.activation == Activation::identity) {
            output_ = OutputKind::linear;
            num_nodes_ = L - 1;
            output_svd_ = svds_.size() - 1;
        } else {
            output_ = OutputKind::relu;
            num_nodes_ = L;
        }
        const auto dims = net_.dims();
        for (std::size_t l = 0; l < num_nodes_; ++l) node_dims_.push_back(dims[l]);
        for (std::size_t l = 1; l < num_nodes_; ++l) {
            Stage s;
            s.layer = l;
            if (l % 2 == 1) {
                s.kind = StageKind::linear;
                s.svd = l / 2;
            } else {
                s.kind = StageKind::activation;
                s.activation = net_.nonlinear(l).activation;
            }
            stages_.push_back(s);
        }
    }

    const Network& network() const { return net_; }
    const std::vector<LinearLayerSVD>& svds() const { return svds_; }

    std::size_t num_nodes() const { return num_nodes_; }
    Index node_dim(std::size_t l) const { return node_dims_.at(l); }
    double prior_precision() const { return net_.prior().precision; }

    // stage l maps node l-1 to node l, l = 1 .. M-1
    const Stage& stage(std::size_t l) const { return stages_.at(l - 1); }
    const LinearLayerSVD& stage_svd(std::size_t l) const { return svds_.at(*stage(l).svd); }

    OutputKind output_kind() const { return output_; }
    const LinearLayerSVD& output_svd() const { return svds_.at(output_svd_); }
    const LinearLayer& output_layer() const { return net_.linear(num_nodes_); }

    // bias of the linear layer feeding node l (odd l), natural coordinates
    const Vec& node_bias(std::size_t l) const { return net_.linear(l).bias; }

    DenoiseResult stage_denoise(std::size_t l, const Vec& r_prev, const Vec& r_cur, const PrecisionPair& theta,
                                Side side = Side::both) const {
        const Stage& s = stage(l);
        if (s.kind == StageKind::linear) return linear_denoise(stage_svd(l), r_prev, r_cur, theta, side);
        return prox_activation_pair(s.activation, r_prev, r_cur, theta);
    }

    ProxResult output_denoise(const Vec& r, const Vec& y, double gamma) const {
        if (output_ == OutputKind::linear) return prox_output_linear(output_svd(), r, y, gamma);
        return prox_output_relu(r, y);
    }

private:
    Network net_;
    std::vector<LinearLayerSVD> svds_;
    std::size_t num_nodes_ = 0;
    std::vector<Index> node_dims_;
    std::vector<Stage> stages_;
    OutputKind output_ = OutputKind::linear;
    std::size_t output_svd_ = 0;
};

} // namespace mlvamp
