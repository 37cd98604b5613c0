#pragma once

// JSON persistence for networks and observations.

#include "mlvamp/common.hpp"
#include "mlvamp/model.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

namespace mlvamp {

using json = nlohmann::json;

inline constexpr int kModelVersion = 1;

namespace detail {

inline const json& field(const json& obj, const std::string& key, const std::string& where) {
    if (!obj.is_object()) throw ParseError(where + ": expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) throw ParseError(where + ": missing field '" + key + "'");
    return *it;
}

inline double as_number(const json& v, const std::string& where) {
    if (v.is_string() && (v == "inf" || v == "+inf")) return kInf;
    if (!v.is_number()) throw ParseError(where + ": expected a number");
    return v.get<double>();
}

inline Index as_dim(const json& v, const std::string& where) {
    if (!v.is_number_integer() || v.get<long long>() <= 0) throw ParseError(where + ": expected a positive integer");
    return static_cast<Index>(v.get<long long>());
}

inline Vec as_vector(const json& v, const std::string& where, Index expected = -1) {
    if (!v.is_array()) throw ParseError(where + ": expected an array");
    if (expected >= 0 && static_cast<Index>(v.size()) != expected)
        throw ParseError(where + ": expected " + std::to_string(expected) + " entries, got " + std::to_string(v.size()));
    Vec out(static_cast<Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Index>(i)] = as_number(v[i], where + "[" + std::to_string(i) + "]");
    return out;
}

inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string vector_text(const Vec& v) {
    std::string s = "[";
    for (Index i = 0; i < v.size(); ++i) {
        if (i) s += ", ";
        s += fmt17(v[i]);
    }
    return s + "]";
}

inline json parse_text(const std::string& text, const std::string& source) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(source + ": " + e.what());
    }
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << text << '\n';
}

} // namespace detail

// Emitted by hand so every number carries 17 significant digits.
inline std::string network_to_text(const Network& net) {
    std::ostringstream o;
    o << "{\n \"version\": " << kModelVersion << ",\n \"input_dim\": " << net.input_dim()
      << ",\n \"prior\": {\"kind\": \"gaussian\", \"precision\": " << detail::fmt17(net.prior().precision)
      << "},\n \"layers\": [";
    bool first = true;
    for (const auto& layer : net.layers()) {
        o << (first ? "\n  " : ",\n  ");
        first = false;
        if (auto* lin = std::get_if<LinearLayer>(&layer)) {
            o << "{\"kind\": \"linear\", \"rows\": " << lin->out_dim() << ", \"cols\": " << lin->in_dim()
              << ",\n   \"weights\": [";
            for (Index r = 0; r < lin->weights.rows(); ++r)
                for (Index c = 0; c < lin->weights.cols(); ++c)
                    o << (r == 0 && c == 0 ? "" : ", ") << detail::fmt17(lin->weights(r, c));
            o << "],\n   \"bias\": " << detail::vector_text(lin->bias) << ",\n   \"noise_precision\": "
              << (lin->noiseless() ? std::string("\"inf\"") : detail::fmt17(lin->noise_precision)) << "}";
        } else {
            const auto& nl = std::get<NonlinearLayer>(layer);
            o << "{\"kind\": \"nonlinear\", \"activation\": \"" << to_string(nl.activation)
              << "\", \"dim\": " << nl.dim << "}";
        }
    }
    o << "\n ]\n}";
    return o.str();
}

inline Network network_from_json(const json& j) {
    const auto& version = detail::field(j, "version", "model");
    if (!version.is_number_integer() || version.get<int>() != kModelVersion)
        throw ParseError("model.version: unsupported version");
    const Index n0 = detail::as_dim(detail::field(j, "input_dim", "model"), "model.input_dim");
    const auto& prior = detail::field(j, "prior", "model");
    const auto& kind = detail::field(prior, "kind", "model.prior");
    if (kind != "gaussian") throw ParseError("model.prior.kind: only 'gaussian' is supported");
    const double precision = detail::as_number(detail::field(prior, "precision", "model.prior"), "model.prior.precision");

    const auto& jl = detail::field(j, "layers", "model");
    if (!jl.is_array()) throw ParseError("model.layers: expected an array");
    std::vector<Layer> layers;
    for (std::size_t i = 0; i < jl.size(); ++i) {
        const std::string where = "model.layers[" + std::to_string(i) + "]";
        const auto& e = jl[i];
        const auto& k = detail::field(e, "kind", where);
        if (k == "linear") {
            const Index rows = detail::as_dim(detail::field(e, "rows", where), where + ".rows");
            const Index cols = detail::as_dim(detail::field(e, "cols", where), where + ".cols");
            const Vec flat = detail::as_vector(detail::field(e, "weights", where), where + ".weights", rows * cols);
            Mat w(rows, cols);
            for (Index r = 0; r < rows; ++r)
                for (Index c = 0; c < cols; ++c) w(r, c) = flat[r * cols + c];
            Vec b = detail::as_vector(detail::field(e, "bias", where), where + ".bias", rows);
            const double nu = detail::as_number(detail::field(e, "noise_precision", where), where + ".noise_precision");
            layers.emplace_back(LinearLayer{std::move(w), std::move(b), nu});
        } else if (k == "nonlinear") {
            const auto& a = detail::field(e, "activation", where);
            Activation act;
            if (a == "relu") act = Activation::relu;
            else if (a == "identity") act = Activation::identity;
            else throw ParseError(where + ".activation: expected 'relu' or 'identity'");
            layers.emplace_back(NonlinearLayer{act, detail::as_dim(detail::field(e, "dim", where), where + ".dim")});
        } else {
            throw ParseError(where + ".kind: expected 'linear' or 'nonlinear'");
        }
    }
    try {
        return Network(n0, GaussianPrior{precision}, std::move(layers));
    } catch (const ModelError& e) {
        throw ParseError(std::string("model: ") + e.what());
    }
}

inline void save_model(const Network& net, const std::string& path) {
    detail::write_file(path, network_to_text(net));
}

inline Network load_model(const std::string& path) {
    return network_from_json(detail::parse_text(detail::read_file(path), path));
}

// Observation file: {"version": 1, "y": [...], "truth": [[z_0], ..., [z_L]]}; truth is optional.
struct Observation {
    Vec y;
    std::optional<Trajectory> truth;
};

inline void save_observation(const Observation& obs, const std::string& path) {
    std::string s = "{\n \"version\": " + std::to_string(kModelVersion) + ",\n \"y\": " + detail::vector_text(obs.y);
    if (obs.truth) {
        s += ",\n \"truth\": [";
        for (std::size_t i = 0; i < obs.truth->z.size(); ++i)
            s += (i ? ",\n  " : "\n  ") + detail::vector_text(obs.truth->z[i]);
        s += "\n ]";
    }
    detail::write_file(path, s + "\n}");
}

inline Observation load_observation(const std::string& path) {
    const json j = detail::parse_text(detail::read_file(path), path);
    Observation obs;
    obs.y = detail::as_vector(detail::field(j, "y", "observation"), "observation.y");
    if (auto it = j.find("truth"); it != j.end()) {
        if (!it->is_array()) throw ParseError("observation.truth: expected an array of vectors");
        Trajectory t;
        for (std::size_t i = 0; i < it->size(); ++i)
            t.z.push_back(detail::as_vector((*it)[i], "observation.truth[" + std::to_string(i) + "]"));
        obs.truth = std::move(t);
    }
    return obs;
}

} // namespace mlvamp
