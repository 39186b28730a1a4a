#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <utility>

#include <json.hpp>

#include "dvge/errors.hpp"
#include "dvge/nn.hpp"
#include "dvge/vae.hpp"

// Model checkpoints are JSON documents. nlohmann::json emits shortest
// round-trippable decimal for doubles, so save/load is lossless.
namespace dvge::ckpt {

inline constexpr const char* kFormatTag = "dvge-checkpoint";
inline constexpr int kFormatVersion = 1;

using nlohmann::json;

inline json mlp_to_json(const nn::Mlp& model) {
    json j;
    j["input_width"] = model.spec.input_width;
    j["hidden_widths"] = model.spec.hidden_widths;
    j["output_width"] = model.spec.output_width;
    j["activation"] = nn::to_string(model.spec.activation);
    j["leaky_slope"] = model.spec.leaky_slope;
    json weights = json::array();
    json biases = json::array();
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        json w;
        w["rows"] = model.weights[l].rows();
        w["cols"] = model.weights[l].cols();
        w["data"] = model.weights[l].values;
        weights.push_back(std::move(w));
        biases.push_back(model.biases[l].values);
    }
    j["weights"] = std::move(weights);
    j["biases"] = std::move(biases);
    return j;
}

inline nn::Mlp mlp_from_json(const json& j, const std::string& context) {
    auto fail = [&](const std::string& what) -> ParseError {
        return ParseError(context + ": " + what);
    };
    nn::Mlp model;
    try {
        model.spec.input_width = j.at("input_width").get<std::size_t>();
        model.spec.hidden_widths = j.at("hidden_widths").get<std::vector<std::size_t>>();
        model.spec.output_width = j.at("output_width").get<std::size_t>();
        model.spec.activation = nn::activation_from_string(j.at("activation").get<std::string>());
        model.spec.leaky_slope = j.at("leaky_slope").get<double>();
        model.spec.validate();

        const auto dims = model.spec.layer_dims();  // (in, out) per layer
        const json& weights = j.at("weights");
        const json& biases = j.at("biases");
        if (weights.size() != dims.size() || biases.size() != dims.size())
            throw fail("expected " + std::to_string(dims.size()) + " layers, found " +
                       std::to_string(weights.size()) + " weight blocks");
        for (std::size_t l = 0; l < dims.size(); ++l) {
            const json& w = weights.at(l);
            const std::size_t rows = w.at("rows").get<std::size_t>();
            const std::size_t cols = w.at("cols").get<std::size_t>();
            if (rows != dims[l].first || cols != dims[l].second)
                throw fail("layer " + std::to_string(l) + " weight is " + std::to_string(rows) +
                           "x" + std::to_string(cols) + ", expected " +
                           std::to_string(dims[l].first) + "x" + std::to_string(dims[l].second));
            Tensor wt({rows, cols}, w.at("data").get<std::vector<double>>());
            Tensor bt({cols}, biases.at(l).get<std::vector<double>>());
            if (!wt.all_finite() || !bt.all_finite())
                throw fail("layer " + std::to_string(l) + " has non-finite parameters");
            model.weights.push_back(std::move(wt));
            model.biases.push_back(std::move(bt));
        }
    } catch (const ParseError&) {
        throw;
    } catch (const std::exception& e) {
        throw fail(e.what());
    }
    return model;
}

inline json vae_to_json(const vae::VaeModel& model) {
    json j;
    j["latent_dim"] = model.latent_dim;
    j["encoder"] = mlp_to_json(model.encoder);
    j["decoder"] = mlp_to_json(model.decoder);
    return j;
}

inline vae::VaeModel vae_from_json(const json& j, const std::string& context) {
    vae::VaeModel model;
    try {
        model.latent_dim = j.at("latent_dim").get<std::size_t>();
        model.encoder = mlp_from_json(j.at("encoder"), context + "/encoder");
        model.decoder = mlp_from_json(j.at("decoder"), context + "/decoder");
    } catch (const ParseError&) {
        throw;
    } catch (const std::exception& e) {
        throw ParseError(context + ": " + e.what());
    }
    if (model.encoder.spec.output_width != 2 * model.latent_dim)
        throw ParseError(context + ": encoder output width " +
                         std::to_string(model.encoder.spec.output_width) +
                         " does not match 2*latent_dim");
    if (model.decoder.spec.input_width != model.latent_dim)
        throw ParseError(context + ": decoder input width mismatch");
    return model;
}

// ---- file I/O -------------------------------------------------------------

inline json wrap(const std::string& kind, json payload) {
    json j;
    j["format"] = kFormatTag;
    j["version"] = kFormatVersion;
    j["kind"] = kind;
    j["model"] = std::move(payload);
    return j;
}

inline json read_checkpoint_file(const std::string& path, const std::string& expected_kind) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open checkpoint");
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ParseError(path + ": invalid JSON: " + e.what());
    }
    if (!j.is_object() || j.value("format", "") != kFormatTag)
        throw ParseError(path + ": not a model checkpoint");
    if (j.value("version", -1) != kFormatVersion)
        throw ParseError(path + ": unsupported checkpoint version");
    if (j.value("kind", "") != expected_kind)
        throw ParseError(path + ": checkpoint kind '" + j.value("kind", "") + "', expected '" +
                         expected_kind + "'");
    return j.at("model");
}

inline void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw ParseError(path + ": cannot open for writing");
    out << j.dump(2) << '\n';
    if (!out) throw ParseError(path + ": write failed");
}

inline void save_mlp(const std::string& path, const nn::Mlp& model) {
    write_json_file(path, wrap("mlp", mlp_to_json(model)));
}

inline nn::Mlp load_mlp(const std::string& path) {
    return mlp_from_json(read_checkpoint_file(path, "mlp"), path);
}

inline void save_vae(const std::string& path, const vae::VaeModel& model) {
    write_json_file(path, wrap("vae", vae_to_json(model)));
}

inline vae::VaeModel load_vae(const std::string& path) {
    return vae_from_json(read_checkpoint_file(path, "vae"), path);
}

}  // namespace dvge::ckpt
