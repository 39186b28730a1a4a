#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dvge/autodiff.hpp"
#include "dvge/errors.hpp"
#include "dvge/rng.hpp"
#include "dvge/tensor.hpp"

namespace dvge::nn {

enum class Activation { relu, leaky_relu, none };

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::leaky_relu: return "leaky_relu";
        case Activation::none: return "none";
    }
    return "?";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "leaky_relu") return Activation::leaky_relu;
    if (s == "none") return Activation::none;
    throw std::invalid_argument("unknown activation: " + s);
}

struct MlpSpec {
    std::size_t input_width = 0;
    std::vector<std::size_t> hidden_widths;
    std::size_t output_width = 0;
    Activation activation = Activation::leaky_relu;
    double leaky_slope = 0.2;

    void validate() const {
        if (input_width == 0 || output_width == 0)
            throw std::invalid_argument("MlpSpec: zero input/output width");
        for (std::size_t w : hidden_widths)
            if (w == 0) throw std::invalid_argument("MlpSpec: zero hidden width");
    }

    // layer input/output widths, hidden activations between all but the last
    std::vector<std::pair<std::size_t, std::size_t>> layer_dims() const {
        std::vector<std::pair<std::size_t, std::size_t>> dims;
        std::size_t in = input_width;
        for (std::size_t w : hidden_widths) {
            dims.emplace_back(in, w);
            in = w;
        }
        dims.emplace_back(in, output_width);
        return dims;
    }
};

// Fully connected network; weights are [in x out], biases length out.
// The final layer has no activation (raw logits).
struct Mlp {
    MlpSpec spec;
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;

    // uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]
    static Mlp init(const MlpSpec& spec, Rng& rng) {
        spec.validate();
        Mlp m;
        m.spec = spec;
        for (auto [in, out] : spec.layer_dims()) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(in));
            Tensor w = Tensor::zeros({in, out});
            for (double& v : w.values) v = rng.uniform(-bound, bound);
            Tensor b = Tensor::zeros({out});
            for (double& v : b.values) v = rng.uniform(-bound, bound);
            m.weights.push_back(std::move(w));
            m.biases.push_back(std::move(b));
        }
        return m;
    }

    std::size_t layer_count() const { return weights.size(); }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& w : weights) n += w.numel();
        for (const auto& b : biases) n += b.numel();
        return n;
    }

    // flat list of parameter tensors, weights interleaved with biases
    std::vector<Tensor*> params() {
        std::vector<Tensor*> p;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            p.push_back(&weights[i]);
            p.push_back(&biases[i]);
        }
        return p;
    }
    std::vector<const Tensor*> params() const {
        std::vector<const Tensor*> p;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            p.push_back(&weights[i]);
            p.push_back(&biases[i]);
        }
        return p;
    }
};

// FNV-1a over all parameter bytes; used by tests to assert models stay frozen.
inline std::uint64_t checksum(const Mlp& m) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Tensor* t : m.params())
        h = fnv1a64(t->values.data(), t->values.size() * sizeof(double), h);
    return h;
}

// Result of a differentiable forward pass. param_leaves holds the graph
// leaves for the parameters (same order as Mlp::params()) so callers can
// read their gradients after backward; empty when train_params is false.
struct MlpForward {
    ad::Var out;
    std::vector<ad::Var> param_leaves;
};

inline MlpForward mlp_forward(const Mlp& model, const ad::Var& input, bool train_params) {
    const Tensor& x = input.value();
    if (x.rank() != 2 || x.cols() != model.spec.input_width)
        throw ShapeError("mlp_forward: input " + x.shape_str() + " does not match model input width " +
                         std::to_string(model.spec.input_width));
    MlpForward fwd;
    ad::Var h = input;
    const std::size_t layers = model.layer_count();
    for (std::size_t i = 0; i < layers; ++i) {
        Tensor w = model.weights[i];
        Tensor b = model.biases[i];
        w.requires_grad = train_params;
        b.requires_grad = train_params;
        ad::Var wv = ad::Var::leaf(std::move(w));
        ad::Var bv = ad::Var::leaf(std::move(b));
        if (train_params) {
            fwd.param_leaves.push_back(wv);
            fwd.param_leaves.push_back(bv);
        }
        h = ad::add_rowvec(ad::matmul(h, wv), bv);
        if (i + 1 < layers) {
            switch (model.spec.activation) {
                case Activation::relu: h = ad::relu(h); break;
                case Activation::leaky_relu: h = ad::leaky_relu(h, model.spec.leaky_slope); break;
                case Activation::none: break;
            }
        }
    }
    fwd.out = h;
    return fwd;
}

// Value-only forward: logits for a batch, no graph kept.
inline Tensor mlp_eval(const Mlp& model, const Tensor& input) {
    return mlp_forward(model, ad::Var::constant(input), false).out.value();
}

// Row-wise argmax with ties broken toward the lower index.
inline std::vector<std::size_t> argmax_rows(const Tensor& logits) {
    const std::size_t n = logits.rows(), c = logits.cols();
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (logits.values[i * c + j] > logits.values[i * c + best]) best = j;
        out[i] = best;
    }
    return out;
}

// Mean negative log-softmax probability of the target class.
inline ad::Var cross_entropy(const ad::Var& logits, std::span<const std::size_t> targets) {
    const Tensor& lv = logits.value();
    if (lv.rank() != 2)
        throw ShapeError("cross_entropy: logits must be rank-2, got " + lv.shape_str());
    if (targets.size() != lv.rows())
        throw ShapeError("cross_entropy: target count " + std::to_string(targets.size()) +
                         " does not match batch size " + std::to_string(lv.rows()));
    for (std::size_t t : targets)
        if (t >= lv.cols())
            throw std::out_of_range("cross_entropy: target class " + std::to_string(t) +
                                    " out of range for " + std::to_string(lv.cols()) + " classes");
    ad::Var picked = ad::gather(ad::log_softmax(logits), std::vector<std::size_t>(targets.begin(), targets.end()));
    return ad::scale(ad::sum(picked), -1.0 / static_cast<double>(lv.rows()));
}

// Per-sample negative log-softmax, summed over the batch. Gradients w.r.t.
// a batched input are then exactly the per-sample input gradients (rows do
// not interact anywhere in the network).
inline ad::Var nll_sum(const ad::Var& logits, std::span<const std::size_t> targets) {
    ad::Var picked = ad::gather(ad::log_softmax(logits),
                                std::vector<std::size_t>(targets.begin(), targets.end()));
    return ad::scale(ad::sum(picked), -1.0);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig cfg;
    std::uint64_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;

    static AdamState init(const AdamConfig& cfg, std::span<Tensor* const> params) {
        AdamState s;
        s.cfg = cfg;
        for (const Tensor* p : params) {
            s.m.push_back(Tensor::zeros(p->shape));
            s.v.push_back(Tensor::zeros(p->shape));
        }
        return s;
    }
};

// One bias-corrected Adam update, in place. Aborts on non-finite gradients.
inline void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
                      AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw std::invalid_argument("adam_step: parameter/gradient/state count mismatch");
    state.step += 1;
    const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        const Tensor& g = *grads[k];
        if (!p.same_shape(g))
            throw ShapeError("adam_step: gradient shape " + g.shape_str() +
                             " does not match parameter shape " + p.shape_str());
        Tensor& m = state.m[k];
        Tensor& v = state.v[k];
        for (std::size_t i = 0; i < p.values.size(); ++i) {
            const double gi = g.values[i];
            if (!std::isfinite(gi))
                throw TrainingDiverged("adam_step: non-finite gradient at parameter " +
                                       std::to_string(k) + " element " + std::to_string(i));
            m.values[i] = b1 * m.values[i] + (1.0 - b1) * gi;
            v.values[i] = b2 * v.values[i] + (1.0 - b2) * gi * gi;
            const double mhat = m.values[i] / bc1;
            const double vhat = v.values[i] / bc2;
            p.values[i] -= state.cfg.lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
        }
    }
}

// Convenience: run one optimizer step from a forward pass whose param leaves
// have been populated by backward().
inline void apply_gradients(Mlp& model, const MlpForward& fwd, AdamState& state) {
    std::vector<Tensor*> params = model.params();
    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (const ad::Var& leaf : fwd.param_leaves) grads.push_back(leaf.grad());
    std::vector<const Tensor*> gptrs;
    gptrs.reserve(grads.size());
    for (const Tensor& g : grads) gptrs.push_back(&g);
    adam_step(params, gptrs, state);
}

}  // namespace dvge::nn
