#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvge/autodiff.hpp"
#include "dvge/nn.hpp"
#include "dvge/tensor.hpp"

namespace dvge::explain {

// A focus is the per-sample gradient of a classifier's negative
// log-likelihood with respect to its input, evaluated at the class the
// classifier itself predicts. It highlights which input coordinates the
// decision leans on, and needs no ground-truth labels.
//
// Gradients are taken through a frozen model (parameters are constants),
// and per-sample rows never interact in an MLP, so one backward pass over
// the summed per-sample losses yields every row's gradient exactly.
inline Tensor focus(const nn::Mlp& model, const Tensor& codes,
                    const std::vector<std::size_t>& targets) {
    if (codes.rank() != 2)
        throw ShapeError("focus: expected rank-2 codes, got " + codes.shape_str());
    if (targets.size() != codes.rows())
        throw ShapeError("focus: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(codes.rows()) + " rows");
    Tensor input = codes;
    input.requires_grad = true;
    ad::Var z = ad::Var::leaf(input);
    nn::MlpForward fwd = nn::mlp_forward(model, z, /*train_params=*/false);
    ad::Var loss = nn::nll_sum(fwd.out, targets);
    ad::backward(loss);
    Tensor grad = z.grad();
    if (!grad.all_finite()) throw std::runtime_error("focus: non-finite gradient");
    return grad;
}

inline Tensor focus(const nn::Mlp& model, const Tensor& codes) {
    return focus(model, codes, nn::argmax_rows(nn::mlp_eval(model, codes)));
}

// Presentation transforms for inspecting a focus. `identity` keeps signs,
// `abs` keeps magnitudes, `abs_normalized` rescales each row so its largest
// magnitude is 1 (all-zero rows stay zero).
enum class Psi { identity, abs, abs_normalized };

inline Tensor explanation_map(const Tensor& focus_grad, Psi psi) {
    Tensor out = focus_grad;
    if (psi == Psi::identity) return out;
    for (double& v : out.values) v = std::fabs(v);
    if (psi == Psi::abs) return out;
    const std::size_t n = out.rank() == 2 ? out.rows() : 1;
    const std::size_t w = out.values.size() / n;
    for (std::size_t i = 0; i < n; ++i) {
        double row_max = 0.0;
        for (std::size_t j = 0; j < w; ++j) row_max = std::max(row_max, out.values[i * w + j]);
        if (row_max > 0.0)
            for (std::size_t j = 0; j < w; ++j) out.values[i * w + j] /= row_max;
    }
    return out;
}

}  // namespace dvge::explain
