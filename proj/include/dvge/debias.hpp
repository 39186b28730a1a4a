#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dvge/autodiff.hpp"
#include "dvge/errors.hpp"
#include "dvge/explain.hpp"
#include "dvge/nn.hpp"
#include "dvge/rng.hpp"
#include "dvge/tensor.hpp"
#include "dvge/vae.hpp"

namespace dvge::debias {

struct PerturbationConfig {
    double eta1 = 0.0;       // step along the sensitive-classifier focus
    double eta2 = 0.0;       // step against the task-classifier focus
    double eps_ratio = 0.1;  // per-coordinate budget as a fraction of |z_i|
};

// Counts every perturbation applied. Lets callers verify that inference
// paths never perturb (the counter must not move while predicting).
inline std::atomic<std::uint64_t> perturb_call_count{0};

// Symmetric clamp of each entry to [-eps_i, +eps_i]. eps must be
// elementwise non-negative.
inline Tensor clip_eps(const Tensor& delta, const Tensor& eps) {
    if (!delta.same_shape(eps))
        throw ShapeError("clip_eps: shape mismatch (" + delta.shape_str() + " vs " +
                         eps.shape_str() + ")");
    Tensor out = delta;
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        const double e = eps.values[i];
        if (e < 0.0 || !std::isfinite(e))
            throw std::invalid_argument("clip_eps: negative or non-finite budget");
        if (out.values[i] > e) out.values[i] = e;
        if (out.values[i] < -e) out.values[i] = -e;
    }
    return out;
}

// z' = z + Clip_eps(eta1 * f_sens - eta2 * f_task), with
// eps_i = eps_ratio * |z_i| per coordinate.
//
// The bound |z'_i - z_i| <= eps_i must hold exactly, not just up to
// rounding: after forming z + d the sum can overshoot by an ulp, so we
// walk it back with nextafter. A zero step returns z_i bit-for-bit
// (covers eta1 = eta2 = 0, and avoids z + (-0.0) turning +0.0 into -0.0).
inline Tensor perturb(const Tensor& z, const Tensor& f_sens, const Tensor& f_task,
                      const PerturbationConfig& cfg) {
    if (!z.same_shape(f_sens) || !z.same_shape(f_task))
        throw ShapeError("perturb: shape mismatch (" + z.shape_str() + ", " + f_sens.shape_str() +
                         ", " + f_task.shape_str() + ")");
    if (cfg.eps_ratio < 0.0) throw std::invalid_argument("perturb: negative eps_ratio");
    if (!std::isfinite(cfg.eta1) || !std::isfinite(cfg.eta2))
        throw std::invalid_argument("perturb: non-finite step size");
    perturb_call_count.fetch_add(1, std::memory_order_relaxed);

    Tensor out = z;
    for (std::size_t i = 0; i < z.values.size(); ++i) {
        const double zi = z.values[i];
        const double fs = f_sens.values[i], ft = f_task.values[i];
        if (!std::isfinite(zi) || !std::isfinite(fs) || !std::isfinite(ft))
            throw std::invalid_argument("perturb: non-finite input at element " +
                                        std::to_string(i));
        const double eps = cfg.eps_ratio * std::fabs(zi);
        double d = cfg.eta1 * fs - cfg.eta2 * ft;
        if (d > eps) d = eps;
        if (d < -eps) d = -eps;
        if (d == 0.0) continue;  // keep zi bit-for-bit
        double zp = zi + d;
        while (std::fabs(zp - zi) > eps) zp = std::nextafter(zp, zi);
        out.values[i] = zp;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training a downstream task classifier on latent codes
// ---------------------------------------------------------------------------

struct TaskTrainConfig {
    std::vector<std::size_t> hidden{64, 64};
    nn::Activation activation = nn::Activation::leaky_relu;
    double leaky_slope = 0.2;
    nn::AdamConfig adam{1e-3, 0.5, 0.9, 1e-8};
    std::size_t epochs = 50;
    std::size_t batch_size = 64;
    std::size_t classes = 2;
    std::uint64_t seed = 0;
};

struct TrainedTask {
    nn::Mlp model;
    std::vector<double> epoch_loss;
};

// Shared loop for plain and debiased training. When `sens` is null or both
// step sizes are zero, the perturbation stage is skipped entirely and the
// loop is the plain trainer; the two paths are the same code, so equal
// configurations produce bit-identical parameters.
//
// The task focus is taken against the model being trained, as it stands at
// that batch; the sensitive focus against the frozen sensitive classifier.
inline TrainedTask train_task_on_codes(const Tensor& codes, const std::vector<std::size_t>& labels,
                                       const TaskTrainConfig& cfg,
                                       const nn::Mlp* sens = nullptr,
                                       const PerturbationConfig* pert = nullptr) {
    if (codes.rank() != 2 || codes.rows() == 0)
        throw std::invalid_argument("train_task_on_codes: empty codes");
    if (labels.size() != codes.rows())
        throw ShapeError("train_task_on_codes: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(codes.rows()) + " rows");
    const bool perturbing = sens != nullptr && pert != nullptr &&
                            (pert->eta1 != 0.0 || pert->eta2 != 0.0);
    const std::size_t n = codes.rows();

    Rng rng_init(derive_seed(cfg.seed, "task.init"));
    Rng rng_shuffle(derive_seed(cfg.seed, "task.shuffle"));
    TrainedTask result;
    result.model = nn::Mlp::init(
        {codes.cols(), cfg.hidden, cfg.classes, cfg.activation, cfg.leaky_slope}, rng_init);
    nn::AdamState opt = nn::AdamState::init(cfg.adam, result.model.params());

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng_shuffle.shuffle(order);
        double epoch_total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t b = std::min(cfg.batch_size, n - start);
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(start + b));
            Tensor xb = tensor_rows(codes, idx);
            std::vector<std::size_t> yb(b);
            for (std::size_t i = 0; i < b; ++i) yb[i] = labels[idx[i]];

            if (perturbing) {
                Tensor f_sens = explain::focus(*sens, xb);
                Tensor f_task = explain::focus(result.model, xb);
                xb = perturb(xb, f_sens, f_task, *pert);
            }

            nn::MlpForward fwd = nn::mlp_forward(result.model, ad::Var::constant(xb), true);
            ad::Var loss = nn::cross_entropy(fwd.out, yb);
            const double loss_val = loss.value().values[0];
            if (!std::isfinite(loss_val))
                throw TrainingDiverged("train_task_on_codes: non-finite loss at epoch " +
                                       std::to_string(epoch));
            epoch_total += loss_val;
            ++batches;
            ad::backward(loss);
            nn::apply_gradients(result.model, fwd, opt);
        }
        result.epoch_loss.push_back(batches ? epoch_total / static_cast<double>(batches) : 0.0);
    }
    return result;
}

inline TrainedTask train_task_plain(const Tensor& codes, const std::vector<std::size_t>& labels,
                                    const TaskTrainConfig& cfg) {
    return train_task_on_codes(codes, labels, cfg);
}

// End-to-end debiased training: encode features once with the frozen VAE,
// then train the task head on perturbed codes.
inline TrainedTask train_dvge(const vae::VaeModel& encoder, const nn::Mlp& sens_clf,
                              const Tensor& features, const std::vector<std::size_t>& labels,
                              const TaskTrainConfig& cfg, const PerturbationConfig& pert) {
    Tensor codes = vae::latent_codes(encoder, features);
    return train_task_on_codes(codes, labels, cfg, &sens_clf, &pert);
}

// Inference never perturbs: plain forward pass, row-wise argmax
// (ties resolve to the lower class index).
inline std::vector<std::size_t> infer(const nn::Mlp& task, const Tensor& codes) {
    return nn::argmax_rows(nn::mlp_eval(task, codes));
}

inline std::vector<std::size_t> infer_from_features(const vae::VaeModel& encoder,
                                                    const nn::Mlp& task,
                                                    const Tensor& features) {
    return infer(task, vae::latent_codes(encoder, features));
}

}  // namespace dvge::debias
