#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dvge/autodiff.hpp"
#include "dvge/debias.hpp"
#include "dvge/errors.hpp"
#include "dvge/explain.hpp"
#include "dvge/nn.hpp"
#include "dvge/rng.hpp"
#include "dvge/tensor.hpp"
#include "dvge/vae.hpp"

namespace dvge::baselines {

inline double eval_accuracy(const nn::Mlp& model, const Tensor& x,
                            const std::vector<std::size_t>& y) {
    if (x.rows() != y.size()) throw ShapeError("eval_accuracy: row/label count mismatch");
    std::vector<std::size_t> preds = nn::argmax_rows(nn::mlp_eval(model, x));
    std::size_t hit = 0;
    for (std::size_t i = 0; i < y.size(); ++i) hit += preds[i] == y[i];
    return static_cast<double>(hit) / static_cast<double>(y.size());
}

// ---------------------------------------------------------------------------
// Sensitive-attribute classifier on latent codes
// ---------------------------------------------------------------------------

struct SensitiveTrainConfig {
    std::vector<std::size_t> hidden{64, 64};
    nn::Activation activation = nn::Activation::leaky_relu;
    double leaky_slope = 0.2;
    nn::AdamConfig adam{1e-3, 0.5, 0.9, 1e-8};
    std::size_t epochs = 60;
    std::size_t batch_size = 64;
    double holdout_frac = 0.2;
    std::uint64_t seed = 0;
};

struct TrainedSensitive {
    nn::Mlp model;                          // final-epoch parameters
    nn::Mlp best_model;                     // snapshot at the best holdout epoch
    double holdout_accuracy = 0.0;          // final-epoch holdout accuracy
    double best_holdout_accuracy = 0.0;     // max holdout accuracy over epochs
    std::vector<double> epoch_holdout_acc;  // one entry per epoch
};

// Cross-entropy training against an explicit holdout, tracking the best
// holdout epoch. The building block for the sensitive classifier and for
// the coverage ablations (which all report "best accuracy over epochs").
inline TrainedSensitive train_classifier_with_holdout(const Tensor& x_fit,
                                                      const std::vector<std::size_t>& y_fit,
                                                      const Tensor& x_hold,
                                                      const std::vector<std::size_t>& y_hold,
                                                      const SensitiveTrainConfig& cfg) {
    if (x_fit.rank() != 2 || x_fit.rows() != y_fit.size() || x_hold.rows() != y_hold.size())
        throw ShapeError("train_classifier_with_holdout: data shape mismatch");
    if (x_fit.rows() == 0 || x_hold.rows() == 0)
        throw std::invalid_argument("train_classifier_with_holdout: empty split");

    Rng rng_init(derive_seed(cfg.seed, "clf.init"));
    Rng rng_shuffle(derive_seed(cfg.seed, "clf.shuffle"));
    TrainedSensitive result;
    result.model = nn::Mlp::init(
        {x_fit.cols(), cfg.hidden, 2, cfg.activation, cfg.leaky_slope}, rng_init);
    result.best_model = result.model;
    result.best_holdout_accuracy = -1.0;
    nn::AdamState opt = nn::AdamState::init(cfg.adam, result.model.params());

    std::vector<std::size_t> order(x_fit.rows());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng_shuffle.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t b = std::min(cfg.batch_size, order.size() - start);
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(start + b));
            Tensor xb = tensor_rows(x_fit, idx);
            std::vector<std::size_t> yb(b);
            for (std::size_t i = 0; i < b; ++i) yb[i] = y_fit[idx[i]];
            nn::MlpForward fwd = nn::mlp_forward(result.model, ad::Var::constant(xb), true);
            ad::Var loss = nn::cross_entropy(fwd.out, yb);
            if (!std::isfinite(loss.value().values[0]))
                throw TrainingDiverged("train_classifier_with_holdout: non-finite loss");
            ad::backward(loss);
            nn::apply_gradients(result.model, fwd, opt);
        }
        const double acc = eval_accuracy(result.model, x_hold, y_hold);
        result.epoch_holdout_acc.push_back(acc);
        if (acc > result.best_holdout_accuracy) {
            result.best_holdout_accuracy = acc;
            result.best_model = result.model;
        }
    }
    result.holdout_accuracy = result.epoch_holdout_acc.back();
    return result;
}

// Trains a protected-group classifier on latent codes with an internal
// holdout, so its accuracy measures how much protected information the
// codes carry. Rejects single-class group vectors.
inline TrainedSensitive train_sensitive_classifier(const Tensor& codes,
                                                   const std::vector<std::uint8_t>& groups,
                                                   const SensitiveTrainConfig& cfg) {
    if (codes.rank() != 2 || codes.rows() != groups.size())
        throw ShapeError("train_sensitive_classifier: codes/groups mismatch");
    bool seen[2] = {false, false};
    for (std::uint8_t g : groups) {
        if (g > 1)
            throw std::invalid_argument("train_sensitive_classifier: group tags must be binary");
        seen[g] = true;
    }
    if (!seen[0] || !seen[1])
        throw std::invalid_argument("train_sensitive_classifier: only one group present");

    const std::size_t n = codes.rows();
    Rng rng_split(derive_seed(cfg.seed, "clf.holdout"));
    std::vector<std::size_t> perm = rng_split.permutation(n);
    std::size_t n_hold =
        static_cast<std::size_t>(std::llround(cfg.holdout_frac * static_cast<double>(n)));
    n_hold = std::min(std::max<std::size_t>(n_hold, 1), n - 1);
    std::vector<std::size_t> hold_idx(perm.begin(),
                                      perm.begin() + static_cast<std::ptrdiff_t>(n_hold));
    std::vector<std::size_t> fit_idx(perm.begin() + static_cast<std::ptrdiff_t>(n_hold),
                                     perm.end());
    Tensor x_fit = tensor_rows(codes, fit_idx);
    Tensor x_hold = tensor_rows(codes, hold_idx);
    std::vector<std::size_t> y_fit(fit_idx.size()), y_hold(hold_idx.size());
    for (std::size_t i = 0; i < fit_idx.size(); ++i) y_fit[i] = groups[fit_idx[i]];
    for (std::size_t i = 0; i < hold_idx.size(); ++i) y_hold[i] = groups[hold_idx[i]];
    return train_classifier_with_holdout(x_fit, y_fit, x_hold, y_hold, cfg);
}

// ---------------------------------------------------------------------------
// Adversarial baseline: shared feature encoder, task branch, and a group
// branch fed through a gradient-reversal layer.
// ---------------------------------------------------------------------------

struct AdtConfig {
    std::vector<std::size_t> encoder_hidden{64};
    std::size_t repr_width = 32;
    std::vector<std::size_t> head_hidden{32};
    nn::Activation activation = nn::Activation::leaky_relu;
    double leaky_slope = 0.2;
    double lambda = 1.0;  // strength of the reversed group gradient
    nn::AdamConfig adam{1e-3, 0.5, 0.9, 1e-8};
    std::size_t epochs = 50;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
};

struct AdtModel {
    nn::Mlp encoder;
    nn::Mlp task_head;
    nn::Mlp sens_head;
    double lambda = 0.0;
};

struct TrainedAdt {
    AdtModel model;
    std::vector<double> epoch_loss;
};

inline std::vector<std::size_t> adt_predict(const AdtModel& m, const Tensor& x) {
    return nn::argmax_rows(nn::mlp_eval(m.task_head, nn::mlp_eval(m.encoder, x)));
}

// Joint loss: task cross-entropy plus group cross-entropy whose gradient
// into the shared encoder is sign-flipped and scaled by lambda. The group
// branch itself still minimizes its loss; only the encoder is pushed to
// make the group unpredictable. lambda = 0 reduces to a plain two-head
// network for the task.
inline TrainedAdt train_adt(const Tensor& features, const std::vector<std::size_t>& labels,
                            const std::vector<std::uint8_t>& groups, const AdtConfig& cfg) {
    if (features.rank() != 2 || features.rows() == 0)
        throw std::invalid_argument("train_adt: empty features");
    if (labels.size() != features.rows() || groups.size() != features.rows())
        throw ShapeError("train_adt: labels/groups size mismatch");
    if (cfg.lambda < 0.0) throw std::invalid_argument("train_adt: negative lambda");
    const std::size_t n = features.rows();

    Rng rng_init(derive_seed(cfg.seed, "adt.init"));
    Rng rng_shuffle(derive_seed(cfg.seed, "adt.shuffle"));
    TrainedAdt result;
    result.model.lambda = cfg.lambda;
    result.model.encoder = nn::Mlp::init(
        {features.cols(), cfg.encoder_hidden, cfg.repr_width, cfg.activation, cfg.leaky_slope},
        rng_init);
    result.model.task_head = nn::Mlp::init(
        {cfg.repr_width, cfg.head_hidden, 2, cfg.activation, cfg.leaky_slope}, rng_init);
    result.model.sens_head = nn::Mlp::init(
        {cfg.repr_width, cfg.head_hidden, 2, cfg.activation, cfg.leaky_slope}, rng_init);

    std::vector<Tensor*> params = result.model.encoder.params();
    for (Tensor* p : result.model.task_head.params()) params.push_back(p);
    for (Tensor* p : result.model.sens_head.params()) params.push_back(p);
    nn::AdamState opt = nn::AdamState::init(cfg.adam, params);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng_shuffle.shuffle(order);
        double epoch_total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t b = std::min(cfg.batch_size, n - start);
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(start + b));
            Tensor xb = tensor_rows(features, idx);
            std::vector<std::size_t> yb(b), sb(b);
            for (std::size_t i = 0; i < b; ++i) {
                yb[i] = labels[idx[i]];
                sb[i] = groups[idx[i]];
            }

            nn::MlpForward enc = nn::mlp_forward(result.model.encoder, ad::Var::constant(xb), true);
            nn::MlpForward task = nn::mlp_forward(result.model.task_head, enc.out, true);
            ad::Var reversed = ad::grad_reverse(enc.out, cfg.lambda);
            nn::MlpForward sens = nn::mlp_forward(result.model.sens_head, reversed, true);
            ad::Var loss =
                ad::add(nn::cross_entropy(task.out, yb), nn::cross_entropy(sens.out, sb));
            const double loss_val = loss.value().values[0];
            if (!std::isfinite(loss_val)) throw TrainingDiverged("train_adt: non-finite loss");
            epoch_total += loss_val;
            ++batches;
            ad::backward(loss);

            std::vector<Tensor> grads;
            for (const ad::Var& leaf : enc.param_leaves) grads.push_back(leaf.grad());
            for (const ad::Var& leaf : task.param_leaves) grads.push_back(leaf.grad());
            for (const ad::Var& leaf : sens.param_leaves) grads.push_back(leaf.grad());
            std::vector<const Tensor*> gptrs;
            for (const Tensor& g : grads) gptrs.push_back(&g);
            nn::adam_step(params, gptrs, opt);
        }
        result.epoch_loss.push_back(batches ? epoch_total / static_cast<double>(batches) : 0.0);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Dimension-removal baseline
// ---------------------------------------------------------------------------

// Pearson correlation between one latent dimension and the group tag;
// constant columns count as zero correlation.
inline double dim_group_correlation(const Tensor& codes, const std::vector<std::uint8_t>& groups,
                                    std::size_t dim) {
    const std::size_t n = codes.rows(), L = codes.cols();
    if (dim >= L) throw std::invalid_argument("dim_group_correlation: dimension out of range");
    if (n != groups.size()) throw ShapeError("dim_group_correlation: codes/groups mismatch");
    double mean_z = 0.0, mean_s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean_z += codes.values[i * L + dim];
        mean_s += groups[i];
    }
    mean_z /= static_cast<double>(n);
    mean_s /= static_cast<double>(n);
    double cov = 0.0, var_z = 0.0, var_s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dz = codes.values[i * L + dim] - mean_z;
        const double ds = static_cast<double>(groups[i]) - mean_s;
        cov += dz * ds;
        var_z += dz * dz;
        var_s += ds * ds;
    }
    if (var_z <= 0.0 || var_s <= 0.0) return 0.0;
    return cov / std::sqrt(var_z * var_s);
}

inline std::vector<double> dim_group_correlations(const Tensor& codes,
                                                  const std::vector<std::uint8_t>& groups) {
    std::vector<double> out(codes.cols());
    for (std::size_t d = 0; d < codes.cols(); ++d)
        out[d] = dim_group_correlation(codes, groups, d);
    return out;
}

// Indices of the k latent dimensions most correlated (in magnitude) with
// the group tag. Ties resolve to the lower index; result is sorted.
inline std::vector<std::size_t> select_sensitive_dims(const Tensor& codes,
                                                      const std::vector<std::uint8_t>& groups,
                                                      std::size_t k) {
    if (codes.rank() != 2 || codes.rows() != groups.size())
        throw ShapeError("select_sensitive_dims: codes/groups mismatch");
    const std::size_t L = codes.cols();
    if (k == 0 || k >= L)
        throw std::invalid_argument("select_sensitive_dims: k must be in [1, latent_dim)");
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t d = 0; d < L; ++d)
        scored.emplace_back(std::fabs(dim_group_correlation(codes, groups, d)), d);
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<std::size_t> dims;
    for (std::size_t i = 0; i < k; ++i) dims.push_back(scored[i].second);
    std::sort(dims.begin(), dims.end());
    return dims;
}

// Drops the listed dimensions, producing a narrower code matrix.
// An empty list is the identity.
inline Tensor remove_dims(const Tensor& codes, const std::vector<std::size_t>& dims) {
    const std::size_t n = codes.rows(), L = codes.cols();
    std::vector<bool> removed(L, false);
    for (std::size_t d : dims) {
        if (d >= L) throw std::invalid_argument("remove_dims: dimension out of range");
        removed[d] = true;
    }
    std::vector<std::size_t> keep;
    for (std::size_t d = 0; d < L; ++d)
        if (!removed[d]) keep.push_back(d);
    if (keep.empty()) throw std::invalid_argument("remove_dims: all dimensions removed");
    Tensor out = Tensor::zeros({n, keep.size()});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < keep.size(); ++k)
            out.values[i * keep.size() + k] = codes.values[i * L + keep[k]];
    return out;
}

// Inverse of remove_dims up to the dropped values: restores the original
// width with zeros in the removed positions.
inline Tensor reinsert_zeros(const Tensor& narrow, const std::vector<std::size_t>& dims,
                             std::size_t full_width) {
    const std::size_t n = narrow.rows(), w = narrow.cols();
    std::vector<bool> removed(full_width, false);
    for (std::size_t d : dims) {
        if (d >= full_width) throw std::invalid_argument("reinsert_zeros: dimension out of range");
        removed[d] = true;
    }
    std::size_t n_removed = 0;
    for (bool r : removed) n_removed += r;
    if (w + n_removed != full_width)
        throw ShapeError("reinsert_zeros: width " + std::to_string(w) + " plus " +
                         std::to_string(n_removed) + " removed dims != " +
                         std::to_string(full_width));
    Tensor out = Tensor::zeros({n, full_width});
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t k = 0;
        for (std::size_t d = 0; d < full_width; ++d)
            if (!removed[d]) out.values[i * full_width + d] = narrow.values[i * w + k++];
    }
    return out;
}

// Keeps the full width but zeroes the listed dimensions, for feeding a
// model that was trained on full-width codes.
inline Tensor zero_dims(const Tensor& codes, const std::vector<std::size_t>& dims) {
    Tensor out = codes;
    const std::size_t n = codes.rows(), L = codes.cols();
    for (std::size_t d : dims) {
        if (d >= L) throw std::invalid_argument("zero_dims: dimension out of range");
        for (std::size_t i = 0; i < n; ++i) out.values[i * L + d] = 0.0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sensitive-information-coverage ablations
// ---------------------------------------------------------------------------

// Raw features and group tags for both splits; codes are derived inside
// the ablation so the frozen encoder is exercised end to end.
struct AblationData {
    Tensor train_features;
    Tensor test_features;
    std::vector<std::uint8_t> train_groups;
    std::vector<std::uint8_t> test_groups;
};

// One table row mirroring the published layout: two reference columns
// (no removal, sensitive dims removed) and one accuracy per eta1.
struct AblationTable {
    std::vector<double> eta1_grid;
    double no_removal = 0.0;
    double removed = 0.0;
    std::vector<std::size_t> removed_dims;
    std::vector<double> accuracy;  // aligned with eta1_grid
};

namespace detail {

struct AblationCodes {
    Tensor codes_train, codes_test;     // clean codes
    Tensor focus_train, focus_test;     // sensitive focus of d at the clean codes
    std::vector<std::size_t> y_train, y_test;
    std::vector<std::size_t> dims;      // selected sensitive dimensions
};

inline AblationCodes prepare_ablation(const vae::VaeModel& v, const nn::Mlp& d,
                                      const AblationData& data, std::size_t k) {
    AblationCodes c;
    c.codes_train = vae::latent_codes(v, data.train_features);
    c.codes_test = vae::latent_codes(v, data.test_features);
    c.focus_train = explain::focus(d, c.codes_train);
    c.focus_test = explain::focus(d, c.codes_test);
    c.y_train.assign(data.train_groups.begin(), data.train_groups.end());
    c.y_test.assign(data.test_groups.begin(), data.test_groups.end());
    c.dims = select_sensitive_dims(c.codes_train, data.train_groups, k);
    return c;
}

inline Tensor perturb_sensitive_only(const Tensor& codes, const Tensor& focus_grad, double eta1,
                                     double eps_ratio) {
    return debias::perturb(codes, focus_grad, Tensor::zeros(codes.shape),
                           {eta1, 0.0, eps_ratio});
}

}  // namespace detail

// Coverage via retraining: perturb all codes along d's focus (task side
// off), retrain a fresh group classifier per eta1, and record the best
// accuracy it reaches on the perturbed test codes. Lower accuracy means
// less recoverable protected information.
inline AblationTable ablation_retrained(const vae::VaeModel& v, const nn::Mlp& d,
                                        const AblationData& data,
                                        const std::vector<double>& eta1_grid,
                                        const SensitiveTrainConfig& cfg, double eps_ratio = 0.1,
                                        std::size_t k = 1) {
    if (eta1_grid.empty()) throw std::invalid_argument("ablation_retrained: empty grid");
    detail::AblationCodes c = detail::prepare_ablation(v, d, data, k);
    AblationTable table;
    table.eta1_grid = eta1_grid;
    table.removed_dims = c.dims;

    SensitiveTrainConfig cell_cfg = cfg;
    cell_cfg.seed = derive_seed(cfg.seed, "ablate.clean");
    table.no_removal = train_classifier_with_holdout(c.codes_train, c.y_train, c.codes_test,
                                                     c.y_test, cell_cfg)
                           .best_holdout_accuracy;
    cell_cfg.seed = derive_seed(cfg.seed, "ablate.removed");
    table.removed = train_classifier_with_holdout(remove_dims(c.codes_train, c.dims), c.y_train,
                                                  remove_dims(c.codes_test, c.dims), c.y_test,
                                                  cell_cfg)
                        .best_holdout_accuracy;
    for (std::size_t cell = 0; cell < eta1_grid.size(); ++cell) {
        const double eta1 = eta1_grid[cell];
        Tensor zp_train =
            detail::perturb_sensitive_only(c.codes_train, c.focus_train, eta1, eps_ratio);
        Tensor zp_test =
            detail::perturb_sensitive_only(c.codes_test, c.focus_test, eta1, eps_ratio);
        cell_cfg.seed = derive_seed(cfg.seed, "ablate.retrain", cell);
        table.accuracy.push_back(
            train_classifier_with_holdout(zp_train, c.y_train, zp_test, c.y_test, cell_cfg)
                .best_holdout_accuracy);
    }
    return table;
}

// Coverage without retraining: evaluate the original classifier d on the
// perturbed test codes. The removed-dims reference zero-fills the selected
// dimensions so d's input width is preserved.
inline AblationTable ablation_fixed(const vae::VaeModel& v, const nn::Mlp& d,
                                    const AblationData& data,
                                    const std::vector<double>& eta1_grid, double eps_ratio = 0.1,
                                    std::size_t k = 1) {
    if (eta1_grid.empty()) throw std::invalid_argument("ablation_fixed: empty grid");
    detail::AblationCodes c = detail::prepare_ablation(v, d, data, k);
    AblationTable table;
    table.eta1_grid = eta1_grid;
    table.removed_dims = c.dims;
    table.no_removal = eval_accuracy(d, c.codes_test, c.y_test);
    table.removed = eval_accuracy(d, zero_dims(c.codes_test, c.dims), c.y_test);
    for (double eta1 : eta1_grid) {
        Tensor zp_test =
            detail::perturb_sensitive_only(c.codes_test, c.focus_test, eta1, eps_ratio);
        table.accuracy.push_back(eval_accuracy(d, zp_test, c.y_test));
    }
    return table;
}

}  // namespace dvge::baselines
