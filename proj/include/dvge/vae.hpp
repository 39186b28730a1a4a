#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dvge/autodiff.hpp"
#include "dvge/errors.hpp"
#include "dvge/nn.hpp"
#include "dvge/rng.hpp"
#include "dvge/tensor.hpp"

namespace dvge::vae {

// Encoder maps inputs to 2*latent_dim outputs (mean then log-variance);
// decoder maps latent_dim back to the input width. Frozen after training.
struct VaeModel {
    nn::Mlp encoder;
    nn::Mlp decoder;
    std::size_t latent_dim = 0;
};

inline std::uint64_t checksum(const VaeModel& m) {
    std::uint64_t h = nn::checksum(m.encoder);
    return h ^ (nn::checksum(m.decoder) * 0x9e3779b97f4a7c15ULL);
}

struct VaeConfig {
    std::size_t latent_dim = 10;
    std::vector<std::size_t> enc_hidden{64, 64};
    std::vector<std::size_t> dec_hidden{64, 64};
    std::vector<std::size_t> disc_hidden{64, 64};
    nn::Activation activation = nn::Activation::leaky_relu;
    double leaky_slope = 0.2;
    double gamma = 0.0;  // total-correlation weight; 0 disables the discriminator
    nn::AdamConfig adam_vae{1e-3, 0.9, 0.999, 1e-8};
    nn::AdamConfig adam_disc{1e-3, 0.5, 0.9, 1e-8};
    std::size_t epochs = 200;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
};

// mu and logvar for a batch (deterministic; no sampling involved).
inline std::pair<Tensor, Tensor> encode(const VaeModel& model, const Tensor& x) {
    Tensor out = nn::mlp_eval(model.encoder, x);
    const std::size_t n = out.rows(), L = model.latent_dim;
    if (out.cols() != 2 * L)
        throw ShapeError("encode: encoder output width " + std::to_string(out.cols()) +
                         " is not 2*latent_dim");
    Tensor mu = Tensor::zeros({n, L}), logvar = Tensor::zeros({n, L});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < L; ++j) {
            mu.values[i * L + j] = out.values[i * 2 * L + j];
            logvar.values[i * L + j] = out.values[i * 2 * L + L + j];
        }
    return {std::move(mu), std::move(logvar)};
}

// Deterministic latent code: the encoder mean. This is what every
// downstream consumer (classifiers, focuses, evaluation) sees.
inline Tensor latent_codes(const VaeModel& model, const Tensor& x) {
    return encode(model, x).first;
}

inline Tensor decode(const VaeModel& model, const Tensor& z) {
    return nn::mlp_eval(model.decoder, z);
}

// z = mu + exp(0.5*logvar) (.) noise
inline Tensor reparameterize(const Tensor& mu, const Tensor& logvar, const Tensor& noise) {
    if (!mu.same_shape(logvar) || !mu.same_shape(noise))
        throw ShapeError("reparameterize: shape mismatch (" + mu.shape_str() + ", " +
                         logvar.shape_str() + ", " + noise.shape_str() + ")");
    Tensor z = mu;
    for (std::size_t i = 0; i < z.values.size(); ++i)
        z.values[i] += std::exp(0.5 * logvar.values[i]) * noise.values[i];
    return z;
}

// Graph version, differentiable w.r.t. mu and logvar; noise is a constant.
inline ad::Var reparameterize(const ad::Var& mu, const ad::Var& logvar, const Tensor& noise) {
    ad::Var std_dev = ad::exp(ad::scale(logvar, 0.5));
    return ad::add(mu, ad::mul(std_dev, ad::Var::constant(noise)));
}

// KL(q(z|x) || N(0, I)): sum over dimensions, mean over batch, of
// 0.5*(mu^2 + exp(logvar) - 1 - logvar). Rank-1 inputs are one sample.
inline double kl_standard_normal(const Tensor& mu, const Tensor& logvar) {
    if (!mu.same_shape(logvar))
        throw ShapeError("kl_standard_normal: shape mismatch (" + mu.shape_str() + " vs " +
                         logvar.shape_str() + ")");
    const std::size_t batch = mu.rank() == 2 ? mu.rows() : 1;
    double total = 0.0;
    for (std::size_t i = 0; i < mu.values.size(); ++i) {
        const double m = mu.values[i], lv = logvar.values[i];
        total += 0.5 * (m * m + std::exp(lv) - 1.0 - lv);
    }
    return total / static_cast<double>(batch);
}

struct TrainedVae {
    VaeModel model;
    std::vector<double> epoch_loss;
    double initial_loss = 0.0;  // deterministic ELBO (z = mu) at initial parameters
};

struct TrainedFactorVae {
    VaeModel model;
    nn::Mlp discriminator;
    std::vector<double> epoch_loss;
    double initial_loss = 0.0;
};

// Each latent dimension independently shuffled across the batch; breaks
// dependence between dimensions while keeping every marginal intact.
inline Tensor permute_dims(const Tensor& z, Rng& rng) {
    const std::size_t n = z.rows(), L = z.cols();
    Tensor out = Tensor::zeros({n, L});
    for (std::size_t j = 0; j < L; ++j) {
        std::vector<std::size_t> perm = rng.permutation(n);
        for (std::size_t i = 0; i < n; ++i) out.values[i * L + j] = z.values[perm[i] * L + j];
    }
    return out;
}

namespace detail {

// Deterministic full-data ELBO with z = mu; used for the logged
// initial loss so it can be recomputed from a checkpoint alone.
inline double deterministic_elbo(const VaeModel& model, const Tensor& data) {
    auto [mu, logvar] = encode(model, data);
    Tensor recon = decode(model, mu);
    const std::size_t n = data.rows();
    double rec = 0.0;
    for (std::size_t i = 0; i < data.values.size(); ++i) {
        const double d = recon.values[i] - data.values[i];
        rec += d * d;
    }
    return rec / static_cast<double>(n) + kl_standard_normal(mu, logvar);
}

struct VaeTrainResult {
    VaeModel model;
    std::optional<nn::Mlp> discriminator;
    std::vector<double> epoch_loss;
    double initial_loss = 0.0;
};

// Shared trainer. With gamma == 0 the discriminator is never created and
// no RNG stream for it is consumed, so the vanilla and factorized paths
// are bit-identical in that case.
inline VaeTrainResult train_vae_impl(const Tensor& data, const VaeConfig& cfg) {
    if (data.rank() != 2 || data.rows() == 0) throw std::invalid_argument("train_vae: empty data");
    if (cfg.gamma < 0.0) throw std::invalid_argument("train_vae: negative gamma");
    const std::size_t n = data.rows(), d = data.cols(), L = cfg.latent_dim;
    const bool factorized = cfg.gamma != 0.0;

    Rng rng_init(derive_seed(cfg.seed, "vae.init"));
    Rng rng_shuffle(derive_seed(cfg.seed, "vae.shuffle"));
    Rng rng_noise(derive_seed(cfg.seed, "vae.noise"));
    Rng rng_disc(derive_seed(cfg.seed, "vae.disc"));

    VaeTrainResult result;
    result.model.latent_dim = L;
    result.model.encoder = nn::Mlp::init(
        {d, cfg.enc_hidden, 2 * L, cfg.activation, cfg.leaky_slope}, rng_init);
    result.model.decoder = nn::Mlp::init(
        {L, cfg.dec_hidden, d, cfg.activation, cfg.leaky_slope}, rng_init);
    if (factorized)
        result.discriminator = nn::Mlp::init(
            {L, cfg.disc_hidden, 2, cfg.activation, cfg.leaky_slope}, rng_disc);

    result.initial_loss = deterministic_elbo(result.model, data);

    std::vector<Tensor*> vae_params = result.model.encoder.params();
    {
        auto dec = result.model.decoder.params();
        vae_params.insert(vae_params.end(), dec.begin(), dec.end());
    }
    nn::AdamState opt_vae = nn::AdamState::init(cfg.adam_vae, vae_params);
    nn::AdamState opt_disc;
    std::vector<Tensor*> disc_params;
    if (factorized) {
        disc_params = result.discriminator->params();
        opt_disc = nn::AdamState::init(cfg.adam_disc, disc_params);
    }

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
            Tensor xb = tensor_rows(data, idx);

            // --- VAE step ---
            ad::Var x = ad::Var::constant(xb);
            nn::MlpForward enc = nn::mlp_forward(result.model.encoder, x, true);
            ad::Var mu = ad::slice(enc.out, 1, 0, L);
            ad::Var logvar = ad::slice(enc.out, 1, L, L);
            Tensor noise = Tensor::zeros({b, L});
            for (double& v : noise.values) v = rng_noise.normal();
            ad::Var z = reparameterize(mu, logvar, noise);
            nn::MlpForward dec = nn::mlp_forward(result.model.decoder, z, true);

            ad::Var diff = ad::sub(dec.out, x);
            ad::Var recon = ad::scale(ad::sum(ad::mul(diff, diff)), 1.0 / static_cast<double>(b));
            // 0.5*(mu^2 + exp(logvar) - 1 - logvar), summed, mean over batch
            ad::Var kl_inner = ad::add_scalar(
                ad::sub(ad::add(ad::mul(mu, mu), ad::exp(logvar)), logvar), -1.0);
            ad::Var kl = ad::scale(ad::sum(kl_inner), 0.5 / static_cast<double>(b));
            ad::Var loss = ad::add(recon, kl);

            if (factorized) {
                // log density ratio from the frozen discriminator: mean(l0 - l1)
                nn::MlpForward disc_fwd = nn::mlp_forward(*result.discriminator, z, false);
                ad::Var l0 = ad::slice(disc_fwd.out, 1, 0, 1);
                ad::Var l1 = ad::slice(disc_fwd.out, 1, 1, 1);
                ad::Var tc = ad::scale(ad::sum(ad::sub(l0, l1)), 1.0 / static_cast<double>(b));
                loss = ad::add(loss, ad::scale(tc, cfg.gamma));
            }

            const double loss_val = loss.value().values[0];
            if (!std::isfinite(loss_val))
                throw TrainingDiverged("train_vae: non-finite loss at epoch " +
                                       std::to_string(epoch));
            epoch_total += loss_val;
            ++batches;

            ad::backward(loss);
            std::vector<const Tensor*> gptrs;
            std::vector<Tensor> grads;
            grads.reserve(enc.param_leaves.size() + dec.param_leaves.size());
            for (const ad::Var& leaf : enc.param_leaves) grads.push_back(leaf.grad());
            for (const ad::Var& leaf : dec.param_leaves) grads.push_back(leaf.grad());
            for (const Tensor& g : grads) gptrs.push_back(&g);
            nn::adam_step(vae_params, gptrs, opt_vae);

            // --- discriminator step: joint (class 0) vs dimension-permuted (class 1) ---
            if (factorized) {
                Tensor z_joint = z.value();
                Tensor z_perm = permute_dims(z_joint, rng_disc);
                Tensor both = Tensor::zeros({2 * b, L});
                std::copy(z_joint.values.begin(), z_joint.values.end(), both.values.begin());
                std::copy(z_perm.values.begin(), z_perm.values.end(),
                          both.values.begin() + static_cast<std::ptrdiff_t>(b * L));
                std::vector<std::size_t> labels(2 * b, 0);
                for (std::size_t i = b; i < 2 * b; ++i) labels[i] = 1;
                nn::MlpForward disc_fwd =
                    nn::mlp_forward(*result.discriminator, ad::Var::constant(both), true);
                ad::Var disc_loss = nn::cross_entropy(disc_fwd.out, labels);
                if (!std::isfinite(disc_loss.value().values[0]))
                    throw TrainingDiverged("train_vae: non-finite discriminator loss");
                ad::backward(disc_loss);
                nn::apply_gradients(*result.discriminator, disc_fwd, opt_disc);
            }
        }
        result.epoch_loss.push_back(batches ? epoch_total / static_cast<double>(batches) : 0.0);
    }
    return result;
}

}  // namespace detail

inline TrainedVae train_vanilla_vae(const Tensor& data, VaeConfig cfg) {
    cfg.gamma = 0.0;
    auto r = detail::train_vae_impl(data, cfg);
    return {std::move(r.model), std::move(r.epoch_loss), r.initial_loss};
}

inline TrainedFactorVae train_factor_vae(const Tensor& data, const VaeConfig& cfg) {
    auto r = detail::train_vae_impl(data, cfg);
    nn::Mlp disc;
    if (r.discriminator) disc = std::move(*r.discriminator);
    return {std::move(r.model), std::move(disc), std::move(r.epoch_loss), r.initial_loss};
}

// Deterministic full-data ELBO for a frozen model (recomputation oracle hook).
inline double deterministic_elbo(const VaeModel& model, const Tensor& data) {
    return detail::deterministic_elbo(model, data);
}

}  // namespace dvge::vae
