// Perturbation semantics (exact clipping bound, bitwise identity paths) and
// the debiased task-training loop, including a full single-step optimizer
// recomputation oracle.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "dvge/debias.hpp"
#include "dvge/vae.hpp"
#include "testutil.hpp"

using dvge::Rng;
using dvge::Tensor;
namespace nn = dvge::nn;
namespace debias = dvge::debias;
using testutil::rel_err;

TEST_CASE("clip_eps clamps symmetrically") {
    const Tensor delta = Tensor::vec({0.7, -0.7, 0.3});
    const Tensor eps = Tensor::full({3}, 0.5);
    const Tensor out = debias::clip_eps(delta, eps);
    REQUIRE(out.values == std::vector<double>{0.5, -0.5, 0.3});

    REQUIRE_THROWS_AS(debias::clip_eps(delta, Tensor::vec({0.5, -0.1, 0.5})),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(debias::clip_eps(delta, Tensor::full({2}, 0.5)), dvge::ShapeError);
}

TEST_CASE("perturb: worked example with the default budget ratio") {
    // z = [1, -2], f_sens = [0.05, 0.5], eta1 = 1, eta2 = 0, ratio 0.1:
    // budgets are [0.1, 0.2]; the first step fits, the second clips.
    const Tensor z = Tensor::matrix(1, 2, {1.0, -2.0});
    const Tensor fs = Tensor::matrix(1, 2, {0.05, 0.5});
    const Tensor ft = Tensor::zeros({1, 2});
    const Tensor out = debias::perturb(z, fs, ft, {1.0, 0.0, 0.1});
    REQUIRE(out.values[0] == 1.05);
    REQUIRE(rel_err(out.values[1], -1.8) < 1e-15);
}

TEST_CASE("perturb: task focus pushes in the opposite direction") {
    const Tensor z = Tensor::matrix(1, 1, {10.0});
    const Tensor fs = Tensor::zeros({1, 1});
    const Tensor ft = Tensor::matrix(1, 1, {0.5});
    // eta2 alone: z' = z - eta2 * f_task (within budget 1.0).
    const Tensor out = debias::perturb(z, fs, ft, {0.0, 1.0, 0.1});
    REQUIRE(out.values[0] == 9.5);
}

TEST_CASE("perturb: zero step sizes return the codes bit for bit") {
    // Include -0.0 and a denormal; bit patterns must survive exactly.
    const Tensor z = Tensor::matrix(1, 4, {-0.0, 5e-324, -1.25, 3.7});
    Rng rng(dvge::derive_seed(31, "debias.zero"));
    const Tensor fs = testutil::random_matrix(rng, 1, 4);
    const Tensor ft = testutil::random_matrix(rng, 1, 4);
    const Tensor out = debias::perturb(z, fs, ft, {0.0, 0.0, 0.1});
    REQUIRE(std::memcmp(out.values.data(), z.values.data(), 4 * sizeof(double)) == 0);
}

TEST_CASE("perturb: the bound |z' - z| <= ratio * |z| holds exactly") {
    Rng rng(dvge::derive_seed(31, "debias.bound"));
    for (int trial = 0; trial < 200; ++trial) {
        const Tensor z = testutil::random_matrix(rng, 4, 6, -3.0, 3.0);
        const Tensor fs = testutil::random_matrix(rng, 4, 6, -2.0, 2.0);
        const Tensor ft = testutil::random_matrix(rng, 4, 6, -2.0, 2.0);
        debias::PerturbationConfig cfg{rng.uniform(0.0, 3.0), rng.uniform(0.0, 3.0), 0.1};
        const Tensor out = debias::perturb(z, fs, ft, cfg);
        for (std::size_t i = 0; i < z.values.size(); ++i) {
            const double bound = 0.1 * std::fabs(z.values[i]);
            REQUIRE(std::fabs(out.values[i] - z.values[i]) <= bound);
        }
    }
}

TEST_CASE("perturb validates inputs") {
    const Tensor z = Tensor::zeros({1, 2});
    const Tensor f = Tensor::zeros({1, 2});
    REQUIRE_THROWS_AS(debias::perturb(z, Tensor::zeros({1, 3}), f, {}), dvge::ShapeError);
    REQUIRE_THROWS_AS(debias::perturb(z, f, f, {1.0, 0.0, -0.1}), std::invalid_argument);
    const Tensor bad = Tensor::matrix(1, 2, {std::nan(""), 0.0});
    REQUIRE_THROWS_AS(debias::perturb(bad, f, f, {1.0, 0.0, 0.1}), std::invalid_argument);
    REQUIRE_THROWS_AS(
        debias::perturb(z, f, f, {std::numeric_limits<double>::infinity(), 0.0, 0.1}),
        std::invalid_argument);
}

TEST_CASE("inference never perturbs") {
    Rng rng(dvge::derive_seed(31, "debias.infer"));
    nn::Mlp task = nn::Mlp::init({4, {6}, 2}, rng);
    const Tensor codes = testutil::random_matrix(rng, 10, 4);

    const std::uint64_t before = debias::perturb_call_count.load();
    const auto preds = debias::infer(task, codes);
    REQUIRE(preds.size() == 10);
    REQUIRE(debias::perturb_call_count.load() == before);

    // ... while a perturbation visibly moves the counter.
    (void)debias::perturb(codes, codes, codes, {0.5, 0.0, 0.1});
    REQUIRE(debias::perturb_call_count.load() == before + 1);
}

TEST_CASE("zero-eta debiased training is bit-identical to plain training") {
    Rng rng(dvge::derive_seed(31, "debias.equiv"));
    const Tensor codes = testutil::random_matrix(rng, 40, 5);
    std::vector<std::size_t> labels(40);
    for (std::size_t i = 0; i < 40; ++i) labels[i] = codes.at(i, 0) > 0 ? 1 : 0;
    nn::Mlp sens = nn::Mlp::init({5, {4}, 2}, rng);

    debias::TaskTrainConfig cfg;
    cfg.hidden = {8};
    cfg.epochs = 5;
    cfg.batch_size = 16;
    cfg.seed = 77;

    debias::TrainedTask plain = debias::train_task_plain(codes, labels, cfg);
    debias::PerturbationConfig zero{0.0, 0.0, 0.1};
    debias::TrainedTask gated = debias::train_task_on_codes(codes, labels, cfg, &sens, &zero);

    REQUIRE(nn::checksum(plain.model) == nn::checksum(gated.model));
    REQUIRE(plain.epoch_loss == gated.epoch_loss);
}

TEST_CASE("nonzero etas change training but never touch the sensitive model") {
    Rng rng(dvge::derive_seed(31, "debias.active"));
    const Tensor codes = testutil::random_matrix(rng, 40, 5);
    std::vector<std::size_t> labels(40);
    for (std::size_t i = 0; i < 40; ++i) labels[i] = codes.at(i, 1) > 0 ? 1 : 0;
    nn::Mlp sens = nn::Mlp::init({5, {4}, 2}, rng);
    const std::uint64_t sens_before = nn::checksum(sens);

    debias::TaskTrainConfig cfg;
    cfg.hidden = {8};
    cfg.epochs = 5;
    cfg.batch_size = 16;
    cfg.seed = 77;

    debias::TrainedTask plain = debias::train_task_plain(codes, labels, cfg);
    debias::PerturbationConfig pert{1.0, 0.5, 0.1};
    debias::TrainedTask moved = debias::train_task_on_codes(codes, labels, cfg, &sens, &pert);

    REQUIRE(nn::checksum(plain.model) != nn::checksum(moved.model));
    REQUIRE(nn::checksum(sens) == sens_before);
}

TEST_CASE("one optimizer step is recomputable from first principles") {
    // Single linear layer, one epoch, one full batch: replicate the whole
    // update by hand (init stream, shuffle stream, softmax gradient, Adam)
    // and compare parameters.
    Rng data_rng(dvge::derive_seed(31, "debias.oracle"));
    const std::size_t n = 12, d = 3;
    const Tensor codes = testutil::random_matrix(data_rng, n, d);
    const std::vector<std::size_t> labels = testutil::random_targets(data_rng, n, 2);

    debias::TaskTrainConfig cfg;
    cfg.hidden = {};  // logits = x W + b
    cfg.epochs = 1;
    cfg.batch_size = n;
    cfg.adam = {1e-3, 0.5, 0.9, 1e-8};
    cfg.seed = 123;
    debias::TrainedTask trained = debias::train_task_plain(codes, labels, cfg);

    // Replicate initialization from the same derived stream.
    Rng init(dvge::derive_seed(cfg.seed, "task.init"));
    nn::Mlp model0 = nn::Mlp::init({d, {}, 2, cfg.activation, cfg.leaky_slope}, init);

    // Replicate the epoch shuffle.
    Rng shuffle(dvge::derive_seed(cfg.seed, "task.shuffle"));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    shuffle.shuffle(order);

    // Softmax cross-entropy gradients of the permuted batch.
    Tensor gw = Tensor::zeros({d, 2});
    Tensor gb = Tensor::zeros({2});
    const Tensor xb = dvge::tensor_rows(codes, order);
    const Tensor logits = nn::mlp_eval(model0, xb);
    for (std::size_t i = 0; i < n; ++i) {
        const double l0 = logits.at(i, 0), l1 = logits.at(i, 1);
        const double m = std::max(l0, l1);
        const double z = std::exp(l0 - m) + std::exp(l1 - m);
        const double p[2] = {std::exp(l0 - m) / z, std::exp(l1 - m) / z};
        const std::size_t y = labels[order[i]];
        for (std::size_t j = 0; j < 2; ++j) {
            const double delta = (p[j] - (y == j ? 1.0 : 0.0)) / static_cast<double>(n);
            gb.values[j] += delta;
            for (std::size_t k = 0; k < d; ++k) gw.values[k * 2 + j] += xb.at(i, k) * delta;
        }
    }

    // One Adam step with the same hyperparameters.
    auto adam1 = [&](double p, double g) {
        const double m = (1.0 - 0.5) * g;
        const double v = (1.0 - 0.9) * g * g;
        const double mhat = m / (1.0 - 0.5);
        const double vhat = v / (1.0 - 0.9);
        return p - 1e-3 * mhat / (std::sqrt(vhat) + 1e-8);
    };
    for (std::size_t i = 0; i < gw.values.size(); ++i) {
        const double want = adam1(model0.weights[0].values[i], gw.values[i]);
        REQUIRE(rel_err(trained.model.weights[0].values[i], want) < 1e-12);
    }
    for (std::size_t j = 0; j < 2; ++j) {
        const double want = adam1(model0.biases[0].values[j], gb.values[j]);
        REQUIRE(rel_err(trained.model.biases[0].values[j], want) < 1e-12);
    }
}

TEST_CASE("end-to-end debiased training works through the encoder") {
    Rng rng(dvge::derive_seed(31, "debias.e2e"));
    const Tensor features = testutil::random_matrix(rng, 48, 6, 0.0, 1.0);
    std::vector<std::size_t> labels(48);
    for (std::size_t i = 0; i < 48; ++i) labels[i] = features.at(i, 0) > 0.5 ? 1 : 0;

    dvge::vae::VaeConfig vcfg;
    vcfg.latent_dim = 3;
    vcfg.enc_hidden = {8};
    vcfg.dec_hidden = {8};
    vcfg.epochs = 3;
    vcfg.batch_size = 16;
    vcfg.seed = 5;
    dvge::vae::TrainedVae enc = dvge::vae::train_vanilla_vae(features, vcfg);
    nn::Mlp sens = nn::Mlp::init({3, {4}, 2}, rng);

    debias::TaskTrainConfig cfg;
    cfg.hidden = {8};
    cfg.epochs = 4;
    cfg.batch_size = 16;
    cfg.seed = 9;
    debias::TrainedTask t = debias::train_dvge(enc.model, sens, features, labels, cfg, {0.5, 0.5, 0.1});
    REQUIRE(t.epoch_loss.size() == 4);

    const auto direct = debias::infer(t.model, dvge::vae::latent_codes(enc.model, features));
    const auto via_features = debias::infer_from_features(enc.model, t.model, features);
    REQUIRE(direct == via_features);
}

TEST_CASE("task training validates its inputs") {
    debias::TaskTrainConfig cfg;
    REQUIRE_THROWS_AS(debias::train_task_plain(Tensor::zeros({0, 3}), {}, cfg),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(debias::train_task_plain(Tensor::zeros({2, 3}), {0}, cfg),
                      dvge::ShapeError);
}
