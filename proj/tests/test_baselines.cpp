// Reference methods and probes: holdout-tracked classifiers, the
// adversarial two-head baseline, latent-dimension removal, and the
// information-coverage ablations.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "dvge/baselines.hpp"
#include "dvge/rng.hpp"
#include "dvge/vae.hpp"

#include "testutil.hpp"

using dvge::Rng;
using dvge::Tensor;
namespace bl = dvge::baselines;
namespace nn = dvge::nn;

namespace {

// Codes where group is decided by dim 0 with a wide margin.
struct SeparableCodes {
    Tensor codes;
    std::vector<std::uint8_t> groups;
};

SeparableCodes separable_codes(std::size_t n, std::size_t dims, std::uint64_t seed) {
    Rng rng(seed);
    SeparableCodes out;
    out.codes = Tensor::zeros({n, dims});
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t g = rng.bernoulli(0.5) ? 1 : 0;
        out.groups.push_back(g);
        out.codes.values[i * dims] = (g ? 1.0 : -1.0) + 0.1 * rng.normal();
        for (std::size_t d = 1; d < dims; ++d) out.codes.values[i * dims + d] = rng.normal();
    }
    return out;
}

// Identity-like two-output head: logits are just (x0, x1).
nn::Mlp passthrough_head() {
    Rng rng(0);
    nn::Mlp m = nn::Mlp::init({2, {}, 2, nn::Activation::relu, 0.0}, rng);
    m.weights[0] = Tensor({2, 2}, {1, 0, 0, 1});
    m.biases[0] = Tensor({2}, {0, 0});
    return m;
}

// Untrained but well-formed VAE for structural ablation tests.
dvge::vae::VaeModel fresh_vae(std::size_t in, std::size_t latent, std::uint64_t seed) {
    Rng rng(seed);
    dvge::vae::VaeModel v;
    v.latent_dim = latent;
    v.encoder = nn::Mlp::init({in, {8}, 2 * latent, nn::Activation::leaky_relu, 0.2}, rng);
    v.decoder = nn::Mlp::init({latent, {8}, in, nn::Activation::leaky_relu, 0.2}, rng);
    return v;
}

}  // namespace

TEST_CASE("eval_accuracy counts argmax hits") {
    nn::Mlp m = passthrough_head();
    const Tensor x({4, 2}, {0.0, 1.0,   // pred 1
                            2.0, 0.5,   // pred 0
                            3.0, 3.0,   // tie -> pred 0
                            -1.0, 0.0}); // pred 1
    REQUIRE(bl::eval_accuracy(m, x, {1, 0, 0, 1}) == 1.0);
    REQUIRE(bl::eval_accuracy(m, x, {1, 0, 1, 1}) == 0.75);
    REQUIRE(bl::eval_accuracy(m, x, {0, 1, 1, 0}) == 0.0);
    REQUIRE_THROWS_AS(bl::eval_accuracy(m, x, {0, 1}), dvge::ShapeError);
}

TEST_CASE("sensitive classifier learns separable groups") {
    SeparableCodes sc = separable_codes(300, 4, 17);
    bl::SensitiveTrainConfig cfg;
    cfg.hidden = {16};
    cfg.epochs = 25;
    cfg.seed = 5;
    bl::TrainedSensitive t = bl::train_sensitive_classifier(sc.codes, sc.groups, cfg);

    REQUIRE(t.epoch_holdout_acc.size() == cfg.epochs);
    REQUIRE(t.best_holdout_accuracy ==
            *std::max_element(t.epoch_holdout_acc.begin(), t.epoch_holdout_acc.end()));
    REQUIRE(t.holdout_accuracy == t.epoch_holdout_acc.back());
    REQUIRE(t.best_holdout_accuracy >= t.holdout_accuracy);
    REQUIRE(t.best_holdout_accuracy > 0.95);

    // Deterministic per seed.
    bl::TrainedSensitive again = bl::train_sensitive_classifier(sc.codes, sc.groups, cfg);
    REQUIRE(nn::checksum(t.model) == nn::checksum(again.model));
    REQUIRE(nn::checksum(t.best_model) == nn::checksum(again.best_model));
}

TEST_CASE("sensitive classifier flat on unrelated groups") {
    Rng rng(23);
    const std::size_t n = 400;
    Tensor codes = Tensor::zeros({n, 4});
    for (double& v : codes.values) v = rng.normal();
    std::vector<std::uint8_t> groups;
    for (std::size_t i = 0; i < n; ++i) groups.push_back(rng.bernoulli(0.5) ? 1 : 0);

    bl::SensitiveTrainConfig cfg;
    cfg.hidden = {16};
    cfg.epochs = 10;
    cfg.seed = 3;
    bl::TrainedSensitive t = bl::train_sensitive_classifier(codes, groups, cfg);
    REQUIRE(t.best_holdout_accuracy > 0.35);
    REQUIRE(t.best_holdout_accuracy < 0.75);
}

TEST_CASE("sensitive classifier input validation") {
    SeparableCodes sc = separable_codes(20, 3, 1);
    bl::SensitiveTrainConfig cfg;

    std::vector<std::uint8_t> ones(20, 1);
    REQUIRE_THROWS_AS(bl::train_sensitive_classifier(sc.codes, ones, cfg), std::invalid_argument);

    std::vector<std::uint8_t> bad = sc.groups;
    bad[0] = 2;
    REQUIRE_THROWS_AS(bl::train_sensitive_classifier(sc.codes, bad, cfg), std::invalid_argument);

    std::vector<std::uint8_t> short_groups(sc.groups.begin(), sc.groups.begin() + 10);
    REQUIRE_THROWS_AS(bl::train_sensitive_classifier(sc.codes, short_groups, cfg),
                      dvge::ShapeError);
}

TEST_CASE("holdout trainer rejects bad splits") {
    bl::SensitiveTrainConfig cfg;
    Tensor x = Tensor::zeros({4, 2});
    REQUIRE_THROWS_AS(
        bl::train_classifier_with_holdout(x, {0, 1, 0, 1}, Tensor::zeros({0, 2}), {}, cfg),
        std::invalid_argument);
    REQUIRE_THROWS_AS(bl::train_classifier_with_holdout(x, {0, 1}, x, {0, 1, 0, 1}, cfg),
                      dvge::ShapeError);
}

TEST_CASE("dimension-group correlation matches a long-double oracle") {
    Rng rng(31);
    const std::size_t n = 64, L = 5;
    Tensor codes = Tensor::zeros({n, L});
    for (double& v : codes.values) v = rng.normal();
    std::vector<std::uint8_t> groups;
    for (std::size_t i = 0; i < n; ++i) groups.push_back(rng.bernoulli(0.4) ? 1 : 0);

    for (std::size_t d = 0; d < L; ++d) {
        long double mz = 0, ms = 0;
        for (std::size_t i = 0; i < n; ++i) {
            mz += codes.values[i * L + d];
            ms += groups[i];
        }
        mz /= n;
        ms /= n;
        long double cov = 0, vz = 0, vs = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const long double dz = codes.values[i * L + d] - mz;
            const long double ds = static_cast<long double>(groups[i]) - ms;
            cov += dz * ds;
            vz += dz * dz;
            vs += ds * ds;
        }
        const double want = static_cast<double>(cov / sqrtl(vz * vs));
        REQUIRE(testutil::rel_err(bl::dim_group_correlation(codes, groups, d), want) < 1e-12);
    }

    const std::vector<double> all = bl::dim_group_correlations(codes, groups);
    REQUIRE(all.size() == L);
    for (std::size_t d = 0; d < L; ++d)
        REQUIRE(all[d] == bl::dim_group_correlation(codes, groups, d));
}

TEST_CASE("dimension-group correlation edge cases") {
    Tensor codes({4, 2}, {0, 7,
                          1, 7,
                          0, 7,
                          1, 7});
    std::vector<std::uint8_t> groups{0, 1, 0, 1};
    REQUIRE(bl::dim_group_correlation(codes, groups, 0) == Catch::Approx(1.0));
    REQUIRE(bl::dim_group_correlation(codes, groups, 1) == 0.0);  // constant column

    std::vector<std::uint8_t> inv{1, 0, 1, 0};
    REQUIRE(bl::dim_group_correlation(codes, inv, 0) == Catch::Approx(-1.0));

    REQUIRE(bl::dim_group_correlation(codes, std::vector<std::uint8_t>{1, 1, 1, 1}, 0) == 0.0);

    REQUIRE_THROWS_AS(bl::dim_group_correlation(codes, groups, 2), std::invalid_argument);
    REQUIRE_THROWS_AS(bl::dim_group_correlation(codes, {0, 1}, 0), dvge::ShapeError);
}

TEST_CASE("select_sensitive_dims ranks by absolute correlation") {
    const std::size_t n = 40;
    Rng rng(9);
    Tensor codes = Tensor::zeros({n, 4});
    std::vector<std::uint8_t> groups;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t g = (i % 2 == 0) ? 1 : 0;
        groups.push_back(g);
        codes.values[i * 4 + 0] = rng.normal();             // noise
        codes.values[i * 4 + 1] = -static_cast<double>(g);  // perfect (negative)
        codes.values[i * 4 + 2] = rng.normal();             // noise
        codes.values[i * 4 + 3] = g + 0.3 * rng.normal();   // strong
    }
    REQUIRE(bl::select_sensitive_dims(codes, groups, 1) == std::vector<std::size_t>{1});
    REQUIRE(bl::select_sensitive_dims(codes, groups, 2) == std::vector<std::size_t>{1, 3});

    SECTION("ties resolve to the lower index") {
        Tensor tied = codes;
        for (std::size_t i = 0; i < n; ++i)
            tied.values[i * 4 + 0] = tied.values[i * 4 + 1];  // duplicate the perfect column
        REQUIRE(bl::select_sensitive_dims(tied, groups, 1) == std::vector<std::size_t>{0});
    }
    SECTION("k bounds") {
        REQUIRE_THROWS_AS(bl::select_sensitive_dims(codes, groups, 0), std::invalid_argument);
        REQUIRE_THROWS_AS(bl::select_sensitive_dims(codes, groups, 4), std::invalid_argument);
    }
}

TEST_CASE("remove, reinsert, and zero dims are consistent") {
    const Tensor x({2, 4}, {1, 2, 3, 4,
                            5, 6, 7, 8});

    const Tensor narrow = bl::remove_dims(x, {1, 3});
    REQUIRE(narrow.shape == std::vector<std::size_t>{2, 2});
    REQUIRE(narrow.values == std::vector<double>{1, 3, 5, 7});

    SECTION("empty removal is the identity") {
        REQUIRE(bl::remove_dims(x, {}).values == x.values);
    }
    SECTION("order and duplicates in the dim list do not matter") {
        REQUIRE(bl::remove_dims(x, {3, 1}).values == narrow.values);
        REQUIRE(bl::remove_dims(x, {1, 3, 1}).values == narrow.values);
    }
    SECTION("round trip through reinsert_zeros equals zero_dims") {
        const Tensor back = bl::reinsert_zeros(narrow, {1, 3}, 4);
        REQUIRE(back.values == std::vector<double>{1, 0, 3, 0, 5, 0, 7, 0});
        REQUIRE(back.values == bl::zero_dims(x, {1, 3}).values);
    }
    SECTION("rejections") {
        REQUIRE_THROWS_AS(bl::remove_dims(x, {4}), std::invalid_argument);
        REQUIRE_THROWS_AS(bl::remove_dims(x, {0, 1, 2, 3}), std::invalid_argument);
        REQUIRE_THROWS_AS(bl::reinsert_zeros(narrow, {1}, 4), dvge::ShapeError);
        REQUIRE_THROWS_AS(bl::reinsert_zeros(narrow, {5}, 4), std::invalid_argument);
        REQUIRE_THROWS_AS(bl::zero_dims(x, {9}), std::invalid_argument);
    }
}

TEST_CASE("adversarial baseline trains and validates") {
    // Task label depends on dims 0/1; group on dim 2.
    Rng rng(77);
    const std::size_t n = 240;
    Tensor x = Tensor::zeros({n, 4});
    std::vector<std::size_t> y;
    std::vector<std::uint8_t> s;
    for (std::size_t i = 0; i < n; ++i) {
        const int label = rng.bernoulli(0.5) ? 1 : 0;
        const int group = rng.bernoulli(0.5) ? 1 : 0;
        y.push_back(label);
        s.push_back(group);
        x.values[i * 4 + 0] = label ? 1.0 : -1.0;
        x.values[i * 4 + 1] = 0.2 * rng.normal();
        x.values[i * 4 + 2] = group ? 1.0 : -1.0;
        x.values[i * 4 + 3] = 0.2 * rng.normal();
    }

    bl::AdtConfig cfg;
    cfg.encoder_hidden = {16};
    cfg.repr_width = 8;
    cfg.head_hidden = {8};
    cfg.epochs = 40;
    cfg.seed = 4;

    bl::TrainedAdt t = bl::train_adt(x, y, s, cfg);
    REQUIRE(t.epoch_loss.size() == cfg.epochs);
    REQUIRE(t.epoch_loss.back() < t.epoch_loss.front());
    REQUIRE(t.model.lambda == cfg.lambda);

    const std::vector<std::size_t> preds = bl::adt_predict(t.model, x);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < n; ++i) hit += preds[i] == y[i];
    REQUIRE(static_cast<double>(hit) / n > 0.9);

    // Same seed reproduces; lambda changes the trajectory.
    bl::TrainedAdt same = bl::train_adt(x, y, s, cfg);
    REQUIRE(nn::checksum(t.model.encoder) == nn::checksum(same.model.encoder));
    bl::AdtConfig cfg0 = cfg;
    cfg0.lambda = 0.0;
    bl::TrainedAdt plain = bl::train_adt(x, y, s, cfg0);
    REQUIRE(nn::checksum(t.model.encoder) != nn::checksum(plain.model.encoder));

    SECTION("validation") {
        bl::AdtConfig bad = cfg;
        bad.lambda = -0.5;
        REQUIRE_THROWS_AS(bl::train_adt(x, y, s, bad), std::invalid_argument);
        REQUIRE_THROWS_AS(bl::train_adt(Tensor::zeros({0, 4}), {}, {}, cfg),
                          std::invalid_argument);
        std::vector<std::size_t> short_y(y.begin(), y.begin() + 5);
        REQUIRE_THROWS_AS(bl::train_adt(x, short_y, s, cfg), dvge::ShapeError);
    }
}

TEST_CASE("coverage ablations report well-formed tables") {
    // Raw features: group leaks through feature 0.
    Rng rng(55);
    const std::size_t n_train = 120, n_test = 60, fdim = 5;
    bl::AblationData data;
    auto fill = [&](Tensor& t, std::vector<std::uint8_t>& g, std::size_t n) {
        t = Tensor::zeros({n, fdim});
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint8_t gi = rng.bernoulli(0.5) ? 1 : 0;
            g.push_back(gi);
            t.values[i * fdim] = gi ? 0.9 : 0.1;
            for (std::size_t d = 1; d < fdim; ++d) t.values[i * fdim + d] = rng.uniform();
        }
    };
    fill(data.train_features, data.train_groups, n_train);
    fill(data.test_features, data.test_groups, n_test);

    dvge::vae::VaeModel v = fresh_vae(fdim, 3, 8);
    const Tensor codes_train = dvge::vae::latent_codes(v, data.train_features);

    bl::SensitiveTrainConfig dcfg;
    dcfg.hidden = {8};
    dcfg.epochs = 12;
    dcfg.seed = 2;
    nn::Mlp d = bl::train_sensitive_classifier(codes_train, data.train_groups, dcfg).best_model;

    const std::uint64_t v_sum = dvge::vae::checksum(v);
    const std::uint64_t d_sum = nn::checksum(d);
    const std::vector<double> grid{0.2, 0.6, 1.0};

    bl::SensitiveTrainConfig acfg = dcfg;
    acfg.epochs = 8;
    bl::AblationTable retrained = bl::ablation_retrained(v, d, data, grid, acfg, 0.1, 1);
    bl::AblationTable fixed = bl::ablation_fixed(v, d, data, grid, 0.1, 1);

    for (const bl::AblationTable* t : {&retrained, &fixed}) {
        REQUIRE(t->eta1_grid == grid);
        REQUIRE(t->accuracy.size() == grid.size());
        REQUIRE(t->removed_dims.size() == 1);
        REQUIRE(t->removed_dims[0] < 3);
        for (double a : {t->no_removal, t->removed}) {
            REQUIRE(a >= 0.0);
            REQUIRE(a <= 1.0);
        }
        for (double a : t->accuracy) {
            REQUIRE(a >= 0.0);
            REQUIRE(a <= 1.0);
        }
    }
    // Both protocols pick the dims from the same clean training codes.
    REQUIRE(retrained.removed_dims == fixed.removed_dims);

    // The probes never touch the models they measure.
    REQUIRE(dvge::vae::checksum(v) == v_sum);
    REQUIRE(nn::checksum(d) == d_sum);

    // Determinism.
    bl::AblationTable again = bl::ablation_fixed(v, d, data, grid, 0.1, 1);
    REQUIRE(again.accuracy == fixed.accuracy);
    REQUIRE(again.no_removal == fixed.no_removal);

    SECTION("a vanishing perturbation leaves the fixed protocol at baseline") {
        bl::AblationTable tiny = bl::ablation_fixed(v, d, data, {1e-9}, 0.1, 1);
        REQUIRE(tiny.accuracy[0] == tiny.no_removal);
    }
    SECTION("empty grid is rejected") {
        REQUIRE_THROWS_AS(bl::ablation_retrained(v, d, data, {}, acfg), std::invalid_argument);
        REQUIRE_THROWS_AS(bl::ablation_fixed(v, d, data, {}), std::invalid_argument);
    }
}
