// Gradient-explanation (focus) checks: per-sample exactness against finite
// differences, batch independence, and the presentation transforms.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dvge/explain.hpp"
#include "dvge/nn.hpp"
#include "testutil.hpp"

using dvge::Rng;
using dvge::Tensor;
namespace nn = dvge::nn;
namespace explain = dvge::explain;
using testutil::rel_err;

namespace {

// Per-sample negative log-likelihood of one row, computed independently.
double row_nll(const nn::Mlp& model, const std::vector<double>& row, std::size_t target) {
    const Tensor x = Tensor::matrix(1, row.size(), row);
    return testutil::oracle_cross_entropy(model, x, {target});
}

}  // namespace

TEST_CASE("focus matches per-row finite differences of the per-sample loss") {
    Rng rng(dvge::derive_seed(21, "explain.fd"));
    const nn::MlpSpec spec{5, {8}, 3};
    nn::Mlp model = nn::Mlp::init(spec, rng);
    const Tensor codes = testutil::random_matrix(rng, 6, 5);
    const std::vector<std::size_t> targets = testutil::random_targets(rng, 6, 3);

    const Tensor got = explain::focus(model, codes, targets);
    REQUIRE(got.shape == codes.shape);

    for (std::size_t i = 0; i < 6; ++i) {
        std::vector<double> row = dvge::tensor_row(codes, i);
        for (std::size_t j = 0; j < 5; ++j) {
            const double orig = row[j];
            row[j] = orig + 1e-5;
            const double up = row_nll(model, row, targets[i]);
            row[j] = orig - 1e-5;
            const double down = row_nll(model, row, targets[i]);
            row[j] = orig;
            const double fd = (up - down) / 2e-5;
            REQUIRE(rel_err(got.at(i, j), fd) < 1e-4);
        }
    }
}

TEST_CASE("each row's focus is independent of the rest of the batch") {
    Rng rng(dvge::derive_seed(21, "explain.rows"));
    const nn::MlpSpec spec{4, {6, 6}, 2};
    nn::Mlp model = nn::Mlp::init(spec, rng);
    const Tensor codes = testutil::random_matrix(rng, 5, 4);
    const std::vector<std::size_t> targets = testutil::random_targets(rng, 5, 2);

    const Tensor batch = explain::focus(model, codes, targets);
    for (std::size_t i = 0; i < 5; ++i) {
        const Tensor single = explain::focus(
            model, Tensor::matrix(1, 4, dvge::tensor_row(codes, i)), {targets[i]});
        for (std::size_t j = 0; j < 4; ++j) REQUIRE(batch.at(i, j) == single.at(0, j));
    }
}

TEST_CASE("the target-free overload differentiates against the model's own predictions") {
    Rng rng(dvge::derive_seed(21, "explain.pred"));
    nn::Mlp model = nn::Mlp::init({3, {5}, 2}, rng);
    const Tensor codes = testutil::random_matrix(rng, 7, 3);

    const Tensor auto_focus = explain::focus(model, codes);
    const std::vector<std::size_t> preds = nn::argmax_rows(nn::mlp_eval(model, codes));
    const Tensor explicit_focus = explain::focus(model, codes, preds);
    REQUIRE(auto_focus.values == explicit_focus.values);
}

TEST_CASE("focus never mutates the model it explains") {
    Rng rng(dvge::derive_seed(21, "explain.frozen"));
    nn::Mlp model = nn::Mlp::init({3, {5}, 2}, rng);
    const Tensor codes = testutil::random_matrix(rng, 4, 3);
    const std::uint64_t before = nn::checksum(model);
    (void)explain::focus(model, codes);
    REQUIRE(nn::checksum(model) == before);
}

TEST_CASE("focus validates its inputs") {
    Rng rng(dvge::derive_seed(21, "explain.bad"));
    nn::Mlp model = nn::Mlp::init({3, {}, 2}, rng);
    REQUIRE_THROWS_AS(explain::focus(model, Tensor::vec({1, 2, 3}), {0}), dvge::ShapeError);
    REQUIRE_THROWS_AS(explain::focus(model, Tensor::zeros({2, 3}), {0}), dvge::ShapeError);
}

TEST_CASE("explanation-map transforms") {
    const Tensor g = Tensor::matrix(2, 3, {0.5, -1.0, 0.25, 0.0, 0.0, 0.0});

    SECTION("identity keeps signs") {
        REQUIRE(explain::explanation_map(g, explain::Psi::identity).values == g.values);
    }
    SECTION("abs keeps magnitudes") {
        const Tensor out = explain::explanation_map(g, explain::Psi::abs);
        REQUIRE(out.values == std::vector<double>{0.5, 1.0, 0.25, 0.0, 0.0, 0.0});
    }
    SECTION("abs_normalized scales each row to max 1; zero rows stay zero") {
        const Tensor out = explain::explanation_map(g, explain::Psi::abs_normalized);
        REQUIRE(out.values == std::vector<double>{0.5, 1.0, 0.25, 0.0, 0.0, 0.0});
        const Tensor g2 = Tensor::matrix(1, 3, {0.2, -0.1, 0.05});
        const Tensor out2 = explain::explanation_map(g2, explain::Psi::abs_normalized);
        REQUIRE(rel_err(out2.values[0], 1.0) < 1e-12);
        REQUIRE(rel_err(out2.values[1], 0.5) < 1e-12);
        REQUIRE(rel_err(out2.values[2], 0.25) < 1e-12);
    }
}
