#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "mtseg/losses.hpp"
#include "mtseg/ops.hpp"
#include "support/gradcheck.hpp"

using namespace mtseg;
using namespace mtseg::losses;
using mtseg::testing::GradChecker;
using mtseg::testing::random_tensor;

namespace {

/// 2x2x2 binary case: gt class 1 on voxels 0..3, prediction on 2..5.
struct BinaryCase {
    Tensor<double> pred, gt;
};

BinaryCase binary_case() {
    std::vector<double> g(16, 0.0), p(16, 0.0);
    for (int i = 0; i < 8; ++i) {
        const bool gt1 = i < 4;
        const bool pr1 = i >= 2 && i < 6;
        g[(gt1 ? 8 : 0) + i] = 1.0;
        p[(pr1 ? 8 : 0) + i] = 1.0;
    }
    return {Tensor<double>::from({2, 2, 2, 2}, p), Tensor<double>::from({2, 2, 2, 2}, g)};
}

Tensor<double> random_softmax(Tape<double>& tape, int m, int n, Rng& rng) {
    return nn::softmax_channels(tape, random_tensor({m, n, n, n}, rng, 3.0));
}

Tensor<double> random_one_hot(int m, int n, Rng& rng, int absent = -1) {
    LabelMap lm(Geometry{{n, n, n}});
    for (auto& v : lm.data()) {
        int k = static_cast<int>(rng.uniform_int(0, m - 1));
        if (k == absent) k = (k + 1) % m;
        v = static_cast<std::uint8_t>(k);
    }
    LabelScheme s{"s", {}, 0};
    for (int k = 0; k < m; ++k) s.labels.push_back({k, "c" + std::to_string(k)});
    return one_hot<double>(lm, s);
}

double loss_of(const Tensor<double>& pred, const Tensor<double>& gt, WeightedDiceReport* r = nullptr) {
    Tape<double> tape;
    return weighted_dice_loss(tape, pred, gt, r).item();
}

/// Swaps channels according to perm: out channel i = in channel perm[i].
Tensor<double> permute(const Tensor<double>& t, const std::vector<int>& perm) {
    const std::size_t n = t.spatial();
    std::vector<double> v(t.numel());
    for (std::size_t i = 0; i < perm.size(); ++i)
        std::copy_n(t.value().begin() + static_cast<std::ptrdiff_t>(perm[i] * n), n,
                    v.begin() + static_cast<std::ptrdiff_t>(i * n));
    return Tensor<double>::from(t.shape(), v);
}

}  // namespace

TEST_CASE("one-hot encoding follows scheme order") {
    LabelMap lm(Geometry{{2, 1, 1}});
    lm[0] = 5;
    lm[1] = 0;
    const auto t = one_hot<double>(lm, lobe_scheme());
    CHECK(t.shape() == nn::Shape{6, 2, 1, 1});
    CHECK(t.value()[5 * 2 + 0] == 1.0);
    CHECK(t.value()[0 * 2 + 1] == 1.0);
    CHECK(std::accumulate(t.value().begin(), t.value().end(), 0.0) == 2.0);
    lm[0] = 7;
    CHECK_THROWS_AS(one_hot<double>(lm, lobe_scheme()), std::invalid_argument);
}

TEST_CASE("perfect prediction: Dice 1 and near-zero loss") {
    Rng rng(1);
    const auto gt = random_one_hot(6, 4, rng);
    for (double d : soft_dice_per_class(gt, gt)) CHECK(d == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(loss_of(gt, gt) <= 1e-4);
}

TEST_CASE("hand-computed 2x2x2 binary case") {
    const BinaryCase c = binary_case();
    const auto d = soft_dice_per_class(c.pred, c.gt);
    CHECK(d[1] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(d[0] == doctest::Approx(0.5).epsilon(1e-6));
    WeightedDiceReport r;
    CHECK(loss_of(c.pred, c.gt, &r) == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(r.per_class_volume == std::vector<double>{4, 4});
    CHECK(r.weights[0] == doctest::Approx(0.5));
    CHECK(r.weights[1] == doctest::Approx(0.5));
    CHECK(r.loss == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("complementary prediction gives loss near one") {
    const BinaryCase c = binary_case();
    const std::size_t n = 8;
    std::vector<double> p(16);
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = c.gt.value()[n + i];
        p[n + i] = c.gt.value()[i];
    }
    CHECK(loss_of(Tensor<double>::from({2, 2, 2, 2}, p), c.gt) >= 1.0 - 1e-3);
}

TEST_CASE("uniform prediction matches the closed form") {
    Rng rng(2);
    const int m = 2, n = 4;
    const auto gt = random_one_hot(m, n, rng);
    const auto pred = Tensor<double>::from(gt.shape(), std::vector<double>(gt.numel(), 1.0 / m));
    const auto d = soft_dice_per_class(pred, gt);
    const double N = n * n * n;
    for (int i = 0; i < m; ++i) {
        double V = 0;
        for (std::size_t j = 0; j < gt.spatial(); ++j) V += gt.value()[i * gt.spatial() + j];
        CHECK(d[i] == doctest::Approx((2 * V / m + kDiceEps) / (N / m + V + kDiceEps)).epsilon(1e-12));
    }
}

TEST_CASE("absent classes are smoothed, weights are normalized and monotone") {
    Rng rng(3);
    for (int t = 0; t < 20; ++t) {
        Tape<double> tape;
        const auto pred = random_softmax(tape, 6, 4, rng);
        const auto gt = random_one_hot(6, 4, rng, static_cast<int>(rng.uniform_int(0, 5)));
        WeightedDiceReport r;
        const double l = loss_of(pred, gt, &r);
        CHECK(l >= 0.0);
        CHECK(l <= 1.0 + 1e-3);
        CHECK(std::accumulate(r.weights.begin(), r.weights.end(), 0.0) == doctest::Approx(1.0));
        for (std::size_t a = 0; a < 6; ++a) {
            CHECK(r.weights[a] * (r.per_class_volume[a] + kVolumeEps) ==
                  doctest::Approx(r.weights[0] * (r.per_class_volume[0] + kVolumeEps)));
            for (std::size_t b = 0; b < 6; ++b)
                if (r.per_class_volume[a] < r.per_class_volume[b]) CHECK(r.weights[a] > r.weights[b]);
        }
        double expect = 1.0;
        for (std::size_t i = 0; i < 6; ++i) expect -= r.weights[i] * r.per_class_dice[i];
        CHECK(l == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("permuting classes permutes Dice and keeps the loss") {
    Rng rng(4);
    const std::vector<int> perm{3, 0, 5, 1, 4, 2};
    for (int t = 0; t < 10; ++t) {
        Tape<double> tape;
        const auto pred = random_softmax(tape, 6, 4, rng);
        const auto gt = random_one_hot(6, 4, rng);
        WeightedDiceReport a, b;
        const double la = loss_of(pred, gt, &a);
        const double lb = loss_of(permute(pred, perm), permute(gt, perm), &b);
        CHECK(la == doctest::Approx(lb).epsilon(1e-12));
        for (std::size_t i = 0; i < 6; ++i) {
            CHECK(b.per_class_dice[i] == doctest::Approx(a.per_class_dice[perm[i]]).epsilon(1e-12));
            CHECK(b.weights[i] == doctest::Approx(a.weights[perm[i]]).epsilon(1e-12));
        }
    }
}

TEST_CASE("mse examples") {
    Rng rng(5);
    const auto t = random_tensor({1, 2, 2, 2}, rng);
    Tape<double> tape;
    CHECK(mse_loss(tape, t, t).item() == 0.0);
    std::vector<double> plus(t.value().begin(), t.value().end());
    for (double& v : plus) v += 1.0;
    CHECK(mse_loss(tape, Tensor<double>::from(t.shape(), plus), t).item() == doctest::Approx(1.0).epsilon(1e-12));
    const auto alt = Tensor<double>::from({1, 2, 2, 2}, {0, 2, 0, 2, 0, 2, 0, 2});
    CHECK(mse_loss(tape, Tensor<double>::zeros({1, 2, 2, 2}), alt).item() == 2.0);
}

TEST_CASE("shape mismatches are rejected") {
    Tape<double> tape;
    CHECK_THROWS(mse_loss(tape, Tensor<double>::zeros({1, 2, 2, 2}), Tensor<double>::zeros({1, 2, 2, 1})));
    CHECK_THROWS(weighted_dice_loss(tape, Tensor<double>::zeros({2, 2, 2, 2}), Tensor<double>::zeros({3, 2, 2, 2})));
    CHECK_THROWS(soft_dice_per_class(Tensor<double>::zeros({2, 2, 2, 2}), Tensor<double>::zeros({2, 2, 2, 1})));
}

TEST_CASE("loss gradients match finite differences to 1e-5") {
    Rng rng(6);
    const GradChecker check;
    for (int t = 0; t < 5; ++t) {
        const auto gt = random_one_hot(6, 4, rng, t % 2 ? 2 : -1);
        auto r = check.run({random_tensor({6, 4, 4, 4}, rng, 2.0)}, [&](Tape<double>& tp, std::vector<Tensor<double>>& in) {
            return weighted_dice_loss(tp, nn::softmax_channels(tp, in[0]), gt);
        });
        CHECK(r.max_rel_err < 1e-5);
        CHECK(r.checked == 6 * 64);

        const auto target = random_tensor({1, 4, 4, 4}, rng);
        r = check.run({random_tensor({1, 4, 4, 4}, rng)}, [&](Tape<double>& tp, std::vector<Tensor<double>>& in) {
            return mse_loss(tp, in[0], target);
        });
        CHECK(r.max_rel_err < 1e-5);
    }
}
