#include <doctest.h>

#include <cmath>

#include "mtseg/network.hpp"
#include "mtseg/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/tempdir.hpp"

using namespace mtseg;
using namespace mtseg::nn;
using mtseg::testing::GradChecker;
using mtseg::testing::random_tensor;
using mtseg::testing::random_weights;
using mtseg::testing::TempDir;

namespace {

NetConfig tiny_config() {
    NetConfig c;
    c.base_channels = 2;
    c.depth = 2;
    return c;
}

template <class T>
Tensor<T> random_input(const NetConfig& c, int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<T> v(static_cast<std::size_t>(c.input_channels * n * n * n));
    for (T& x : v) x = static_cast<T>(rng.uniform());
    return Tensor<T>::from({c.input_channels, n, n, n}, std::move(v));
}

template <class T>
std::vector<T> run(const NetGraph<T>& net, const Tensor<T>& x, Head h, bool ablate = false) {
    Tape<T> tape;
    ForwardOptions o;
    o.ablate_skips = ablate;
    const Tensor<T> y = net.forward(tape, x, h, o);
    return {y.value().begin(), y.value().end()};
}

constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("head output shapes and channel sums") {
    const NetConfig c;
    const NetGraph<float> net(c, 3);
    const Tensor<float> x = random_input<float>(c, 16, 1);
    for (Head h : kAllHeads) {
        Tape<float> tape;
        const Tensor<float> y = net.forward(tape, x, h);
        CHECK(y.shape() == Shape{c.out_channels(h), 16, 16, 16});
        if (h == Head::recon) continue;
        const std::size_t n = y.spatial();
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0;
            for (int k = 0; k < y.dim(0); ++k) s += y.value()[k * n + i];
            REQUIRE(std::abs(s - 1.0) < 1e-5);
        }
    }
    CHECK(c.out_channels(Head::lobe) == 6);
    CHECK(c.out_channels(Head::vessel) == 2);
    CHECK(c.out_channels(Head::recon) == 1);
}

TEST_CASE("zero final lobe layer gives 1/6 everywhere") {
    NetGraph<float> net(NetConfig{}, 5);
    net.zero_final_layer(Head::lobe);
    for (float v : run(net, random_input<float>(net.config(), 8, 2), Head::lobe))
        REQUIRE(v == doctest::Approx(1.0 / 6.0).epsilon(1e-6));
}

TEST_CASE("input shape mismatch is rejected") {
    const NetGraph<float> net(NetConfig{}, 1);
    Tape<float> tape;
    CHECK_THROWS(net.forward(tape, Tensor<float>::zeros({2, 6, 8, 8}), Head::lobe));
    CHECK_THROWS(net.forward(tape, Tensor<float>::zeros({1, 8, 8, 8}), Head::lobe));
}

TEST_CASE("identity kernel reproduces the input") {
    Rng rng(1);
    const Tensor<double> x = random_tensor({3, 5, 4, 6}, rng);
    Tensor<double> w = Tensor<double>::zeros({3, 3, 3, 3, 3});
    for (int c = 0; c < 3; ++c) w.value()[((c * 3 + c) * 27) + 13] = 1.0;
    Tape<double> tape;
    const Tensor<double> y = conv3d(tape, x, w, Tensor<double>::zeros({3}));
    for (std::size_t i = 0; i < x.numel(); ++i) REQUIRE(y.value()[i] == x.value()[i]);
}

TEST_CASE("strided and transposed shape algebra") {
    Rng rng(2);
    const Tensor<double> x = random_tensor({2, 16, 16, 16}, rng);
    Tape<double> tape;
    const Tensor<double> d = strided_conv3d(tape, x, random_tensor({4, 2, 2, 2, 2}, rng),
                                            random_tensor({4}, rng));
    CHECK(d.shape() == Shape{4, 8, 8, 8});
    const Tensor<double> u = transposed_conv3d(tape, d, random_tensor({4, 2, 2, 2, 2}, rng),
                                               random_tensor({2}, rng));
    CHECK(u.shape() == Shape{2, 16, 16, 16});
    CHECK_THROWS(strided_conv3d(tape, random_tensor({2, 5, 4, 4}, rng), random_tensor({4, 2, 2, 2, 2}, rng),
                                random_tensor({4}, rng)));
}

TEST_CASE("sum of parameters has unit gradient") {
    Rng rng(4);
    Tensor<double> p = random_tensor({3, 2, 2, 2}, rng);
    p.set_requires_grad(true);
    Tape<double> tape;
    tape.backward(sum_all(tape, p));
    for (double g : p.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward preconditions") {
    Tape<double> tape;
    const Tensor<double> x = Tensor<double>::zeros({1, 2, 2, 2}, true);
    CHECK_THROWS_AS(tape.backward(x), std::logic_error);
}

TEST_CASE("finite differences: individual layers") {
    Rng rng(7);
    const GradChecker check;
    for (int t = 0; t < 3; ++t) {
        const auto w_out = random_weights(2 * 4 * 4 * 4, rng);
        auto r = check.run({random_tensor({3, 4, 4, 4}, rng), random_tensor({2, 3, 3, 3, 3}, rng, 0.5),
                            random_tensor({2}, rng)},
                           [&](Tape<double>& tp, std::vector<Tensor<double>>& in) {
                               return weighted_sum(tp, conv3d(tp, in[0], in[1], in[2]), std::span(w_out));
                           });
        CHECK(r.max_rel_err < kTol);

        const auto w_down = random_weights(3 * 2 * 2 * 2, rng);
        r = check.run({random_tensor({2, 4, 4, 4}, rng), random_tensor({3, 2, 2, 2, 2}, rng),
                       random_tensor({3}, rng)},
                      [&](Tape<double>& tp, std::vector<Tensor<double>>& in) {
                          return weighted_sum(tp, strided_conv3d(tp, in[0], in[1], in[2]), std::span(w_down));
                      });
        CHECK(r.max_rel_err < kTol);

        const auto w_up = random_weights(2 * 4 * 4 * 4, rng);
        r = check.run({random_tensor({3, 2, 2, 2}, rng), random_tensor({3, 2, 2, 2, 2}, rng),
                       random_tensor({2}, rng)},
                      [&](Tape<double>& tp, std::vector<Tensor<double>>& in) {
                          return weighted_sum(tp, transposed_conv3d(tp, in[0], in[1], in[2]), std::span(w_up));
                      });
        CHECK(r.max_rel_err < kTol);

        const auto w_act = random_weights(2 * 27, rng);
        r = check.run({random_tensor({2, 3, 3, 3}, rng)}, [&](Tape<double>& tp, std::vector<Tensor<double>>& in) {
            return weighted_sum(tp, leaky_relu(tp, in[0], 0.01), std::span(w_act));
        });
        CHECK(r.max_rel_err < kTol);
        CHECK(r.checked > 0);

        const auto w_cat = random_weights(5 * 8, rng);
        r = check.run({random_tensor({2, 2, 2, 2}, rng), random_tensor({3, 2, 2, 2}, rng)},
                      [&](Tape<double>& tp, std::vector<Tensor<double>>& in) {
                          return weighted_sum(tp, concat_channels(tp, in[0], in[1]), std::span(w_cat));
                      });
        CHECK(r.max_rel_err < kTol);

        const auto w_sm = random_weights(4 * 27, rng);
        r = check.run({random_tensor({4, 3, 3, 3}, rng, 3.0)}, [&](Tape<double>& tp, std::vector<Tensor<double>>& in) {
            return weighted_sum(tp, softmax_channels(tp, in[0]), std::span(w_sm));
        });
        CHECK(r.max_rel_err < kTol);
    }
}

TEST_CASE("finite differences: whole network, every head") {
    const NetConfig c = tiny_config();
    NetGraph<double> net(c, 11);
    const Tensor<double> x = random_input<double>(c, 4, 3);
    Rng rng(12);
    for (Head h : kAllHeads) {
        const auto w = random_weights(static_cast<std::size_t>(c.out_channels(h) * 64), rng);
        std::vector<Tensor<double>> params;
        for (auto& p : net.params().entries()) params.push_back(p.tensor);
        const GradChecker::Objective f = [&](Tape<double>& tp, std::vector<Tensor<double>>&) {
            return weighted_sum(tp, net.forward(tp, x, h), std::span(w));
        };
        const auto r = GradChecker().run(params, f);
        CHECK(r.max_rel_err < kTol);
        CHECK(r.checked > r.skipped);
    }
}

TEST_CASE("vessel loss never touches the lobe decoder") {
    const NetConfig c = tiny_config();
    NetGraph<double> net(c, 2);
    net.params().clear_grads();
    for (auto& p : net.params().entries()) p.tensor.set_requires_grad(true);
    Tape<double> tape;
    tape.backward(sum_all(tape, net.forward(tape, random_input<double>(c, 4, 1), Head::vessel)));
    double enc = 0;
    for (const auto& p : net.params().entries()) {
        double s = 0;
        for (double g : p.tensor.grad_if_any()) s += std::abs(g);
        if (p.owner == Owner::lobe_dec || p.owner == Owner::recon_dec) CHECK(s == 0.0);
        if (p.owner == Owner::encoder) enc += s;
    }
    CHECK(enc > 0.0);
}

TEST_CASE("encoder is shared between heads") {
    const NetConfig c = tiny_config();
    NetGraph<double> net(c, 6);
    const Tensor<double> x = random_input<double>(c, 8, 4);

    std::vector<std::vector<const void*>> seen;
    for (Head h : kAllHeads) {
        Tape<double> tape;
        ForwardTrace tr;
        net.forward(tape, x, h, {}, &tr);
        std::vector<const void*> enc;
        for (const auto& p : net.params().entries())
            if (p.owner == Owner::encoder &&
                std::find(tr.params.begin(), tr.params.end(), p.tensor.identity()) != tr.params.end())
                enc.push_back(p.tensor.identity());
        seen.push_back(enc);
    }
    CHECK_FALSE(seen[0].empty());
    CHECK(seen[0] == seen[1]);
    CHECK(seen[0] == seen[2]);

    // Perturbing an encoder weight (as a lobe update would) moves every head.
    const auto before_v = run(net, x, Head::vessel), before_r = run(net, x, Head::recon);
    for (auto& p : net.params().entries())
        if (p.owner == Owner::encoder)
            for (double& v : p.tensor.value()) v += 0.01;
    CHECK(run(net, x, Head::vessel) != before_v);
    CHECK(run(net, x, Head::recon) != before_r);
}

TEST_CASE("recon decoder has no skips; ablation only affects segmentation") {
    const NetGraph<float> net(NetConfig{}, 9);
    const auto edges = net.skip_edges();
    int lobe = 0, vessel = 0;
    for (const SkipEdge& e : edges) {
        CHECK(e.head != Head::recon);
        lobe += e.head == Head::lobe;
        vessel += e.head == Head::vessel;
    }
    CHECK(lobe == net.config().depth - 1);
    CHECK(vessel == net.config().depth - 1);

    const Tensor<float> x = random_input<float>(net.config(), 16, 8);
    CHECK(run(net, x, Head::recon, true) == run(net, x, Head::recon));
    CHECK(run(net, x, Head::lobe, true) != run(net, x, Head::lobe));
    CHECK(run(net, x, Head::vessel, true) != run(net, x, Head::vessel));

    Tape<float> tape;
    ForwardTrace tr;
    net.forward(tape, x, Head::recon, {}, &tr);
    CHECK(tr.skips.empty());
}

TEST_CASE("forward is deterministic and construction is seeded") {
    const NetGraph<float> a(NetConfig{}, 4), b(NetConfig{}, 4), c(NetConfig{}, 5);
    const Tensor<float> x = random_input<float>(a.config(), 8, 1);
    CHECK(run(a, x, Head::lobe) == run(b, x, Head::lobe));
    CHECK(run(a, x, Head::lobe) == run(a, x, Head::lobe));
    CHECK(run(a, x, Head::lobe) != run(c, x, Head::lobe));
}

TEST_CASE("checkpoint round trip") {
    TempDir dir("ckpt");
    const NetGraph<float> net(NetConfig{}, 13);
    PatchSpec ps;
    ps.patch_dims = {16, 16, 8};
    save_checkpoint(net, ps, dir / "net.txt");
    CHECK(std::filesystem::exists(dir / "net.bin"));
    CHECK(std::filesystem::file_size(dir / "net.bin") == net.params().scalar_count() * sizeof(float));
    const LoadedCheckpoint back = load_checkpoint(dir / "net.txt");
    CHECK(back.meta.patch_dims == ps.patch_dims);
    CHECK(back.meta.downsample_factor == 2);
    REQUIRE(back.net.params().entries().size() == net.params().entries().size());
    for (std::size_t i = 0; i < net.params().entries().size(); ++i) {
        const auto& a = net.params().entries()[i];
        const auto& b = back.net.params().entries()[i];
        CHECK(a.name == b.name);
        CHECK(a.owner == b.owner);
        CHECK(std::equal(a.tensor.value().begin(), a.tensor.value().end(), b.tensor.value().begin()));
    }
    const Tensor<float> x = random_input<float>(net.config(), 8, 2);
    CHECK(run(net, x, Head::lobe) == run(back.net, x, Head::lobe));

    std::filesystem::resize_file(dir / "net.bin", 100);
    CHECK_THROWS_AS(load_checkpoint(dir / "net.txt"), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.txt"), CheckpointError);
}

TEST_CASE("dual-patch input stacking") {
    const Image im(Geometry{{32, 32, 32}}, 0.5F);
    PatchSpec ps;
    ps.patch_dims = {8, 8, 8};
    const PatchPair pair = extract_pair(im, nullptr, ps, {16, 16, 16});
    CHECK(make_input<float>(pair, 2).shape() == Shape{2, 8, 8, 8});
    CHECK(make_input<float>(pair, 1).shape() == Shape{1, 8, 8, 8});
}
