#include <doctest.h>

#include <set>

#include "mtseg/sampler.hpp"

using namespace mtseg;

namespace {

PatchSpec small_spec(Index3 p = {16, 16, 16}, int f = 2) {
    PatchSpec s;
    s.patch_dims = p;
    s.downsample_factor = f;
    return s;
}

Image random_image(const Geometry& g, Rng& rng) {
    Image im(g);
    for (float& v : im.data()) v = static_cast<float>(rng.uniform());
    return im;
}

LabelMap random_labels(const Geometry& g, Rng& rng, int k = 6) {
    LabelMap lm(g);
    for (auto& v : lm.data()) v = static_cast<std::uint8_t>(rng.uniform_int(0, k - 1));
    return lm;
}

/// World position of the centre of a patch grid.
Vec3 grid_center(const Geometry& g) {
    Vec3 c{};
    for (int a = 0; a < 3; ++a) c[a] = g.origin[a] + (g.dims[a] - 1) / 2.0 * g.spacing[a];
    return c;
}

}  // namespace

TEST_CASE("hi and lo world extents for a centred 16^3 patch in a 64^3 volume") {
    const Image im(Geometry{{64, 64, 64}});
    const PatchPair p = extract_pair(im, nullptr, small_spec(), {32, 32, 32});
    for (int a = 0; a < 3; ++a) {
        // Voxel k covers [k, k + 1) at unit spacing.
        CHECK(p.hi.geometry().origin[a] == 24.0);
        CHECK(p.hi.geometry().origin[a] + p.hi.dims()[a] * p.hi.spacing()[a] == 40.0);
        const double lo0 = p.lo.geometry().origin[a] - 0.5 * (p.lo.spacing()[a] - 1.0);
        CHECK(lo0 == 16.0);
        CHECK(lo0 + p.lo.dims()[a] * p.lo.spacing()[a] == 48.0);
        CHECK(p.lo.spacing()[a] == 2.0);
    }
    CHECK(p.hi.dims() == p.lo.dims());
}

TEST_CASE("constant volume gives constant patches") {
    const Image im(Geometry{{40, 40, 40}, {0.7, 0.7, 1.3}}, 0.375F);
    Rng rng(1);
    for (int t = 0; t < 10; ++t) {
        const PatchPair p = sample_pair(im, nullptr, small_spec(), rng);
        for (float v : p.hi.data()) REQUIRE(v == 0.375F);
        for (float v : p.lo.data()) REQUIRE(v == doctest::Approx(0.375).epsilon(1e-6));
    }
}

TEST_CASE("same rng seed gives the same pair") {
    Rng gen(9);
    const Geometry g{{40, 36, 32}};
    const Image im = random_image(g, gen);
    const LabelMap lm = random_labels(g, gen);
    Rng a(123), b(123);
    const PatchPair pa = sample_pair(im, &lm, small_spec(), a);
    const PatchPair pb = sample_pair(im, &lm, small_spec(), b);
    CHECK(pa.center_index == pb.center_index);
    CHECK(pa.hi == pb.hi);
    CHECK(pa.lo == pb.lo);
    CHECK(*pa.target == *pb.target);
}

TEST_CASE("center alignment holds for every sampled pair") {
    Rng rng(17);
    for (int t = 0; t < 50; ++t) {
        const int f = static_cast<int>(rng.uniform_int(2, 3));
        const Index3 p{8 + 2 * static_cast<int>(rng.uniform_int(0, 2)), 8, 10};
        const Geometry g{{p[0] * f + static_cast<int>(rng.uniform_int(0, 9)), p[1] * f + 3, p[2] * f + 1},
                         {rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)},
                         {rng.symmetric(50.0), rng.symmetric(50.0), rng.symmetric(50.0)}};
        const Image im = random_image(g, rng);
        const PatchPair pair = sample_pair(im, nullptr, small_spec(p, f), rng);
        const Vec3 ch = grid_center(pair.hi.geometry());
        const Vec3 cl = grid_center(pair.lo.geometry());
        for (int a = 0; a < 3; ++a) {
            CHECK(ch[a] == doctest::Approx(cl[a]).epsilon(1e-12));
            CHECK(pair.lo.spacing()[a] == doctest::Approx(f * g.spacing[a]));
            // The hi patch fits inside the volume.
            CHECK(pair.hi_start[a] >= 0);
            CHECK(pair.hi_start[a] + p[a] <= g.dims[a]);
        }
    }
}

TEST_CASE("lo patch is the block mean of the fine voxels") {
    Rng rng(4);
    const Geometry g{{32, 32, 32}};
    const Image im = random_image(g, rng);
    const PatchPair p = extract_pair(im, nullptr, small_spec({8, 8, 8}), {16, 16, 16});
    for (int z = 0; z < 8; ++z)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                double s = 0;
                for (int d = 0; d < 8; ++d)
                    s += im.at(p.lo_start[0] + 2 * x + (d & 1), p.lo_start[1] + 2 * y + (d >> 1 & 1),
                               p.lo_start[2] + 2 * z + (d >> 2 & 1));
                CHECK(p.lo.at(x, y, z) == doctest::Approx(s / 8).epsilon(1e-6));
            }
}

TEST_CASE("out-of-volume lo voxels take the pad value") {
    const Image im(Geometry{{32, 32, 32}}, 1.0F);
    PatchSpec s = small_spec();
    s.pad_value_image = -3.0F;
    const PatchPair p = extract_pair(im, nullptr, s, {8, 8, 8});  // lo starts at -8
    CHECK(p.lo.at(0, 0, 0) == -3.0F);
    CHECK(p.lo.at(15, 15, 15) == 1.0F);
}

TEST_CASE("patch sampling errors") {
    const Image small(Geometry{{30, 64, 64}});
    Rng rng(1);
    CHECK_THROWS_AS(sample_pair(small, nullptr, small_spec(), rng), std::invalid_argument);
    const Image im(Geometry{{64, 64, 64}});
    const LabelMap other(Geometry{{64, 64, 63}});
    CHECK_THROWS_AS(sample_pair(im, &other, small_spec(), rng), std::invalid_argument);
    CHECK_THROWS_AS(extract_pair(im, nullptr, small_spec(), {64, 0, 0}), std::out_of_range);
    CHECK_THROWS_AS(small_spec({15, 16, 16}).validate(), std::invalid_argument);
    CHECK_THROWS_AS(small_spec({16, 16, 16}, 1).validate(), std::invalid_argument);
}

TEST_CASE("disabled augmentation returns exact copies") {
    Rng gen(2);
    const Geometry g{{12, 10, 8}};
    const Image im = random_image(g, gen);
    const LabelMap lm = random_labels(g, gen);
    AugmentSpec spec;
    spec.enabled = false;
    Rng rng(5);
    const Augmented out = augment(im, &lm, spec, rng);
    CHECK(out.image == im);
    CHECK(*out.labels == lm);
}

TEST_CASE("nearest-neighbour labels never invent values") {
    Rng gen(3);
    const Geometry g{{16, 16, 12}};
    const Image im = random_image(g, gen);
    AugmentSpec spec;
    spec.rot_max_deg = 20;
    spec.shear_frac = 0.2;
    for (int t = 0; t < 10; ++t) {
        LabelMap lm(g);
        std::set<int> allowed{0};
        const int drop = static_cast<int>(gen.uniform_int(1, 5));
        for (auto& v : lm.data()) {
            int k = static_cast<int>(gen.uniform_int(0, 5));
            if (k == drop) k = 0;
            v = static_cast<std::uint8_t>(k);
            allowed.insert(k);
        }
        const Augmented out = augment(im, &lm, spec, gen);
        for (auto v : out.labels->data()) REQUIRE(allowed.count(v) == 1);
    }
}

TEST_CASE("forced +2 voxel shift on x") {
    Rng gen(8);
    const Geometry g{{10, 6, 5}};
    const Image im = random_image(g, gen);
    const LabelMap lm = random_labels(g, gen);
    AffineParams p;
    p.shift = {2, 0, 0};
    const Augmented out = apply_affine(im, &lm, p, -1.0F, 0);
    for (int z = 0; z < 5; ++z)
        for (int y = 0; y < 6; ++y) {
            CHECK(out.image.at(0, y, z) == -1.0F);
            CHECK(out.image.at(1, y, z) == -1.0F);
            for (int x = 2; x < 10; ++x) {
                CHECK(out.image.at(x, y, z) == doctest::Approx(im.at(x - 2, y, z)).epsilon(1e-6));
                CHECK(out.labels->at(x, y, z) == lm.at(x - 2, y, z));
            }
        }
}

TEST_CASE("trilinear resampling: constants stay exact, affine fields within 1e-4") {
    Rng rng(21);
    const Geometry g{{20, 20, 20}};
    const Image flat(g, 0.25F);
    Image ramp(g);
    const double cx = 0.3, cy = -0.2, cz = 0.1;
    for (int z = 0; z < 20; ++z)
        for (int y = 0; y < 20; ++y)
            for (int x = 0; x < 20; ++x) ramp.at(x, y, z) = static_cast<float>(5 + cx * x + cy * y + cz * z);
    AugmentSpec spec;
    spec.rot_max_deg = 10;
    for (int t = 0; t < 10; ++t) {
        const AffineParams p = draw_affine(spec, g.dims, rng);
        const Augmented a = apply_affine(flat, nullptr, p, 0.25F, 0);
        for (float v : a.image.data()) REQUIRE(v == 0.25F);

        const Augmented b = apply_affine(ramp, nullptr, p, -100.0F, 0);
        const auto l = p.linear();
        for (int z = 5; z < 15; ++z)
            for (int y = 5; y < 15; ++y)
                for (int x = 5; x < 15; ++x) {
                    const double o[3] = {x - 9.5, y - 9.5, z - 9.5};
                    double q[3];
                    for (int i = 0; i < 3; ++i)
                        q[i] = 9.5 + l[i * 3] * o[0] + l[i * 3 + 1] * o[1] + l[i * 3 + 2] * o[2] - p.shift[i];
                    if (q[0] < 0 || q[1] < 0 || q[2] < 0 || q[0] > 19 || q[1] > 19 || q[2] > 19) continue;
                    const double expect = 5 + cx * q[0] + cy * q[1] + cz * q[2];
                    CHECK(b.image.at(x, y, z) == doctest::Approx(expect).epsilon(1e-4));
                }
    }
}

TEST_CASE("draw_affine respects the configured magnitudes") {
    AugmentSpec spec;
    Rng rng(6);
    const Index3 dims{64, 64, 48};
    for (int t = 0; t < 200; ++t) {
        const AffineParams p = draw_affine(spec, dims, rng);
        for (int a = 0; a < 3; ++a) {
            CHECK(std::abs(p.shift[a]) <= spec.shift_frac * dims[a]);
            CHECK(std::abs(p.rot_deg[a]) <= spec.rot_max_deg);
            CHECK(std::abs(p.shear[a]) <= spec.shear_frac);
        }
        CHECK(std::abs(p.scale - 1.0) <= spec.scale_frac);
    }
    spec.scale_frac = 1.0;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}
