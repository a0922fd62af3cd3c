#include "mtseg/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace mtseg {

void AugmentSpec::validate() const {
    if (!(shift_frac >= 0.0) || !(rot_max_deg >= 0.0) || !(shear_frac >= 0.0) ||
        !(scale_frac >= 0.0) || scale_frac >= 1.0) {
        throw std::invalid_argument("augmentation magnitudes must be >= 0 (scale_frac < 1)");
    }
}

void PatchSpec::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (patch_dims[a] < 8 || patch_dims[a] % 2 != 0) {
            throw std::invalid_argument("patch dims must be even and >= 8");
        }
    }
    if (downsample_factor < 2) {
        throw std::invalid_argument("downsample factor must be >= 2");
    }
    augment.validate();
}

namespace {

using Mat3 = std::array<double, 9>;

Mat3 mul(const Mat3& a, const Mat3& b) {
    Mat3 r{};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 3 + j];
            r[i * 3 + j] = s;
        }
    }
    return r;
}

Mat3 rotation(int axis, double deg) {
    const double t = deg * std::numbers::pi / 180.0;
    const double c = std::cos(t);
    const double s = std::sin(t);
    switch (axis) {
        case 0: return {1, 0, 0, 0, c, -s, 0, s, c};
        case 1: return {c, 0, s, 0, 1, 0, -s, 0, c};
        default: return {c, -s, 0, s, c, 0, 0, 0, 1};
    }
}

void check_label_grid(const Image& image, const LabelMap* labels) {
    if (labels != nullptr && labels->geometry() != image.geometry()) {
        throw std::invalid_argument("label grid does not match image grid");
    }
}

}  // namespace

Mat3 AffineParams::linear() const {
    const Mat3 r = mul(rotation(2, rot_deg[2]), mul(rotation(1, rot_deg[1]), rotation(0, rot_deg[0])));
    const Mat3 sh{1, shear[0], shear[1], 0, 1, shear[2], 0, 0, 1};
    Mat3 l = mul(r, sh);
    for (auto& v : l) v *= scale;
    return l;
}

AffineParams draw_affine(const AugmentSpec& spec, const Index3& dims, Rng& rng) {
    spec.validate();
    AffineParams p;
    for (int a = 0; a < 3; ++a) p.shift[a] = rng.symmetric(spec.shift_frac * dims[a]);
    for (int a = 0; a < 3; ++a) p.rot_deg[a] = rng.symmetric(spec.rot_max_deg);
    for (int a = 0; a < 3; ++a) p.shear[a] = rng.symmetric(spec.shear_frac);
    p.scale = 1.0 + rng.symmetric(spec.scale_frac);
    return p;
}

float min_value(const Image& image) {
    float m = std::numeric_limits<float>::infinity();
    for (auto v : image.data()) m = std::min(m, v);
    return m;
}

Augmented apply_affine(const Image& image, const LabelMap* labels, const AffineParams& params,
                       float pad_image, std::uint8_t pad_label) {
    check_label_grid(image, labels);
    const Geometry& g = image.geometry();
    const auto [nx, ny, nz] = g.dims;
    const Mat3 l = params.linear();
    const Vec3 c{(nx - 1) / 2.0, (ny - 1) / 2.0, (nz - 1) / 2.0};
    constexpr double tol = 1e-9;

    Augmented out{Image(g, pad_image), std::nullopt};
    if (labels != nullptr) out.labels = LabelMap(g, pad_label);

    for (int z = 0; z < nz; ++z) {
        for (int y = 0; y < ny; ++y) {
            for (int x = 0; x < nx; ++x) {
                const double ox = x - c[0];
                const double oy = y - c[1];
                const double oz = z - c[2];
                const double px = c[0] + l[0] * ox + l[1] * oy + l[2] * oz - params.shift[0];
                const double py = c[1] + l[3] * ox + l[4] * oy + l[5] * oz - params.shift[1];
                const double pz = c[2] + l[6] * ox + l[7] * oy + l[8] * oz - params.shift[2];

                if (px < -tol || py < -tol || pz < -tol || px > nx - 1 + tol ||
                    py > ny - 1 + tol || pz > nz - 1 + tol) {
                    continue;
                }
                const double qx = std::clamp(px, 0.0, double(nx - 1));
                const double qy = std::clamp(py, 0.0, double(ny - 1));
                const double qz = std::clamp(pz, 0.0, double(nz - 1));
                const int x0 = std::min(static_cast<int>(qx), nx - 1);
                const int y0 = std::min(static_cast<int>(qy), ny - 1);
                const int z0 = std::min(static_cast<int>(qz), nz - 1);
                const int x1 = std::min(x0 + 1, nx - 1);
                const int y1 = std::min(y0 + 1, ny - 1);
                const int z1 = std::min(z0 + 1, nz - 1);
                const double fx = qx - x0;
                const double fy = qy - y0;
                const double fz = qz - z0;

                auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
                const double c00 = lerp(image.at(x0, y0, z0), image.at(x1, y0, z0), fx);
                const double c10 = lerp(image.at(x0, y1, z0), image.at(x1, y1, z0), fx);
                const double c01 = lerp(image.at(x0, y0, z1), image.at(x1, y0, z1), fx);
                const double c11 = lerp(image.at(x0, y1, z1), image.at(x1, y1, z1), fx);
                out.image.at(x, y, z) =
                    static_cast<float>(lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz));

                if (labels != nullptr) {
                    const int rx = std::clamp(static_cast<int>(std::lround(qx)), 0, nx - 1);
                    const int ry = std::clamp(static_cast<int>(std::lround(qy)), 0, ny - 1);
                    const int rz = std::clamp(static_cast<int>(std::lround(qz)), 0, nz - 1);
                    out.labels->at(x, y, z) = labels->at(rx, ry, rz);
                }
            }
        }
    }
    return out;
}

Augmented augment(const Image& image, const LabelMap* labels, const AugmentSpec& spec, Rng& rng,
                  std::optional<float> pad_image, std::uint8_t pad_label) {
    spec.validate();
    check_label_grid(image, labels);
    if (!spec.enabled) {
        Augmented out{image, std::nullopt};
        if (labels != nullptr) out.labels = *labels;
        return out;
    }
    const AffineParams p = draw_affine(spec, image.dims(), rng);
    return apply_affine(image, labels, p, pad_image.value_or(min_value(image)), pad_label);
}

PatchPair extract_pair(const Image& image, const LabelMap* labels, const PatchSpec& spec,
                       const Index3& center) {
    spec.validate();
    check_label_grid(image, labels);
    const Geometry& g = image.geometry();
    const Index3 fov = spec.lo_field_of_view();
    for (int a = 0; a < 3; ++a) {
        if (g.dims[a] < fov[a]) {
            throw std::invalid_argument("volume is smaller than the downsampled patch field of view");
        }
    }
    if (!g.contains(center)) {
        throw std::out_of_range("patch center outside volume");
    }
    const int f = spec.downsample_factor;
    const Index3& p = spec.patch_dims;
    const float pad = spec.pad_value_image.value_or(min_value(image));

    PatchPair pair;
    pair.center_index = center;
    pair.center_world = world_of_index(g, center);
    for (int a = 0; a < 3; ++a) {
        pair.hi_start[a] = center[a] - p[a] / 2;
        pair.lo_start[a] = center[a] - f * p[a] / 2;
    }

    Geometry hg;
    hg.dims = p;
    hg.spacing = g.spacing;
    Geometry lg;
    lg.dims = p;
    for (int a = 0; a < 3; ++a) {
        hg.origin[a] = g.origin[a] + pair.hi_start[a] * g.spacing[a];
        lg.spacing[a] = g.spacing[a] * f;
        // A coarse voxel sits at the centre of the f fine voxels it averages.
        lg.origin[a] = g.origin[a] + (pair.lo_start[a] + (f - 1) / 2.0) * g.spacing[a];
    }
    pair.hi = Image(hg, pad);
    pair.lo = Image(lg, pad);
    if (labels != nullptr) pair.target = LabelMap(hg, spec.pad_value_label);

    auto inside = [&](int x, int y, int z) { return g.contains({x, y, z}); };

    for (int z = 0; z < p[2]; ++z) {
        for (int y = 0; y < p[1]; ++y) {
            for (int x = 0; x < p[0]; ++x) {
                const int sx = pair.hi_start[0] + x;
                const int sy = pair.hi_start[1] + y;
                const int sz = pair.hi_start[2] + z;
                if (inside(sx, sy, sz)) {
                    pair.hi.at(x, y, z) = image.at(sx, sy, sz);
                    if (labels != nullptr) pair.target->at(x, y, z) = labels->at(sx, sy, sz);
                }
            }
        }
    }

    const double inv = 1.0 / (f * f * f);
    for (int z = 0; z < p[2]; ++z) {
        for (int y = 0; y < p[1]; ++y) {
            for (int x = 0; x < p[0]; ++x) {
                double sum = 0.0;
                for (int dz = 0; dz < f; ++dz) {
                    const int sz = pair.lo_start[2] + z * f + dz;
                    for (int dy = 0; dy < f; ++dy) {
                        const int sy = pair.lo_start[1] + y * f + dy;
                        for (int dx = 0; dx < f; ++dx) {
                            const int sx = pair.lo_start[0] + x * f + dx;
                            sum += inside(sx, sy, sz) ? image.at(sx, sy, sz) : pad;
                        }
                    }
                }
                pair.lo.at(x, y, z) = static_cast<float>(sum * inv);
            }
        }
    }
    return pair;
}

PatchPair sample_pair(const Image& image, const LabelMap* labels, const PatchSpec& spec,
                      Rng& rng) {
    spec.validate();
    Index3 c{};
    for (int a = 0; a < 3; ++a) {
        const int half = spec.patch_dims[a] / 2;
        const int hi = image.dims()[a] - half;
        if (hi < half) {
            throw std::invalid_argument("volume is smaller than the patch");
        }
        c[a] = static_cast<int>(rng.uniform_int(half, hi));
    }
    return extract_pair(image, labels, spec, c);
}

}  // namespace mtseg
