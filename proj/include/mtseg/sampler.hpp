#pragma once

#include <optional>

#include "mtseg/rng.hpp"
#include "mtseg/volume.hpp"

namespace mtseg {

/// Magnitudes of the random linear augmentation. Rotation is in degrees.
struct AugmentSpec {
    double shift_frac = 0.05;
    double rot_max_deg = 5.0;
    double shear_frac = 0.05;
    double scale_frac = 0.05;
    bool enabled = true;

    void validate() const;
};

struct PatchSpec {
    Index3 patch_dims{32, 32, 24};
    int downsample_factor = 2;
    AugmentSpec augment{};
    /// Unset: pad with the minimum of the sampled image.
    std::optional<float> pad_value_image{};
    std::uint8_t pad_value_label = 0;

    void validate() const;
    /// Fine-voxel extent covered by the downsampled patch.
    Index3 lo_field_of_view() const {
        return {patch_dims[0] * downsample_factor, patch_dims[1] * downsample_factor,
                patch_dims[2] * downsample_factor};
    }
};

/// Concrete draw of the augmentation. The sampling map from output voxel
/// `o` to input position is `c + L (o - c) - shift`, with `c` the volume
/// center and L = Rz Ry Rx * Shear * scale.
struct AffineParams {
    Vec3 shift{0, 0, 0};    // voxels
    Vec3 rot_deg{0, 0, 0};  // about x, y, z
    Vec3 shear{0, 0, 0};    // xy, xz, yz
    double scale = 1.0;

    std::array<double, 9> linear() const;  // row-major 3x3
};

AffineParams draw_affine(const AugmentSpec& spec, const Index3& dims, Rng& rng);

struct Augmented {
    Image image;
    std::optional<LabelMap> labels;
};

/// Trilinear for the image, nearest neighbour for labels; samples falling
/// outside the input take the pad values.
Augmented apply_affine(const Image& image, const LabelMap* labels, const AffineParams& params,
                       float pad_image, std::uint8_t pad_label);

/// Draws and applies one affine. A disabled spec returns exact copies.
Augmented augment(const Image& image, const LabelMap* labels, const AugmentSpec& spec,
                  Rng& rng, std::optional<float> pad_image = std::nullopt,
                  std::uint8_t pad_label = 0);

/// Two co-centred patches with the same voxel count. `hi` is a crop at full
/// resolution; `lo` averages factor^3 blocks, so it covers a factor-times
/// larger field of view. Both carry their own geometry in world space.
struct PatchPair {
    Image hi;
    Image lo;
    Index3 center_index{};
    Vec3 center_world{};
    Index3 hi_start{};  // first fine voxel covered by hi
    Index3 lo_start{};  // first fine voxel covered by lo
    std::optional<LabelMap> target;  // aligned with hi
};

/// Builds the pair around fine-voxel `center`. The hi patch covers
/// [center - P/2, center + P/2) on each axis.
PatchPair extract_pair(const Image& image, const LabelMap* labels, const PatchSpec& spec,
                       const Index3& center);

/// Uniform random center among positions where the hi patch fits entirely.
PatchPair sample_pair(const Image& image, const LabelMap* labels, const PatchSpec& spec,
                      Rng& rng);

float min_value(const Image& image);

}  // namespace mtseg
