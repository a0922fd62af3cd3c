#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtseg/volume.hpp"

namespace mtseg {

struct PhantomSpec {
    Index3 dims{64, 64, 48};
    Vec3 spacing{1.5, 1.5, 2.0};
    std::uint64_t seed = 1;
    double fissure_waviness = 1.5;  // voxels
    int vessel_count = 6;
    double noise_sigma = 0.02;
    /// Step between the mean air densities of the five lobes (intensity
    /// units); 0 makes lobes differ only by geometry and fissures.
    double lobe_contrast = 0.04;

    /// Throws std::invalid_argument.
    void validate() const;
};

/// Synthetic chest volume. Geometry: two ellipsoidal lungs inside an elliptic
/// body cylinder, the right lung cut into three lobes by an oblique and a
/// horizontal fissure, the left into two by an oblique fissure. Axes: x runs
/// from patient right to left, y from anterior to posterior, z from inferior
/// to superior.
struct PhantomCase {
    Image image;          // values in [0, 1]
    LabelMap lobe_mask;   // lobe_scheme()
    LabelMap vessel_mask; // vessel_scheme()
    std::vector<int> fissure_slices;  // coronal (y) indices
};

/// Number of annotated coronal slices per case.
inline constexpr int kFissureSliceCount = 9;

PhantomCase generate_case(const PhantomSpec& spec);

enum class CaseRole { lobe, vessel, unlabeled };
const char* role_name(CaseRole r);
CaseRole parse_role(const std::string& s);

struct ManifestCase {
    std::string id;
    CaseRole role = CaseRole::lobe;
    std::filesystem::path image;        // absolute or manifest-relative
    std::filesystem::path lobe_mask;    // empty when not provided
    std::filesystem::path vessel_mask;  // empty when not provided
    std::uint64_t seed = 0;
    std::vector<int> fissure_slices;
};

struct Manifest {
    std::filesystem::path root;  // directory holding manifest.txt
    std::uint64_t base_seed = 0;
    std::vector<ManifestCase> cases;

    std::vector<const ManifestCase*> pool(CaseRole role) const;
    std::filesystem::path resolve(const std::filesystem::path& p) const {
        return p.is_absolute() ? p : root / p;
    }

    static Manifest load(const std::filesystem::path& file);
    void save(const std::filesystem::path& file) const;
};

inline constexpr const char* kManifestName = "manifest.txt";

/// Writes n_lobe + n_vessel + n_unlabeled cases under out_dir, case i (in
/// that role order) generated from seed spec.seed + i, plus manifest.txt.
Manifest generate_dataset(const PhantomSpec& spec, int n_lobe, int n_vessel, int n_unlabeled,
                          const std::filesystem::path& out_dir);

}  // namespace mtseg
