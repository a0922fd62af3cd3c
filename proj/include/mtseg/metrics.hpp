#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtseg/volume.hpp"

namespace mtseg::metrics {

/// A distance metric was requested for an empty mask or empty point set.
class UndefinedMetricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Surface voxels of a binary mask (nonzero = foreground): foreground voxels
/// with at least one 6-neighbour that is background or outside the grid.
struct SurfacePointSet {
    std::vector<Index3> voxels;
    std::vector<Vec3> points;  // voxel centres, mm
    int source_label = 1;
};

SurfacePointSet extract_surface(const LabelMap& mask, int source_label = 1);

/// Binary mask of voxels equal to `label`.
LabelMap binarize(const LabelMap& labels, int label);

/// 2|A n B| / (|A| + |B|); 1 when both are empty.
double dsc(const LabelMap& a, const LabelMap& b);

/// Distance (mm) from each surface voxel of `from` to the nearest surface
/// voxel of `to`, in the order of extract_surface(from). Computed with an
/// exact separable distance transform honouring anisotropic spacing.
std::vector<double> directed_surface_distances(const LabelMap& from, const LabelMap& to);

/// Exact squared distance (mm^2) from every voxel to the nearest nonzero
/// voxel of `seeds`; +inf everywhere when there are none.
std::vector<double> squared_distance_transform(const LabelMap& seeds);

/// Symmetric mean surface distance (mm).
double msd(const LabelMap& a, const LabelMap& b);

/// Nearest-rank percentile: element ceil(q/100 * n) (1-based) of the sorted
/// values. q is an integer percentage to keep the rank exact.
double nearest_rank_percentile(std::vector<double> values, int q);

/// Mean of the two directed 95th-percentile surface distances (mm).
double hd95(const LabelMap& a, const LabelMap& b);

/// Directed mean distance from gt surface voxels lying on the given coronal
/// (y) slices to the full surface of `pred`.
double msd_on_slices(const LabelMap& gt, const LabelMap& pred, std::span<const int> slices);

struct ClassMetrics {
    int label = 0;
    std::string name;
    double dsc = 0.0;
    std::optional<double> msd_mm;
    std::optional<double> hd95_mm;
    std::optional<double> slice_msd_mm;
    std::vector<std::string> flags;
};

struct CaseMetrics {
    std::vector<ClassMetrics> per_class;  // foreground classes present in gt or pred
    double macro_dsc = 0.0;
    std::optional<double> macro_msd_mm;
    std::optional<double> macro_hd95_mm;
    std::optional<double> macro_slice_msd_mm;
    std::vector<std::string> macro_flags;
};

/// Per foreground class of `scheme`: classes absent from both masks are
/// skipped; absent from one gives dsc 0 and undefined distances. Macro values
/// average the classes present in gt (distance macros over defined values).
/// With `slices`, also reports slice-restricted MSD.
CaseMetrics evaluate_case(const LabelMap& pred, const LabelMap& gt, const LabelScheme& scheme,
                          const std::vector<int>* slices = nullptr);

struct WilcoxonResult {
    std::size_t n = 0;  // non-zero differences
    double w_plus = 0.0;
    double w_minus = 0.0;
    double w = 0.0;  // min(W+, W-)
    double p = 1.0;  // two-sided
    bool exact = false;
    bool all_zero = false;
};

/// Largest n for which the exact null distribution is used.
inline constexpr std::size_t kWilcoxonExactMax = 12;

/// Signed-rank test on d = x - y: zeros dropped, average ranks for ties.
/// Exact two-sided p for n <= 12 (null distribution of doubled rank sums),
/// otherwise normal approximation with tie and continuity corrections.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y);

/// Average ranks (1-based) of |values|, ties sharing their mean rank.
std::vector<double> average_ranks(std::span<const double> values);

}  // namespace mtseg::metrics
