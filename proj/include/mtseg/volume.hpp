#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace mtseg {

using Index3 = std::array<int, 3>;
using Vec3 = std::array<double, 3>;

/// Placement of a voxel grid in physical space (mm). Axis-aligned only.
struct Geometry {
    Index3 dims{1, 1, 1};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }
    bool contains(const Index3& idx) const {
        return idx[0] >= 0 && idx[1] >= 0 && idx[2] >= 0 && idx[0] < dims[0] &&
               idx[1] < dims[1] && idx[2] < dims[2];
    }
    /// Linear offset, x fastest.
    std::size_t offset(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(dims[0]) *
                   (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims[1]) * z);
    }

    /// Throws std::invalid_argument when dims or spacing are not usable.
    void validate() const;

    bool operator==(const Geometry&) const = default;
};

/// origin + idx * spacing. Throws std::out_of_range for indices outside dims.
Vec3 world_of_index(const Geometry& g, const Index3& idx);

/// A 3D scalar grid with physical placement. Element type is float32 for
/// images and uint8 for label maps.
template <class T>
class Grid {
public:
    using value_type = T;

    Grid() = default;
    explicit Grid(Geometry geom, T fill = T{})
        : geom_(geom), data_(geom.voxel_count(), fill) {
        geom_.validate();
    }
    Grid(Geometry geom, std::vector<T> data) : geom_(geom), data_(std::move(data)) {
        geom_.validate();
        if (data_.size() != geom_.voxel_count()) {
            throw std::invalid_argument("grid data length does not match dims");
        }
    }

    const Geometry& geometry() const { return geom_; }
    const Index3& dims() const { return geom_.dims; }
    const Vec3& spacing() const { return geom_.spacing; }
    const Vec3& origin() const { return geom_.origin; }
    std::size_t size() const { return data_.size(); }

    T& at(int x, int y, int z) { return data_[geom_.offset(x, y, z)]; }
    const T& at(int x, int y, int z) const { return data_[geom_.offset(x, y, z)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    bool operator==(const Grid&) const = default;

private:
    Geometry geom_{};
    std::vector<T> data_{};
};

using Image = Grid<float>;
using LabelMap = Grid<std::uint8_t>;
using Volume = std::variant<Image, LabelMap>;

struct LabelEntry {
    int id = 0;
    std::string name;
};

/// Ordered set of label ids a label map may carry.
struct LabelScheme {
    std::string name;
    std::vector<LabelEntry> labels;
    int background_id = 0;

    std::size_t size() const { return labels.size(); }
    /// Position of `id` in `labels`, or -1.
    int index_of(int id) const;
    bool contains(int id) const { return index_of(id) >= 0; }
    /// Throws std::invalid_argument on duplicate ids or missing background.
    void validate() const;
};

/// Background plus five lobes: 1 right upper, 2 right middle, 3 right lower,
/// 4 left upper, 5 left lower.
LabelScheme lobe_scheme();
/// Background plus vessel.
LabelScheme vessel_scheme();

/// Throws std::invalid_argument if any voxel carries an id outside `scheme`.
void check_labels(const LabelMap& labels, const LabelScheme& scheme);

/// Clips Hounsfield units to [lo, hi] and rescales linearly to [0, 1].
void rescale_hu(Image& image, float lo = -1000.0F, float hi = 400.0F);

class VolumeIoError : public std::runtime_error {
public:
    enum class Kind {
        missing_header,
        malformed_header,
        unsupported_value,
        not_3d,
        missing_data,
        short_data,
        wrong_element_type,
        unwritable,
    };
    VolumeIoError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

/// Reads a MetaImage header (.mhd) and its companion raw file.
Volume read_volume(const std::filesystem::path& header);
/// As read_volume, but require a specific element type.
Image read_image(const std::filesystem::path& header);
LabelMap read_labels(const std::filesystem::path& header);

/// Writes `<stem>.mhd` + `<stem>.raw` next to each other. `header` must end
/// in `.mhd`.
void write_volume(const Image& v, const std::filesystem::path& header);
void write_volume(const LabelMap& v, const std::filesystem::path& header);
void write_volume(const Volume& v, const std::filesystem::path& header);

}  // namespace mtseg
