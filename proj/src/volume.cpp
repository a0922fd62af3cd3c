#include "mtseg/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "mtseg/text.hpp"

namespace mtseg {

static_assert(std::endian::native == std::endian::little,
              "raw volume I/O assumes a little-endian host");

void Geometry::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (dims[a] <= 0) {
            throw std::invalid_argument("volume dims must be positive");
        }
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
            throw std::invalid_argument("volume spacing must be positive and finite");
        }
        if (!std::isfinite(origin[a])) {
            throw std::invalid_argument("volume origin must be finite");
        }
    }
}

Vec3 world_of_index(const Geometry& g, const Index3& idx) {
    if (!g.contains(idx)) {
        throw std::out_of_range("voxel index outside volume");
    }
    return {g.origin[0] + idx[0] * g.spacing[0], g.origin[1] + idx[1] * g.spacing[1],
            g.origin[2] + idx[2] * g.spacing[2]};
}

int LabelScheme::index_of(int id) const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i].id == id) return static_cast<int>(i);
    }
    return -1;
}

void LabelScheme::validate() const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
        for (std::size_t j = i + 1; j < labels.size(); ++j) {
            if (labels[i].id == labels[j].id) {
                throw std::invalid_argument("label scheme '" + name + "' has duplicate ids");
            }
        }
    }
    if (!contains(background_id)) {
        throw std::invalid_argument("label scheme '" + name + "' lacks its background id");
    }
}

LabelScheme lobe_scheme() {
    return LabelScheme{"lobe",
                       {{0, "background"},
                        {1, "right_upper"},
                        {2, "right_middle"},
                        {3, "right_lower"},
                        {4, "left_upper"},
                        {5, "left_lower"}},
                       0};
}

LabelScheme vessel_scheme() { return LabelScheme{"vessel", {{0, "background"}, {1, "vessel"}}, 0}; }

void check_labels(const LabelMap& labels, const LabelScheme& scheme) {
    std::array<bool, 256> allowed{};
    for (const auto& e : scheme.labels) {
        if (e.id >= 0 && e.id < 256) allowed[static_cast<std::size_t>(e.id)] = true;
    }
    for (auto v : labels.data()) {
        if (!allowed[v]) {
            throw std::invalid_argument("label " + std::to_string(v) + " not in scheme '" +
                                        scheme.name + "'");
        }
    }
}

void rescale_hu(Image& image, float lo, float hi) {
    if (!(hi > lo)) {
        throw std::invalid_argument("rescale_hu needs hi > lo");
    }
    const float inv = 1.0F / (hi - lo);
    for (auto& v : image.data()) {
        v = (std::clamp(v, lo, hi) - lo) * inv;
    }
}

namespace {

using Kind = VolumeIoError::Kind;

struct Header {
    Geometry geom;
    bool is_float = true;
    std::filesystem::path data_file;
};

template <std::size_t N>
std::array<double, N> parse_numbers(const std::string& key, const std::string& value,
                                    const std::string& source) {
    auto toks = split_whitespace(value);
    if (toks.size() != N) {
        throw VolumeIoError(N == 3 ? Kind::not_3d : Kind::malformed_header,
                            source + ": " + key + " must have " + std::to_string(N) + " values");
    }
    std::array<double, N> out{};
    for (std::size_t i = 0; i < N; ++i) {
        auto v = parse_double(toks[i]);
        if (!v) {
            throw VolumeIoError(Kind::malformed_header,
                                source + ": bad number in " + key + ": '" + toks[i] + "'");
        }
        out[i] = *v;
    }
    return out;
}

Header parse_header(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw VolumeIoError(Kind::missing_header, "cannot open header " + path.string());
    }
    const std::string src = path.string();
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        auto t = trim(line);
        if (t.empty()) continue;
        auto eq = t.find('=');
        if (eq == std::string_view::npos) {
            throw VolumeIoError(Kind::malformed_header, src + ": expected 'Key = Value'");
        }
        kv[std::string(trim(t.substr(0, eq)))] = std::string(trim(t.substr(eq + 1)));
    }

    auto need = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) {
            throw VolumeIoError(Kind::malformed_header, src + ": missing " + key);
        }
        return it->second;
    };

    if (auto it = kv.find("ObjectType"); it != kv.end() && it->second != "Image") {
        throw VolumeIoError(Kind::unsupported_value, src + ": ObjectType " + it->second);
    }
    if (need("NDims") != "3") {
        throw VolumeIoError(Kind::not_3d, src + ": NDims = " + need("NDims"));
    }
    for (const char* key : {"BinaryDataByteOrderMSB", "ElementByteOrderMSB", "CompressedData"}) {
        if (auto it = kv.find(key); it != kv.end() && parse_bool(it->second) != false) {
            throw VolumeIoError(Kind::unsupported_value,
                                src + ": " + std::string(key) + " = " + it->second);
        }
    }
    if (auto it = kv.find("BinaryData"); it != kv.end() && parse_bool(it->second) != true) {
        throw VolumeIoError(Kind::unsupported_value, src + ": BinaryData = " + it->second);
    }
    if (auto it = kv.find("ElementNumberOfChannels"); it != kv.end() && it->second != "1") {
        throw VolumeIoError(Kind::unsupported_value,
                            src + ": ElementNumberOfChannels = " + it->second);
    }
    if (auto it = kv.find("TransformMatrix"); it != kv.end()) {
        auto m = parse_numbers<9>("TransformMatrix", it->second, src);
        const std::array<double, 9> eye{1, 0, 0, 0, 1, 0, 0, 0, 1};
        if (m != eye) {
            throw VolumeIoError(Kind::unsupported_value, src + ": non-identity TransformMatrix");
        }
    }

    Header h;
    auto dims = parse_numbers<3>("DimSize", need("DimSize"), src);
    for (int a = 0; a < 3; ++a) {
        if (dims[a] < 1 || dims[a] != std::floor(dims[a])) {
            throw VolumeIoError(Kind::malformed_header, src + ": DimSize must be positive integers");
        }
        h.geom.dims[a] = static_cast<int>(dims[a]);
    }
    if (auto it = kv.find("ElementSpacing"); it != kv.end()) {
        h.geom.spacing = parse_numbers<3>("ElementSpacing", it->second, src);
    }
    if (auto it = kv.find("Offset"); it != kv.end()) {
        h.geom.origin = parse_numbers<3>("Offset", it->second, src);
    }
    try {
        h.geom.validate();
    } catch (const std::invalid_argument& e) {
        throw VolumeIoError(Kind::unsupported_value, src + ": " + e.what());
    }

    const auto& et = need("ElementType");
    if (et == "MET_FLOAT") {
        h.is_float = true;
    } else if (et == "MET_UCHAR") {
        h.is_float = false;
    } else {
        throw VolumeIoError(Kind::unsupported_value, src + ": ElementType " + et);
    }

    const auto& df = need("ElementDataFile");
    if (df == "LOCAL" || df == "LIST") {
        throw VolumeIoError(Kind::unsupported_value, src + ": ElementDataFile " + df);
    }
    h.data_file = path.parent_path() / df;
    return h;
}

template <class T>
Grid<T> read_raw(const Header& h) {
    std::ifstream in(h.data_file, std::ios::binary);
    if (!in) {
        throw VolumeIoError(Kind::missing_data, "cannot open data file " + h.data_file.string());
    }
    std::vector<T> data(h.geom.voxel_count());
    const auto bytes = static_cast<std::streamsize>(data.size() * sizeof(T));
    in.read(reinterpret_cast<char*>(data.data()), bytes);
    if (in.gcount() != bytes) {
        throw VolumeIoError(Kind::short_data, h.data_file.string() + ": expected " +
                                                   std::to_string(bytes) + " bytes, got " +
                                                   std::to_string(in.gcount()));
    }
    return Grid<T>(h.geom, std::move(data));
}

std::string join3(const auto& a) {
    return format_double(static_cast<double>(a[0])) + " " +
           format_double(static_cast<double>(a[1])) + " " +
           format_double(static_cast<double>(a[2]));
}

template <class T>
void write_impl(const Grid<T>& v, const std::filesystem::path& header, const char* element_type) {
    if (header.extension() != ".mhd") {
        throw VolumeIoError(Kind::unwritable, header.string() + ": header must end in .mhd");
    }
    auto raw = header;
    raw.replace_extension(".raw");

    std::ostringstream h;
    h << "ObjectType = Image\n"
      << "NDims = 3\n"
      << "BinaryData = True\n"
      << "BinaryDataByteOrderMSB = False\n"
      << "DimSize = " << v.dims()[0] << " " << v.dims()[1] << " " << v.dims()[2] << "\n"
      << "ElementSpacing = " << join3(v.spacing()) << "\n"
      << "Offset = " << join3(v.origin()) << "\n"
      << "ElementType = " << element_type << "\n"
      << "ElementDataFile = " << raw.filename().string() << "\n";

    std::ofstream hout(header, std::ios::binary | std::ios::trunc);
    if (!hout) {
        throw VolumeIoError(Kind::unwritable, "cannot write " + header.string());
    }
    hout << h.str();
    std::ofstream rout(raw, std::ios::binary | std::ios::trunc);
    if (!rout) {
        throw VolumeIoError(Kind::unwritable, "cannot write " + raw.string());
    }
    rout.write(reinterpret_cast<const char*>(v.data().data()),
               static_cast<std::streamsize>(v.size() * sizeof(T)));
    if (!hout || !rout) {
        throw VolumeIoError(Kind::unwritable, "write failed for " + header.string());
    }
}

}  // namespace

Volume read_volume(const std::filesystem::path& header) {
    Header h = parse_header(header);
    if (h.is_float) return read_raw<float>(h);
    return read_raw<std::uint8_t>(h);
}

Image read_image(const std::filesystem::path& header) {
    Volume v = read_volume(header);
    if (auto* im = std::get_if<Image>(&v)) return std::move(*im);
    throw VolumeIoError(Kind::wrong_element_type, header.string() + ": expected MET_FLOAT");
}

LabelMap read_labels(const std::filesystem::path& header) {
    Volume v = read_volume(header);
    if (auto* lm = std::get_if<LabelMap>(&v)) return std::move(*lm);
    throw VolumeIoError(Kind::wrong_element_type, header.string() + ": expected MET_UCHAR");
}

void write_volume(const Image& v, const std::filesystem::path& header) {
    write_impl(v, header, "MET_FLOAT");
}

void write_volume(const LabelMap& v, const std::filesystem::path& header) {
    write_impl(v, header, "MET_UCHAR");
}

void write_volume(const Volume& v, const std::filesystem::path& header) {
    std::visit([&](const auto& g) { write_volume(g, header); }, v);
}

}  // namespace mtseg
