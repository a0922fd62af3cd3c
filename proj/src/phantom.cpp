#include "mtseg/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

#include "mtseg/rng.hpp"
#include "mtseg/text.hpp"

namespace mtseg {

void PhantomSpec::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (dims[a] < 16) throw std::invalid_argument("phantom dims must each be >= 16");
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
            throw std::invalid_argument("phantom spacing must be positive");
        }
    }
    if (!(fissure_waviness >= 0.0)) throw std::invalid_argument("fissure_waviness must be >= 0");
    if (vessel_count < 0) throw std::invalid_argument("vessel_count must be >= 0");
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise_sigma must be >= 0");
    if (!(lobe_contrast >= 0.0 && lobe_contrast <= 0.05)) {
        throw std::invalid_argument("lobe_contrast must lie in [0, 0.05]");
    }
}

namespace {

constexpr float kAir = 0.10F;
constexpr float kAirGradient = 0.05F;
constexpr float kBody = 0.50F;
constexpr float kHeart = 0.55F;
constexpr float kFissure = 0.30F;
constexpr float kVessel = 0.80F;
// Density rank of each lobe (index = label), multiplied by lobe_contrast.
constexpr std::array<int, 6> kLobeDensityRank{0, 0, 4, 2, 1, 3};

struct Ellipsoid {
    Vec3 c;
    Vec3 r;
    double level(double x, double y, double z) const {
        const double dx = (x - c[0]) / r[0];
        const double dy = (y - c[1]) / r[1];
        const double dz = (z - c[2]) / r[2];
        return dx * dx + dy * dy + dz * dz;
    }
};

/// z(x, y) = base + slope * y + amp * sin(2 pi (fx x + fy y) + phase), all in
/// normalized coordinates.
struct FissureSurface {
    double base = 0.0;
    double slope = 0.0;
    double amp = 0.0;
    double fx = 1.0;
    double fy = 1.0;
    double phase = 0.0;

    double height(double x, double y) const {
        return base + slope * y +
               amp * std::sin(2.0 * std::numbers::pi * (fx * x + fy * y) + phase);
    }
};

struct Layout {
    Ellipsoid right_lung;
    Ellipsoid left_lung;
    Ellipsoid heart;
    double body_rx = 0.95;
    double body_ry = 0.82;
    FissureSurface right_oblique;
    FissureSurface right_horizontal;
    FissureSurface left_oblique;
};

Layout draw_layout(const PhantomSpec& spec, Rng& rng) {
    auto jitter = [&](double v, double m) { return v + rng.symmetric(m); };
    auto scale = [&](double v, double f) { return v * (1.0 + rng.symmetric(f)); };
    Layout l;
    l.right_lung = {{jitter(-0.40, 0.02), jitter(0.02, 0.02), jitter(0.0, 0.02)},
                    {scale(0.37, 0.04), scale(0.60, 0.04), scale(0.82, 0.04)}};
    l.left_lung = {{jitter(0.40, 0.02), jitter(0.02, 0.02), jitter(-0.03, 0.02)},
                   {scale(0.34, 0.04), scale(0.60, 0.04), scale(0.86, 0.04)}};
    l.heart = {{jitter(0.12, 0.02), jitter(-0.40, 0.02), jitter(-0.32, 0.02)},
               {scale(0.30, 0.04), scale(0.28, 0.04), scale(0.36, 0.04)}};

    // Waviness is given in voxels along z; normalized z spans 2 over dims[2].
    const double amp = spec.fissure_waviness * 2.0 / spec.dims[2];
    auto surface = [&](double base, double slope) {
        FissureSurface s;
        s.base = jitter(base, 0.04);
        s.slope = scale(slope, 0.08);
        s.amp = amp;
        s.fx = rng.uniform(0.8, 1.4);
        s.fy = rng.uniform(0.8, 1.4);
        s.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        return s;
    };
    l.right_oblique = surface(-0.05, 1.1);
    l.right_horizontal = surface(0.08, 0.0);
    l.left_oblique = surface(0.0, 1.1);
    return l;
}

/// Distance in voxels from (x, y, z) to a fissure surface, first order.
double fissure_distance(const FissureSurface& s, double nx, double ny, double nz,
                        const Index3& dims) {
    const double dz_vox = (nz - s.height(nx, ny)) * dims[2] / 2.0;
    const double tilt = s.slope * static_cast<double>(dims[2]) / dims[1];
    return std::abs(dz_vox) / std::sqrt(1.0 + tilt * tilt);
}

struct Segment {
    Vec3 a;
    Vec3 b;
    double radius;
};

double point_segment_distance(const Vec3& p, const Segment& s) {
    Vec3 ab{s.b[0] - s.a[0], s.b[1] - s.a[1], s.b[2] - s.a[2]};
    Vec3 ap{p[0] - s.a[0], p[1] - s.a[1], p[2] - s.a[2]};
    const double len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    double t = len2 > 0.0 ? (ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = ap[0] - t * ab[0];
    const double dy = ap[1] - t * ab[1];
    const double dz = ap[2] - t * ab[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

Vec3 normalized(Vec3 v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (n == 0.0) return {1.0, 0.0, 0.0};
    return {v[0] / n, v[1] / n, v[2] / n};
}

void grow_tree(const Vec3& start, const Vec3& dir, double length, double radius, int depth,
               Rng& rng, std::vector<Segment>& out) {
    if (depth > 4 || radius < 0.5 || length < 1.0) return;
    const Vec3 end{start[0] + dir[0] * length, start[1] + dir[1] * length,
                   start[2] + dir[2] * length};
    out.push_back({start, end, radius});
    for (int child = 0; child < 2; ++child) {
        Vec3 d{dir[0] + rng.symmetric(0.7), dir[1] + rng.symmetric(0.7),
               dir[2] + rng.symmetric(0.7)};
        grow_tree(end, normalized(d), length * 0.72, radius * 0.72, depth + 1, rng, out);
    }
}

}  // namespace

PhantomCase generate_case(const PhantomSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const Layout layout = draw_layout(spec, rng);

    Geometry geom;
    geom.dims = spec.dims;
    geom.spacing = spec.spacing;
    PhantomCase pc;
    pc.image = Image(geom, 0.0F);
    pc.lobe_mask = LabelMap(geom, 0);
    pc.vessel_mask = LabelMap(geom, 0);

    const auto [nxv, nyv, nzv] = spec.dims;
    auto norm = [](int i, int n) { return (i + 0.5) / n * 2.0 - 1.0; };

    for (int z = 0; z < nzv; ++z) {
        const double nz = norm(z, nzv);
        for (int y = 0; y < nyv; ++y) {
            const double ny = norm(y, nyv);
            for (int x = 0; x < nxv; ++x) {
                const double nx = norm(x, nxv);
                const double bx = nx / layout.body_rx;
                const double by = ny / layout.body_ry;
                if (bx * bx + by * by > 1.0) continue;

                float value = kBody;
                std::uint8_t lobe = 0;
                const bool in_heart = layout.heart.level(nx, ny, nz) <= 1.0;
                if (in_heart) {
                    value = kHeart;
                } else if (layout.right_lung.level(nx, ny, nz) <= 1.0) {
                    const double zo = layout.right_oblique.height(nx, ny);
                    const double zh = layout.right_horizontal.height(nx, ny);
                    if (nz < zo) {
                        lobe = 3;
                    } else {
                        lobe = nz < zh ? 2 : 1;
                    }
                    value = kAir + kAirGradient * static_cast<float>((ny + 1.0) / 2.0);
                    const bool on_oblique =
                        fissure_distance(layout.right_oblique, nx, ny, nz, spec.dims) < 0.5;
                    const bool on_horizontal =
                        nz >= zo &&
                        fissure_distance(layout.right_horizontal, nx, ny, nz, spec.dims) < 0.5;
                    if (on_oblique || on_horizontal) value = kFissure;
                } else if (layout.left_lung.level(nx, ny, nz) <= 1.0) {
                    const double zo = layout.left_oblique.height(nx, ny);
                    lobe = nz < zo ? 5 : 4;
                    value = kAir + kAirGradient * static_cast<float>((ny + 1.0) / 2.0);
                    if (fissure_distance(layout.left_oblique, nx, ny, nz, spec.dims) < 0.5) {
                        value = kFissure;
                    }
                }
                if (lobe != 0 && value != kFissure) {
                    value += static_cast<float>(spec.lobe_contrast * kLobeDensityRank[lobe]);
                }
                pc.image.at(x, y, z) = value;
                pc.lobe_mask.at(x, y, z) = lobe;
            }
        }
    }

    // Vessel trees rooted near each lung's hilum, alternating right/left.
    const double min_dim = std::min({nxv, nyv, nzv});
    auto to_voxel = [&](double n, int a) { return (n + 1.0) / 2.0 * spec.dims[a] - 0.5; };
    std::vector<Segment> segments;
    for (int t = 0; t < spec.vessel_count; ++t) {
        const bool right = t % 2 == 0;
        const Ellipsoid& lung = right ? layout.right_lung : layout.left_lung;
        const double medial = right ? 1.0 : -1.0;
        const Vec3 root{to_voxel(lung.c[0] + medial * 0.55 * lung.r[0], 0),
                        to_voxel(lung.c[1] + rng.symmetric(0.1), 1),
                        to_voxel(lung.c[2] + rng.symmetric(0.2), 2)};
        const Vec3 dir = normalized({-medial * rng.uniform(0.2, 1.0), rng.symmetric(1.0),
                                     rng.symmetric(1.0)});
        grow_tree(root, dir, 0.3 * min_dim, std::max(1.0, 0.03 * min_dim), 0, rng, segments);
    }
    for (const auto& seg : segments) {
        const double r = seg.radius;
        Index3 lo{};
        Index3 hi{};
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::max(0, static_cast<int>(std::floor(std::min(seg.a[a], seg.b[a]) - r)));
            hi[a] = std::min(spec.dims[a] - 1,
                             static_cast<int>(std::ceil(std::max(seg.a[a], seg.b[a]) + r)));
        }
        for (int z = lo[2]; z <= hi[2]; ++z) {
            for (int y = lo[1]; y <= hi[1]; ++y) {
                for (int x = lo[0]; x <= hi[0]; ++x) {
                    if (pc.lobe_mask.at(x, y, z) == 0) continue;
                    if (point_segment_distance({double(x), double(y), double(z)}, seg) <= r) {
                        pc.vessel_mask.at(x, y, z) = 1;
                        pc.image.at(x, y, z) = kVessel;
                    }
                }
            }
        }
    }

    if (spec.noise_sigma > 0.0) {
        for (auto& v : pc.image.data()) {
            v = std::clamp(v + static_cast<float>(spec.noise_sigma * rng.normal()), 0.0F, 1.0F);
        }
    }

    std::array<bool, 6> present{};
    int ymin = nyv;
    int ymax = -1;
    for (int z = 0; z < nzv; ++z) {
        for (int y = 0; y < nyv; ++y) {
            for (int x = 0; x < nxv; ++x) {
                const auto l = pc.lobe_mask.at(x, y, z);
                present[l] = true;
                if (l != 0) {
                    ymin = std::min(ymin, y);
                    ymax = std::max(ymax, y);
                }
            }
        }
    }
    for (int l = 1; l <= 5; ++l) {
        if (!present[static_cast<std::size_t>(l)]) {
            throw std::invalid_argument("phantom spec yields an empty lobe " + std::to_string(l));
        }
    }
    for (int i = 0; i < kFissureSliceCount; ++i) {
        const int y = ymin + static_cast<int>(std::lround((i + 1) * (ymax - ymin) /
                                                          double(kFissureSliceCount + 1)));
        if (pc.fissure_slices.empty() || pc.fissure_slices.back() != y) {
            pc.fissure_slices.push_back(y);
        }
    }
    return pc;
}

const char* role_name(CaseRole r) {
    switch (r) {
        case CaseRole::lobe: return "lobe";
        case CaseRole::vessel: return "vessel";
        case CaseRole::unlabeled: return "unlabeled";
    }
    return "?";
}

CaseRole parse_role(const std::string& s) {
    if (s == "lobe") return CaseRole::lobe;
    if (s == "vessel") return CaseRole::vessel;
    if (s == "unlabeled") return CaseRole::unlabeled;
    throw std::invalid_argument("unknown case role '" + s + "'");
}

std::vector<const ManifestCase*> Manifest::pool(CaseRole role) const {
    std::vector<const ManifestCase*> out;
    for (const auto& c : cases) {
        if (c.role == role) out.push_back(&c);
    }
    return out;
}

namespace {

std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i != 0) s += ' ';
        s += std::to_string(v[i]);
    }
    return s;
}

}  // namespace

void Manifest::save(const std::filesystem::path& file) const {
    std::ostringstream out;
    out << "format = mtseg-manifest-1\n";
    out << "base_seed = " << base_seed << "\n";
    out << "case_count = " << cases.size() << "\n";
    for (const auto& c : cases) {
        out << "\n[case]\n";
        out << "id = " << c.id << "\n";
        out << "role = " << role_name(c.role) << "\n";
        out << "seed = " << c.seed << "\n";
        out << "image = " << c.image.generic_string() << "\n";
        if (!c.lobe_mask.empty()) out << "lobe_mask = " << c.lobe_mask.generic_string() << "\n";
        if (!c.vessel_mask.empty()) {
            out << "vessel_mask = " << c.vessel_mask.generic_string() << "\n";
        }
        if (!c.fissure_slices.empty()) {
            out << "fissure_slices = " << join_ints(c.fissure_slices) << "\n";
        }
    }
    write_text_file(file, out.str());
}

Manifest Manifest::load(const std::filesystem::path& file) {
    auto doc = KeyValueDocument::load(file);
    Manifest m;
    m.root = file.parent_path();
    SectionReader top(doc.section(""), doc.source);
    if (top.get_string("format").value_or("") != "mtseg-manifest-1") {
        throw ParseError(doc.source, 1, "not an mtseg manifest");
    }
    m.base_seed = static_cast<std::uint64_t>(top.get_int("base_seed").value_or(0));
    const auto declared = top.get_int("case_count");
    top.reject_unknown();
    for (const Section& sec : doc.sections) {
        const Section* s = &sec;
        if (s->name.empty()) continue;
        if (s->name != "case") {
            throw ParseError(doc.source, s->line, "unexpected section [" + s->name + "]");
        }
        SectionReader r(s, doc.source);
        ManifestCase c;
        c.id = r.require_string("id");
        try {
            c.role = parse_role(r.require_string("role"));
        } catch (const std::invalid_argument& e) {
            throw ParseError(doc.source, s->line, e.what());
        }
        c.seed = static_cast<std::uint64_t>(r.get_int("seed").value_or(0));
        c.image = r.require_string("image");
        c.lobe_mask = r.get_string("lobe_mask").value_or("");
        c.vessel_mask = r.get_string("vessel_mask").value_or("");
        for (auto v : r.get_ints("fissure_slices").value_or(std::vector<std::int64_t>{})) {
            c.fissure_slices.push_back(static_cast<int>(v));
        }
        r.reject_unknown();
        m.cases.push_back(std::move(c));
    }
    if (declared && static_cast<std::size_t>(*declared) != m.cases.size()) {
        throw ParseError(doc.source, 1, "case_count does not match the number of [case] blocks");
    }
    return m;
}

Manifest generate_dataset(const PhantomSpec& spec, int n_lobe, int n_vessel, int n_unlabeled,
                          const std::filesystem::path& out_dir) {
    if (n_lobe < 0 || n_vessel < 0 || n_unlabeled < 0) {
        throw std::invalid_argument("dataset counts must be >= 0");
    }
    spec.validate();
    std::filesystem::create_directories(out_dir);

    Manifest m;
    m.root = out_dir;
    m.base_seed = spec.seed;
    const std::array<std::pair<CaseRole, int>, 3> plan{
        {{CaseRole::lobe, n_lobe}, {CaseRole::vessel, n_vessel}, {CaseRole::unlabeled, n_unlabeled}}};
    std::uint64_t index = 0;
    for (const auto& [role, count] : plan) {
        for (int k = 0; k < count; ++k, ++index) {
            PhantomSpec cs = spec;
            cs.seed = spec.seed + index;
            const PhantomCase pc = generate_case(cs);

            char id[64];
            std::snprintf(id, sizeof id, "%s_%03d", role_name(role), k);
            const std::filesystem::path rel(id);
            std::filesystem::create_directories(out_dir / rel);

            ManifestCase mc;
            mc.id = id;
            mc.role = role;
            mc.seed = cs.seed;
            mc.image = rel / "image.mhd";
            write_volume(pc.image, out_dir / mc.image);
            if (role == CaseRole::lobe) {
                mc.lobe_mask = rel / "lobe_mask.mhd";
                write_volume(pc.lobe_mask, out_dir / mc.lobe_mask);
                mc.fissure_slices = pc.fissure_slices;
                write_text_file(out_dir / rel / "fissure_slices.txt",
                                join_ints(pc.fissure_slices) + "\n");
            }
            if (role == CaseRole::lobe || role == CaseRole::vessel) {
                mc.vessel_mask = rel / "vessel_mask.mhd";
                write_volume(pc.vessel_mask, out_dir / mc.vessel_mask);
            }
            m.cases.push_back(std::move(mc));
        }
    }
    m.save(out_dir / kManifestName);
    return m;
}

}  // namespace mtseg
