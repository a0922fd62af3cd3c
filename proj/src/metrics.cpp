#include "mtseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mtseg::metrics {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool on_surface(const LabelMap& m, int x, int y, int z) {
    const Index3& d = m.dims();
    if (x == 0 || y == 0 || z == 0 || x == d[0] - 1 || y == d[1] - 1 || z == d[2] - 1) return true;
    return m.at(x - 1, y, z) == 0 || m.at(x + 1, y, z) == 0 || m.at(x, y - 1, z) == 0 ||
           m.at(x, y + 1, z) == 0 || m.at(x, y, z - 1) == 0 || m.at(x, y, z + 1) == 0;
}

LabelMap surface_mask(const LabelMap& m) {
    LabelMap s(m.geometry());
    const Index3& d = m.dims();
    for (int z = 0; z < d[2]; ++z) {
        for (int y = 0; y < d[1]; ++y) {
            for (int x = 0; x < d[0]; ++x) {
                if (m.at(x, y, z) != 0 && on_surface(m, x, y, z)) s.at(x, y, z) = 1;
            }
        }
    }
    return s;
}

void require_same_grid(const LabelMap& a, const LabelMap& b, const char* what) {
    if (a.dims() != b.dims()) throw std::invalid_argument(std::string(what) + ": mask dims differ");
}

/// Lower envelope of parabolas over a strided line: out[p] = min_q f[q] +
/// w2 (p - q)^2 with infinite f[q] ignored. `out` is contiguous.
void envelope_1d(const double* f, int n, std::ptrdiff_t stride, double w2, double* out,
                 std::vector<int>& v, std::vector<double>& zb) {
    v.resize(static_cast<std::size_t>(n));
    zb.resize(static_cast<std::size_t>(n) + 1);
    int k = -1;
    auto fq = [&](int q) { return f[q * stride]; };
    // Abscissa where the parabolas rooted at q and r intersect.
    auto cross = [&](int q, int r) {
        return ((fq(q) + w2 * q * q) - (fq(r) + w2 * r * r)) / (2.0 * w2 * (q - r));
    };
    for (int q = 0; q < n; ++q) {
        if (fq(q) == kInf) continue;
        while (k >= 0 && cross(q, v[static_cast<std::size_t>(k)]) <= zb[static_cast<std::size_t>(k)]) --k;
        ++k;
        zb[static_cast<std::size_t>(k)] = k == 0 ? -kInf : cross(q, v[static_cast<std::size_t>(k - 1)]);
        v[static_cast<std::size_t>(k)] = q;
        zb[static_cast<std::size_t>(k) + 1] = kInf;
    }
    if (k < 0) {
        for (int p = 0; p < n; ++p) out[p] = kInf;
        return;
    }
    int j = 0;
    for (int p = 0; p < n; ++p) {
        while (zb[static_cast<std::size_t>(j) + 1] < p) ++j;
        const int q = v[static_cast<std::size_t>(j)];
        const double dq = p - q;
        out[p] = fq(q) + w2 * dq * dq;
    }
}

}  // namespace

SurfacePointSet extract_surface(const LabelMap& mask, int source_label) {
    SurfacePointSet s;
    s.source_label = source_label;
    const Index3& d = mask.dims();
    for (int z = 0; z < d[2]; ++z) {
        for (int y = 0; y < d[1]; ++y) {
            for (int x = 0; x < d[0]; ++x) {
                if (mask.at(x, y, z) == 0 || !on_surface(mask, x, y, z)) continue;
                s.voxels.push_back({x, y, z});
                s.points.push_back(world_of_index(mask.geometry(), {x, y, z}));
            }
        }
    }
    return s;
}

LabelMap binarize(const LabelMap& labels, int label) {
    LabelMap out(labels.geometry());
    for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i] == label ? 1 : 0;
    return out;
}

double dsc(const LabelMap& a, const LabelMap& b) {
    require_same_grid(a, b, "dsc");
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool ia = a[i] != 0;
        const bool ib = b[i] != 0;
        na += ia;
        nb += ib;
        both += ia && ib;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

std::vector<double> squared_distance_transform(const LabelMap& seeds) {
    const Index3& d = seeds.dims();
    const Vec3& sp = seeds.spacing();
    std::vector<double> f(seeds.size());
    for (std::size_t i = 0; i < seeds.size(); ++i) f[i] = seeds[i] != 0 ? 0.0 : kInf;
    std::vector<double> line(static_cast<std::size_t>(std::max({d[0], d[1], d[2]})));
    std::vector<int> v;
    std::vector<double> zb;
    const std::ptrdiff_t sx = 1;
    const std::ptrdiff_t sy = d[0];
    const std::ptrdiff_t sz = static_cast<std::ptrdiff_t>(d[0]) * d[1];
    auto pass = [&](int axis) {
        const std::ptrdiff_t stride = axis == 0 ? sx : (axis == 1 ? sy : sz);
        const int n = d[axis];
        const double w2 = sp[axis] * sp[axis];
        const int a1 = axis == 0 ? 1 : 0;
        const int a2 = axis == 2 ? 1 : 2;
        for (int j = 0; j < d[a2]; ++j) {
            for (int i = 0; i < d[a1]; ++i) {
                Index3 idx{0, 0, 0};
                idx[a1] = i;
                idx[a2] = j;
                double* base = f.data() + seeds.geometry().offset(idx[0], idx[1], idx[2]);
                envelope_1d(base, n, stride, w2, line.data(), v, zb);
                for (int p = 0; p < n; ++p) base[p * stride] = line[static_cast<std::size_t>(p)];
            }
        }
    };
    pass(0);
    pass(1);
    pass(2);
    return f;
}

std::vector<double> directed_surface_distances(const LabelMap& from, const LabelMap& to) {
    require_same_grid(from, to, "surface distance");
    const SurfacePointSet src = extract_surface(from);
    const LabelMap dst = surface_mask(to);
    if (src.voxels.empty() || std::none_of(dst.data().begin(), dst.data().end(), [](auto v) { return v != 0; })) {
        throw UndefinedMetricError("surface distance undefined for an empty mask");
    }
    const std::vector<double> d2 = squared_distance_transform(dst);
    std::vector<double> out;
    out.reserve(src.voxels.size());
    for (const Index3& p : src.voxels) out.push_back(std::sqrt(d2[from.geometry().offset(p[0], p[1], p[2])]));
    return out;
}

double msd(const LabelMap& a, const LabelMap& b) {
    const auto ab = directed_surface_distances(a, b);
    const auto ba = directed_surface_distances(b, a);
    const double sum = std::accumulate(ab.begin(), ab.end(), 0.0) + std::accumulate(ba.begin(), ba.end(), 0.0);
    return sum / static_cast<double>(ab.size() + ba.size());
}

double nearest_rank_percentile(std::vector<double> values, int q) {
    if (values.empty()) throw UndefinedMetricError("percentile of an empty set");
    if (q < 0 || q > 100) throw std::invalid_argument("percentile must lie in [0, 100]");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    // ceil(q n / 100) in integers; rank 0 maps to the smallest value.
    const std::size_t rank = (static_cast<std::size_t>(q) * n + 99) / 100;
    return values[rank == 0 ? 0 : rank - 1];
}

double hd95(const LabelMap& a, const LabelMap& b) {
    const double ab = nearest_rank_percentile(directed_surface_distances(a, b), 95);
    const double ba = nearest_rank_percentile(directed_surface_distances(b, a), 95);
    return 0.5 * (ab + ba);
}

double msd_on_slices(const LabelMap& gt, const LabelMap& pred, std::span<const int> slices) {
    require_same_grid(gt, pred, "msd_on_slices");
    const SurfacePointSet src = extract_surface(gt);
    std::vector<char> keep(static_cast<std::size_t>(gt.dims()[1]), 0);
    for (int y : slices) {
        if (y < 0 || y >= gt.dims()[1]) throw std::out_of_range("slice index " + std::to_string(y) + " outside the volume");
        keep[static_cast<std::size_t>(y)] = 1;
    }
    const LabelMap dst = surface_mask(pred);
    if (std::none_of(dst.data().begin(), dst.data().end(), [](auto v) { return v != 0; })) {
        throw UndefinedMetricError("slice MSD undefined: prediction is empty");
    }
    const std::vector<double> d2 = squared_distance_transform(dst);
    double sum = 0.0;
    std::size_t n = 0;
    for (const Index3& p : src.voxels) {
        if (!keep[static_cast<std::size_t>(p[1])]) continue;
        sum += std::sqrt(d2[gt.geometry().offset(p[0], p[1], p[2])]);
        ++n;
    }
    if (n == 0) throw UndefinedMetricError("slice MSD undefined: ground truth is empty on the listed slices");
    return sum / static_cast<double>(n);
}

CaseMetrics evaluate_case(const LabelMap& pred, const LabelMap& gt, const LabelScheme& scheme,
                          const std::vector<int>* slices) {
    require_same_grid(pred, gt, "evaluate_case");
    check_labels(pred, scheme);
    check_labels(gt, scheme);
    CaseMetrics cm;
    double dsc_sum = 0.0;
    int dsc_n = 0;
    double msd_sum = 0.0, hd_sum = 0.0, sl_sum = 0.0;
    int msd_n = 0, sl_n = 0;
    bool any_undefined = false;
    for (const LabelEntry& e : scheme.labels) {
        if (e.id == scheme.background_id) continue;
        const LabelMap g = binarize(gt, e.id);
        const LabelMap p = binarize(pred, e.id);
        const bool in_g = std::any_of(g.data().begin(), g.data().end(), [](auto v) { return v != 0; });
        const bool in_p = std::any_of(p.data().begin(), p.data().end(), [](auto v) { return v != 0; });
        if (!in_g && !in_p) continue;
        ClassMetrics c;
        c.label = e.id;
        c.name = e.name;
        c.dsc = dsc(p, g);
        if (!in_g) c.flags.push_back("gt_empty");
        if (!in_p) c.flags.push_back("pred_empty");
        if (in_g && in_p) {
            c.msd_mm = msd(p, g);
            c.hd95_mm = hd95(p, g);
        } else {
            c.flags.push_back("distance_undefined");
        }
        if (slices) {
            try {
                c.slice_msd_mm = msd_on_slices(g, p, *slices);
            } catch (const UndefinedMetricError&) {
                c.flags.push_back("slice_msd_undefined");
            }
        }
        if (in_g) {
            dsc_sum += c.dsc;
            ++dsc_n;
            if (c.msd_mm) {
                msd_sum += *c.msd_mm;
                hd_sum += *c.hd95_mm;
                ++msd_n;
            } else {
                any_undefined = true;
            }
            if (c.slice_msd_mm) {
                sl_sum += *c.slice_msd_mm;
                ++sl_n;
            }
        }
        cm.per_class.push_back(std::move(c));
    }
    if (dsc_n == 0) {
        cm.macro_dsc = 1.0;
        cm.macro_flags.push_back("gt_empty");
        return cm;
    }
    cm.macro_dsc = dsc_sum / dsc_n;
    if (msd_n > 0) cm.macro_msd_mm = msd_sum / msd_n;
    if (msd_n > 0) cm.macro_hd95_mm = hd_sum / msd_n;
    if (sl_n > 0) cm.macro_slice_msd_mm = sl_sum / sl_n;
    if (any_undefined) cm.macro_flags.push_back("partial_distance");
    return cm;
}

std::vector<double> average_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::fabs(values[a]) < std::fabs(values[b]); });
    std::vector<double> ranks(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::fabs(values[order[j + 1]]) == std::fabs(values[order[i]])) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("wilcoxon: samples must be paired");
    std::vector<double> d;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double di = x[i] - y[i];
        if (!std::isfinite(di)) throw std::invalid_argument("wilcoxon: non-finite difference");
        if (di != 0.0) d.push_back(di);
    }
    WilcoxonResult r;
    r.n = d.size();
    if (d.empty()) {
        r.all_zero = true;
        r.p = 1.0;
        r.exact = true;
        return r;
    }
    const std::vector<double> ranks = average_ranks(d);
    for (std::size_t i = 0; i < d.size(); ++i) (d[i] > 0 ? r.w_plus : r.w_minus) += ranks[i];
    r.w = std::min(r.w_plus, r.w_minus);
    const double n = static_cast<double>(r.n);

    if (r.n <= kWilcoxonExactMax) {
        // Doubled average ranks are integers; count sign assignments by W+.
        std::vector<int> r2(r.n);
        int total = 0;
        for (std::size_t i = 0; i < r.n; ++i) {
            r2[i] = static_cast<int>(std::lround(2.0 * ranks[i]));
            total += r2[i];
        }
        std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
        count[0] = 1.0;
        int reach = 0;
        for (int ri : r2) {
            for (int s = reach; s >= 0; --s) {
                if (count[static_cast<std::size_t>(s)] != 0.0) count[static_cast<std::size_t>(s + ri)] += count[static_cast<std::size_t>(s)];
            }
            reach += ri;
        }
        const int w2 = static_cast<int>(std::lround(2.0 * r.w));
        double tail = 0.0;
        for (int s = 0; s <= w2; ++s) tail += count[static_cast<std::size_t>(s)];
        r.p = std::min(1.0, 2.0 * tail / std::ldexp(1.0, static_cast<int>(r.n)));
        r.exact = true;
        return r;
    }

    double tie_term = 0.0;
    {
        std::vector<double> sorted = ranks;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size();) {
            std::size_t j = i;
            while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
            const double t = static_cast<double>(j - i);
            tie_term += t * t * t - t;
            i = j;
        }
    }
    const double mean = n * (n + 1.0) / 4.0;
    const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if (var <= 0.0) {
        r.p = 1.0;
        return r;
    }
    const double z = std::max(0.0, std::fabs(r.w_plus - mean) - 0.5) / std::sqrt(var);
    r.p = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
    return r;
}

}  // namespace mtseg::metrics
