#include "mtseg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

namespace mtseg::nn {

std::string shape_string(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != 0) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <class T>
MapMat<T> as_mat(std::span<T> s, Eigen::Index rows, Eigen::Index cols) {
    return MapMat<T>(s.data(), rows, cols);
}
template <class T>
ConstMapMat<T> as_mat(std::span<const T> s, Eigen::Index rows, Eigen::Index cols) {
    return ConstMapMat<T>(s.data(), rows, cols);
}

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

template <class T>
void check_activation(const Tensor<T>& x, const char* op) {
    require(x.defined() && x.shape().size() == 4,
            std::string(op) + ": expected a (C, X, Y, Z) tensor");
}

struct Dims {
    int c, x, y, z;
    std::size_t n() const { return static_cast<std::size_t>(x) * y * z; }
};

template <class T>
Dims dims_of(const Tensor<T>& t) {
    return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

/// Unfolds zero-padded k^3 neighbourhoods of the z-slab [z0, z1): row
/// ((c*k + kz)*k + ky)*k + kx, column = voxel within the slab.
template <class T>
void im2col_slab(const T* src, const Dims& d, int k, int z0, int z1, T* cols) {
    const int p = k / 2;
    const std::size_t n = d.n();
    const std::size_t plane_xy = static_cast<std::size_t>(d.x) * d.y;
    const std::size_t ns = plane_xy * static_cast<std::size_t>(z1 - z0);
    std::size_t r = 0;
    for (int c = 0; c < d.c; ++c) {
        const T* plane = src + static_cast<std::size_t>(c) * n;
        for (int kz = 0; kz < k; ++kz) {
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx, ++r) {
                    T* row = cols + r * ns;
                    const int dz = kz - p;
                    const int dy = ky - p;
                    const int dx = kx - p;
                    const int x0 = std::max(0, -dx);
                    const int x1 = std::min(d.x, d.x - dx);
                    for (int z = z0; z < z1; ++z) {
                        const int sz = z + dz;
                        for (int y = 0; y < d.y; ++y) {
                            T* dst = row + (static_cast<std::size_t>(z - z0) * d.y + y) * d.x;
                            const int sy = y + dy;
                            if (sz < 0 || sz >= d.z || sy < 0 || sy >= d.y || x1 <= x0) {
                                std::fill(dst, dst + d.x, T(0));
                                continue;
                            }
                            const T* s = plane + (static_cast<std::size_t>(sz) * d.y + sy) * d.x;
                            std::fill(dst, dst + x0, T(0));
                            std::copy(s + x0 + dx, s + x1 + dx, dst + x0);
                            std::fill(dst + x1, dst + d.x, T(0));
                        }
                    }
                }
            }
        }
    }
}

/// Number of z slices per tile so a tile holds about 2048 voxels.
inline int slab_depth(const Dims& d) {
    const int xy = std::max(1, d.x * d.y);
    return std::clamp(2048 / xy, 1, d.z);
}

template <class T>
AlignedVector<T>& scratch(std::size_t n) {
    thread_local AlignedVector<T> buf;
    if (buf.size() < n) buf.resize(n);
    return buf;
}

template <class T>
using StridedMat = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMat = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

/// Space-to-depth for 2x2x2 blocks: row (c*8 + (kz*2 + ky)*2 + kx), column =
/// coarse voxel. `fine` has dims d; the coarse grid is d/2.
template <class T, bool Accumulate>
void blocks(T* fine, const Dims& d, T* packed, bool to_packed) {
    const int cx = d.x / 2;
    const int cy = d.y / 2;
    const int cz = d.z / 2;
    const std::size_t cn = static_cast<std::size_t>(cx) * cy * cz;
    const std::size_t n = d.n();
    for (int c = 0; c < d.c; ++c) {
        T* plane = fine + static_cast<std::size_t>(c) * n;
        for (int kz = 0; kz < 2; ++kz) {
            for (int ky = 0; ky < 2; ++ky) {
                for (int kx = 0; kx < 2; ++kx) {
                    T* row = packed + (static_cast<std::size_t>(c) * 8 + (kz * 2 + ky) * 2 + kx) * cn;
                    for (int z = 0; z < cz; ++z) {
                        for (int y = 0; y < cy; ++y) {
                            T* pr = row + (static_cast<std::size_t>(z) * cy + y) * cx;
                            T* fr = plane +
                                    (static_cast<std::size_t>(2 * z + kz) * d.y + (2 * y + ky)) * d.x + kx;
                            for (int x = 0; x < cx; ++x) {
                                if (to_packed) {
                                    if constexpr (Accumulate) pr[x] += fr[2 * x];
                                    else pr[x] = fr[2 * x];
                                } else {
                                    if constexpr (Accumulate) fr[2 * x] += pr[x];
                                    else fr[2 * x] = pr[x];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

template <class T>
bool any_grad(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c) {
    return a.requires_grad() || b.requires_grad() || c.requires_grad();
}

}  // namespace

template <class T>
Tensor<T> conv3d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    check_activation(x, "conv3d");
    require(w.defined() && w.shape().size() == 5, "conv3d: weight must be (Cout, Cin, k, k, k)");
    const Dims d = dims_of(x);
    const int cout = w.dim(0);
    const int k = w.dim(2);
    require(w.dim(1) == d.c, "conv3d: weight expects " + std::to_string(w.dim(1)) +
                                 " input channels, got " + std::to_string(d.c));
    require(k % 2 == 1 && w.dim(3) == k && w.dim(4) == k, "conv3d: kernel must be odd and cubic");
    require(b.defined() && b.numel() == static_cast<std::size_t>(cout), "conv3d: bias size");

    const auto n = static_cast<Eigen::Index>(d.n());
    const int taps = k * k * k;
    const Eigen::Index kdim = static_cast<Eigen::Index>(d.c) * taps;
    const Eigen::Index plane_xy = static_cast<Eigen::Index>(d.x) * d.y;
    const int tz = slab_depth(d);

    Tensor<T> out = tape.output({cout, d.x, d.y, d.z}, any_grad(x, w, b));
    const auto wm = as_mat(w.value(), cout, kdim);
    if (k == 1) {
        as_mat(out.value(), cout, n).noalias() = wm * as_mat(x.value(), d.c, n);
    } else {
        auto& cols = scratch<T>(static_cast<std::size_t>(kdim * plane_xy * tz));
        for (int z0 = 0; z0 < d.z; z0 += tz) {
            const int z1 = std::min(d.z, z0 + tz);
            const Eigen::Index ns = plane_xy * (z1 - z0);
            im2col_slab(x.value().data(), d, k, z0, z1, cols.data());
            StridedMat<T>(out.value().data() + z0 * plane_xy, cout, ns, Eigen::OuterStride<>(n))
                .noalias() = wm * ConstMapMat<T>(cols.data(), kdim, ns);
        }
    }
    {
        auto o = as_mat(out.value(), cout, n);
        auto bv = b.value();
        for (int c = 0; c < cout; ++c) o.row(c).array() += bv[static_cast<std::size_t>(c)];
    }

    if (out.requires_grad()) {
        tape.record([x, w, b, out, d, k, cout, taps, kdim, n, plane_xy, tz]() {
            if (!out.has_grad()) return;
            const T* gy = out.grad_if_any().data();
            const auto gym = ConstMapMat<T>(gy, cout, n);
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (int c = 0; c < cout; ++c) gb[static_cast<std::size_t>(c)] += gym.row(c).sum();
            }
            if (k == 1) {
                if (w.requires_grad()) {
                    as_mat(w.grad(), cout, kdim).noalias() += gym * as_mat(x.value(), d.c, n).transpose();
                }
                if (x.requires_grad()) {
                    as_mat(x.grad(), d.c, n).noalias() += as_mat(w.value(), cout, kdim).transpose() * gym;
                }
                return;
            }
            if (w.requires_grad()) {
                auto& cols = scratch<T>(static_cast<std::size_t>(kdim * plane_xy * tz));
                auto gw = as_mat(w.grad(), cout, kdim);
                for (int z0 = 0; z0 < d.z; z0 += tz) {
                    const int z1 = std::min(d.z, z0 + tz);
                    const Eigen::Index ns = plane_xy * (z1 - z0);
                    im2col_slab(x.value().data(), d, k, z0, z1, cols.data());
                    gw.noalias() += ConstStridedMat<T>(gy + z0 * plane_xy, cout, ns, Eigen::OuterStride<>(n)) *
                                    ConstMapMat<T>(cols.data(), kdim, ns).transpose();
                }
            }
            if (x.requires_grad()) {
                // Input gradient is a same-padded convolution of the output
                // gradient with the spatially flipped, channel-transposed kernel.
                const auto wv = w.value();
                const Eigen::Index fdim = static_cast<Eigen::Index>(cout) * taps;
                RowMat<T> wf(d.c, fdim);
                for (int co = 0; co < cout; ++co) {
                    for (int ci = 0; ci < d.c; ++ci) {
                        for (int t = 0; t < taps; ++t) {
                            wf(ci, static_cast<Eigen::Index>(co) * taps + (taps - 1 - t)) =
                                wv[(static_cast<std::size_t>(co) * d.c + ci) * taps + t];
                        }
                    }
                }
                const Dims gd{cout, d.x, d.y, d.z};
                auto& cols = scratch<T>(static_cast<std::size_t>(fdim * plane_xy * tz));
                T* gx = x.grad().data();
                for (int z0 = 0; z0 < d.z; z0 += tz) {
                    const int z1 = std::min(d.z, z0 + tz);
                    const Eigen::Index ns = plane_xy * (z1 - z0);
                    im2col_slab(gy, gd, k, z0, z1, cols.data());
                    StridedMat<T>(gx + z0 * plane_xy, d.c, ns, Eigen::OuterStride<>(n)).noalias() +=
                        wf * ConstMapMat<T>(cols.data(), fdim, ns);
                }
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> strided_conv3d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w,
                         const Tensor<T>& b) {
    check_activation(x, "strided_conv3d");
    const Dims d = dims_of(x);
    require(d.x % 2 == 0 && d.y % 2 == 0 && d.z % 2 == 0,
            "strided_conv3d: spatial dims must be even, got " + shape_string(x.shape()));
    require(w.defined() && w.shape() == Shape{w.dim(0), d.c, 2, 2, 2},
            "strided_conv3d: weight must be (Cout, " + std::to_string(d.c) + ", 2, 2, 2)");
    const int cout = w.dim(0);
    require(b.defined() && b.numel() == static_cast<std::size_t>(cout), "strided_conv3d: bias size");

    const Dims od{cout, d.x / 2, d.y / 2, d.z / 2};
    const auto cn = static_cast<Eigen::Index>(od.n());
    const Eigen::Index kdim = static_cast<Eigen::Index>(d.c) * 8;

    auto packed = std::make_shared<AlignedVector<T>>(static_cast<std::size_t>(kdim * cn));
    blocks<T, false>(const_cast<T*>(x.value().data()), d, packed->data(), true);

    Tensor<T> out = tape.output({cout, od.x, od.y, od.z}, any_grad(x, w, b));
    {
        auto o = as_mat(out.value(), cout, cn);
        o.noalias() = as_mat(w.value(), cout, kdim) * as_mat(std::span<const T>(*packed), kdim, cn);
        auto bv = b.value();
        for (int c = 0; c < cout; ++c) o.row(c).array() += bv[static_cast<std::size_t>(c)];
    }

    if (out.requires_grad()) {
        tape.record([x, w, b, out, packed, d, cout, kdim, cn]() {
            if (!out.has_grad()) return;
            const auto gy = as_mat(std::span<const T>(out.grad_if_any()), cout, cn);
            if (w.requires_grad()) {
                as_mat(w.grad(), cout, kdim).noalias() +=
                    gy * as_mat(std::span<const T>(*packed), kdim, cn).transpose();
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (int c = 0; c < cout; ++c) gb[static_cast<std::size_t>(c)] += gy.row(c).sum();
            }
            if (x.requires_grad()) {
                AlignedVector<T> gp(static_cast<std::size_t>(kdim * cn));
                as_mat(std::span<T>(gp), kdim, cn).noalias() =
                    as_mat(w.value(), cout, kdim).transpose() * gy;
                blocks<T, true>(x.grad().data(), d, gp.data(), false);
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> transposed_conv3d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w,
                            const Tensor<T>& b) {
    check_activation(x, "transposed_conv3d");
    const Dims d = dims_of(x);
    require(w.defined() && w.shape().size() == 5 && w.dim(0) == d.c && w.dim(2) == 2 &&
                w.dim(3) == 2 && w.dim(4) == 2,
            "transposed_conv3d: weight must be (" + std::to_string(d.c) + ", Cout, 2, 2, 2)");
    const int cout = w.dim(1);
    require(b.defined() && b.numel() == static_cast<std::size_t>(cout),
            "transposed_conv3d: bias size");

    const Dims od{cout, d.x * 2, d.y * 2, d.z * 2};
    const auto n = static_cast<Eigen::Index>(d.n());
    const Eigen::Index wcols = static_cast<Eigen::Index>(cout) * 8;

    Tensor<T> out = tape.output({cout, od.x, od.y, od.z}, any_grad(x, w, b));
    {
        AlignedVector<T> packed(static_cast<std::size_t>(wcols * n));
        as_mat(std::span<T>(packed), wcols, n).noalias() =
            as_mat(w.value(), d.c, wcols).transpose() * as_mat(x.value(), d.c, n);
        blocks<T, false>(out.value().data(), od, packed.data(), false);
        auto bv = b.value();
        const std::size_t on = od.n();
        for (int c = 0; c < cout; ++c) {
            auto plane = out.value().subspan(static_cast<std::size_t>(c) * on, on);
            for (auto& v : plane) v += bv[static_cast<std::size_t>(c)];
        }
    }

    if (out.requires_grad()) {
        tape.record([x, w, b, out, d, od, cout, wcols, n]() {
            if (!out.has_grad()) return;
            AlignedVector<T> gp(static_cast<std::size_t>(wcols * n));
            blocks<T, false>(const_cast<T*>(out.grad_if_any().data()), od, gp.data(), true);
            const auto gpm = as_mat(std::span<const T>(gp), wcols, n);
            if (w.requires_grad()) {
                as_mat(w.grad(), d.c, wcols).noalias() += as_mat(x.value(), d.c, n) * gpm.transpose();
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                auto gy = out.grad_if_any();
                const std::size_t on = od.n();
                for (int c = 0; c < cout; ++c) {
                    T s = T(0);
                    for (std::size_t i = 0; i < on; ++i) s += gy[static_cast<std::size_t>(c) * on + i];
                    gb[static_cast<std::size_t>(c)] += s;
                }
            }
            if (x.requires_grad()) {
                as_mat(x.grad(), d.c, n).noalias() += as_mat(w.value(), d.c, wcols) * gpm;
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> leaky_relu(Tape<T>& tape, const Tensor<T>& x, T slope) {
    Tensor<T> out = tape.output(x.shape(), x.requires_grad());
    auto xv = x.value();
    auto ov = out.value();
    for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] > T(0) ? xv[i] : slope * xv[i];
    if (tape.activation_signs != nullptr) {
        for (auto v : xv) tape.activation_signs->push_back(v > T(0) ? 1 : 0);
    }
    if (out.requires_grad()) {
        tape.record([x, out, slope]() {
            if (!out.has_grad()) return;
            auto xv = x.value();
            auto gy = out.grad_if_any();
            auto gx = x.grad();
            for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += xv[i] > T(0) ? gy[i] : slope * gy[i];
        });
    }
    return out;
}

template <class T>
Tensor<T> concat_channels(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    check_activation(a, "concat_channels");
    check_activation(b, "concat_channels");
    require(a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
            "concat_channels: spatial dims differ: " + shape_string(a.shape()) + " vs " +
                shape_string(b.shape()));
    Tensor<T> out = tape.output({a.dim(0) + b.dim(0), a.dim(1), a.dim(2), a.dim(3)},
                                a.requires_grad() || b.requires_grad());
    auto ov = out.value();
    std::copy(a.value().begin(), a.value().end(), ov.begin());
    std::copy(b.value().begin(), b.value().end(), ov.begin() + static_cast<std::ptrdiff_t>(a.numel()));
    if (out.requires_grad()) {
        tape.record([a, b, out]() {
            if (!out.has_grad()) return;
            auto gy = out.grad_if_any();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                const std::size_t off = a.numel();
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[off + i];
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> softmax_channels(Tape<T>& tape, const Tensor<T>& x) {
    require(x.defined() && !x.shape().empty(), "softmax_channels: empty tensor");
    const int c = x.dim(0);
    const std::size_t n = x.spatial();
    Tensor<T> out = tape.output(x.shape(), x.requires_grad());
    auto xv = x.value();
    auto ov = out.value();
    for (std::size_t i = 0; i < n; ++i) {
        T m = xv[i];
        for (int k = 1; k < c; ++k) m = std::max(m, xv[static_cast<std::size_t>(k) * n + i]);
        T s = T(0);
        for (int k = 0; k < c; ++k) {
            const std::size_t j = static_cast<std::size_t>(k) * n + i;
            ov[j] = std::exp(xv[j] - m);
            s += ov[j];
        }
        const T inv = T(1) / s;
        for (int k = 0; k < c; ++k) ov[static_cast<std::size_t>(k) * n + i] *= inv;
    }
    if (out.requires_grad()) {
        tape.record([x, out, c, n]() {
            if (!out.has_grad()) return;
            auto y = out.value();
            auto gy = out.grad_if_any();
            auto gx = x.grad();
            for (std::size_t i = 0; i < n; ++i) {
                T dot = T(0);
                for (int k = 0; k < c; ++k) {
                    const std::size_t j = static_cast<std::size_t>(k) * n + i;
                    dot += y[j] * gy[j];
                }
                for (int k = 0; k < c; ++k) {
                    const std::size_t j = static_cast<std::size_t>(k) * n + i;
                    gx[j] += y[j] * (gy[j] - dot);
                }
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> sum_all(Tape<T>& tape, const Tensor<T>& x) {
    Tensor<T> out = tape.output({1}, x.requires_grad());
    T s = T(0);
    for (auto v : x.value()) s += v;
    out.value()[0] = s;
    if (out.requires_grad()) {
        tape.record([x, out]() {
            if (!out.has_grad()) return;
            const T g = out.grad_if_any()[0];
            for (auto& v : x.grad()) v += g;
        });
    }
    return out;
}

template <class T>
Tensor<T> weighted_sum(Tape<T>& tape, const Tensor<T>& x, std::span<const T> weights) {
    require(weights.size() == x.numel(), "weighted_sum: weight count mismatch");
    Tensor<T> out = tape.output({1}, x.requires_grad());
    T s = T(0);
    auto xv = x.value();
    for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * weights[i];
    out.value()[0] = s;
    if (out.requires_grad()) {
        std::vector<T> wcopy(weights.begin(), weights.end());
        tape.record([x, out, wcopy = std::move(wcopy)]() {
            if (!out.has_grad()) return;
            const T g = out.grad_if_any()[0];
            auto gx = x.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * wcopy[i];
        });
    }
    return out;
}

#define MTSEG_INSTANTIATE_OPS(T)                                                          \
    template Tensor<T> conv3d(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
    template Tensor<T> strided_conv3d(Tape<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                      const Tensor<T>&);                                   \
    template Tensor<T> transposed_conv3d(Tape<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                         const Tensor<T>&);                                \
    template Tensor<T> leaky_relu(Tape<T>&, const Tensor<T>&, T);                          \
    template Tensor<T> concat_channels(Tape<T>&, const Tensor<T>&, const Tensor<T>&);      \
    template Tensor<T> softmax_channels(Tape<T>&, const Tensor<T>&);                       \
    template Tensor<T> sum_all(Tape<T>&, const Tensor<T>&);                                \
    template Tensor<T> weighted_sum(Tape<T>&, const Tensor<T>&, std::span<const T>);

MTSEG_INSTANTIATE_OPS(float)
MTSEG_INSTANTIATE_OPS(double)

#undef MTSEG_INSTANTIATE_OPS

}  // namespace mtseg::nn
