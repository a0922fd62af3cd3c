#include "mtseg/losses.hpp"

#include <stdexcept>

namespace mtseg::losses {

namespace {

template <class T>
void check_pair(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (!a.defined() || !b.defined() || a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    (a.defined() ? nn::shape_string(a.shape()) : "()") + " vs " +
                                    (b.defined() ? nn::shape_string(b.shape()) : "()"));
    }
}

struct Sums {
    std::vector<double> inter, psum, gsum;
};

template <class T>
Sums class_sums(const Tensor<T>& pred, const Tensor<T>& gt) {
    const int m = pred.dim(0);
    const std::size_t n = pred.spatial();
    Sums s{std::vector<double>(static_cast<std::size_t>(m)), std::vector<double>(static_cast<std::size_t>(m)),
           std::vector<double>(static_cast<std::size_t>(m))};
    auto p = pred.value();
    auto g = gt.value();
    for (int c = 0; c < m; ++c) {
        double i_acc = 0.0;
        double p_acc = 0.0;
        double g_acc = 0.0;
        const std::size_t off = static_cast<std::size_t>(c) * n;
        for (std::size_t i = 0; i < n; ++i) {
            const double pv = p[off + i];
            const double gv = g[off + i];
            i_acc += pv * gv;
            p_acc += pv;
            g_acc += gv;
        }
        s.inter[static_cast<std::size_t>(c)] = i_acc;
        s.psum[static_cast<std::size_t>(c)] = p_acc;
        s.gsum[static_cast<std::size_t>(c)] = g_acc;
    }
    return s;
}

}  // namespace

template <class T>
Tensor<T> one_hot(const LabelMap& labels, const LabelScheme& scheme) {
    scheme.validate();
    const auto m = static_cast<int>(scheme.size());
    const std::size_t n = labels.size();
    const auto [x, y, z] = labels.dims();
    Tensor<T> out = Tensor<T>::zeros({m, x, y, z});
    std::array<int, 256> index{};
    index.fill(-1);
    for (int i = 0; i < m; ++i) {
        const int id = scheme.labels[static_cast<std::size_t>(i)].id;
        if (id >= 0 && id < 256) index[static_cast<std::size_t>(id)] = i;
    }
    auto v = out.value();
    for (std::size_t i = 0; i < n; ++i) {
        const int c = index[labels[i]];
        if (c < 0) {
            throw std::invalid_argument("label " + std::to_string(labels[i]) + " not in scheme '" +
                                        scheme.name + "'");
        }
        v[static_cast<std::size_t>(c) * n + i] = T(1);
    }
    return out;
}

template <class T>
std::vector<double> soft_dice_per_class(const Tensor<T>& pred, const Tensor<T>& gt) {
    check_pair(pred, gt, "soft_dice_per_class");
    const Sums s = class_sums(pred, gt);
    std::vector<double> dice(s.inter.size());
    for (std::size_t c = 0; c < dice.size(); ++c) {
        dice[c] = (2.0 * s.inter[c] + kDiceEps) / (s.psum[c] + s.gsum[c] + kDiceEps);
    }
    return dice;
}

template <class T>
Tensor<T> weighted_dice_loss(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& gt,
                             WeightedDiceReport* report) {
    check_pair(pred, gt, "weighted_dice_loss");
    const int m = pred.dim(0);
    const std::size_t n = pred.spatial();
    const Sums s = class_sums(pred, gt);

    std::vector<double> weights(static_cast<std::size_t>(m));
    double wsum = 0.0;
    for (std::size_t c = 0; c < weights.size(); ++c) {
        weights[c] = 1.0 / (s.gsum[c] + kVolumeEps);
        wsum += weights[c];
    }
    for (auto& w : weights) w /= wsum;

    std::vector<double> dice(weights.size());
    std::vector<double> denom(weights.size());
    double loss = 1.0;
    for (std::size_t c = 0; c < weights.size(); ++c) {
        denom[c] = s.psum[c] + s.gsum[c] + kDiceEps;
        dice[c] = (2.0 * s.inter[c] + kDiceEps) / denom[c];
        loss -= weights[c] * dice[c];
    }
    if (report != nullptr) {
        report->per_class_dice = dice;
        report->per_class_volume = s.gsum;
        report->weights = weights;
        report->loss = loss;
    }

    Tensor<T> out = tape.output({1}, pred.requires_grad());
    out.value()[0] = static_cast<T>(loss);
    if (out.requires_grad()) {
        tape.record([pred, gt, out, weights, dice, denom, s, m, n]() {
            if (!out.has_grad()) return;
            const double g = out.grad_if_any()[0];
            auto gv = gt.value();
            auto gp = pred.grad();
            for (int c = 0; c < m; ++c) {
                const auto ci = static_cast<std::size_t>(c);
                // d Dice_c / d p = (2 g_n - Dice_c) / denom_c
                const double scale = -g * weights[ci] / denom[ci];
                const std::size_t off = ci * n;
                for (std::size_t i = 0; i < n; ++i) {
                    gp[off + i] += static_cast<T>(scale * (2.0 * gv[off + i] - dice[ci]));
                }
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> mse_loss(Tape<T>& tape, const Tensor<T>& recon, const Tensor<T>& target) {
    check_pair(recon, target, "mse_loss");
    auto r = recon.value();
    auto t = target.value();
    double acc = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        const double d = static_cast<double>(r[i]) - static_cast<double>(t[i]);
        acc += d * d;
    }
    const double n = static_cast<double>(r.size());
    Tensor<T> out = tape.output({1}, recon.requires_grad());
    out.value()[0] = static_cast<T>(acc / n);
    if (out.requires_grad()) {
        tape.record([recon, target, out, n]() {
            if (!out.has_grad()) return;
            const double scale = 2.0 * out.grad_if_any()[0] / n;
            auto r = recon.value();
            auto t = target.value();
            auto g = recon.grad();
            for (std::size_t i = 0; i < r.size(); ++i) {
                g[i] += static_cast<T>(scale * (static_cast<double>(r[i]) - t[i]));
            }
        });
    }
    return out;
}

#define MTSEG_INSTANTIATE_LOSSES(T)                                                             \
    template Tensor<T> one_hot<T>(const LabelMap&, const LabelScheme&);                         \
    template std::vector<double> soft_dice_per_class(const Tensor<T>&, const Tensor<T>&);       \
    template Tensor<T> weighted_dice_loss(Tape<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                          WeightedDiceReport*);                                 \
    template Tensor<T> mse_loss(Tape<T>&, const Tensor<T>&, const Tensor<T>&);

MTSEG_INSTANTIATE_LOSSES(float)
MTSEG_INSTANTIATE_LOSSES(double)

#undef MTSEG_INSTANTIATE_LOSSES

}  // namespace mtseg::losses
