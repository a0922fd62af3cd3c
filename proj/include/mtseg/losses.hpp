#pragma once

#include <vector>

#include "mtseg/tensor.hpp"
#include "mtseg/volume.hpp"

namespace mtseg::losses {

using nn::Tape;
using nn::Tensor;

inline constexpr double kDiceEps = 1e-5;
inline constexpr double kVolumeEps = 1.0;

struct WeightedDiceReport {
    std::vector<double> per_class_dice;
    std::vector<double> per_class_volume;  // ground-truth voxels per class
    std::vector<double> weights;           // proportional to 1 / (V + 1), summing to 1
    double loss = 0.0;
};

/// One-hot encoding (m, x, y, z) of a label map under `scheme`; channel i
/// corresponds to scheme.labels[i].
template <class T>
Tensor<T> one_hot(const LabelMap& labels, const LabelScheme& scheme);

/// Soft Dice per class: (2 sum(p g) + eps) / (sum p + sum g + eps).
template <class T>
std::vector<double> soft_dice_per_class(const Tensor<T>& pred, const Tensor<T>& gt);

/// Inverse-volume weighted Dice loss, 1 - sum_i w_i Dice_i, differentiable
/// with respect to `pred`. Volumes come from the ground truth.
template <class T>
Tensor<T> weighted_dice_loss(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& gt,
                             WeightedDiceReport* report = nullptr);

/// Mean of squared differences; `target` is treated as a constant.
template <class T>
Tensor<T> mse_loss(Tape<T>& tape, const Tensor<T>& recon, const Tensor<T>& target);

}  // namespace mtseg::losses
