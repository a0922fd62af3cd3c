#pragma once

#include <functional>
#include <vector>

#include "mtseg/network.hpp"

namespace mtseg {

/// Window start positions along one axis: 0, stride, 2*stride, ... plus a
/// final window flush with the end, so every index in [0, length) is covered.
std::vector<int> window_starts(int length, int window, int stride);

/// How many windows cover each index along one axis.
std::vector<int> coverage_counts(int length, int window, int stride);

/// Per-window class probabilities, (channels, px, py, pz) flattened x fastest.
using WindowPredictor = std::function<std::vector<float>(const PatchPair&)>;

struct InferenceResult {
    LabelMap labels;
    std::vector<float> probabilities;  // (channels, x, y, z), averaged
    int channels = 0;
};

/// Sliding-window inference with stride patch/2. Each window gets its own
/// dual-scale pair (lo patch padded with the image minimum); probabilities
/// are averaged over all windows covering a voxel, then arg-maxed (lowest
/// channel wins ties). Throws std::invalid_argument if the image is smaller
/// than the lo field of view.
InferenceResult sliding_window(const Image& image, const PatchSpec& patch, int channels,
                               const WindowPredictor& predict);

/// Predictor running the lobe (or vessel) head of `net`.
WindowPredictor network_predictor(const nn::NetGraph<float>& net, nn::Head head);

}  // namespace mtseg
