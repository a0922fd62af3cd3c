#include "mtseg/infer.hpp"

#include <stdexcept>
#include <string>

#include "mtseg/fpenv.hpp"

namespace mtseg {

std::vector<int> window_starts(int length, int window, int stride) {
    if (window < 1 || stride < 1) throw std::invalid_argument("window and stride must be positive");
    if (length < window) {
        throw std::invalid_argument("axis length " + std::to_string(length) + " is shorter than the window " +
                                    std::to_string(window));
    }
    std::vector<int> starts;
    for (int s = 0; s + window <= length; s += stride) starts.push_back(s);
    if (starts.back() + window < length) starts.push_back(length - window);
    return starts;
}

std::vector<int> coverage_counts(int length, int window, int stride) {
    std::vector<int> count(static_cast<std::size_t>(length), 0);
    for (int s : window_starts(length, window, stride)) {
        for (int i = s; i < s + window; ++i) ++count[static_cast<std::size_t>(i)];
    }
    return count;
}

InferenceResult sliding_window(const Image& image, const PatchSpec& patch, int channels,
                               const WindowPredictor& predict) {
    const FlushDenormals ftz;
    patch.validate();
    if (channels < 1) throw std::invalid_argument("sliding_window: channels must be positive");
    const Geometry& g = image.geometry();
    const Index3 fov = patch.lo_field_of_view();
    for (int a = 0; a < 3; ++a) {
        if (g.dims[a] < fov[a]) {
            throw std::invalid_argument("image dims " + std::to_string(g.dims[0]) + "x" + std::to_string(g.dims[1]) +
                                        "x" + std::to_string(g.dims[2]) +
                                        " are smaller than the downsampled field of view");
        }
    }
    PatchSpec spec = patch;
    if (!spec.pad_value_image) spec.pad_value_image = min_value(image);

    const Index3& p = spec.patch_dims;
    std::array<std::vector<int>, 3> starts;
    for (int a = 0; a < 3; ++a) starts[a] = window_starts(g.dims[a], p[a], p[a] / 2);

    const std::size_t n = g.voxel_count();
    std::vector<double> acc(n * static_cast<std::size_t>(channels), 0.0);
    std::vector<int> hits(n, 0);
    const std::size_t pn = static_cast<std::size_t>(p[0]) * p[1] * p[2];

    for (int sz : starts[2]) {
        for (int sy : starts[1]) {
            for (int sx : starts[0]) {
                const Index3 center{sx + p[0] / 2, sy + p[1] / 2, sz + p[2] / 2};
                const PatchPair pair = extract_pair(image, nullptr, spec, center);
                const std::vector<float> prob = predict(pair);
                if (prob.size() != pn * static_cast<std::size_t>(channels)) {
                    throw std::runtime_error("predictor returned " + std::to_string(prob.size()) +
                                             " values for a window of " + std::to_string(pn) + " voxels");
                }
                for (int z = 0; z < p[2]; ++z) {
                    for (int y = 0; y < p[1]; ++y) {
                        for (int x = 0; x < p[0]; ++x) {
                            const std::size_t pi = (static_cast<std::size_t>(z) * p[1] + y) * p[0] + x;
                            const std::size_t vi = g.offset(sx + x, sy + y, sz + z);
                            ++hits[vi];
                            for (int c = 0; c < channels; ++c) {
                                acc[static_cast<std::size_t>(c) * n + vi] += prob[static_cast<std::size_t>(c) * pn + pi];
                            }
                        }
                    }
                }
            }
        }
    }

    InferenceResult out{LabelMap(g), std::vector<float>(acc.size()), channels};
    auto& labels = out.labels.data();
    for (std::size_t v = 0; v < n; ++v) {
        const double inv = 1.0 / static_cast<double>(hits[v]);
        int best = 0;
        double best_p = -1.0;
        for (int c = 0; c < channels; ++c) {
            const double pc = acc[static_cast<std::size_t>(c) * n + v] * inv;
            out.probabilities[static_cast<std::size_t>(c) * n + v] = static_cast<float>(pc);
            if (pc > best_p) {
                best_p = pc;
                best = c;
            }
        }
        labels[v] = static_cast<std::uint8_t>(best);
    }
    return out;
}

WindowPredictor network_predictor(const nn::NetGraph<float>& net, nn::Head head) {
    if (head == nn::Head::recon) throw std::invalid_argument("inference needs a segmentation head");
    return [&net, head](const PatchPair& pair) {
        nn::Tape<float> tape;
        const auto out = net.forward(tape, nn::make_input<float>(pair, net.config().input_channels), head);
        const auto v = out.value();
        return std::vector<float>(v.begin(), v.end());
    };
}

}  // namespace mtseg
