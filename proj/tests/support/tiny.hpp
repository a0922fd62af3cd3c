#pragma once

// Small phantoms and nets that keep training-loop tests fast.

#include "mtseg/network.hpp"
#include "mtseg/phantom.hpp"
#include "mtseg/trainer.hpp"

namespace mtseg::testing {

inline PhantomSpec tiny_phantom(std::uint64_t seed = 1) {
    PhantomSpec s;
    s.dims = {16, 16, 16};
    s.spacing = {4.0, 4.0, 4.0};
    s.seed = seed;
    s.vessel_count = 3;
    return s;
}

inline PatchSpec tiny_patch() {
    PatchSpec p;
    p.patch_dims = {8, 8, 8};
    p.downsample_factor = 2;
    return p;
}

inline nn::NetConfig tiny_net() {
    nn::NetConfig c;
    c.base_channels = 2;
    c.depth = 2;
    return c;
}

inline Manifest tiny_dataset(const std::filesystem::path& dir, int each = 1) {
    return generate_dataset(tiny_phantom(), each, each, each, dir);
}

}  // namespace mtseg::testing
