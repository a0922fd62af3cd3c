#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtseg/sampler.hpp"
#include "mtseg/tensor.hpp"

namespace mtseg::nn {

enum class Head { lobe, vessel, recon };
inline constexpr std::array<Head, 3> kAllHeads{Head::lobe, Head::vessel, Head::recon};

/// Parameter partition. Every head reads the encoder plus its own decoder.
enum class Owner { encoder, lobe_dec, vessel_dec, recon_dec };

const char* head_name(Head h);
Head parse_head(const std::string& s);
const char* owner_name(Owner o);
Owner parse_owner(const std::string& s);
Owner decoder_of(Head h);

enum class Activation { leaky_relu };

struct NetConfig {
    int base_channels = 8;
    int depth = 3;           // resolution levels
    int input_channels = 2;  // 2: hi + lo patch; 1: hi only
    int lobe_out = 6;
    int vessel_out = 2;
    int recon_out = 1;
    Activation activation = Activation::leaky_relu;
    double leaky_slope = 0.01;

    void validate() const;
    int out_channels(Head h) const;
    /// Channels at resolution level l.
    int channels(int level) const { return base_channels << level; }
    /// Spatial dims must be divisible by this.
    int spatial_multiple() const { return 1 << (depth - 1); }
};

template <class T>
struct Param {
    std::string name;
    Owner owner;
    Tensor<T> tensor;
};

/// Flat, ordered parameter storage. Order is construction order and is
/// the checkpoint order.
template <class T>
class ParamStore {
public:
    Tensor<T> add(std::string name, Owner owner, Shape shape);
    std::vector<Param<T>>& entries() { return params_; }
    const std::vector<Param<T>>& entries() const { return params_; }
    const Param<T>* find(const std::string& name) const;
    Param<T>* find(const std::string& name);
    std::size_t scalar_count() const;
    void clear_grads();

private:
    std::vector<Param<T>> params_;
};

/// An encoder feature map at `level` feeding a decoder of `head`.
struct SkipEdge {
    int level = 0;
    Head head = Head::lobe;
    bool operator==(const SkipEdge&) const = default;
};

struct ForwardOptions {
    /// Replace every skip tensor by zeros before it reaches a decoder.
    bool ablate_skips = false;
};

/// Filled by forward(): which skip edges and parameter tensors were read.
struct ForwardTrace {
    std::vector<SkipEdge> skips;
    std::vector<const void*> params;
};

/// Shared encoder with three decoders. Each level runs one 3^3 conv block;
/// levels are joined by 2x2x2 strided convs going down and transposed convs
/// going up. The lobe and vessel decoders concatenate the encoder feature of
/// the same level; the recon decoder reads only the bottleneck.
template <class T>
class NetGraph {
public:
    NetGraph(const NetConfig& config, std::uint64_t seed);

    const NetConfig& config() const { return config_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    /// Segmentation heads return per-voxel softmax probabilities; recon
    /// returns a linear single-channel map. Input is (input_channels, X, Y, Z).
    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& input, Head head,
                      const ForwardOptions& options = {}, ForwardTrace* trace = nullptr) const;

    /// Static description of the skip edges wired into each decoder.
    std::vector<SkipEdge> skip_edges() const;

    /// Zeros the final 1x1x1 layer of a head (weights and bias).
    void zero_final_layer(Head head);

private:
    struct Conv {
        Tensor<T> w;
        Tensor<T> b;
    };
    struct Decoder {
        Head head;
        bool skips;
        std::vector<Conv> up;     // index l: level l+1 -> l
        std::vector<Conv> block;  // index l: conv at level l
        Conv final;
    };

    Conv make_conv(const std::string& name, Owner owner, Shape wshape, int cout, double fan_in,
                   double gain, Rng& rng);
    const Decoder& decoder(Head h) const;

    NetConfig config_;
    ParamStore<T> params_;
    std::vector<Conv> enc_block_;  // per level
    std::vector<Conv> enc_down_;   // per level except the last
    std::vector<Decoder> decoders_;
};

/// Stacks pair.hi (and pair.lo when the net takes two channels) as input.
template <class T>
Tensor<T> make_input(const PatchPair& pair, int input_channels);

/// Image patch as a (1, X, Y, Z) tensor.
template <class T>
Tensor<T> image_tensor(const Image& image);

struct Checkpoint {
    NetConfig net;
    Index3 patch_dims{};
    int downsample_factor = 2;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Manifest (text: config + per-tensor name, owner, shape, byte offset) and
/// a little-endian float32 blob with the manifest's stem and `.bin`.
void save_checkpoint(const NetGraph<float>& net, const PatchSpec& patch,
                     const std::filesystem::path& manifest);

struct LoadedCheckpoint {
    Checkpoint meta;
    NetGraph<float> net;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& manifest);

}  // namespace mtseg::nn
