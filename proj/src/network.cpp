#include "mtseg/network.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "mtseg/ops.hpp"
#include "mtseg/rng.hpp"
#include "mtseg/text.hpp"

namespace mtseg::nn {

const char* head_name(Head h) {
    switch (h) {
        case Head::lobe: return "lobe";
        case Head::vessel: return "vessel";
        case Head::recon: return "recon";
    }
    return "?";
}

Head parse_head(const std::string& s) {
    if (s == "lobe") return Head::lobe;
    if (s == "vessel") return Head::vessel;
    if (s == "recon") return Head::recon;
    throw std::invalid_argument("unknown head '" + s + "'");
}

const char* owner_name(Owner o) {
    switch (o) {
        case Owner::encoder: return "encoder";
        case Owner::lobe_dec: return "lobe_dec";
        case Owner::vessel_dec: return "vessel_dec";
        case Owner::recon_dec: return "recon_dec";
    }
    return "?";
}

Owner parse_owner(const std::string& s) {
    if (s == "encoder") return Owner::encoder;
    if (s == "lobe_dec") return Owner::lobe_dec;
    if (s == "vessel_dec") return Owner::vessel_dec;
    if (s == "recon_dec") return Owner::recon_dec;
    throw std::invalid_argument("unknown parameter owner '" + s + "'");
}

Owner decoder_of(Head h) {
    switch (h) {
        case Head::lobe: return Owner::lobe_dec;
        case Head::vessel: return Owner::vessel_dec;
        case Head::recon: return Owner::recon_dec;
    }
    return Owner::lobe_dec;
}

void NetConfig::validate() const {
    if (lobe_out != 6 || vessel_out != 2 || recon_out != 1) {
        throw std::invalid_argument("head widths are fixed: lobe 6, vessel 2, recon 1");
    }
    if (base_channels < 1 || depth < 1 || depth > 6) {
        throw std::invalid_argument("base_channels must be >= 1 and depth in [1, 6]");
    }
    if (input_channels != 1 && input_channels != 2) {
        throw std::invalid_argument("input_channels must be 1 or 2");
    }
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) {
        throw std::invalid_argument("leaky_slope must be in [0, 1)");
    }
}

int NetConfig::out_channels(Head h) const {
    switch (h) {
        case Head::lobe: return lobe_out;
        case Head::vessel: return vessel_out;
        case Head::recon: return recon_out;
    }
    return 0;
}

template <class T>
Tensor<T> ParamStore<T>::add(std::string name, Owner owner, Shape shape) {
    if (find(name) != nullptr) {
        throw std::logic_error("duplicate parameter " + name);
    }
    Tensor<T> t = Tensor<T>::zeros(std::move(shape), true);
    params_.push_back(Param<T>{std::move(name), owner, t});
    return t;
}

template <class T>
const Param<T>* ParamStore<T>::find(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

template <class T>
Param<T>* ParamStore<T>::find(const std::string& name) {
    for (auto& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

template <class T>
std::size_t ParamStore<T>::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

template <class T>
void ParamStore<T>::clear_grads() {
    for (auto& p : params_) p.tensor.clear_grad();
}

template <class T>
typename NetGraph<T>::Conv NetGraph<T>::make_conv(const std::string& name, Owner owner,
                                                  Shape wshape, int cout, double fan_in,
                                                  double gain, Rng& rng) {
    Conv c{params_.add(name + ".weight", owner, std::move(wshape)),
           params_.add(name + ".bias", owner, {cout})};
    const double stddev = gain * std::sqrt(1.0 / fan_in);
    for (auto& v : c.w.value()) v = static_cast<T>(stddev * rng.normal());
    return c;
}

template <class T>
NetGraph<T>::NetGraph(const NetConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    const int levels = config_.depth;
    const double relu_gain = std::sqrt(2.0 / (1.0 + config_.leaky_slope * config_.leaky_slope));

    for (int l = 0; l < levels; ++l) {
        const int cin = l == 0 ? config_.input_channels : config_.channels(l);
        const int c = config_.channels(l);
        enc_block_.push_back(make_conv("encoder.block" + std::to_string(l), Owner::encoder,
                                       {c, cin, 3, 3, 3}, c, cin * 27.0, relu_gain, rng));
        if (l + 1 < levels) {
            const int cn = config_.channels(l + 1);
            enc_down_.push_back(make_conv("encoder.down" + std::to_string(l), Owner::encoder,
                                          {cn, c, 2, 2, 2}, cn, c * 8.0, relu_gain, rng));
        }
    }

    for (Head h : kAllHeads) {
        Decoder d;
        d.head = h;
        d.skips = h != Head::recon;
        const std::string prefix = owner_name(decoder_of(h));
        const Owner owner = decoder_of(h);
        d.up.resize(static_cast<std::size_t>(std::max(0, levels - 1)));
        d.block.resize(d.up.size());
        for (int l = levels - 2; l >= 0; --l) {
            const int c = config_.channels(l);
            const int cup = config_.channels(l + 1);
            d.up[static_cast<std::size_t>(l)] =
                make_conv(prefix + ".up" + std::to_string(l), owner, {cup, c, 2, 2, 2}, c,
                          static_cast<double>(cup), relu_gain, rng);
            const int cin = d.skips ? 2 * c : c;
            d.block[static_cast<std::size_t>(l)] =
                make_conv(prefix + ".block" + std::to_string(l), owner, {c, cin, 3, 3, 3}, c,
                          cin * 27.0, relu_gain, rng);
        }
        const int cout = config_.out_channels(h);
        const int c0 = config_.channels(0);
        d.final = make_conv(prefix + ".final", owner, {cout, c0, 1, 1, 1}, cout,
                            static_cast<double>(c0), 1.0, rng);
        decoders_.push_back(std::move(d));
    }
}

template <class T>
const typename NetGraph<T>::Decoder& NetGraph<T>::decoder(Head h) const {
    for (const auto& d : decoders_) {
        if (d.head == h) return d;
    }
    throw std::logic_error("missing decoder");
}

template <class T>
std::vector<SkipEdge> NetGraph<T>::skip_edges() const {
    std::vector<SkipEdge> out;
    for (const auto& d : decoders_) {
        if (!d.skips) continue;
        for (int l = config_.depth - 2; l >= 0; --l) out.push_back({l, d.head});
    }
    return out;
}

template <class T>
void NetGraph<T>::zero_final_layer(Head head) {
    const Decoder& d = decoder(head);
    auto w = d.final.w;
    auto b = d.final.b;
    for (auto& v : w.value()) v = T(0);
    for (auto& v : b.value()) v = T(0);
}

template <class T>
Tensor<T> NetGraph<T>::forward(Tape<T>& tape, const Tensor<T>& input, Head head,
                               const ForwardOptions& options, ForwardTrace* trace) const {
    if (!input.defined() || input.shape().size() != 4 || input.dim(0) != config_.input_channels) {
        throw std::invalid_argument("network input must be (" +
                                    std::to_string(config_.input_channels) + ", X, Y, Z), got " +
                                    (input.defined() ? shape_string(input.shape()) : "()"));
    }
    const int mult = config_.spatial_multiple();
    for (int a = 1; a <= 3; ++a) {
        if (input.dim(static_cast<std::size_t>(a)) % mult != 0) {
            throw std::invalid_argument("network input spatial dims must be multiples of " +
                                        std::to_string(mult));
        }
    }
    const T slope = static_cast<T>(config_.leaky_slope);
    auto note = [trace](const Conv& c) {
        if (trace != nullptr) {
            trace->params.push_back(c.w.identity());
            trace->params.push_back(c.b.identity());
        }
    };

    std::vector<Tensor<T>> feats;
    Tensor<T> h = input;
    for (int l = 0; l < config_.depth; ++l) {
        const Conv& blk = enc_block_[static_cast<std::size_t>(l)];
        note(blk);
        h = leaky_relu(tape, conv3d(tape, h, blk.w, blk.b), slope);
        feats.push_back(h);
        if (l + 1 < config_.depth) {
            const Conv& down = enc_down_[static_cast<std::size_t>(l)];
            note(down);
            h = leaky_relu(tape, strided_conv3d(tape, h, down.w, down.b), slope);
        }
    }

    const Decoder& dec = decoder(head);
    for (int l = config_.depth - 2; l >= 0; --l) {
        const Conv& up = dec.up[static_cast<std::size_t>(l)];
        note(up);
        h = leaky_relu(tape, transposed_conv3d(tape, h, up.w, up.b), slope);
        if (dec.skips) {
            Tensor<T> skip = feats[static_cast<std::size_t>(l)];
            if (options.ablate_skips) skip = Tensor<T>::zeros(skip.shape());
            if (trace != nullptr) trace->skips.push_back({l, head});
            h = concat_channels(tape, h, skip);
        }
        const Conv& blk = dec.block[static_cast<std::size_t>(l)];
        note(blk);
        h = leaky_relu(tape, conv3d(tape, h, blk.w, blk.b), slope);
    }
    note(dec.final);
    Tensor<T> out = conv3d(tape, h, dec.final.w, dec.final.b);
    if (head == Head::recon) return out;
    return softmax_channels(tape, out);
}

template <class T>
Tensor<T> image_tensor(const Image& image) {
    const auto [x, y, z] = image.dims();
    std::vector<T> v(image.data().begin(), image.data().end());
    return Tensor<T>::from({1, x, y, z}, std::move(v));
}

template <class T>
Tensor<T> make_input(const PatchPair& pair, int input_channels) {
    if (pair.hi.dims() != pair.lo.dims()) {
        throw std::invalid_argument("patch pair dims differ");
    }
    if (input_channels != 1 && input_channels != 2) {
        throw std::invalid_argument("input_channels must be 1 or 2");
    }
    const auto [x, y, z] = pair.hi.dims();
    const std::size_t n = pair.hi.size();
    std::vector<T> v(n * static_cast<std::size_t>(input_channels));
    std::copy(pair.hi.data().begin(), pair.hi.data().end(), v.begin());
    if (input_channels == 2) {
        std::copy(pair.lo.data().begin(), pair.lo.data().end(),
                  v.begin() + static_cast<std::ptrdiff_t>(n));
    }
    return Tensor<T>::from({input_channels, x, y, z}, std::move(v));
}

template class ParamStore<float>;
template class ParamStore<double>;
template class NetGraph<float>;
template class NetGraph<double>;
template Tensor<float> make_input<float>(const PatchPair&, int);
template Tensor<double> make_input<double>(const PatchPair&, int);
template Tensor<float> image_tensor<float>(const Image&);
template Tensor<double> image_tensor<double>(const Image&);

namespace {

std::string join_shape(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != 0) out += ' ';
        out += std::to_string(s[i]);
    }
    return out;
}

}  // namespace

void save_checkpoint(const NetGraph<float>& net, const PatchSpec& patch,
                     const std::filesystem::path& manifest) {
    auto blob = manifest;
    blob.replace_extension(".bin");
    const NetConfig& c = net.config();

    std::ostringstream m;
    m << "format = mtseg-checkpoint-1\n"
      << "blob = " << blob.filename().string() << "\n"
      << "base_channels = " << c.base_channels << "\n"
      << "depth = " << c.depth << "\n"
      << "input_channels = " << c.input_channels << "\n"
      << "activation = leaky_relu\n"
      << "leaky_slope = " << format_double(c.leaky_slope) << "\n"
      << "patch_dims = " << patch.patch_dims[0] << " " << patch.patch_dims[1] << " "
      << patch.patch_dims[2] << "\n"
      << "downsample_factor = " << patch.downsample_factor << "\n"
      << "tensor_count = " << net.params().entries().size() << "\n";

    std::ofstream out(blob, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + blob.string());
    std::size_t offset = 0;
    for (const auto& p : net.params().entries()) {
        m << "\n[tensor]\n"
          << "name = " << p.name << "\n"
          << "owner = " << owner_name(p.owner) << "\n"
          << "shape = " << join_shape(p.tensor.shape()) << "\n"
          << "offset = " << offset << "\n";
        auto v = p.tensor.value();
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(float)));
        offset += v.size() * sizeof(float);
    }
    if (!out) throw CheckpointError("write failed for " + blob.string());
    write_text_file(manifest, m.str());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& manifest) {
    KeyValueDocument doc;
    try {
        doc = KeyValueDocument::load(manifest);
    } catch (const std::runtime_error& e) {
        throw CheckpointError(e.what());
    }
    SectionReader top(doc.section(""), doc.source);
    if (top.get_string("format").value_or("") != "mtseg-checkpoint-1") {
        throw CheckpointError(manifest.string() + ": not an mtseg checkpoint");
    }
    Checkpoint meta;
    const auto blob = manifest.parent_path() / top.require_string("blob");
    meta.net.base_channels = static_cast<int>(top.get_int("base_channels").value_or(8));
    meta.net.depth = static_cast<int>(top.get_int("depth").value_or(3));
    meta.net.input_channels = static_cast<int>(top.get_int("input_channels").value_or(2));
    if (top.get_string("activation").value_or("leaky_relu") != "leaky_relu") {
        throw CheckpointError(manifest.string() + ": unsupported activation");
    }
    meta.net.leaky_slope = top.get_double("leaky_slope").value_or(0.01);
    auto pd = top.get_ints("patch_dims").value_or(std::vector<std::int64_t>{});
    if (pd.size() != 3) throw CheckpointError(manifest.string() + ": patch_dims needs 3 values");
    for (int a = 0; a < 3; ++a) meta.patch_dims[a] = static_cast<int>(pd[static_cast<std::size_t>(a)]);
    meta.downsample_factor = static_cast<int>(top.get_int("downsample_factor").value_or(2));
    const auto count = top.get_int("tensor_count");
    top.reject_unknown();

    NetGraph<float> net(meta.net, 0);
    auto tensors = doc.all("tensor");
    auto& entries = net.params().entries();
    if ((count && static_cast<std::size_t>(*count) != tensors.size()) ||
        tensors.size() != entries.size()) {
        throw CheckpointError(manifest.string() + ": tensor count does not match the network");
    }

    std::ifstream in(blob, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + blob.string());
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        SectionReader r(tensors[i], doc.source);
        auto& p = entries[i];
        const auto name = r.require_string("name");
        const auto owner = r.require_string("owner");
        const auto shape = r.get_ints("shape").value_or(std::vector<std::int64_t>{});
        const auto offset = r.get_int("offset");
        r.reject_unknown();
        Shape s(shape.begin(), shape.end());
        if (name != p.name || owner != owner_name(p.owner) || s != p.tensor.shape() || !offset) {
            throw CheckpointError(manifest.string() + ": tensor " + std::to_string(i) + " (" + name +
                                  ") does not match network layout");
        }
        auto v = p.tensor.value();
        in.seekg(static_cast<std::streamoff>(*offset));
        in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
        if (in.gcount() != static_cast<std::streamsize>(v.size() * sizeof(float))) {
            throw CheckpointError(blob.string() + ": truncated at tensor " + name);
        }
    }
    return LoadedCheckpoint{meta, std::move(net)};
}

}  // namespace mtseg::nn
