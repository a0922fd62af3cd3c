#include "mtseg/config.hpp"

#include <fmt/format.h>

#include <optional>
#include <set>

#include "mtseg/text.hpp"

namespace mtseg {

namespace {

Index3 to_index3(const std::vector<double>& v) {
    return {static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2])};
}

Index3 read_dims(SectionReader& r, const Section* sec, const std::string& src, std::string_view key,
                 Index3 fallback) {
    if (auto v = r.get_doubles(key, 3)) {
        for (double d : *v) {
            if (d != static_cast<double>(static_cast<int>(d))) {
                throw ParseError(src, sec->find(key)->line, std::string(key) + " must be integers");
            }
        }
        return to_index3(*v);
    }
    return fallback;
}

std::vector<nn::Head> parse_heads(const std::string& text) {
    std::vector<nn::Head> heads;
    for (const std::string& part : split(text, ',')) {
        const std::string name(trim(part));
        if (name.empty()) continue;
        heads.push_back(nn::parse_head(name));
    }
    return heads;
}

std::string heads_text(const std::vector<nn::Head>& heads) {
    std::string out;
    for (std::size_t i = 0; i < heads.size(); ++i) {
        if (i) out += ",";
        out += nn::head_name(heads[i]);
    }
    return out;
}

/// Runs `fn`, turning a bad value into a ParseError at the line of `key`.
template <class Fn>
auto at_key(const Section* sec, const std::string& source, std::string_view key, Fn&& fn) {
    try {
        return fn();
    } catch (const ParseError&) {
        throw;
    } catch (const std::exception& e) {
        const KeyValue* kv = sec ? sec->find(key) : nullptr;
        throw ParseError(source, kv ? kv->line : (sec ? sec->line : 0), e.what());
    }
}

/// Invariant violations keep their type but gain the source name.
template <class Fn>
void checked(const std::string& source, Fn&& fn) {
    try {
        fn();
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(source + ": " + e.what());
    }
}

void read_phantom(const Section* sec, const std::string& src, ExperimentConfig& c) {
    SectionReader r(sec, src);
    PhantomSpec& p = c.phantom;
    p.dims = read_dims(r, sec, src, "dims", p.dims);
    if (auto v = r.get_doubles("spacing", 3)) p.spacing = {(*v)[0], (*v)[1], (*v)[2]};
    if (auto v = r.get_int("seed")) p.seed = static_cast<std::uint64_t>(*v);
    if (auto v = r.get_double("fissure_waviness")) p.fissure_waviness = *v;
    if (auto v = r.get_int("vessel_count")) p.vessel_count = static_cast<int>(*v);
    if (auto v = r.get_double("noise_sigma")) p.noise_sigma = *v;
    if (auto v = r.get_double("lobe_contrast")) p.lobe_contrast = *v;
    if (auto v = r.get_int("n_lobe")) c.counts.lobe = static_cast<int>(*v);
    if (auto v = r.get_int("n_vessel")) c.counts.vessel = static_cast<int>(*v);
    if (auto v = r.get_int("n_unlabeled")) c.counts.unlabeled = static_cast<int>(*v);
    r.reject_unknown();
    checked(src, [&] {
        p.validate();
        if (c.counts.lobe < 0 || c.counts.vessel < 0 || c.counts.unlabeled < 0) {
            throw std::invalid_argument("dataset counts must be >= 0");
        }
    });
}

void read_patch(const Section* sec, const std::string& src, ExperimentConfig& c) {
    SectionReader r(sec, src);
    PatchSpec& p = c.patch;
    p.patch_dims = read_dims(r, sec, src, "patch_dims", p.patch_dims);
    if (auto v = r.get_int("downsample_factor")) p.downsample_factor = static_cast<int>(*v);
    if (auto v = r.get_bool("augment")) p.augment.enabled = *v;
    if (auto v = r.get_double("shift_frac")) p.augment.shift_frac = *v;
    if (auto v = r.get_double("rot_max_deg")) p.augment.rot_max_deg = *v;
    if (auto v = r.get_double("shear_frac")) p.augment.shear_frac = *v;
    if (auto v = r.get_double("scale_frac")) p.augment.scale_frac = *v;
    if (auto v = r.get_string("pad_value_image")) {
        p.pad_value_image = at_key(sec, src, "pad_value_image", [&]() -> std::optional<float> {
            if (*v == "min") return std::nullopt;
            if (auto d = parse_double(*v)) return static_cast<float>(*d);
            throw std::invalid_argument("pad_value_image must be a number or 'min'");
        });
    }
    if (auto v = r.get_int("pad_value_label")) {
        p.pad_value_label = at_key(sec, src, "pad_value_label", [&] {
            if (*v < 0 || *v > 255) throw std::invalid_argument("pad_value_label must fit in uint8");
            return static_cast<std::uint8_t>(*v);
        });
    }
    r.reject_unknown();
    checked(src, [&] { p.validate(); });
}

void read_net(const Section* sec, const std::string& src, ExperimentConfig& c) {
    SectionReader r(sec, src);
    nn::NetConfig& n = c.net;
    if (auto v = r.get_int("base_channels")) n.base_channels = static_cast<int>(*v);
    if (auto v = r.get_int("depth")) n.depth = static_cast<int>(*v);
    if (auto v = r.get_int("input_channels")) n.input_channels = static_cast<int>(*v);
    if (auto v = r.get_string("activation"); v && *v != "leaky_relu") {
        at_key(sec, src, "activation", [] { throw std::invalid_argument("activation must be leaky_relu"); });
    }
    if (auto v = r.get_double("leaky_slope")) n.leaky_slope = *v;
    r.reject_unknown();
    checked(src, [&] { n.validate(); });
}

void read_train(const Section* sec, const std::string& src, ExperimentConfig& c) {
    SectionReader r(sec, src);
    train::TrainConfig& t = c.train;
    if (auto v = r.get_string("strategy")) {
        t.strategy = at_key(sec, src, "strategy", [&] { return train::parse_strategy(*v); });
    }
    if (auto v = r.get_string("heads")) t.heads = at_key(sec, src, "heads", [&] { return parse_heads(*v); });
    if (auto v = r.get_double("lr_lobe")) t.lr_lobe = *v;
    if (auto v = r.get_double("lr_aux_init")) t.lr_aux_init = *v;
    if (auto v = r.get_double("lambda")) t.lambda = *v;
    if (auto v = r.get_bool("clamp_aux")) t.clamp_aux = *v;
    if (auto v = r.get_bool("adaptive_lr")) t.adaptive_lr = *v;
    if (auto v = r.get_int("main_step_budget")) t.main_step_budget = *v;
    if (auto v = r.get_double("adam_beta1")) t.adam.beta1 = *v;
    if (auto v = r.get_double("adam_beta2")) t.adam.beta2 = *v;
    if (auto v = r.get_double("adam_eps")) t.adam.eps = *v;
    if (auto v = r.get_int("seed")) t.seed = static_cast<std::uint64_t>(*v);
    if (auto v = r.get_int("checkpoint_interval")) t.checkpoint_interval = *v;
    r.reject_unknown();
    checked(src, [&] { t.validate(); });
}

void read_eval(const Section* sec, const std::string& src, ExperimentConfig& c) {
    SectionReader r(sec, src);
    if (auto v = r.get_bool("slice_restricted")) c.eval.slice_restricted = *v;
    if (auto v = r.get_string("out_dir")) c.eval.out_dir = *v;
    r.reject_unknown();
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(std::string_view text, const std::string& source) {
    const KeyValueDocument doc = KeyValueDocument::parse(text, source);
    ExperimentConfig c;
    std::set<std::string> seen;
    for (const Section& sec : doc.sections) {
        if (sec.name.empty()) {
            if (!sec.entries.empty()) {
                throw ParseError(source, sec.entries.front().line, "key outside of any section");
            }
            continue;
        }
        if (!seen.insert(sec.name).second) throw ParseError(source, sec.line, "section [" + sec.name + "] repeated");
        if (sec.name == "phantom") {
            read_phantom(&sec, source, c);
        } else if (sec.name == "patch") {
            read_patch(&sec, source, c);
        } else if (sec.name == "net") {
            read_net(&sec, source, c);
        } else if (sec.name == "train") {
            read_train(&sec, source, c);
        } else if (sec.name == "eval") {
            read_eval(&sec, source, c);
        } else {
            throw ParseError(source, sec.line, "unknown section [" + sec.name + "]");
        }
    }
    checked(source, [&] { c.validate(); });
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    return parse(read_text_file(path), path.string());
}

void ExperimentConfig::validate() const {
    phantom.validate();
    patch.validate();
    net.validate();
    train.validate();
    const int mult = net.spatial_multiple();
    for (int a = 0; a < 3; ++a) {
        if (patch.patch_dims[static_cast<std::size_t>(a)] % mult != 0) {
            throw std::invalid_argument(fmt::format("patch_dims must be divisible by {} for net depth {}", mult, net.depth));
        }
    }
}

std::string ExperimentConfig::to_text() const {
    auto d3 = [](const auto& v) { return fmt::format("{} {} {}", v[0], v[1], v[2]); };
    auto g3 = [](const Vec3& v) {
        return format_double(v[0]) + " " + format_double(v[1]) + " " + format_double(v[2]);
    };
    std::string s;
    s += "# Synthetic phantoms: grid, generator parameters, and case counts per role.\n";
    s += "[phantom]\n";
    s += "dims = " + d3(phantom.dims) + "              # voxels (x y z), each >= 16\n";
    s += "spacing = " + g3(phantom.spacing) + "       # mm per voxel\n";
    s += fmt::format("seed = {}                      # case i uses seed + i\n", phantom.seed);
    s += "fissure_waviness = " + format_double(phantom.fissure_waviness) + "       # fissure amplitude, voxels\n";
    s += fmt::format("vessel_count = {}              # vessel trees per case\n", phantom.vessel_count);
    s += "noise_sigma = " + format_double(phantom.noise_sigma) + "           # Gaussian noise, intensity units\n";
    s += "lobe_contrast = " + format_double(phantom.lobe_contrast) + "         # density step between lobes\n";
    s += fmt::format("n_lobe = {}                    # lobe-labelled cases\n", counts.lobe);
    s += fmt::format("n_vessel = {}                  # vessel-labelled cases\n", counts.vessel);
    s += fmt::format("n_unlabeled = {}               # image-only cases\n", counts.unlabeled);
    s += "\n# Dual-scale patches and augmentation.\n";
    s += "[patch]\n";
    s += "patch_dims = " + d3(patch.patch_dims) + "        # even, >= 8, divisible by 2^(depth-1)\n";
    s += fmt::format("downsample_factor = {}         # lo patch covers factor x the field of view\n",
                     patch.downsample_factor);
    s += fmt::format("augment = {}\n", patch.augment.enabled ? "true" : "false");
    s += "shift_frac = " + format_double(patch.augment.shift_frac) + "           # of dims, per axis\n";
    s += "rot_max_deg = " + format_double(patch.augment.rot_max_deg) + "            # about each axis\n";
    s += "shear_frac = " + format_double(patch.augment.shear_frac) + "\n";
    s += "scale_frac = " + format_double(patch.augment.scale_frac) + "           # isotropic\n";
    s += "pad_value_image = " +
         (patch.pad_value_image ? format_double(*patch.pad_value_image) : std::string("min")) +
         "       # number, or min = image minimum\n";
    s += fmt::format("pad_value_label = {}\n", patch.pad_value_label);
    s += "\n# Shared-encoder network.\n";
    s += "[net]\n";
    s += fmt::format("base_channels = {}\n", net.base_channels);
    s += fmt::format("depth = {}                     # resolution levels\n", net.depth);
    s += fmt::format("input_channels = {}            # 2 = hi + lo patch, 1 = hi only\n", net.input_channels);
    s += "activation = leaky_relu\n";
    s += "leaky_slope = " + format_double(net.leaky_slope) + "\n";
    s += "\n# Optimisation. heads always include lobe; strategy is st, eat or fat.\n";
    s += "[train]\n";
    s += fmt::format("strategy = {}\n", train::strategy_name(train.strategy));
    s += "heads = " + heads_text(train.heads) + "\n";
    s += "lr_lobe = " + format_double(train.lr_lobe) + "\n";
    s += "lr_aux_init = " + format_double(train.lr_aux_init) + "         # aux lr before any loss is seen\n";
    s += "lambda = " + format_double(train.lambda) + "                # aux lr = lambda lr_lobe loss_lobe / loss_aux\n";
    s += fmt::format("clamp_aux = {}              # cap aux lr at lr_lobe\n", train.clamp_aux ? "true" : "false");
    s += fmt::format("adaptive_lr = {}            # false: aux heads keep lr_aux_init\n",
                     train.adaptive_lr ? "true" : "false");
    s += fmt::format("main_step_budget = {}        # lobe updates before stopping\n", train.main_step_budget);
    s += "adam_beta1 = " + format_double(train.adam.beta1) + "\n";
    s += "adam_beta2 = " + format_double(train.adam.beta2) + "\n";
    s += "adam_eps = " + format_double(train.adam.eps) + "\n";
    s += fmt::format("seed = {}\n", train.seed);
    s += fmt::format("checkpoint_interval = {}       # iterations; 0 = final checkpoint only\n",
                     train.checkpoint_interval);
    s += "\n# Evaluation.\n";
    s += "[eval]\n";
    s += fmt::format("slice_restricted = {}       # add MSD on annotated coronal slices\n",
                     eval.slice_restricted ? "true" : "false");
    s += "out_dir = " + eval.out_dir.string() + "\n";
    return s;
}

}  // namespace mtseg
