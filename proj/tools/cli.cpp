#include "cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/logger.h>
#include <spdlog/sinks/ostream_sink.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>

#include "mtseg/config.hpp"
#include "mtseg/infer.hpp"
#include "mtseg/metrics.hpp"
#include "mtseg/rng.hpp"
#include "mtseg/text.hpp"
#include "mtseg/trainer.hpp"

namespace fs = std::filesystem;

namespace mtseg::cli {

namespace {

/// Errors the user fixes by changing flags or the config file.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input files that are missing, malformed or inconsistent.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Context {
    std::ostream& out;
    spdlog::logger& log;
};

ExperimentConfig load_config(const std::string& path) {
    if (path.empty()) return ExperimentConfig{};
    try {
        return ExperimentConfig::load(path);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
}

fs::path manifest_file(const fs::path& p) {
    return fs::is_directory(p) ? p / kManifestName : p;
}

Manifest load_manifest(const fs::path& p) {
    const fs::path file = manifest_file(p);
    if (!fs::exists(file)) throw DataError("no manifest at " + file.string());
    try {
        return Manifest::load(file);
    } catch (const std::exception& e) {
        throw DataError(e.what());
    }
}

nn::Head parse_seg_head(const std::string& s) {
    const nn::Head h = nn::parse_head(s);
    if (h == nn::Head::recon) throw UsageError("recon is not a segmentation head");
    return h;
}

const LabelScheme& scheme_of(nn::Head h) {
    static const LabelScheme lobe = lobe_scheme();
    static const LabelScheme vessel = vessel_scheme();
    return h == nn::Head::lobe ? lobe : vessel;
}

// ---------------------------------------------------------------- gen-data

struct GenArgs {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> lobe, vessel, unlabeled;
};

int gen_data(const GenArgs& a, Context& ctx) {
    ExperimentConfig cfg = load_config(a.config);
    if (a.seed) cfg.phantom.seed = *a.seed;
    if (a.lobe) cfg.counts.lobe = *a.lobe;
    if (a.vessel) cfg.counts.vessel = *a.vessel;
    if (a.unlabeled) cfg.counts.unlabeled = *a.unlabeled;
    if (cfg.counts.lobe < 0 || cfg.counts.vessel < 0 || cfg.counts.unlabeled < 0) {
        throw UsageError("case counts must be >= 0");
    }
    if (cfg.counts.lobe + cfg.counts.vessel + cfg.counts.unlabeled == 0) {
        ctx.log.warn("all case counts are zero; writing an empty manifest");
    }
    generate_dataset(cfg.phantom, cfg.counts.lobe, cfg.counts.vessel, cfg.counts.unlabeled, a.out);
    ctx.out << (fs::path(a.out) / kManifestName).string() << "\n";
    return kOk;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
    std::string config;
    std::string data;
    std::string out;
    std::optional<std::string> strategy;
    std::optional<std::string> heads;
    std::optional<std::uint64_t> seed;
    std::optional<std::int64_t> budget;
    std::optional<double> lr;
    std::optional<std::int64_t> checkpoint_interval;
    bool no_adaptive = false;
    bool no_clamp = false;
    bool single_scale = false;
    bool quiet = false;
};

std::vector<nn::Head> parse_head_list(const std::string& text) {
    std::vector<nn::Head> heads;
    for (const std::string& part : split(text, ',')) {
        const std::string name(trim(part));
        if (!name.empty()) heads.push_back(nn::parse_head(name));
    }
    return heads;
}

/// Network initialisation seed derived from the run seed.
std::uint64_t net_seed(std::uint64_t seed) { return Rng(seed).derive(3).next_u64(); }

int train(const TrainArgs& a, Context& ctx) {
    ExperimentConfig cfg = load_config(a.config);
    train::TrainConfig& t = cfg.train;
    try {
        if (a.strategy) t.strategy = train::parse_strategy(*a.strategy);
        if (a.heads) t.heads = parse_head_list(*a.heads);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (a.seed) t.seed = *a.seed;
    if (a.budget) t.main_step_budget = *a.budget;
    if (a.lr) t.lr_lobe = *a.lr;
    if (a.checkpoint_interval) t.checkpoint_interval = *a.checkpoint_interval;
    if (a.no_adaptive) t.adaptive_lr = false;
    if (a.no_clamp) t.clamp_aux = false;
    if (a.single_scale) cfg.net.input_channels = 1;
    if (t.heads.size() == 1 && t.heads.front() == nn::Head::lobe && t.strategy != train::Strategy::single_task) {
        ctx.log.warn("strategy {} with only the lobe head is single-task training", train::strategy_name(t.strategy));
        t.strategy = train::Strategy::single_task;
    }
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    const Manifest manifest = load_manifest(a.data);
    fs::create_directories(a.out);
    write_text_file(fs::path(a.out) / "config.txt", cfg.to_text());

    nn::NetGraph<float> net(cfg.net, net_seed(t.seed));
    train::RunOptions opts;
    opts.out_dir = a.out;
    opts.patch = cfg.patch;
    const std::int64_t every = std::max<std::int64_t>(1, t.main_step_budget / 10);
    if (!a.quiet) {
        opts.on_step = [&](const train::LogRow& r) {
            if (r.head == nn::Head::lobe && r.head_step % every == 0) {
                ctx.log.info("lobe step {}/{}  loss {:.4f}", r.head_step, t.main_step_budget, r.loss);
            }
        };
    }
    const train::RunResult res = train::run_training(t, manifest, net, opts);
    ctx.out << fmt::format("strategy {} heads {} iterations {} lobe {} vessel {} recon {} lr_fallbacks {}\n",
                           train::strategy_name(t.strategy), a.heads.value_or("lobe,vessel,recon"),
                           res.state.iteration, res.state.step_counts[nn::Head::lobe], res.state.step_counts[nn::Head::vessel],
                           res.state.step_counts[nn::Head::recon], res.state.lr_fallbacks);
    ctx.out << res.checkpoint.string() << "\n" << res.log_file.string() << "\n";
    return kOk;
}

// ------------------------------------------------------------------- infer

struct InferArgs {
    std::string checkpoint;
    std::string image;
    std::string data;
    std::string out;
    std::string head = "lobe";
};

LabelMap predict_volume(const nn::LoadedCheckpoint& ck, const Image& image, nn::Head head) {
    PatchSpec patch;
    patch.patch_dims = ck.meta.patch_dims;
    patch.downsample_factor = ck.meta.downsample_factor;
    patch.augment.enabled = false;
    const Index3 fov = patch.lo_field_of_view();
    for (int a = 0; a < 3; ++a) {
        if (image.dims()[static_cast<std::size_t>(a)] < fov[static_cast<std::size_t>(a)]) {
            throw DataError(fmt::format("image {}x{}x{} is smaller than the lo field of view {}x{}x{}",
                                        image.dims()[0], image.dims()[1], image.dims()[2], fov[0], fov[1], fov[2]));
        }
    }
    return sliding_window(image, patch, ck.meta.net.out_channels(head), network_predictor(ck.net, head)).labels;
}

int infer(const InferArgs& a, Context& ctx) {
    if (a.image.empty() == a.data.empty()) throw UsageError("give exactly one of --image or --data");
    const nn::Head head = parse_seg_head(a.head);
    nn::LoadedCheckpoint ck = [&] {
        try {
            return nn::load_checkpoint(a.checkpoint);
        } catch (const std::exception& e) {
            throw DataError(e.what());
        }
    }();
    if (!a.image.empty()) {
        const LabelMap mask = predict_volume(ck, read_image(a.image), head);
        write_volume(mask, a.out);
        ctx.out << a.out << "\n";
        return kOk;
    }
    const Manifest manifest = load_manifest(a.data);
    fs::create_directories(a.out);
    for (const ManifestCase& c : manifest.cases) {
        const LabelMap mask = predict_volume(ck, read_image(manifest.resolve(c.image)), head);
        const fs::path dst = fs::path(a.out) / (c.id + ".mhd");
        write_volume(mask, dst);
        ctx.out << dst.string() << "\n";
    }
    return kOk;
}

// -------------------------------------------------------------------- eval

struct CaseSource {
    fs::path mask;
    std::optional<std::vector<int>> slices;
};

/// Cases keyed by id: from a dataset manifest (its masks for the head) or
/// from a flat directory of <id>.mhd label volumes.
std::map<std::string, CaseSource> collect_cases(const fs::path& dir, nn::Head head) {
    std::map<std::string, CaseSource> cases;
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    if (fs::exists(dir / kManifestName)) {
        const Manifest m = load_manifest(dir);
        for (const ManifestCase& c : m.cases) {
            const fs::path& mask = head == nn::Head::lobe ? c.lobe_mask : c.vessel_mask;
            if (mask.empty()) continue;
            cases[c.id] = {m.resolve(mask), c.fissure_slices};
        }
        return cases;
    }
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".mhd") cases[entry.path().stem().string()] = {entry.path(), std::nullopt};
    }
    return cases;
}

std::pair<double, double> mean_and_std(const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0};
}

std::string num(const std::optional<double>& v) { return v ? format_double(*v) : std::string("nan"); }

std::string join(const std::vector<std::string>& parts, const char* sep) {
    std::string s;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) s += sep;
        s += parts[i];
    }
    return s;
}

struct EvalArgs {
    std::string pred;
    std::string gt;
    std::string out;
    std::string summary;
    std::string head = "lobe";
    bool slices = false;
};

/// Metric columns of the per-case report after case_id and class.
std::vector<std::string> metric_columns(bool slices) {
    std::vector<std::string> cols{"dsc", "msd_mm", "hd95_mm"};
    if (slices) cols.push_back("slice_msd_mm");
    return cols;
}

int eval(const EvalArgs& a, Context& ctx) {
    const nn::Head head = parse_seg_head(a.head);
    const LabelScheme& scheme = scheme_of(head);
    const auto gt = collect_cases(a.gt, head);
    const auto pred = collect_cases(a.pred, head);

    std::vector<std::string> paired, unpaired;
    for (const auto& [id, src] : gt) (pred.count(id) ? paired : unpaired).push_back(id);
    for (const auto& [id, src] : pred) {
        if (!gt.count(id)) unpaired.push_back(id);
    }
    if (!unpaired.empty()) ctx.log.warn("skipping unpaired cases: {}", join(unpaired, ", "));
    if (paired.empty()) throw DataError("no case ids pair between " + a.pred + " and " + a.gt);

    const std::vector<std::string> cols = metric_columns(a.slices);
    std::vector<std::string> header{"case_id", "class"};
    header.insert(header.end(), cols.begin(), cols.end());
    header.push_back("flags");
    std::string csv = join(header, ",") + "\n";

    // class name -> column -> values over cases
    std::vector<std::string> class_order{"macro"};
    for (const LabelEntry& l : scheme.labels) {
        if (l.id != scheme.background_id) class_order.push_back(l.name);
    }
    std::map<std::string, std::vector<std::vector<double>>> values;
    for (const std::string& c : class_order) values[c].resize(cols.size());

    auto emit = [&](const std::string& id, const std::string& cls, std::vector<std::optional<double>> row,
                    const std::vector<std::string>& flags) {
        std::vector<std::string> cells{id, cls};
        for (std::size_t k = 0; k < row.size(); ++k) {
            cells.push_back(num(row[k]));
            if (row[k]) values[cls][k].push_back(*row[k]);
        }
        cells.push_back(join(flags, ";"));
        csv += join(cells, ",") + "\n";
    };

    for (const std::string& id : paired) {
        const CaseSource& g = gt.at(id);
        if (a.slices && !g.slices) throw DataError("--slices needs a ground-truth manifest with fissure slices");
        const LabelMap gmask = read_labels(g.mask);
        const LabelMap pmask = read_labels(pred.at(id).mask);
        if (!(gmask.geometry() == pmask.geometry())) throw DataError("case " + id + ": grids differ");
        try {
            check_labels(gmask, scheme);
            check_labels(pmask, scheme);
        } catch (const std::invalid_argument& e) {
            throw DataError("case " + id + ": " + e.what());
        }
        const metrics::CaseMetrics cm =
            metrics::evaluate_case(pmask, gmask, scheme, a.slices ? &*g.slices : nullptr);

        std::vector<std::optional<double>> macro{cm.macro_dsc, cm.macro_msd_mm, cm.macro_hd95_mm};
        if (a.slices) macro.push_back(cm.macro_slice_msd_mm);
        emit(id, "macro", macro, cm.macro_flags);
        for (const metrics::ClassMetrics& c : cm.per_class) {
            std::vector<std::optional<double>> row{c.dsc, c.msd_mm, c.hd95_mm};
            if (a.slices) row.push_back(c.slice_msd_mm);
            emit(id, c.name, row, c.flags);
        }
    }
    write_text_file(a.out, csv);

    // Aggregate: mean ± std (sample) over cases with a defined value.
    std::vector<std::string> sh{"class"};
    for (const std::string& c : cols) {
        sh.push_back(c);
        sh.push_back(c + "_mean");
        sh.push_back(c + "_std");
        sh.push_back(c + "_n");
    }
    std::string summary = join(sh, ",") + "\n";
    for (const std::string& cls : class_order) {
        std::vector<std::string> cells{cls};
        for (const std::vector<double>& v : values[cls]) {
            if (v.empty()) {
                cells.insert(cells.end(), {"nan", "nan", "nan", "0"});
                continue;
            }
            const auto [mean, sd] = mean_and_std(v);
            cells.push_back(mean_pm_std(v));
            cells.push_back(format_double(mean));
            cells.push_back(format_double(sd));
            cells.push_back(std::to_string(v.size()));
        }
        summary += join(cells, ",") + "\n";
    }
    const fs::path summary_path = a.summary.empty()
                                      ? fs::path(fs::path(a.out).replace_extension("").string() + "_summary.csv")
                                      : fs::path(a.summary);
    write_text_file(summary_path, summary);
    ctx.out << fmt::format("{} cases -> {}, {}\n", paired.size(), a.out, summary_path.string());
    return kOk;
}

// ----------------------------------------------------------------- compare

struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        const auto it = std::find(header.begin(), header.end(), name);
        return it == header.end() ? -1 : static_cast<int>(it - header.begin());
    }
};

Csv read_csv(const fs::path& path) {
    if (!fs::exists(path)) throw DataError("no such file: " + path.string());
    Csv csv;
    for (const std::string& line : split(read_text_file(path), '\n')) {
        if (trim(line).empty()) continue;
        std::vector<std::string> cells = split(line, ',');
        if (csv.header.empty()) {
            csv.header = std::move(cells);
        } else {
            if (cells.size() != csv.header.size()) throw DataError(path.string() + ": ragged row");
            csv.rows.push_back(std::move(cells));
        }
    }
    if (csv.header.empty()) throw DataError(path.string() + ": empty csv");
    return csv;
}

/// case_id -> value of `column` on rows of class `cls` (NaN when undefined).
std::map<std::string, double> metric_by_case(const Csv& csv, const std::string& cls, const std::string& column,
                                             const std::string& src) {
    const int c = csv.column(column);
    const int id = csv.column("case_id");
    const int k = csv.column("class");
    if (c < 0 || id < 0 || k < 0) throw DataError(src + ": not a per-case report with a '" + column + "' column");
    std::map<std::string, double> out;
    for (const auto& row : csv.rows) {
        if (row[static_cast<std::size_t>(k)] != cls) continue;
        const auto v = parse_double(row[static_cast<std::size_t>(c)]);
        out[row[static_cast<std::size_t>(id)]] = v ? *v : std::nan("");
    }
    return out;
}

struct CompareArgs {
    std::string a;
    std::string b;
    std::string metric = "msd";
    std::string cls = "macro";
    std::string out;
    double alpha = 0.05;
};

int compare(const CompareArgs& a, Context& ctx) {
    static const std::map<std::string, std::string> kColumn{
        {"dsc", "dsc"}, {"msd", "msd_mm"}, {"hd95", "hd95_mm"}, {"slice_msd", "slice_msd_mm"}};
    const auto col = kColumn.find(a.metric);
    if (col == kColumn.end()) throw UsageError("unknown metric '" + a.metric + "' (dsc, msd, hd95, slice_msd)");
    const auto va = metric_by_case(read_csv(a.a), a.cls, col->second, a.a);
    const auto vb = metric_by_case(read_csv(a.b), a.cls, col->second, a.b);
    std::vector<std::string> missing;
    for (const auto& [id, v] : va) {
        if (!vb.count(id)) missing.push_back(id);
    }
    for (const auto& [id, v] : vb) {
        if (!va.count(id)) missing.push_back(id);
    }
    if (!missing.empty()) throw DataError("case ids differ between the two reports: " + join(missing, ", "));
    if (va.empty()) throw DataError("no rows of class '" + a.cls + "' in " + a.a);

    std::vector<double> x, y;
    std::vector<std::string> skipped;
    for (const auto& [id, v] : va) {
        const double w = vb.at(id);
        if (!std::isfinite(v) || !std::isfinite(w)) {
            skipped.push_back(id);
            continue;
        }
        x.push_back(v);
        y.push_back(w);
    }
    if (!skipped.empty()) ctx.log.warn("{} undefined for cases {}; excluded", col->second, join(skipped, ", "));
    if (x.empty()) throw metrics::UndefinedMetricError("no case has a defined " + col->second + " in both reports");

    const metrics::WilcoxonResult r = metrics::wilcoxon_signed_rank(x, y);
    const bool significant = r.p < a.alpha;
    std::string report;
    report += fmt::format("metric = {}\nclass = {}\na = {}\nb = {}\n", a.metric, a.cls, a.a, a.b);
    report += fmt::format("pairs = {}\nnonzero = {}\n", x.size(), r.n);
    report += "mean_a = " + format_double(mean_and_std(x).first) + "\n";
    report += "mean_b = " + format_double(mean_and_std(y).first) + "\n";
    report += "w_plus = " + format_double(r.w_plus) + "\n";
    report += "w_minus = " + format_double(r.w_minus) + "\n";
    report += "W = " + format_double(r.w) + "\n";
    report += "p = " + format_double(r.p) + "\n";
    report += fmt::format("method = {}\n", r.all_zero ? "all-zero" : r.exact ? "exact" : "normal");
    report += "alpha = " + format_double(a.alpha) + "\n";
    report += fmt::format("verdict = {}\n", significant ? "significant" : "not significant");
    if (!a.out.empty()) write_text_file(a.out, report);
    ctx.out << report;
    return kOk;
}

// ------------------------------------------------------------------- table

struct TableArgs {
    std::vector<std::string> rows;  // NAME=SUMMARY.csv
    std::string out;
};

int table(const TableArgs& a, Context& ctx) {
    std::string text = fmt::format("{:<26} {:<16} {:<16} {:<16}\n", "Architecture", "DSC", "MSD (mm)", "HD95 (mm)");
    for (const std::string& spec : a.rows) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos) throw UsageError("--row expects NAME=SUMMARY.csv, got '" + spec + "'");
        const std::string file = spec.substr(eq + 1);
        const Csv csv = read_csv(file);
        const int cls = csv.column("class");
        if (cls < 0) throw DataError(file + ": not an eval summary");
        const auto macro = std::find_if(csv.rows.begin(), csv.rows.end(),
                                        [&](const auto& r) { return r[static_cast<std::size_t>(cls)] == "macro"; });
        if (macro == csv.rows.end()) throw DataError(file + ": no macro row");
        auto get = [&](const char* k) {
            const int c = csv.column(k);
            return c < 0 ? std::string("-") : (*macro)[static_cast<std::size_t>(c)];
        };
        text += fmt::format("{:<26} {:<16} {:<16} {:<16}\n", spec.substr(0, eq), get("dsc"), get("msd_mm"),
                            get("hd95_mm"));
    }
    if (!a.out.empty()) write_text_file(a.out, text);
    ctx.out << text;
    return kOk;
}

template <class Fn>
int guarded(Fn&& fn, spdlog::logger& log) {
    try {
        return fn();
    } catch (const UsageError& e) {
        log.error("{}", e.what());
        return kUsageError;
    } catch (const train::NumericalError& e) {
        log.error("{}", e.what());
        return kNumericError;
    } catch (const metrics::UndefinedMetricError& e) {
        log.error("{}", e.what());
        return kNumericError;
    } catch (const std::invalid_argument& e) {
        log.error("{}", e.what());
        return kUsageError;
    } catch (const std::exception& e) {
        // volume I/O, missing pools, checkpoints, filesystem
        log.error("{}", e.what());
        return kDataError;
    }
}

}  // namespace

std::string mean_pm_std(const std::vector<double>& values) {
    if (values.empty()) return "nan";
    const auto [mean, sd] = mean_and_std(values);
    return fmt::format("{:.3f} ± {:.3f}", mean, sd);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
    spdlog::logger log("mtseg", sink);
    log.set_pattern("%l: %v");
    Context ctx{out, log};

    CLI::App app{"Multi-task lobe segmentation: data, training, inference, evaluation", "mtseg"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen-data", "Generate a phantom dataset and its manifest");
    g->add_option("--config", gen.config, "Experiment config file");
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_option("--seed", gen.seed, "Base phantom seed (case i uses seed + i)");
    g->add_option("--lobe", gen.lobe, "Lobe-labelled cases");
    g->add_option("--vessel", gen.vessel, "Vessel-labelled cases");
    g->add_option("--unlabeled", gen.unlabeled, "Image-only cases");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train one ablation arm");
    t->add_option("--config", tr.config, "Experiment config file");
    t->add_option("--data", tr.data, "Dataset manifest or its directory")->required();
    t->add_option("--out", tr.out, "Output directory")->required();
    t->add_option("--strategy", tr.strategy, "st | eat | fat");
    t->add_option("--heads", tr.heads, "lobe[,vessel][,recon]");
    t->add_option("--seed", tr.seed, "Training seed (network init, sampling)");
    t->add_option("--budget", tr.budget, "Lobe update budget");
    t->add_option("--lr", tr.lr, "Lobe learning rate");
    t->add_option("--checkpoint-interval", tr.checkpoint_interval, "Iterations between checkpoints (0: final only)");
    t->add_flag("--no-adaptive-lr", tr.no_adaptive, "Keep auxiliary heads at lr_aux_init");
    t->add_flag("--no-clamp", tr.no_clamp, "Do not cap auxiliary lr at the lobe lr");
    t->add_flag("--single-scale", tr.single_scale, "Feed only the full-resolution patch");
    t->add_flag("--quiet", tr.quiet, "No progress messages");

    InferArgs inf;
    auto* i = app.add_subcommand("infer", "Sliding-window inference");
    i->add_option("--checkpoint", inf.checkpoint, "Checkpoint manifest")->required();
    i->add_option("--image", inf.image, "Input image (.mhd)");
    i->add_option("--data", inf.data, "Dataset manifest: predict every case");
    i->add_option("--out", inf.out, "Output mask (.mhd), or directory with --data")->required();
    i->add_option("--head", inf.head, "lobe | vessel");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Score predicted masks against ground truth");
    e->add_option("--pred", ev.pred, "Prediction directory (<id>.mhd or a dataset)")->required();
    e->add_option("--gt", ev.gt, "Ground-truth directory (a dataset or <id>.mhd)")->required();
    e->add_option("--out", ev.out, "Per-case CSV")->required();
    e->add_option("--summary", ev.summary, "Aggregate CSV (default: <out>_summary.csv)");
    e->add_option("--head", ev.head, "lobe | vessel");
    e->add_flag("--slices", ev.slices, "Add MSD restricted to the annotated coronal slices");

    CompareArgs cmp;
    auto* c = app.add_subcommand("compare", "Paired Wilcoxon signed-rank test between two eval CSVs");
    c->add_option("--a", cmp.a, "Per-case CSV of model A")->required();
    c->add_option("--b", cmp.b, "Per-case CSV of model B")->required();
    c->add_option("--metric", cmp.metric, "dsc | msd | hd95 | slice_msd");
    c->add_option("--class", cmp.cls, "macro or a class name (e.g. right_upper)");
    c->add_option("--alpha", cmp.alpha, "Significance level");
    c->add_option("--out", cmp.out, "Report file");

    TableArgs tab;
    auto* b = app.add_subcommand("table", "Comparison table from eval summaries");
    b->add_option("--row", tab.rows, "NAME=SUMMARY.csv, repeatable, in table order")->required();
    b->add_option("--out", tab.out, "Output text file");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& pe) {
        log.error("{}", pe.what());
        err << app.help();
        return kUsageError;
    }

    return guarded(
        [&] {
            if (*g) return gen_data(gen, ctx);
            if (*t) return train(tr, ctx);
            if (*i) return infer(inf, ctx);
            if (*e) return eval(ev, ctx);
            if (*c) return compare(cmp, ctx);
            return table(tab, ctx);
        },
        log);
}

}  // namespace mtseg::cli
