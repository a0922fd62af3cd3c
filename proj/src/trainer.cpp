#include "mtseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <sstream>
#include <stdexcept>

#include "mtseg/fpenv.hpp"
#include "mtseg/losses.hpp"
#include "mtseg/text.hpp"

namespace mtseg::train {

const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::single_task: return "st";
        case Strategy::eat: return "eat";
        case Strategy::fat: return "fat";
    }
    return "?";
}

Strategy parse_strategy(const std::string& s) {
    if (s == "st" || s == "single_task") return Strategy::single_task;
    if (s == "eat") return Strategy::eat;
    if (s == "fat") return Strategy::fat;
    throw std::invalid_argument("unknown strategy '" + s + "' (expected st, eat or fat)");
}

bool TrainConfig::has_head(Head h) const {
    return std::find(heads.begin(), heads.end(), h) != heads.end();
}

void TrainConfig::validate() const {
    if (heads.empty()) throw std::invalid_argument("no heads enabled");
    if (!has_head(Head::lobe)) throw std::invalid_argument("the lobe head must be enabled");
    for (std::size_t i = 0; i < heads.size(); ++i) {
        for (std::size_t j = i + 1; j < heads.size(); ++j) {
            if (heads[i] == heads[j]) {
                throw std::invalid_argument(std::string("head listed twice: ") + nn::head_name(heads[i]));
            }
        }
    }
    if (strategy == Strategy::single_task && heads.size() != 1) {
        throw std::invalid_argument("single-task training takes only the lobe head");
    }
    auto positive = [](double v, const char* what) {
        if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string(what) + " must be positive");
    };
    positive(lr_lobe, "lr_lobe");
    positive(lr_aux_init, "lr_aux_init");
    if (!(lambda > 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda must lie in (0, 1]");
    if (main_step_budget < 1) throw std::invalid_argument("main_step_budget must be at least 1");
    if (checkpoint_interval < 0) throw std::invalid_argument("checkpoint_interval must be >= 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
        throw std::invalid_argument("Adam betas must lie in [0, 1)");
    }
    positive(adam.eps, "Adam epsilon");
}

std::vector<Head> schedule(Strategy strategy, const std::vector<Head>& heads) {
    if (heads.empty()) throw std::invalid_argument("schedule: no heads enabled");
    if (std::find(heads.begin(), heads.end(), Head::lobe) == heads.end()) {
        throw std::invalid_argument("schedule: the lobe head must be enabled");
    }
    // Auxiliary order is fixed (vessel before recon) regardless of listing order.
    std::vector<Head> aux;
    for (Head h : {Head::vessel, Head::recon}) {
        if (std::find(heads.begin(), heads.end(), h) != heads.end()) aux.push_back(h);
    }
    if (strategy == Strategy::single_task) {
        if (!aux.empty()) throw std::invalid_argument("schedule: single-task takes only the lobe head");
        return {Head::lobe};
    }
    std::vector<Head> out{Head::lobe};
    if (strategy == Strategy::eat) {
        out.insert(out.end(), aux.begin(), aux.end());
        return out;
    }
    // FAT: the lobe head is revisited after each auxiliary update but the last
    // one when two aux heads are on ([lobe, vessel, lobe, recon]); with one
    // aux head it closes the iteration ([lobe, aux, lobe]).
    if (aux.size() == 1) return {Head::lobe, aux[0], Head::lobe};
    for (std::size_t i = 0; i < aux.size(); ++i) {
        out.push_back(aux[i]);
        if (i + 1 < aux.size()) out.push_back(Head::lobe);
    }
    return out;
}

AuxLr adaptive_lr(double lr_lobe, double lambda, double loss_lobe, double loss_aux,
                  bool clamp_aux, double previous) {
    if (!(loss_aux > 0.0) || !std::isfinite(loss_aux) || !std::isfinite(loss_lobe)) {
        return {previous, true};
    }
    double lr = lambda * lr_lobe * (loss_lobe / loss_aux);
    if (clamp_aux) lr = std::min(lr, lr_lobe);
    lr = std::max(lr, kMinLr);
    return {lr, false};
}

template <class T>
void Adam<T>::update(std::size_t slot, nn::Tensor<T>& param, double lr) {
    if (slot >= moments_.size()) moments_.resize(slot + 1);
    Moments& mo = moments_[slot];
    const std::size_t n = param.numel();
    if (mo.m.empty()) {
        mo.m.assign(n, 0.0);
        mo.v.assign(n, 0.0);
    } else if (mo.m.size() != n) {
        throw std::logic_error("Adam: parameter size changed between updates");
    }
    auto g = param.grad_if_any();
    if (g.empty()) return;
    ++mo.t;
    const double b1 = config_.beta1;
    const double b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(mo.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(mo.t));
    auto p = param.value();
    for (std::size_t i = 0; i < n; ++i) {
        const double gi = static_cast<double>(g[i]);
        mo.m[i] = b1 * mo.m[i] + (1.0 - b1) * gi;
        mo.v[i] = b2 * mo.v[i] + (1.0 - b2) * gi * gi;
        const double mhat = mo.m[i] / c1;
        const double vhat = mo.v[i] / c2;
        p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * mhat / (std::sqrt(vhat) + config_.eps));
    }
}

template <class T>
std::int64_t Adam<T>::steps(std::size_t slot) const {
    return slot < moments_.size() ? moments_[slot].t : 0;
}

template class Adam<float>;
template class Adam<double>;

std::string log_header() { return "iteration,head,head_step,loss,lr,wall_ms\n"; }

std::string format_log_row(const LogRow& r) {
    return fmt::format("{},{},{},{},{},{:.3f}\n", r.iteration, nn::head_name(r.head), r.head_step,
                       format_double(r.loss), format_double(r.lr), r.wall_ms);
}

std::vector<LogRow> parse_log(const std::string& csv) {
    std::vector<LogRow> rows;
    std::istringstream in(csv);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 || trim(line).empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 6) throw ParseError("training log", line_no, "expected 6 fields");
        LogRow r;
        const auto it = parse_int(f[0]);
        const auto hs = parse_int(f[2]);
        const auto lo = parse_double(f[3]);
        const auto lr = parse_double(f[4]);
        const auto ms = parse_double(f[5]);
        if (!it || !hs || !lo || !lr || !ms) throw ParseError("training log", line_no, "malformed number");
        r.iteration = *it;
        r.head = nn::parse_head(f[1]);
        r.head_step = *hs;
        r.loss = *lo;
        r.lr = *lr;
        r.wall_ms = *ms;
        rows.push_back(r);
    }
    return rows;
}

TrainState run_schedule(const TrainConfig& config,
                        const std::function<void(std::int64_t, Head)>& step,
                        const std::function<void(std::int64_t)>& iteration_done) {
    config.validate();
    const auto order = schedule(config.strategy, config.heads);
    TrainState st;
    while (st.step_counts[Head::lobe] < config.main_step_budget) {
        for (Head h : order) {
            if (h == Head::lobe && st.step_counts[Head::lobe] >= config.main_step_budget) continue;
            step(st.iteration, h);
            ++st.step_counts[h];
        }
        if (iteration_done) iteration_done(st.iteration);
        ++st.iteration;
    }
    return st;
}

Trainer::Trainer(TrainConfig config, nn::NetGraph<float>& net)
    : config_(std::move(config)), net_(net), adam_(config_.adam) {
    config_.validate();
    state_.aux_lr.fill(config_.lr_aux_init);
}

double Trainer::lr_for(Head head, double current_loss) {
    if (head == Head::lobe) return config_.lr_lobe;
    auto& slot = state_.aux_lr[static_cast<std::size_t>(head)];
    const auto& lobe_loss = state_.last_loss[static_cast<std::size_t>(Head::lobe)];
    if (!config_.adaptive_lr || state_.iteration == 0 || !lobe_loss) {
        slot = config_.lr_aux_init;
        return slot;
    }
    const AuxLr r = adaptive_lr(config_.lr_lobe, config_.lambda, *lobe_loss, current_loss,
                                config_.clamp_aux, slot);
    if (r.fallback) ++state_.lr_fallbacks;
    slot = r.lr;
    return slot;
}

LogRow Trainer::train_step(Head head, const PatchPair& batch) {
    return train_step(head, nn::make_input<float>(batch, net_.config().input_channels), batch);
}

LogRow Trainer::train_step(Head head, const nn::Tensor<float>& input, const PatchPair& batch) {
    if (!config_.has_head(head)) {
        throw std::invalid_argument(std::string("head not enabled: ") + nn::head_name(head));
    }
    const auto t0 = std::chrono::steady_clock::now();

    nn::Tape<float> tape;
    const nn::Tensor<float> out = net_.forward(tape, input, head);
    nn::Tensor<float> loss;
    if (head == Head::recon) {
        loss = losses::mse_loss(tape, out, nn::image_tensor<float>(batch.hi));
    } else {
        if (!batch.target) {
            throw std::invalid_argument(std::string(nn::head_name(head)) + " step needs a label target");
        }
        const LabelScheme scheme = head == Head::lobe ? lobe_scheme() : vessel_scheme();
        check_labels(*batch.target, scheme);
        loss = losses::weighted_dice_loss(tape, out, losses::one_hot<float>(*batch.target, scheme));
    }
    const double value = loss.item();
    if (!std::isfinite(value)) {
        throw NumericalError(std::string("non-finite ") + nn::head_name(head) + " loss");
    }
    tape.backward(loss);

    const double lr = lr_for(head, value);
    const nn::Owner dec = nn::decoder_of(head);
    auto& entries = net_.params().entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        auto& p = entries[i];
        if (p.owner != nn::Owner::encoder && p.owner != dec) continue;
        adam_.update(i, p.tensor, lr);
    }
    net_.params().clear_grads();

    ++state_.step_counts[head];
    state_.last_loss[static_cast<std::size_t>(head)] = value;

    LogRow row;
    row.iteration = state_.iteration;
    row.head = head;
    row.head_step = state_.step_counts[head];
    row.loss = value;
    row.lr = lr;
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return row;
}

namespace {

struct PoolCase {
    Image image;
    std::optional<LabelMap> labels;
};

std::vector<PoolCase> load_pool(const Manifest& manifest, Head head) {
    const CaseRole role =
        head == Head::lobe ? CaseRole::lobe : (head == Head::vessel ? CaseRole::vessel : CaseRole::unlabeled);
    std::vector<PoolCase> pool;
    for (const ManifestCase* c : manifest.pool(role)) {
        PoolCase pc{read_image(manifest.resolve(c->image)), std::nullopt};
        if (head != Head::recon) {
            const auto& mask = head == Head::lobe ? c->lobe_mask : c->vessel_mask;
            if (mask.empty()) throw MissingPoolError("case " + c->id + " has no " + nn::head_name(head) + " mask");
            pc.labels = read_labels(manifest.resolve(mask));
            if (!(pc.labels->geometry() == pc.image.geometry())) {
                throw MissingPoolError("case " + c->id + ": mask grid differs from image grid");
            }
        }
        pool.push_back(std::move(pc));
    }
    if (pool.empty()) {
        throw MissingPoolError(std::string("no ") + role_name(role) + " cases in the manifest for the " +
                               nn::head_name(head) + " head");
    }
    return pool;
}

}  // namespace

RunResult run_training(const TrainConfig& config, const Manifest& manifest, nn::NetGraph<float>& net,
                       const RunOptions& options) {
    const FlushDenormals ftz;
    config.validate();
    options.patch.validate();
    const int mult = net.config().spatial_multiple();
    for (int a = 0; a < 3; ++a) {
        if (options.patch.patch_dims[static_cast<std::size_t>(a)] % mult != 0) {
            throw std::invalid_argument(fmt::format("patch dims must be divisible by {} for depth {}", mult,
                                                    net.config().depth));
        }
    }

    std::array<std::vector<PoolCase>, 3> pools;
    std::array<std::size_t, 3> cursor{0, 0, 0};
    Rng root(config.seed);
    std::array<Rng, 3> streams{root.derive(0), root.derive(1), root.derive(2)};
    for (Head h : config.heads) pools[static_cast<std::size_t>(h)] = load_pool(manifest, h);

    std::filesystem::create_directories(options.out_dir);
    Trainer trainer(config, net);
    RunResult result;

    auto step = [&](std::int64_t iteration, Head h) {
        const auto k = static_cast<std::size_t>(h);
        const PoolCase& pc = pools[k][cursor[k]];
        cursor[k] = (cursor[k] + 1) % pools[k].size();
        Rng& rng = streams[k];
        const Augmented aug = augment(pc.image, pc.labels ? &*pc.labels : nullptr, options.patch.augment, rng,
                                      options.patch.pad_value_image, options.patch.pad_value_label);
        const PatchPair pair =
            sample_pair(aug.image, aug.labels ? &*aug.labels : nullptr, options.patch, rng);
        trainer.state().iteration = iteration;
        const LogRow row = trainer.train_step(h, pair);
        result.log.push_back(row);
        if (options.on_step) options.on_step(row);
    };
    auto iteration_done = [&](std::int64_t iteration) {
        if (config.checkpoint_interval > 0 && (iteration + 1) % config.checkpoint_interval == 0) {
            nn::save_checkpoint(net, options.patch,
                                options.out_dir / fmt::format("checkpoint_iter{:06d}.txt", iteration + 1));
        }
    };
    const TrainState counts = run_schedule(config, step, iteration_done);

    result.state = trainer.state();
    result.state.iteration = counts.iteration;
    result.checkpoint = options.out_dir / kCheckpointName;
    result.log_file = options.out_dir / kLogName;
    nn::save_checkpoint(net, options.patch, result.checkpoint);
    std::string csv = log_header();
    for (const LogRow& r : result.log) csv += format_log_row(r);
    write_text_file(result.log_file, csv);
    return result;
}

}  // namespace mtseg::train
