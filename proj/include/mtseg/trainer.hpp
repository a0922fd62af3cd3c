#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtseg/network.hpp"
#include "mtseg/phantom.hpp"

namespace mtseg::train {

using nn::Head;

enum class Strategy { single_task, eat, fat };

const char* strategy_name(Strategy s);
/// Accepts st|single_task, eat, fat (case-sensitive).
Strategy parse_strategy(const std::string& s);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    Strategy strategy = Strategy::fat;
    std::vector<Head> heads{Head::lobe, Head::vessel, Head::recon};
    double lr_lobe = 1e-4;
    double lr_aux_init = 1e-5;
    double lambda = 0.1;
    bool clamp_aux = true;
    /// Off: auxiliary heads keep lr_aux_init for the whole run.
    bool adaptive_lr = true;
    std::int64_t main_step_budget = 2000;
    AdamConfig adam{};
    std::uint64_t seed = 1;
    /// Iterations between intermediate checkpoints; 0 writes only the final one.
    std::int64_t checkpoint_interval = 0;

    bool has_head(Head h) const;
    /// Throws std::invalid_argument.
    void validate() const;
};

/// Head updates making up one iteration.
std::vector<Head> schedule(Strategy strategy, const std::vector<Head>& heads);

struct AuxLr {
    double lr = 0.0;
    bool fallback = false;  // loss_aux <= 0: previous value kept
};

inline constexpr double kMinLr = 1e-12;

/// lambda * lr_lobe * loss_lobe / loss_aux, optionally clamped at lr_lobe,
/// floored at kMinLr. Returns `previous` flagged when loss_aux <= 0.
AuxLr adaptive_lr(double lr_lobe, double lambda, double loss_lobe, double loss_aux,
                  bool clamp_aux, double previous);

/// Adam with one moment store per parameter tensor; bias correction uses the
/// number of updates that tensor itself has received.
template <class T>
class Adam {
public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}

    /// Applies one update from the tensor's current gradient.
    void update(std::size_t slot, nn::Tensor<T>& param, double lr);
    std::int64_t steps(std::size_t slot) const;

private:
    struct Moments {
        std::vector<double> m, v;
        std::int64_t t = 0;
    };
    AdamConfig config_;
    std::vector<Moments> moments_;
};

struct HeadArray {
    std::array<std::int64_t, 3> v{0, 0, 0};
    std::int64_t& operator[](Head h) { return v[static_cast<std::size_t>(h)]; }
    std::int64_t operator[](Head h) const { return v[static_cast<std::size_t>(h)]; }
};

struct TrainState {
    HeadArray step_counts;
    std::int64_t iteration = 0;
    std::array<double, 3> aux_lr{0, 0, 0};
    std::array<std::optional<double>, 3> last_loss{};
    std::int64_t lr_fallbacks = 0;
};

struct LogRow {
    std::int64_t iteration = 0;
    Head head = Head::lobe;
    std::int64_t head_step = 0;  // 1-based count of this head's updates
    double loss = 0.0;
    double lr = 0.0;
    double wall_ms = 0.0;
};

std::string log_header();
std::string format_log_row(const LogRow& row);
std::vector<LogRow> parse_log(const std::string& csv);

/// Iterates the schedule until the lobe head has taken `budget` steps.
/// Whole iterations are run; a lobe update that would exceed the budget is
/// skipped. `step(iteration, head)` is called once per update.
TrainState run_schedule(const TrainConfig& config,
                        const std::function<void(std::int64_t, Head)>& step,
                        const std::function<void(std::int64_t)>& iteration_done = {});

/// A loss or update produced a non-finite value.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A pool required by an enabled head is empty or incomplete.
class MissingPoolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Optimizer plus bookkeeping around one network.
class Trainer {
public:
    Trainer(TrainConfig config, nn::NetGraph<float>& net);

    /// Learning rate for `head` given its freshly computed loss.
    double lr_for(Head head, double current_loss);

    /// Forward, loss, backward, and an update of the encoder and decoder(head)
    /// only. Segmentation heads need `batch.target` in that head's label
    /// scheme; recon reconstructs `batch.hi`.
    LogRow train_step(Head head, const nn::Tensor<float>& input, const PatchPair& batch);
    LogRow train_step(Head head, const PatchPair& batch);

    const TrainState& state() const { return state_; }
    TrainState& state() { return state_; }
    const TrainConfig& config() const { return config_; }
    nn::NetGraph<float>& net() { return net_; }

private:
    TrainConfig config_;
    nn::NetGraph<float>& net_;
    Adam<float> adam_;
    TrainState state_;
};

struct RunOptions {
    std::filesystem::path out_dir;
    PatchSpec patch{};
    /// Called after each logged update (progress reporting).
    std::function<void(const LogRow&)> on_step{};
};

struct RunResult {
    TrainState state;
    std::vector<LogRow> log;
    std::filesystem::path checkpoint;
    std::filesystem::path log_file;
};

inline constexpr const char* kCheckpointName = "checkpoint.txt";
inline constexpr const char* kLogName = "train_log.csv";

/// Draws each head's batches from its own pool (lobe cases, vessel cases,
/// unlabeled cases), cycling over cases in manifest order with a fresh
/// augmentation and patch per draw. Writes train_log.csv and checkpoint.txt
/// (+ .bin) to out_dir.
RunResult run_training(const TrainConfig& config, const Manifest& manifest,
                       nn::NetGraph<float>& net, const RunOptions& options);

}  // namespace mtseg::train
