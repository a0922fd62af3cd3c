#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "mtseg/network.hpp"
#include "mtseg/phantom.hpp"
#include "mtseg/sampler.hpp"
#include "mtseg/trainer.hpp"

namespace mtseg {

struct DatasetCounts {
    int lobe = 8;
    int vessel = 8;
    int unlabeled = 8;
};

struct EvalConfig {
    /// Adds slice-restricted MSD on each case's fissure slices.
    bool slice_restricted = true;
    /// Output directory for predictions and metric CSVs (relative to the
    /// working directory unless absolute).
    std::filesystem::path out_dir = "eval";
};

/// Everything one experiment needs, read from an INI-style file with
/// sections [phantom], [patch], [net], [train] and [eval]. Unknown sections
/// and keys are rejected with their line number; omitted keys keep their
/// defaults.
struct ExperimentConfig {
    PhantomSpec phantom{};
    DatasetCounts counts{};
    PatchSpec patch{};
    nn::NetConfig net{};
    train::TrainConfig train{};
    EvalConfig eval{};

    /// Throws ParseError (syntax, unknown keys, bad values) or
    /// std::invalid_argument (values violating a component's invariants).
    static ExperimentConfig parse(std::string_view text, const std::string& source = "<config>");
    static ExperimentConfig load(const std::filesystem::path& path);

    /// Complete annotated config reproducing this one.
    std::string to_text() const;
    void validate() const;
};

}  // namespace mtseg
