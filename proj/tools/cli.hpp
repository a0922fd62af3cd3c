#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mtseg::cli {

/// Process exit codes.
enum ExitCode : int {
    kOk = 0,
    kUsageError = 1,    // bad flags or config
    kDataError = 2,     // missing/invalid files, pools, unpaired cases
    kNumericError = 3,  // non-finite loss, undefined metric
};

/// Runs one subcommand; `args` excludes the program name, e.g.
/// {"train", "--data", "d/manifest.txt", ...}. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// "0.970 ± 0.016" (three decimals, sample standard deviation).
std::string mean_pm_std(const std::vector<double>& values);

}  // namespace mtseg::cli
