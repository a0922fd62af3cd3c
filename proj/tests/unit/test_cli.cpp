#include <doctest.h>

#include <sstream>

#include "cli.hpp"
#include "mtseg/text.hpp"
#include "mtseg/trainer.hpp"
#include "support/tempdir.hpp"

using namespace mtseg;
using mtseg::testing::TempDir;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run invoke(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

constexpr const char* kTinyConfig =
    "[phantom]\ndims = 16 16 16\nspacing = 4 4 4\nvessel_count = 3\n"
    "n_lobe = 2\nn_vessel = 1\nn_unlabeled = 1\n"
    "[patch]\npatch_dims = 8 8 8\n"
    "[net]\nbase_channels = 2\ndepth = 2\n";

/// Writes the tiny config and a dataset; returns the config path.
std::string tiny_setup(const TempDir& dir) {
    write_text_file(dir / "tiny.ini", kTinyConfig);
    const Run r = invoke({"gen-data", "--config", (dir / "tiny.ini").string(), "--out", (dir / "data").string()});
    REQUIRE(r.code == cli::kOk);
    return (dir / "tiny.ini").string();
}

std::string report_csv(const std::vector<double>& values) {
    std::string s = "case_id,class,dsc,msd_mm,hd95_mm,flags\n";
    for (std::size_t i = 0; i < values.size(); ++i)
        s += "c" + std::to_string(i) + ",macro," + format_double(values[i]) + ",1,1,\n";
    return s;
}

std::string field(const std::string& report, const std::string& key) {
    std::istringstream in(report);
    std::string line;
    while (std::getline(in, line))
        if (line.rfind(key + " = ", 0) == 0) return line.substr(key.size() + 3);
    return "";
}

}  // namespace

TEST_CASE("mean ± std formatting") {
    CHECK(cli::mean_pm_std({1.0, 2.0, 3.0}) == "2.000 ± 1.000");
    CHECK(cli::mean_pm_std({0.5}) == "0.500 ± 0.000");
}

TEST_CASE("usage errors exit with 1, help with 0") {
    CHECK(invoke({}).code == cli::kUsageError);
    CHECK(invoke({"frobnicate"}).code == cli::kUsageError);
    CHECK(invoke({"train", "--data", "x"}).code == cli::kUsageError);  // --out missing
    CHECK(invoke({"--help"}).code == cli::kOk);
    TempDir dir("cli");
    write_text_file(dir / "bad.ini", "[phantom]\nwat = 1\n");
    const Run r = invoke({"gen-data", "--config", (dir / "bad.ini").string(), "--out", (dir / "d").string()});
    CHECK(r.code == cli::kUsageError);
    CHECK(r.err.find("bad.ini:2") != std::string::npos);
}

TEST_CASE("data errors exit with 2") {
    TempDir dir("cli");
    CHECK(invoke({"train", "--data", (dir / "nothing").string(), "--out", (dir / "o").string()}).code ==
          cli::kDataError);
    CHECK(invoke({"eval", "--pred", (dir / "p").string(), "--gt", (dir / "g").string(), "--out",
               (dir / "e.csv").string()})
              .code == cli::kDataError);
}

TEST_CASE("gen-data with all counts zero warns") {
    TempDir dir("cli");
    const Run r = invoke({"gen-data", "--out", (dir / "d").string(), "--lobe", "0", "--vessel", "0", "--unlabeled", "0"});
    CHECK(r.code == cli::kOk);
    CHECK(r.err.find("warning") != std::string::npos);
    CHECK(Manifest::load(dir / "d" / kManifestName).cases.empty());
}

TEST_CASE("train fat with budget 10 logs 10/5/5 rows") {
    TempDir dir("cli");
    const std::string cfg = tiny_setup(dir);
    const Run r = invoke({"train", "--config", cfg, "--data", (dir / "data").string(), "--out", (dir / "fat").string(),
                       "--strategy", "fat", "--budget", "10", "--quiet"});
    REQUIRE(r.code == cli::kOk);
    const auto log = train::parse_log(read_text_file(dir / "fat" / "train_log.csv"));
    int n[3] = {0, 0, 0};
    for (const auto& row : log) ++n[static_cast<int>(row.head)];
    CHECK(log.size() == 20);
    CHECK(n[0] == 10);
    CHECK(n[1] == 5);
    CHECK(n[2] == 5);
    CHECK(std::filesystem::exists(dir / "fat" / "config.txt"));
    CHECK(r.out.find("lobe 10 vessel 5 recon 5") != std::string::npos);

    const Run bad = invoke({"train", "--data", (dir / "data").string(), "--out", (dir / "x").string(), "--strategy",
                         "sideways"});
    CHECK(bad.code == cli::kUsageError);
}

TEST_CASE("lobe-only eat falls back to single task with a warning") {
    TempDir dir("cli");
    const std::string cfg = tiny_setup(dir);
    const Run r = invoke({"train", "--config", cfg, "--data", (dir / "data").string(), "--out", (dir / "st").string(),
                       "--strategy", "eat", "--heads", "lobe", "--budget", "3", "--quiet"});
    CHECK(r.code == cli::kOk);
    CHECK(r.err.find("single-task") != std::string::npos);
    CHECK(r.out.rfind("strategy st", 0) == 0);
}

TEST_CASE("eval of ground truth against itself is perfect; per-case rows are independent") {
    TempDir dir("cli");
    tiny_setup(dir);
    const std::string data = (dir / "data").string();
    const Run r = invoke({"eval", "--pred", data, "--gt", data, "--out", (dir / "self.csv").string(), "--slices"});
    REQUIRE(r.code == cli::kOk);
    const std::string csv = read_text_file(dir / "self.csv");
    CHECK(csv.rfind("case_id,class,dsc,msd_mm,hd95_mm,slice_msd_mm,flags\n", 0) == 0);
    CHECK(csv.find("lobe_000,macro,1,0,0,0,") != std::string::npos);
    CHECK(csv.find("lobe_001,macro,1,0,0,0,") != std::string::npos);
    const std::string summary = read_text_file(dir / "self_summary.csv");
    CHECK(summary.find("macro,1.000 ± 0.000") != std::string::npos);

    // Predict with a briefly trained net and check that a two-case eval
    // equals the concatenation of single-case evals.
    const std::string cfg = (dir / "tiny.ini").string();
    REQUIRE(invoke({"train", "--config", cfg, "--data", data, "--out", (dir / "st").string(), "--strategy", "st",
                 "--heads", "lobe", "--budget", "5", "--quiet"})
                .code == cli::kOk);
    REQUIRE(invoke({"infer", "--checkpoint", (dir / "st" / "checkpoint.txt").string(), "--data", data, "--out",
                 (dir / "pred").string()})
                .code == cli::kOk);
    REQUIRE(invoke({"eval", "--pred", (dir / "pred").string(), "--gt", data, "--out", (dir / "both.csv").string()})
                .code == cli::kOk);
    std::string joined = "case_id,class,dsc,msd_mm,hd95_mm,flags\n";
    for (const char* id : {"lobe_000", "lobe_001"}) {
        std::filesystem::create_directories(dir / id);
        std::filesystem::copy(dir / "pred" / (std::string(id) + ".mhd"), dir / id);
        std::filesystem::copy(dir / "pred" / (std::string(id) + ".raw"), dir / id);
        const auto out = dir / (std::string(id) + ".csv");
        REQUIRE(invoke({"eval", "--pred", (dir / id).string(), "--gt", data, "--out", out.string()}).code == cli::kOk);
        const std::string one = read_text_file(out);
        joined += one.substr(one.find('\n') + 1);
    }
    CHECK(read_text_file(dir / "both.csv") == joined);
}

TEST_CASE("infer rejects an image smaller than the field of view") {
    TempDir dir("cli");
    const std::string cfg = tiny_setup(dir);
    REQUIRE(invoke({"train", "--config", cfg, "--data", (dir / "data").string(), "--out", (dir / "st").string(),
                 "--strategy", "st", "--heads", "lobe", "--budget", "1", "--quiet"})
                .code == cli::kOk);
    write_volume(Image(Geometry{{8, 16, 16}}), dir / "small.mhd");
    const Run r = invoke({"infer", "--checkpoint", (dir / "st" / "checkpoint.txt").string(), "--image",
                       (dir / "small.mhd").string(), "--out", (dir / "o.mhd").string()});
    CHECK(r.code == cli::kDataError);
}

TEST_CASE("compare: identical reports, n=5 and n=6 one-sided shifts") {
    TempDir dir("cli");
    const std::vector<double> a{0.61, 0.72, 0.55, 0.8, 0.67};
    write_text_file(dir / "a.csv", report_csv(a));
    Run r = invoke({"compare", "--a", (dir / "a.csv").string(), "--b", (dir / "a.csv").string(), "--metric", "dsc"});
    REQUIRE(r.code == cli::kOk);
    CHECK(field(r.out, "p") == "1");
    CHECK(field(r.out, "method") == "all-zero");

    std::vector<double> b5 = a;
    for (double& v : b5) v += 1.0;
    write_text_file(dir / "b5.csv", report_csv(b5));
    r = invoke({"compare", "--a", (dir / "a.csv").string(), "--b", (dir / "b5.csv").string(), "--metric", "dsc",
             "--out", (dir / "r5.txt").string()});
    REQUIRE(r.code == cli::kOk);
    CHECK(field(r.out, "p") == "0.0625");
    CHECK(field(r.out, "verdict") == "not significant");
    CHECK(read_text_file(dir / "r5.txt") == r.out);

    std::vector<double> a6 = a, b6 = b5;
    a6.push_back(0.5);
    b6.push_back(1.5);
    write_text_file(dir / "a6.csv", report_csv(a6));
    write_text_file(dir / "b6.csv", report_csv(b6));
    r = invoke({"compare", "--a", (dir / "a6.csv").string(), "--b", (dir / "b6.csv").string(), "--metric", "dsc"});
    CHECK(field(r.out, "p") == "0.03125");
    CHECK(field(r.out, "verdict") == "significant");

    CHECK(invoke({"compare", "--a", (dir / "a.csv").string(), "--b", (dir / "a6.csv").string(), "--metric", "dsc"})
              .code == cli::kDataError);
    CHECK(invoke({"compare", "--a", (dir / "a.csv").string(), "--b", (dir / "a.csv").string(), "--metric", "iou"})
              .code == cli::kUsageError);
}

TEST_CASE("table reads macro rows of eval summaries") {
    TempDir dir("cli");
    write_text_file(dir / "s.csv", "class,dsc,dsc_mean,dsc_std,dsc_n,msd_mm,msd_mm_mean,msd_mm_std,msd_mm_n\n"
                                   "macro,0.700 ± 0.010,0.7,0.01,2,3.000 ± 0.500,3,0.5,2\n");
    const Run r = invoke({"table", "--row", "Single=" + (dir / "s.csv").string()});
    REQUIRE(r.code == cli::kOk);
    CHECK(r.out.find("Architecture") == 0);
    CHECK(r.out.find("0.700 ± 0.010") != std::string::npos);
    CHECK(r.out.find("3.000 ± 0.500") != std::string::npos);
    CHECK(invoke({"table", "--row", "nonsense"}).code == cli::kUsageError);
}
