#include <doctest.h>

#include "mtseg/config.hpp"
#include "mtseg/text.hpp"

using namespace mtseg;

namespace {

int error_line(const std::string& text) {
    try {
        ExperimentConfig::parse(text);
    } catch (const ParseError& e) {
        return e.line();
    }
    return -1;
}

}  // namespace

TEST_CASE("defaults survive an empty file") {
    const ExperimentConfig c = ExperimentConfig::parse("");
    CHECK(c.phantom.dims == Index3{64, 64, 48});
    CHECK(c.patch.patch_dims == Index3{32, 32, 24});
    CHECK(c.train.strategy == train::Strategy::fat);
    CHECK(c.counts.lobe == 8);
    CHECK(c.eval.slice_restricted);
}

TEST_CASE("to_text round trips every field") {
    ExperimentConfig c;
    c.phantom.seed = 99;
    c.phantom.lobe_contrast = 0.03;
    c.counts.vessel = 3;
    c.patch.patch_dims = {16, 16, 8};
    c.patch.pad_value_image = -0.25F;
    c.patch.augment.enabled = false;
    c.net.base_channels = 4;
    c.train.strategy = train::Strategy::eat;
    c.train.heads = {nn::Head::lobe, nn::Head::recon};
    c.train.lr_lobe = 3.3e-4;
    c.train.clamp_aux = false;
    c.train.main_step_budget = 123;
    c.eval.out_dir = "somewhere/else";

    const std::string text = c.to_text();
    const ExperimentConfig back = ExperimentConfig::parse(text);
    CHECK(back.to_text() == text);
    CHECK(back.phantom.seed == 99);
    CHECK(back.phantom.lobe_contrast == 0.03);
    CHECK(back.counts.vessel == 3);
    CHECK(back.patch.patch_dims == Index3{16, 16, 8});
    CHECK(back.patch.pad_value_image == -0.25F);
    CHECK_FALSE(back.patch.augment.enabled);
    CHECK(back.net.base_channels == 4);
    CHECK(back.train.strategy == train::Strategy::eat);
    CHECK(back.train.heads == c.train.heads);
    CHECK(back.train.lr_lobe == 3.3e-4);
    CHECK_FALSE(back.train.clamp_aux);
    CHECK(back.train.main_step_budget == 123);
    CHECK(back.eval.out_dir == "somewhere/else");
}

TEST_CASE("pad value 'min' means the image minimum") {
    const auto c = ExperimentConfig::parse("[patch]\npad_value_image = min\n");
    CHECK_FALSE(c.patch.pad_value_image.has_value());
}

TEST_CASE("errors name the offending line") {
    CHECK(error_line("[phantom]\nseed = 3\nbogus = 1\n") == 3);
    CHECK(error_line("[nope]\n") == 1);
    CHECK(error_line("seed = 1\n") == 1);
    CHECK(error_line("[train]\nlr_lobe = fast\n") == 2);
    CHECK(error_line("[net]\nactivation = tanh\n") == 2);
    CHECK(error_line("[train]\nheads = lobe,wings\n") == 2);
    CHECK(error_line("[phantom]\n\n[phantom]\n") == 3);
}

TEST_CASE("invariant violations") {
    CHECK_THROWS_AS(ExperimentConfig::parse("[train]\nlambda = 2\n"), std::invalid_argument);
    CHECK_THROWS_AS(ExperimentConfig::parse("[train]\nheads = vessel\n"), std::invalid_argument);
    // 18 is not a multiple of 4 for a depth-3 net.
    CHECK_THROWS_AS(ExperimentConfig::parse("[patch]\npatch_dims = 18 16 16\n"), std::invalid_argument);
}
