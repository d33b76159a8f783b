#include <doctest.h>

#include "sed/config.hpp"

using namespace sed;

TEST_CASE("defaults parse and validate") {
  const RunConfig cfg = parse_config_text("schema_version = 1\n");
  CHECK(cfg.data.image_size == 128);
  CHECK(cfg.data.num_train_scenes == 600);
  CHECK(cfg.data.labeled_fraction == doctest::Approx(0.10));
  CHECK(cfg.train.iterations == 3000);
  CHECK(cfg.train.burn_in_iterations == 300);
  CHECK(cfg.train.lambda_scale == doctest::Approx(0.5));
  CHECK(cfg.train.lambda_distill == doctest::Approx(1.0));
  CHECK(cfg.train.lr == doctest::Approx(0.01));
  CHECK(cfg.train.momentum == doctest::Approx(0.9));
  CHECK(cfg.train.weight_decay == doctest::Approx(1e-4));
  CHECK(cfg.train.ema.policy == EmaPolicy::kStep);
  CHECK(cfg.train.ema.alpha_start == doctest::Approx(0.99));
  CHECK(cfg.train.ema.alpha_end == doctest::Approx(0.9));
  CHECK(cfg.train.scale_max_exponent == 1);
  CHECK(cfg.train.reweight_bins == 10);
  CHECK(cfg.train.distill_tau == doctest::Approx(0.7));
  // strong augmentation defaults pinned to the recipe table
  CHECK(cfg.augment.jitter_prob == doctest::Approx(0.8));
  CHECK(cfg.augment.jitter_min == doctest::Approx(0.6));
  CHECK(cfg.augment.jitter_max == doctest::Approx(1.4));
  CHECK(cfg.augment.grayscale_prob == doctest::Approx(0.2));
  CHECK(cfg.augment.blur_prob == doctest::Approx(0.5));
  REQUIRE(cfg.augment.cutouts.size() == 3);
  CHECK(cfg.augment.cutouts[0].prob == doctest::Approx(0.7));
  CHECK(cfg.augment.cutouts[0].scale_min == doctest::Approx(0.05));
  CHECK(cfg.augment.cutouts[0].ratio_max == doctest::Approx(3.3));
  CHECK(cfg.augment.cutouts[1].prob == doctest::Approx(0.5));
  CHECK(cfg.augment.cutouts[1].ratio_max == doctest::Approx(6.0));
  CHECK(cfg.augment.cutouts[2].prob == doctest::Approx(0.3));
  CHECK(cfg.augment.cutouts[2].ratio_max == doctest::Approx(8.0));
}

TEST_CASE("unknown keys rejected by name") {
  CHECK_THROWS_WITH_AS(parse_config_text("schema_version = 1\nlerning_rate = 0.1\n"),
                       doctest::Contains("lerning_rate"), ConfigError);
}

TEST_CASE("type and value errors name the key") {
  CHECK_THROWS_WITH_AS(parse_config_text("schema_version = 1\nlr = fast\n"),
                       doctest::Contains("lr"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text("schema_version = 1\nlabeled_fraction = 0\n"),
                       doctest::Contains("labeled_fraction"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("schema_version = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("nonsense line\n"), ConfigError);
}

TEST_CASE("round trip through text") {
  RunConfig cfg = parse_config_text("schema_version = 1\nseed = 42\nlr = 0.025\n"
                                    "lr_milestones = 100,200\ndistill_mode = hard\n"
                                    "ema_policy = cosine\nreweight_scale = false\n");
  CHECK(cfg.data.master_seed == 42);
  CHECK(cfg.train.lr == doctest::Approx(0.025));
  CHECK(cfg.train.lr_milestones == std::vector<int>{100, 200});
  CHECK(cfg.train.distill_mode == DistillMode::kHard);
  CHECK(cfg.train.ema.policy == EmaPolicy::kCosine);
  CHECK(cfg.train.reweight_scale == false);

  const std::string text = config_to_text(cfg);
  const RunConfig back = parse_config_text(text);
  CHECK(config_to_text(back) == text);
  CHECK(back.train.lr == doctest::Approx(0.025));
  CHECK(back.train.distill_mode == DistillMode::kHard);
}

TEST_CASE("comments and blank lines") {
  const RunConfig cfg = parse_config_text("# a comment\nschema_version = 1\n\nseed = 5 # trailing\n");
  CHECK(cfg.data.master_seed == 5);
}

TEST_CASE("divisibility guard") {
  CHECK_THROWS_WITH_AS(parse_config_text("schema_version = 1\nimage_size = 96\nmax_object_size = 64\nscale_max_exponent = 2\n"),
                       doctest::Contains("divisible"), ConfigError);
}

TEST_CASE("override applies and later validation catches conflicts") {
  RunConfig cfg = parse_config_text("schema_version = 1\n");
  apply_override(cfg, "iterations", "40");
  apply_override(cfg, "burn_in_iterations", "10");
  cfg.validate();
  CHECK(cfg.train.iterations == 40);
  CHECK(cfg.train.ema.total_iterations == 40);
  apply_override(cfg, "burn_in_iterations", "50");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
