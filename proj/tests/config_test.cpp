#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "simmtm/config.hpp"

namespace simmtm {
namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::kContract;
}

TEST(RunConfig, DefaultsFollowForecastTable) {
  const RunConfig cfg;
  EXPECT_EQ(config_get(cfg, "mask.ratio"), "0.5");
  EXPECT_EQ(config_get(cfg, "mask.count"), "3");
  EXPECT_EQ(config_get(cfg, "mask.kind"), "geometric");
  EXPECT_EQ(config_get(cfg, "aggregation.temperature"), "0.02");
  EXPECT_EQ(config_get(cfg, "model.e_layers"), "2");
  EXPECT_EQ(config_get(cfg, "model.d_model"), "16");
  EXPECT_EQ(config_get(cfg, "pretrain.lr"), "0.001");
  EXPECT_EQ(config_get(cfg, "pretrain.batch_size"), "32");
  EXPECT_EQ(config_get(cfg, "pretrain.epochs"), "50");
  EXPECT_EQ(config_get(cfg, "finetune.lr"), "1e-04");
  EXPECT_EQ(config_get(cfg, "finetune.epochs"), "10");
  EXPECT_NO_THROW(cfg.validate());
}

TEST(RunConfig, TextRoundTripsEveryKey) {
  RunConfig cfg;
  config_set(cfg, "mask.ratio", "0.3");
  config_set(cfg, "aggregation.candidates", "psa");
  config_set(cfg, "loss.constraint", "false");
  config_set(cfg, "model.encoder", "conv_resnet");
  config_set(cfg, "data.path", "some file.csv");
  config_set(cfg, "seed", "18446744073709551615");
  RunConfig back;
  apply_config_text(back, config_text(cfg));
  EXPECT_EQ(config_text(back), config_text(cfg));
  EXPECT_EQ(back.seed, 18446744073709551615ULL);
  EXPECT_EQ(back.aggregation.candidates, CandidateSet::kPSA);
  EXPECT_FALSE(back.losses.constraint);
  EXPECT_EQ(back.data_path, "some file.csv");
  EXPECT_EQ(config_keys().size(), parse_config_text(config_text(cfg)).size());
}

TEST(RunConfig, ParsingRules) {
  const auto pairs = parse_config_text("# comment\n\n  mask.ratio = 0.25  \nseed=3\n");
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0], (std::pair<std::string, std::string>{"mask.ratio", "0.25"}));
  EXPECT_EQ(kind_of([] { parse_config_text("mask.ratio 0.5\n"); }), ErrorKind::kConfig);
  RunConfig cfg;
  EXPECT_EQ(kind_of([&] { config_set(cfg, "mask.rate", "0.5"); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([&] { config_set(cfg, "mask.ratio", "half"); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([&] { config_set(cfg, "mask.count", "2.5"); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([&] { config_set(cfg, "mask.kind", "blocks"); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([&] { config_set(cfg, "loss.constraint", "yes"); }), ErrorKind::kConfig);
}

TEST(RunConfig, ValidationCatchesValuesAndMissingPaths) {
  RunConfig cfg;
  cfg.mask.ratio = 1.5;
  EXPECT_EQ(kind_of([&] { cfg.validate(); }), ErrorKind::kConfig);
  cfg = RunConfig{};
  cfg.losses = {false, false};
  EXPECT_EQ(kind_of([&] { cfg.validate(); }), ErrorKind::kConfig);
  cfg = RunConfig{};
  cfg.model.n_heads = 5;
  EXPECT_EQ(kind_of([&] { cfg.validate(); }), ErrorKind::kConfig);
  cfg = RunConfig{};
  cfg.checkpoint = "/nonexistent/ckpt";
  EXPECT_EQ(kind_of([&] { cfg.validate(); }), ErrorKind::kMissingFile);
  cfg = RunConfig{};
  cfg.data_path = "/nonexistent/data.csv";
  EXPECT_EQ(kind_of([&] { cfg.validate(); }), ErrorKind::kMissingFile);
}

TEST(RunConfig, PrecedenceOverrideFileEnvDefault) {
  const auto path = std::filesystem::temp_directory_path() / "simmtm_config_test.cfg";
  {
    std::ofstream out(path);
    out << "mask.ratio=0.25\nmask.count=2\n";
  }
  ::setenv("SIMMTM_SEED", "42", 1);
  RunConfig cfg = load_run_config(path, {{"mask.ratio", "0.75"}});
  EXPECT_EQ(cfg.mask.ratio, 0.75);
  EXPECT_EQ(cfg.mask.count, 2);
  EXPECT_EQ(cfg.seed, 42u);
  EXPECT_NE(config_text(cfg).find("mask.ratio=0.75\n"), std::string::npos);

  {
    std::ofstream out(path);
    out << "seed=7\n";
  }
  EXPECT_EQ(load_run_config(path, {}).seed, 7u);
  EXPECT_EQ(load_run_config(path, {{"seed", "9"}}).seed, 9u);
  ::unsetenv("SIMMTM_SEED");
  EXPECT_EQ(load_run_config({}, {}).seed, 1u);
  EXPECT_EQ(kind_of([] { load_run_config("/nonexistent/c.cfg", {}); }), ErrorKind::kMissingFile);
  std::filesystem::remove(path);
}

TEST(RunConfig, GridAxes) {
  const auto axes = parse_grid_axes("mask.ratio=0.25|0.5; mask.count=1|2|3");
  ASSERT_EQ(axes.size(), 2u);
  EXPECT_EQ(axes[0].key, "mask.ratio");
  EXPECT_EQ(axes[1].values, (std::vector<std::string>{"1", "2", "3"}));
  EXPECT_EQ(kind_of([] { parse_grid_axes("mask.rate=1|2"); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([] { parse_grid_axes("mask.count=1|x"); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([] { parse_grid_axes(""); }), ErrorKind::kConfig);
}

}  // namespace
}  // namespace simmtm
