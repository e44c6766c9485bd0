#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "psic/config.hpp"
#include "psic/errors.hpp"

using namespace psic;
namespace fs = std::filesystem;

namespace {

RunConfig preset(const char* name) {
  auto c = load_config(fs::path(PSIC_SOURCE_DIR) / "configs" / name);
  c.sync();
  return c;
}

}  // namespace

TEST_CASE("canonical text round-trips") {
  RunConfig c;
  c.seed = 99;
  c.precision = Precision::kF64;
  c.variant = "soft_only";
  c.train.lr = 0.0031;
  c.train.rates = {0.2, 0.4};
  c.eval.snr_list = {-3.5, 0.0, 300.0};
  c.experiment.n_list = {16, 100};
  c.experiment.plots = false;
  c.link.mode = ChannelMode::kDiagRayleigh;
  const auto text = to_config_text(c);
  const auto back = parse_config(text);
  CHECK(to_config_text(back) == text);
  CHECK(back.seed == 99);
  CHECK(back.precision == Precision::kF64);
  CHECK(back.train.lr == 0.0031);
  CHECK(back.eval.snr_list == std::vector<double>{-3.5, 0.0, 300.0});
  CHECK(back.experiment.n_list == std::vector<std::size_t>{16, 100});
  CHECK(back.link.mode == ChannelMode::kDiagRayleigh);
  CHECK(config_hash(back) == config_hash(c));
}

TEST_CASE("hash tracks every field") {
  RunConfig a, b;
  CHECK(config_hash(a) == config_hash(b));
  b.eval.trials += 1;
  CHECK(config_hash(a) != config_hash(b));
  b = a;
  b.model.decoder.kernel = 5;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("partial files keep defaults") {
  const auto c = parse_config("[train]\nlr = 0.01\n");
  CHECK(c.train.lr == 0.01);
  CHECK(c.train.batch_size == RunConfig{}.train.batch_size);
}

TEST_CASE("malformed config is rejected") {
  CHECK_THROWS_AS(parse_config("[train]\nlearning_rate = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[nonsense]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[train]\nlr = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[train]\nbatch_size = -4\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[experiment]\nplots = maybe\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[train\nlr = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_precision("f16"), ConfigError);
  CHECK(parse_precision("f64") == Precision::kF64);
}

TEST_CASE("validation catches out-of-range values") {
  auto c = parse_config("[experiment]\nn_list = 16, 60\n");
  c.sync();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = parse_config("[eval]\nrate_list = 0.5, 1.5\n");
  c.sync();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = parse_config("[eval]\ntrials = 0\n");
  c.sync();
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("missing file is an I/O error") {
  CHECK_THROWS_AS(load_config("/nonexistent/psic.ini"), IoError);
}

TEST_CASE("shipped presets load and validate") {
  for (const char* name : {"desk.ini", "smoke.ini", "table_scale.ini", "paper_scale.ini"}) {
    CAPTURE(name);
    const auto c = preset(name);
    CHECK_NOTHROW(c.validate());
    CHECK(c.data.height == c.model.height());
  }
  const auto desk = preset("desk.ini");
  CHECK(desk.data.samples == 8192);
  CHECK(desk.train.batch_size == 64);
  CHECK(desk.experiment.seeds >= 5);
}
