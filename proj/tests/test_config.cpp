#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "mtm/config.hpp"

using namespace mtm;
using cfg::ConfigError;

namespace {

std::size_t error_line(const std::string& text) {
  try {
    cfg::parse_config(text);
  } catch (const ConfigError& e) {
    return e.line();
  }
  return static_cast<std::size_t>(-1);
}

}  // namespace

TEST_CASE("empty text gives defaults") {
  const auto c = cfg::parse_config("");
  CHECK(c.seed == 1);
  CHECK(c.model.embed_dim == 64);
  CHECK(c.pretrain.use_target_like);
  CHECK(c.align.mask.theta_mask == 0.4);
  CHECK(c.align.weights.lambda_mdqfa == 0.1);
  CHECK(c.selftrain.pseudo_threshold == 0.5);
  CHECK(c.selftrain.ema_momentum == 0.999);
}

TEST_CASE("values, comments and whitespace") {
  const auto c = cfg::parse_config(
      "# top\n"
      "[run]\n"
      "  seed = 7   ; trailing\n"
      "out_dir = somewhere/else\n"
      "[model]\n"
      "embed_dim=32\n"
      "[align]\n"
      "mask_mtwfa = false\n"
      "lambda_grl = 0.5\n"
      "[pretrain]\n"
      "batch = 4\n"
      "flip = yes\n");
  CHECK(c.seed == 7);
  CHECK(c.out_dir == "somewhere/else");
  CHECK(c.model.embed_dim == 32);
  CHECK_FALSE(c.align.mask.mask_mtwfa);
  CHECK(c.align.weights.lambda_grl == 0.5);
  CHECK(c.pretrain.batch == 4);
  CHECK(c.pretrain.flip);
  CHECK(c.data_config().seed == 7);
}

TEST_CASE("errors carry the line number") {
  CHECK(error_line("[run]\nseed = 1\n[nope]\n") == 3);
  CHECK(error_line("[run]\nseeds = 1\n") == 2);
  CHECK(error_line("seed = 1\n") == 1);
  CHECK(error_line("[run]\nseed = 1\n\nseed = 2\n") == 4);
  CHECK(error_line("[run]\nseed =\n") == 2);
  CHECK(error_line("[model]\nembed_dim = -3\n") == 2);
  CHECK(error_line("[model]\nembed_dim = 3x\n") == 2);
  CHECK(error_line("[pretrain]\nflip = maybe\n") == 2);
  CHECK(error_line("[run\n") == 1);
  CHECK(error_line("[run]\njust words\n") == 2);
  try {
    cfg::parse_config("[run]\nbogus = 1\n");
    FAIL("no error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).rfind("line 2: ", 0) == 0);
    CHECK(e.detail().find("run.bogus") != std::string::npos);
  }
}

TEST_CASE("semantic validation") {
  CHECK_THROWS_AS(cfg::parse_config("[model]\nheads = 5\n"), ConfigError);
  CHECK_THROWS_AS(cfg::parse_config("[model]\nobject_queries = 4\n"), ConfigError);
  CHECK_THROWS_AS(cfg::parse_config("[pretrain]\nuse_target_like = false\n"), ConfigError);
  CHECK_NOTHROW(cfg::parse_config("[pretrain]\nuse_target_like = false\nalignment = false\n"));
  CHECK_THROWS_AS(cfg::parse_config("[pretrain]\nepochs = 0\n"), ConfigError);
  CHECK_THROWS_AS(cfg::parse_config("[pretrain]\nbatch = 0\n"), ConfigError);
  CHECK_THROWS_AS(cfg::parse_config("[align]\ntheta_mask = 1.5\n"), ConfigError);
  CHECK_THROWS_AS(cfg::parse_config("[align]\nlambda_mtwfa = -1\n"), ConfigError);
  CHECK_THROWS_AS(cfg::parse_config("[selftrain]\npseudo_threshold = 1\n"), ConfigError);
  CHECK_THROWS_AS(cfg::parse_config("[data]\nfog_beta_min = 0.9\nfog_beta_max = 0.5\n"), ConfigError);
  CHECK_THROWS_AS(cfg::parse_config("[eval]\nbound_delta = 1\n"), ConfigError);
}

TEST_CASE("canonical text round-trips") {
  auto c = cfg::parse_config("[run]\nseed = 3\n[model]\nembed_dim = 48\n[align]\neta = 0.25\n[selftrain]\noqkt = false\n");
  const std::string text = cfg::to_text(c);
  const auto again = cfg::parse_config(text);
  CHECK(cfg::to_text(again) == text);
  CHECK(again.seed == 3);
  CHECK(again.model.embed_dim == 48);
  CHECK(again.align.mask.eta == 0.25);
  CHECK_FALSE(again.selftrain.oqkt);
}

TEST_CASE("shipped configs load") {
  const std::filesystem::path dir = MTM_SOURCE_DIR "/configs";
  std::size_t count = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".ini") continue;
    INFO(entry.path());
    CHECK_NOTHROW(cfg::load_config(entry.path()));
    ++count;
  }
  CHECK(count >= 1);
  CHECK_THROWS(cfg::load_config(dir / "does_not_exist.ini"));
}
