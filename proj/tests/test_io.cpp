#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "oracles.hpp"
#include "smamba/config.hpp"
#include "smamba/statespace_io.hpp"

using namespace smamba;

TEST_CASE("statespace file round trip") {
  Rng rng(1);
  StateSpace s(oracle::random_matrix(rng, 3, 3),
               oracle::random_matrix(rng, 3, 2),
               oracle::random_matrix(rng, 2, 3),
               oracle::random_matrix(rng, 2, 2));
  std::ostringstream out;
  write_statespace(out, s);
  std::istringstream in(out.str());
  StateSpace back = read_statespace(in);
  CHECK(back.A == s.A);  // %.17g preserves doubles exactly
  CHECK(back.B == s.B);
  CHECK(back.C == s.C);
  CHECK(back.D == s.D);
}

TEST_CASE("statespace parse errors carry line numbers") {
  const char* missing_row =
      "n = 2\nm = 1\np = 1\n\n0 1\n";  // A truncated after one row
  std::istringstream in1(missing_row);
  try {
    read_statespace(in1);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line == 6);
  }

  const char* bad_entry = "n = 1\nm = 1\np = 1\n\nxyz\n\n1\n\n1\n\n0\n";
  std::istringstream in2(bad_entry);
  try {
    read_statespace(in2);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line == 5);
    CHECK(std::string(e.what()).find("line 5") != std::string::npos);
  }

  const char* too_many = "n = 1\nm = 1\np = 1\n\n1 2\n\n1\n\n1\n\n0\n";
  std::istringstream in3(too_many);
  CHECK_THROWS_AS(read_statespace(in3), ParseError);

  const char* bad_header = "q = 1\n";
  std::istringstream in4(bad_header);
  CHECK_THROWS_AS(read_statespace(in4), ParseError);

  const char* nonfinite = "n = 1\nm = 1\np = 1\n\nnan\n\n1\n\n1\n\n0\n";
  std::istringstream in5(nonfinite);
  CHECK_THROWS_AS(read_statespace(in5), ParseError);
}

TEST_CASE("config file parsing with comments and defaults") {
  std::istringstream in(
      "# experiment\n"
      "core = ccf\n"
      "d_model = 32   # inline comment\n"
      "\n"
      "lr = 0.001\n"
      "euler_b = true\n");
  Config cfg = load_config(in);
  CHECK(cfg.core == "ccf");
  CHECK(cfg.d_model == 32);
  CHECK(cfg.lr == doctest::Approx(0.001));
  CHECK(cfg.euler_b);
  CHECK(cfg.n_state == 8);  // untouched default
  cfg.validate();
}

TEST_CASE("unknown config keys are an error") {
  std::istringstream in("d_modle = 32\n");
  CHECK_THROWS_AS(load_config(in), ConfigError);
  Config cfg;
  CHECK_THROWS_AS(cfg.set("core", "mystery"), ConfigError);
  CHECK_THROWS_AS(cfg.set("d_model", "abc"), ConfigError);
  CHECK_THROWS_AS(cfg.set("lr", "fast"), ConfigError);
  CHECK_THROWS_AS(cfg.set("euler_b", "maybe"), ConfigError);
}

TEST_CASE("overrides apply after the file; duplicates last-wins") {
  std::istringstream in("core = ccf\nseq_len = 64\n");
  Config cfg = load_config(in);
  apply_overrides(cfg, {"core=ocf", "batch=2", "core=diag"});
  CHECK(cfg.core == "diag");
  CHECK(cfg.batch == 2);
  CHECK(cfg.seq_len == 64);
  CHECK_THROWS_AS(apply_overrides(cfg, {"oops"}), ConfigError);
}

TEST_CASE("config validation catches structural mistakes") {
  Config cfg;
  cfg.conv_width = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.conv_width = 0;
  cfg.d_inner = 100;
  cfg.share_group = 16;  // 100 % 16 != 0
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.d_inner = 0;
  cfg.split_frac = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.split_frac = 0.9;
  cfg.validate();
}
