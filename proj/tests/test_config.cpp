#include <filesystem>
#include <fstream>
#include <string>

#include <doctest.h>

#include "fusionact/config.hpp"

using namespace fusionact;

TEST_CASE("empty config gives the documented defaults") {
  RunConfig c = parse_config("");
  CHECK(c.dataset == "ucihar");
  CHECK(c.root == "data");
  CHECK(c.stage == "1-static");
  CHECK(c.batch_size == 64);
  CHECK(c.epochs == -1);
  CHECK(c.lr == 1e-3);
  CHECK(c.seed == 42);
  CHECK(c.freeze_experts == true);
  CHECK(c.out == "model.ck");
}

TEST_CASE("full config parses with whitespace and comments") {
  RunConfig c = parse_config(
      "# run settings\n"
      "dataset = motionsense\n"
      "  root=/data/motion  \n"
      "stage = 2\n"
      "batch_size = 32\n"
      "\n"
      "epochs=7\n"
      "lr = 0.01\n"
      "seed = 1234\n"
      "freeze_experts = false\n"
      "out = runs/m.ck\n");
  CHECK(c.dataset == "motionsense");
  CHECK(c.root == "/data/motion");
  CHECK(c.stage == "2");
  CHECK(c.batch_size == 32);
  CHECK(c.epochs == 7);
  CHECK(c.lr == 0.01);
  CHECK(c.seed == 1234);
  CHECK(c.freeze_experts == false);
  CHECK(c.out == "runs/m.ck");
}

TEST_CASE("bad configs are rejected with one error each") {
  CHECK_THROWS_AS(parse_config("mystery = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("lr = 0.1\nlr = 0.2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("just some words\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("lr =\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("= 5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("dataset = pamap2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("stage = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("batch_size = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("batch_size = ten\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("batch_size = 4.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("epochs = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("epochs = -3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("lr = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("lr = -0.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("lr = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("freeze_experts = yes\n"), ConfigError);
}

TEST_CASE("config files load from disk") {
  namespace fs = std::filesystem;
  fs::path p = fs::temp_directory_path() / "fact_run.cfg";
  {
    std::ofstream os(p);
    os << "dataset = ucihar\nseed = 7\n";
  }
  RunConfig c = load_config(p.string());
  CHECK(c.seed == 7);
  CHECK_THROWS_AS(load_config("/no/such/run.cfg"), ConfigError);
}

TEST_CASE("echo lists every key in a fixed order") {
  RunConfig c;
  c.epochs = 100;
  auto kv = echo_config(c);
  REQUIRE(kv.size() == 9);
  CHECK(kv[0] == std::pair<std::string, std::string>{"dataset", "ucihar"});
  CHECK(kv[1].first == "root");
  CHECK(kv[2].first == "stage");
  CHECK(kv[3] == std::pair<std::string, std::string>{"batch_size", "64"});
  CHECK(kv[4] == std::pair<std::string, std::string>{"epochs", "100"});
  CHECK(kv[5] == std::pair<std::string, std::string>{"lr", "0.001"});
  CHECK(kv[6] == std::pair<std::string, std::string>{"seed", "42"});
  CHECK(kv[7].second == "true");
  CHECK(kv[8].second == "model.ck");
}
