#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "fusionact/checkpoint.hpp"

using namespace fusionact;
namespace fs = std::filesystem;

namespace {

FusionModel small_model(std::uint64_t seed) {
  Rng rng(seed);
  FusionModel m = make_fusion_model(
      3, 32, {"SI", "ST", "LA", "WA", "WU", "WD"}, 3, rng);
  // shrink to a toy footprint so files stay small
  m.static_config = {{{3, 8, 2}, {8, 8, 2}}, 3};
  m.dynamic_config = {{{3, 8, 2}, {8, 8, 2}}, 3};
  m.guidance_config = {{{3, 4}, {4, 4}}};
  m.static_params = make_pathway(m.static_config, rng);
  m.dynamic_params = make_pathway(m.dynamic_config, rng);
  m.guidance_params = make_guidance(m.guidance_config, rng);
  m.dataset = "toy";
  m.norm_mean = {0.25, -1.5, 3.0};
  m.norm_std = {1.0, 2.5, 0.125};
  m.config_echo = {{"dataset", "toy"}, {"lr", "0.001"}, {"seed", "42"}};
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return std::move(ss).str();
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

fs::path tmp_file(const char* name) {
  return fs::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("checkpoint round trip preserves everything at 32-bit precision") {
  FusionModel m = small_model(7);
  fs::path p = tmp_file("fact_rt.ck");
  save_checkpoint(m, p.string());

  FusionModel r = load_checkpoint(p.string());
  CHECK(r.dataset == "toy");
  CHECK(r.class_order == m.class_order);
  CHECK(r.n_static == 3);
  CHECK(r.in_channels == 3);
  CHECK(r.window_len == 32);
  CHECK(r.static_config.block_specs == m.static_config.block_specs);
  CHECK(r.guidance_config.dwsep_specs == m.guidance_config.dwsep_specs);
  CHECK(r.norm_mean == m.norm_mean);
  CHECK(r.norm_std == m.norm_std);
  CHECK(r.config_echo == m.config_echo);

  NamedTensors la, sa, lb, sb;
  collect_params(m, la, sa);
  collect_params(r, lb, sb);
  la.insert(la.end(), sa.begin(), sa.end());
  lb.insert(lb.end(), sb.begin(), sb.end());
  REQUIRE(la.size() == lb.size());
  for (std::size_t i = 0; i < la.size(); ++i) {
    CHECK(la[i].first == lb[i].first);
    REQUIRE(la[i].second.size() == lb[i].second.size());
    for (std::size_t k = 0; k < la[i].second.size(); ++k) {
      double quantized =
          static_cast<double>(static_cast<float>(la[i].second.data()[k]));
      CHECK(lb[i].second.data()[k] == quantized);  // exact f32 image
    }
  }
}

TEST_CASE("save then load then save is byte-identical") {
  FusionModel m = small_model(11);
  fs::path a = tmp_file("fact_a.ck");
  fs::path b = tmp_file("fact_b.ck");
  save_checkpoint(m, a.string());
  FusionModel r = load_checkpoint(a.string());
  save_checkpoint(r, b.string());
  CHECK(slurp(a) == slurp(b));

  // and saving the same model twice is deterministic
  fs::path c = tmp_file("fact_c.ck");
  save_checkpoint(m, c.string());
  CHECK(slurp(a) == slurp(c));
}

TEST_CASE("round-tripped probabilities move by at most 1e-6") {
  FusionModel m = small_model(13);
  fs::path p = tmp_file("fact_probs.ck");
  save_checkpoint(m, p.string());
  FusionModel r = load_checkpoint(p.string());

  Rng rng(99);
  double worst = 0;
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = Tensor::uniform({4, 3, 32}, -2, 2, rng);
    Tensor ya = fused_forward(x, m, Mode::eval);
    Tensor yb = fused_forward(x, r, Mode::eval);
    for (std::size_t i = 0; i < ya.size(); ++i)
      worst = std::max(worst, std::abs(ya.data()[i] - yb.data()[i]));
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("inference works off the stored normalization stats") {
  // spot check that stats survive in a form usable for z-scoring
  FusionModel m = small_model(17);
  fs::path p = tmp_file("fact_norm.ck");
  save_checkpoint(m, p.string());
  FusionModel r = load_checkpoint(p.string());
  REQUIRE(r.norm_mean.size() == 3);
  double z = (2.0 - r.norm_mean[2]) / r.norm_std[2];
  CHECK(z == doctest::Approx((2.0 - 3.0) / 0.125).epsilon(1e-12));
}

TEST_CASE("corrupted checkpoints are rejected outright") {
  FusionModel m = small_model(19);
  fs::path p = tmp_file("fact_good.ck");
  save_checkpoint(m, p.string());
  std::string good = slurp(p);
  fs::path bad = tmp_file("fact_bad.ck");

  // wrong magic
  std::string t = good;
  t[0] = 'X';
  spit(bad, t);
  CHECK_THROWS_AS(load_checkpoint(bad.string()), CheckpointError);

  // unsupported version
  t = good;
  t[4] = 9;
  spit(bad, t);
  CHECK_THROWS_AS(load_checkpoint(bad.string()), CheckpointError);

  // truncated blob section
  t = good.substr(0, good.size() - 10);
  spit(bad, t);
  CHECK_THROWS_AS(load_checkpoint(bad.string()), CheckpointError);

  // trailing garbage
  t = good + "zz";
  spit(bad, t);
  CHECK_THROWS_AS(load_checkpoint(bad.string()), CheckpointError);

  // mangled manifest text
  t = good;
  t[16] = '\x01';
  spit(bad, t);
  CHECK_THROWS_AS(load_checkpoint(bad.string()), CheckpointError);

  // header shorter than the fixed fields
  spit(bad, "FA");
  CHECK_THROWS_AS(load_checkpoint(bad.string()), CheckpointError);

  CHECK_THROWS_AS(load_checkpoint("/no/such/file.ck"), CheckpointError);
}

TEST_CASE("manifests inconsistent with their blobs are rejected") {
  FusionModel m = small_model(23);
  fs::path p = tmp_file("fact_tamper.ck");
  save_checkpoint(m, p.string());
  std::string good = slurp(p);

  // growing the static head in the manifest breaks the class split check
  std::string t = good;
  auto at = t.find("\"static_outputs\":3");
  REQUIRE(at != std::string::npos);
  t.replace(at, 18, "\"static_outputs\":4");
  fs::path bad = tmp_file("fact_tamper2.ck");
  spit(bad, t);
  CHECK_THROWS_AS(load_checkpoint(bad.string()), CheckpointError);

  CHECK_THROWS_AS(save_checkpoint(FusionModel{}, bad.string()), ContractError);
}

TEST_CASE("manifest text lists the architecture") {
  FusionModel m = small_model(29);
  std::string text = checkpoint_manifest(m);
  CHECK(text.find("\"dataset\"") != std::string::npos);
  CHECK(text.find("\"toy\"") != std::string::npos);
  CHECK(text.find("\"class_order\"") != std::string::npos);
  CHECK(text.find("\"static.block0.conv1.weight\"") != std::string::npos);
  CHECK(text.find("\"guidance_blocks\"") != std::string::npos);
}
