#include "fusionact/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

namespace fusionact {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json build_manifest(const FusionModel& m) {
  ordered_json j;
  j["dataset"] = m.dataset;
  j["class_order"] = m.class_order;
  j["n_static"] = m.n_static;
  j["in_channels"] = m.in_channels;
  j["window_len"] = m.window_len;
  j["static_blocks"] = m.static_config.block_specs;
  j["static_outputs"] = m.static_config.num_outputs;
  j["dynamic_blocks"] = m.dynamic_config.block_specs;
  j["dynamic_outputs"] = m.dynamic_config.num_outputs;
  j["guidance_blocks"] = m.guidance_config.dwsep_specs;
  j["norm_mean"] = m.norm_mean;
  j["norm_std"] = m.norm_std;
  ordered_json cfg = ordered_json::object();
  for (const auto& [k, v] : m.config_echo) cfg[k] = v;
  j["config"] = cfg;
  ordered_json params = ordered_json::array();
  NamedTensors learnable, state;
  collect_params(m, learnable, state);
  auto add = [&](const NamedTensors& ts) {
    for (const auto& [name, t] : ts) {
      ordered_json e;
      e["name"] = name;
      e["shape"] = t.shape();
      params.push_back(std::move(e));
    }
  };
  add(learnable);
  add(state);
  j["params"] = std::move(params);
  return j;
}

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const std::string& buf, std::size_t at) {
  auto b = [&](std::size_t i) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(buf[at + i]));
  };
  return b(0) | (b(1) << 8) | (b(2) << 16) | (b(3) << 24);
}

template <typename T>
T field(const ordered_json& j, const char* name) {
  if (!j.contains(name))
    throw CheckpointError(std::string("manifest missing field: ") + name);
  try {
    return j.at(name).get<T>();
  } catch (const ordered_json::exception&) {
    throw CheckpointError(std::string("manifest field has wrong type: ") +
                          name);
  }
}

}  // namespace

void save_checkpoint(const FusionModel& m, const std::string& path) {
  if (!m.loaded()) throw ContractError("cannot save an unbuilt model");

  std::string manifest = build_manifest(m).dump();
  std::string out;
  out += "FACT";
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(manifest.size()));
  out += manifest;

  NamedTensors learnable, state;
  collect_params(m, learnable, state);
  auto blobs = [&](const NamedTensors& ts) {
    for (const auto& [name, t] : ts) {
      (void)name;
      for (std::size_t i = 0; i < t.size(); ++i) {
        float f = static_cast<float>(t.data()[i]);
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        put_u32(out, u);
      }
    }
  };
  blobs(learnable);
  blobs(state);

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open for writing: " + path);
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw CheckpointError("write failed: " + path);
}

FusionModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  std::string buf = std::move(ss).str();

  if (buf.size() < 12) throw CheckpointError("truncated checkpoint header");
  if (buf.compare(0, 4, "FACT") != 0) throw CheckpointError("bad magic");
  std::uint32_t version = get_u32(buf, 4);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  std::uint32_t mlen = get_u32(buf, 8);
  if (12 + static_cast<std::size_t>(mlen) > buf.size())
    throw CheckpointError("truncated manifest");

  ordered_json j;
  try {
    j = ordered_json::parse(buf.substr(12, mlen));
  } catch (const ordered_json::exception& e) {
    throw CheckpointError(std::string("manifest is not valid JSON: ") +
                          e.what());
  }

  FusionModel m;
  m.dataset = field<std::string>(j, "dataset");
  m.class_order = field<std::vector<std::string>>(j, "class_order");
  m.n_static = field<int>(j, "n_static");
  m.in_channels = field<int>(j, "in_channels");
  m.window_len = field<int>(j, "window_len");
  m.static_config.block_specs =
      field<std::vector<std::array<int, 3>>>(j, "static_blocks");
  m.static_config.num_outputs = field<int>(j, "static_outputs");
  m.dynamic_config.block_specs =
      field<std::vector<std::array<int, 3>>>(j, "dynamic_blocks");
  m.dynamic_config.num_outputs = field<int>(j, "dynamic_outputs");
  m.guidance_config.dwsep_specs =
      field<std::vector<std::array<int, 2>>>(j, "guidance_blocks");
  m.norm_mean = field<std::vector<double>>(j, "norm_mean");
  m.norm_std = field<std::vector<double>>(j, "norm_std");
  ordered_json cfg = field<ordered_json>(j, "config");
  if (!cfg.is_object()) throw CheckpointError("config echo must be an object");
  for (const auto& [k, v] : cfg.items()) {
    if (!v.is_string())
      throw CheckpointError("config echo values must be strings");
    m.config_echo.emplace_back(k, v.get<std::string>());
  }

  int n = static_cast<int>(m.class_order.size());
  if (n < 2 || m.n_static < 1 || m.n_static >= n)
    throw CheckpointError("manifest class split is inconsistent");
  if (m.static_config.num_outputs != m.n_static ||
      m.dynamic_config.num_outputs != n - m.n_static)
    throw CheckpointError("pathway outputs do not match the class split");
  if (m.in_channels < 1 || m.window_len < 1)
    throw CheckpointError("manifest geometry is inconsistent");
  if (!m.norm_mean.empty() &&
      (m.norm_mean.size() != static_cast<std::size_t>(m.in_channels) ||
       m.norm_std.size() != m.norm_mean.size()))
    throw CheckpointError("normalization stats do not match channel count");

  Rng rng(0);  // placeholder init; every value is overwritten below
  try {
    m.static_params = make_pathway(m.static_config, rng);
    m.dynamic_params = make_pathway(m.dynamic_config, rng);
    m.guidance_params = make_guidance(m.guidance_config, rng);
  } catch (const ContractError& e) {
    throw CheckpointError(std::string("manifest architecture is invalid: ") +
                          e.what());
  }

  NamedTensors learnable, state;
  collect_params(m, learnable, state);
  NamedTensors all = learnable;
  all.insert(all.end(), state.begin(), state.end());

  ordered_json params = field<ordered_json>(j, "params");
  if (!params.is_array() || params.size() != all.size())
    throw CheckpointError("parameter list does not match the architecture");

  std::size_t at = 12 + mlen;
  for (std::size_t i = 0; i < all.size(); ++i) {
    auto& [name, t] = all[i];
    const ordered_json& e = params[i];
    if (field<std::string>(e, "name") != name ||
        field<std::vector<int>>(e, "shape") != t.shape())
      throw CheckpointError("parameter list does not match the architecture");
    if (at + 4 * t.size() > buf.size())
      throw CheckpointError("truncated parameter blobs");
    for (std::size_t k = 0; k < t.size(); ++k, at += 4) {
      std::uint32_t u = get_u32(buf, at);
      float f;
      std::memcpy(&f, &u, 4);
      t.data()[k] = static_cast<double>(f);
    }
  }
  if (at != buf.size())
    throw CheckpointError("trailing bytes after parameter blobs");
  return m;
}

std::string checkpoint_manifest(const FusionModel& m) {
  return build_manifest(m).dump(2);
}

}  // namespace fusionact
