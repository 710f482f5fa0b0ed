#include "fusionact/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace fusionact {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end)
    throw ConfigError("config key '" + key + "' has a bad value: " + v);
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has a bad value: " + v);
  }
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        " is not key = value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("config line " + std::to_string(lineno) +
                        " has an empty key or value");
    if (!seen.insert(key).second)
      throw ConfigError("duplicate config key: " + key);

    if (key == "dataset") {
      if (value != "ucihar" && value != "motionsense")
        throw ConfigError("dataset must be ucihar or motionsense, got " +
                          value);
      cfg.dataset = value;
    } else if (key == "root") {
      cfg.root = value;
    } else if (key == "stage") {
      if (value != "1-static" && value != "1-dynamic" && value != "2")
        throw ConfigError("stage must be 1-static, 1-dynamic or 2, got " +
                          value);
      cfg.stage = value;
    } else if (key == "batch_size") {
      cfg.batch_size = parse_number<int>(key, value);
      if (cfg.batch_size < 2)
        throw ConfigError("batch_size must be at least 2");
    } else if (key == "epochs") {
      cfg.epochs = parse_number<int>(key, value);
      if (cfg.epochs < 1) throw ConfigError("epochs must be positive");
    } else if (key == "lr") {
      cfg.lr = parse_real(key, value);
      if (!(cfg.lr > 0)) throw ConfigError("lr must be positive");
    } else if (key == "seed") {
      cfg.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "freeze_experts") {
      if (value == "true")
        cfg.freeze_experts = true;
      else if (value == "false")
        cfg.freeze_experts = false;
      else
        throw ConfigError("freeze_experts must be true or false, got " +
                          value);
    } else if (key == "out") {
      cfg.out = value;
    } else {
      throw ConfigError("unknown config key: " + key);
    }
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(std::move(ss).str());
}

std::vector<std::pair<std::string, std::string>> echo_config(
    const RunConfig& cfg) {
  // shortest round-trip decimal for lr so the echo is canonical
  std::string lr = nlohmann::json(cfg.lr).dump();
  return {{"dataset", cfg.dataset},
          {"root", cfg.root},
          {"stage", cfg.stage},
          {"batch_size", std::to_string(cfg.batch_size)},
          {"epochs", std::to_string(cfg.epochs)},
          {"lr", lr},
          {"seed", std::to_string(cfg.seed)},
          {"freeze_experts", cfg.freeze_experts ? "true" : "false"},
          {"out", cfg.out}};
}

}  // namespace fusionact
