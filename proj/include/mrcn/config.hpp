#pragma once

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mrcn/arch.hpp"
#include "mrcn/data.hpp"
#include "mrcn/training.hpp"

namespace mrcn {

// Everything a command needs, as read from a config file.
struct RunConfig {
  ArchSpec arch;
  ReuseNetConfig reuse;
  TrainConfig train;
  SyntheticConfig data;
  std::uint64_t data_seed = 1;
  int threads = 1;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename V>
V parse_number(const std::string& s) {
  V v{};
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && s[0] == '+') ++first;
  const auto [p, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || p != last || first == last) throw ConfigError("'" + s + "' is not a valid number");
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("'" + s + "' is not a boolean");
}

inline std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<std::size_t>(item));
  }
  return out;
}

struct Binding {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename V, typename Field>
Binding number_binding(Field field) {
  return {[field](RunConfig& c, const std::string& s) { field(c) = parse_number<V>(s); },
          [field](const RunConfig& c) {
            RunConfig copy = c;
            if constexpr (std::is_floating_point_v<V>) return format_double(field(copy));
            else return std::to_string(field(copy));
          }};
}

// Ordered (section, key) table; the order is the emitted order.
inline const std::vector<std::pair<std::string, Binding>>& bindings() {
  using RC = RunConfig;
  static const std::vector<std::pair<std::string, Binding>> table = {
      {".threads", number_binding<int>([](RC& c) -> int& { return c.threads; })},

      {"arch.variant", {[](RC& c, const std::string& s) { c.arch.variant = parse_variant(s); },
                        [](const RC& c) { return std::string(to_string(c.arch.variant)); }}},
      {"arch.patch_size", number_binding<std::size_t>([](RC& c) -> std::size_t& { return c.arch.patch_size; })},
      {"arch.num_classes", number_binding<std::size_t>([](RC& c) -> std::size_t& { return c.arch.num_classes; })},
      {"arch.bottleneck_hw", number_binding<std::size_t>([](RC& c) -> std::size_t& { return c.arch.bottleneck_hw; })},
      {"arch.extra_conv_layers",
       number_binding<std::size_t>([](RC& c) -> std::size_t& { return c.arch.extra_conv_layers; })},
      {"arch.upsampler", {[](RC& c, const std::string& s) { c.arch.upsampler = parse_upsampler(s); },
                          [](const RC& c) { return std::string(to_string(c.arch.upsampler)); }}},

      {"reuse.instances", number_binding<std::size_t>([](RC& c) -> std::size_t& { return c.reuse.instances; })},
      {"reuse.init_mode", {[](RC& c, const std::string& s) { c.reuse.init_mode = parse_init_mode(s); },
                           [](const RC& c) { return std::string(to_string(c.reuse.init_mode)); }}},
      {"reuse.pretrained_checkpoint", {[](RC& c, const std::string& s) { c.reuse.pretrained_checkpoint = s; },
                                       [](const RC& c) { return c.reuse.pretrained_checkpoint; }}},

      {"train.learning_rate", number_binding<double>([](RC& c) -> double& { return c.train.learning_rate; })},
      {"train.momentum", number_binding<double>([](RC& c) -> double& { return c.train.momentum; })},
      {"train.batch_size", number_binding<std::size_t>([](RC& c) -> std::size_t& { return c.train.batch_size; })},
      {"train.max_epochs", number_binding<std::size_t>([](RC& c) -> std::size_t& { return c.train.max_epochs; })},
      {"train.weight_decay", number_binding<double>([](RC& c) -> double& { return c.train.weight_decay; })},
      {"train.lr_step_epochs",
       {[](RC& c, const std::string& s) { c.train.lr_step_epochs = parse_size_list(s); },
        [](const RC& c) {
          std::string out;
          for (std::size_t i = 0; i < c.train.lr_step_epochs.size(); ++i) {
            if (i) out += ", ";
            out += std::to_string(c.train.lr_step_epochs[i]);
          }
          return out;
        }}},
      {"train.lr_factor", number_binding<double>([](RC& c) -> double& { return c.train.lr_factor; })},
      {"train.early_stopping", {[](RC& c, const std::string& s) { c.train.early_stopping = parse_bool(s); },
                                [](const RC& c) { return std::string(c.train.early_stopping ? "true" : "false"); }}},
      {"train.seed", number_binding<std::uint64_t>([](RC& c) -> std::uint64_t& { return c.train.seed; })},
      {"train.train_patches", number_binding<std::size_t>([](RC& c) -> std::size_t& { return c.train.train_patches; })},
      {"train.validation_patches",
       number_binding<std::size_t>([](RC& c) -> std::size_t& { return c.train.validation_patches; })},

      {"data.seed", number_binding<std::uint64_t>([](RC& c) -> std::uint64_t& { return c.data_seed; })},
      {"data.tile_size", number_binding<std::size_t>([](RC& c) -> std::size_t& { return c.data.tile_size; })},
      {"data.label_fraction", number_binding<double>([](RC& c) -> double& { return c.data.label_fraction; })},
      {"data.voronoi_sites", number_binding<std::size_t>([](RC& c) -> std::size_t& { return c.data.voronoi_sites; })},
      {"data.ms_noise", number_binding<double>([](RC& c) -> double& { return c.data.ms_noise; })},
      {"data.pan_noise", number_binding<double>([](RC& c) -> double& { return c.data.pan_noise; })},
      {"data.texture_amplitude", number_binding<double>([](RC& c) -> double& { return c.data.texture_amplitude; })},
      {"data.signature_offset", number_binding<double>([](RC& c) -> double& { return c.data.signature_offset; })},
      {"data.speckle_fraction", number_binding<double>([](RC& c) -> double& { return c.data.speckle_fraction; })},
      {"data.speckle_size", number_binding<std::size_t>([](RC& c) -> std::size_t& { return c.data.speckle_size; })},
      {"data.train_tiles", number_binding<std::size_t>([](RC& c) -> std::size_t& { return c.data.train_tiles; })},
      {"data.validation_tiles",
       number_binding<std::size_t>([](RC& c) -> std::size_t& { return c.data.validation_tiles; })},
      {"data.test_tiles", number_binding<std::size_t>([](RC& c) -> std::size_t& { return c.data.test_tiles; })},
  };
  return table;
}

inline const Binding* find_binding(const std::string& qualified) {
  for (const auto& [k, b] : bindings()) {
    if (k == qualified) return &b;
  }
  return nullptr;
}

}  // namespace detail

// Checks cross-field constraints once all keys are known.
inline void validate_config(const RunConfig& c) {
  c.arch.validate();
  c.train.validate();
  if (c.threads < 1) throw ConfigError("threads must be >= 1");
  if (c.reuse.recurrent() && c.reuse.init_mode != InitMode::plain && c.reuse.pretrained_checkpoint.empty()) {
    throw ConfigError("init_mode " + std::string(to_string(c.reuse.init_mode)) + " needs pretrained_checkpoint");
  }
  if (!(c.data.label_fraction > 0 && c.data.label_fraction <= 1)) throw ConfigError("label_fraction must be in (0, 1]");
  if (!(c.data.speckle_fraction >= 0 && c.data.speckle_fraction < 1)) {
    throw ConfigError("speckle_fraction must be in [0, 1)");
  }
  if (c.data.tile_size % kPanScale != 0) throw ConfigError("tile_size must be a multiple of 4");
}

// `key = value` lines, `#` comments, [section] headers. Keys before the
// first header are global (only `threads`). `source` prefixes messages.
inline RunConfig parse_config(const std::string& text, const std::string& source = "config") {
  RunConfig cfg;
  std::istringstream is(text);
  std::string raw, section;
  std::set<std::string> seen;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) { throw ConfigError(source + ":" + std::to_string(lineno) + ": " + msg); };
  while (std::getline(is, raw)) {
    ++lineno;
    std::string line = raw;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("malformed section header '" + line + "'");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section != "train" && section != "arch" && section != "data" && section != "reuse") {
        fail("unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected 'key = value', got '" + line + "'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    std::string qualified = section + "." + key;
    // threads is accepted globally or under [train].
    if (key == "threads" && section == "train") qualified = ".threads";
    const detail::Binding* b = detail::find_binding(qualified);
    if (!b) fail(section.empty() ? "unknown key '" + key + "' outside a section" : "unknown key '" + key + "' in [" + section + "]");
    if (!seen.insert(qualified).second) fail("duplicate key '" + key + "'");
    if (value.empty() && qualified != "reuse.pretrained_checkpoint") fail("missing value for '" + key + "'");
    try {
      b->set(cfg, value);
    } catch (const ConfigError& e) {
      fail(key + ": " + e.what());
    }
  }
  try {
    validate_config(cfg);
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file: " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), path.string());
}

// Full config with every key, parseable by parse_config.
inline std::string effective_config(const RunConfig& cfg) {
  std::ostringstream os;
  std::string section = "";
  for (const auto& [qualified, b] : detail::bindings()) {
    const auto dot = qualified.find('.');
    const std::string sec = qualified.substr(0, dot);
    if (sec != section) {
      section = sec;
      os << "\n[" << sec << "]\n";
    }
    const std::string v = b.get(cfg);
    os << qualified.substr(dot + 1) << " =" << (v.empty() ? "" : " " + v) << "\n";
  }
  return os.str();
}

// Applies MRCN_THREADS when set.
inline void apply_environment(RunConfig& cfg) {
  if (const char* env = std::getenv("MRCN_THREADS"); env && *env) {
    try {
      cfg.threads = detail::parse_number<int>(detail::trim(env));
    } catch (const ConfigError&) {
      throw ConfigError(std::string("MRCN_THREADS: '") + env + "' is not an integer");
    }
    if (cfg.threads < 1) throw ConfigError("MRCN_THREADS must be >= 1");
  }
}

// Synthetic-data settings with the class count taken from [arch].
inline SyntheticConfig synthetic_config(const RunConfig& cfg) {
  SyntheticConfig s = cfg.data;
  s.num_classes = cfg.arch.num_classes;
  return s;
}

}  // namespace mrcn
