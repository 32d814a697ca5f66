#pragma once

// GroundingConfig and its flat `key = value` file format.
//
// One key per line, `#` starts a comment, blank lines are ignored. Later
// sources override earlier ones: built-in defaults, then the config file,
// then command-line overrides.

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "groundbox/attention.hpp"
#include "groundbox/errors.hpp"
#include "groundbox/grounding.hpp"

namespace groundbox {

struct GroundingConfig {
  // model
  std::size_t embed_dim = 128;
  std::size_t frames = 5;
  std::size_t snippets = 5;
  std::size_t proposals = 20;
  double lambda = 0.9;
  double margin = 0.1;
  double dropout = 0.2;
  std::size_t attn_layers = 2;
  std::size_t attn_heads = 6;
  std::size_t attn_hidden = 256;
  bool positional_encoding = true;
  bool penalty_halved_sum = false;
  LossMode mode = LossMode::FullModel;

  // optimisation
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t epochs = 30;
  std::size_t batch = 16;
  std::size_t negatives = 1;
  std::uint64_t seed = 1;
  std::size_t workers = 1;

  // data
  std::size_t feature_dim = 16;
  std::size_t vocab_size = 20;
  double sigma = 0.1;
  std::size_t referring = 0;
  std::size_t train_segments = 500;
  std::size_t val_segments = 100;
  std::size_t test_segments = 100;
  std::size_t segment_frames = 10;
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  double presence = 0.6;
  double distractor_noise = 0.5;
  bool label_timing = false;  // each label has a preferred span position

  AttentionConfig attention() const {
    AttentionConfig a;
    a.layers = attn_layers;
    a.heads = attn_heads;
    a.hidden = attn_hidden;
    a.dropout = dropout;
    a.positional_encoding = positional_encoding;
    return a;
  }

  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (!(lambda >= 0.0 && lambda <= 1.0)) fail("lambda must lie in [0, 1]");
    if (!(margin > 0.0)) fail("margin must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
    if (!(lr >= 0.0)) fail("lr must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
    if (!(sigma >= 0.0)) fail("sigma must be non-negative");
    if (!(presence > 0.0 && presence <= 1.0)) fail("presence must lie in (0, 1]");
    if (!(distractor_noise >= 0.0 && distractor_noise <= 1.0)) fail("distractor_noise must lie in [0, 1]");
    for (auto [name, v] : std::initializer_list<std::pair<const char*, std::size_t>>{
             {"embed_dim", embed_dim}, {"frames", frames}, {"snippets", snippets},
             {"proposals", proposals}, {"attn_layers", attn_layers}, {"attn_heads", attn_heads},
             {"attn_hidden", attn_hidden}, {"batch", batch}, {"negatives", negatives},
             {"workers", workers}, {"feature_dim", feature_dim}, {"vocab_size", vocab_size},
             {"segment_frames", segment_frames}, {"min_objects", min_objects},
             {"max_objects", max_objects}}) {
      if (v < 1) fail(std::string(name) + " must be at least 1");
    }
    if (snippets > frames) fail("snippets (T') must not exceed frames (T)");
    if (attn_hidden < attn_heads) fail("attn_hidden must be at least attn_heads");
    if (referring >= vocab_size) fail("referring expressions must leave at least one object label");
    if (min_objects > max_objects) fail("min_objects exceeds max_objects");
    if (max_objects > vocab_size - referring) {
      fail("max_objects (" + std::to_string(max_objects) + ") exceeds the " +
           std::to_string(vocab_size - referring) + " object labels in the vocabulary");
    }
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  std::from_chars_result res{};
  if constexpr (std::is_floating_point_v<T>) {
    // from_chars for double is available in libstdc++ 11.
    res = std::from_chars(first, last, value);
  } else {
    if (!text.empty() && text[0] == '-') throw ConfigError(key + ": expected a non-negative integer");
    res = std::from_chars(first, last, value);
  }
  if (res.ec != std::errc() || res.ptr != last) {
    throw ConfigError(key + ": cannot parse '" + text + "'");
  }
  return value;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true" || text == "on" || text == "yes") return true;
  if (text == "0" || text == "false" || text == "off" || text == "no") return false;
  throw ConfigError(key + ": expected a boolean, got '" + text + "'");
}

struct ConfigField {
  std::function<void(GroundingConfig&, const std::string&)> set;
  std::function<std::string(const GroundingConfig&)> get;
};

inline std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

template <class T>
ConfigField field(T GroundingConfig::*member, std::string key) {
  return {[member, key](GroundingConfig& c, const std::string& text) {
            if constexpr (std::is_same_v<T, bool>) {
              c.*member = parse_bool(key, text);
            } else {
              c.*member = parse_number<T>(key, text);
            }
          },
          [member](const GroundingConfig& c) {
            if constexpr (std::is_same_v<T, bool>) {
              return std::string((c.*member) ? "1" : "0");
            } else if constexpr (std::is_floating_point_v<T>) {
              return format_double(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          }};
}

// Canonical keys in output order.
inline const std::vector<std::pair<std::string, ConfigField>>& config_fields() {
  static const std::vector<std::pair<std::string, ConfigField>> fields = [] {
    std::vector<std::pair<std::string, ConfigField>> f;
    auto add = [&f](const std::string& key, ConfigField cf) { f.emplace_back(key, std::move(cf)); };
    add("embed_dim", field(&GroundingConfig::embed_dim, "embed_dim"));
    add("frames", field(&GroundingConfig::frames, "frames"));
    add("snippets", field(&GroundingConfig::snippets, "snippets"));
    add("proposals", field(&GroundingConfig::proposals, "proposals"));
    add("lambda", field(&GroundingConfig::lambda, "lambda"));
    add("margin", field(&GroundingConfig::margin, "margin"));
    add("dropout", field(&GroundingConfig::dropout, "dropout"));
    add("attn_layers", field(&GroundingConfig::attn_layers, "attn_layers"));
    add("attn_heads", field(&GroundingConfig::attn_heads, "attn_heads"));
    add("attn_hidden", field(&GroundingConfig::attn_hidden, "attn_hidden"));
    add("positional_encoding", field(&GroundingConfig::positional_encoding, "positional_encoding"));
    add("penalty_halved_sum", field(&GroundingConfig::penalty_halved_sum, "penalty_halved_sum"));
    add("mode", {[](GroundingConfig& c, const std::string& text) { c.mode = parse_mode(text); },
                 [](const GroundingConfig& c) { return std::string(mode_name(c.mode)); }});
    add("lr", field(&GroundingConfig::lr, "lr"));
    add("momentum", field(&GroundingConfig::momentum, "momentum"));
    add("epochs", field(&GroundingConfig::epochs, "epochs"));
    add("batch", field(&GroundingConfig::batch, "batch"));
    add("negatives", field(&GroundingConfig::negatives, "negatives"));
    add("seed", field(&GroundingConfig::seed, "seed"));
    add("workers", field(&GroundingConfig::workers, "workers"));
    add("feature_dim", field(&GroundingConfig::feature_dim, "feature_dim"));
    add("vocab_size", field(&GroundingConfig::vocab_size, "vocab_size"));
    add("sigma", field(&GroundingConfig::sigma, "sigma"));
    add("referring", field(&GroundingConfig::referring, "referring"));
    add("train_segments", field(&GroundingConfig::train_segments, "train_segments"));
    add("val_segments", field(&GroundingConfig::val_segments, "val_segments"));
    add("test_segments", field(&GroundingConfig::test_segments, "test_segments"));
    add("segment_frames", field(&GroundingConfig::segment_frames, "segment_frames"));
    add("min_objects", field(&GroundingConfig::min_objects, "min_objects"));
    add("max_objects", field(&GroundingConfig::max_objects, "max_objects"));
    add("presence", field(&GroundingConfig::presence, "presence"));
    add("distractor_noise", field(&GroundingConfig::distractor_noise, "distractor_noise"));
    add("label_timing", field(&GroundingConfig::label_timing, "label_timing"));
    return f;
  }();
  return fields;
}

// Short names matching the usual notation.
inline const std::map<std::string, std::string>& config_aliases() {
  static const std::map<std::string, std::string> aliases = {
      {"d", "embed_dim"},     {"T", "frames"},        {"T_prime", "snippets"},
      {"N", "proposals"},     {"delta", "margin"},    {"D_in", "feature_dim"},
      {"V", "vocab_size"},    {"batch_size", "batch"}};
  return aliases;
}

}  // namespace detail

/// Sets one key (canonical name or alias) from its textual value.
inline void set_config_value(GroundingConfig& cfg, const std::string& key, const std::string& value) {
  std::string canonical = key;
  if (auto it = detail::config_aliases().find(key); it != detail::config_aliases().end()) {
    canonical = it->second;
  }
  for (const auto& [name, f] : detail::config_fields()) {
    if (name == canonical) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

/// Applies `key = value` lines on top of `cfg`.
inline void apply_config_text(GroundingConfig& cfg, std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
    }
    try {
      set_config_value(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline GroundingConfig load_config(const std::string& path, GroundingConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  apply_config_text(base, in, path);
  return base;
}

inline std::string config_value(const GroundingConfig& cfg, const std::string& key) {
  for (const auto& [name, f] : detail::config_fields())
    if (name == key) return f.get(cfg);
  throw ConfigError("unknown config key '" + key + "'");
}

/// Every canonical key with its current value, in declaration order.
inline std::vector<std::pair<std::string, std::string>> config_entries(const GroundingConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [name, f] : detail::config_fields()) out.emplace_back(name, f.get(cfg));
  return out;
}

inline std::string format_config(const GroundingConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_entries(cfg)) out += k + " = " + v + "\n";
  return out;
}

}  // namespace groundbox
