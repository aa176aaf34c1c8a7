#pragma once

#include <charconv>
#include <cstddef>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sparsenet/topology.hpp"

// Line-oriented `key = value` files with [section] headers. `#` starts a
// comment. Shared by model, training and sweep configuration.

namespace sparsenet {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using ConfigSection = std::map<std::string, std::string>;

struct ConfigFile {
  std::map<std::string, ConfigSection> sections;

  bool has(const std::string& section) const { return sections.count(section) != 0; }
  const ConfigSection& section(const std::string& name) const {
    static const ConfigSection empty;
    auto it = sections.find(name);
    return it == sections.end() ? empty : it->second;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

inline ConfigFile parse_config(std::string_view text) {
  ConfigFile cfg;
  std::string current;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      current = detail::trim(std::string_view(t).substr(1, t.size() - 2));
      cfg.sections[current];
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    if (current.empty()) throw ConfigError("line " + std::to_string(line_no) + ": key outside of a [section]");
    const std::string key = detail::trim(std::string_view(t).substr(0, eq));
    const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    if (!cfg.sections[current].emplace(key, value).second) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "' in [" + current + "]");
    }
  }
  return cfg;
}

inline ConfigFile load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline std::size_t parse_count(const std::string& key, const std::string& value) {
  std::size_t out = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  return out;
}

inline double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double out = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
}

// "8,12,16" or "8-12-16"
inline std::vector<std::size_t> parse_blocks(const std::string& key, const std::string& value) {
  const char sep = value.find(',') != std::string::npos ? ',' : '-';
  std::vector<std::size_t> out;
  for (const auto& part : detail::split(value, sep)) out.push_back(parse_count(key, part));
  return out;
}

inline void reject_unknown_keys(const ConfigSection& section, const std::string& name,
                                const std::set<std::string>& allowed) {
  for (const auto& [key, value] : section) {
    if (!allowed.count(key)) throw ConfigError("[" + name + "]: unknown key '" + key + "'");
  }
}

// NetworkSpec from the [model] section. `path` expands to the default split
// unless farthest/nearest are given; `path = dense` keeps every predecessor.
inline NetworkSpec spec_from_config(const ConfigFile& cfg) {
  if (!cfg.has("model")) throw ConfigError("missing [model] section");
  const ConfigSection& m = cfg.section("model");
  reject_unknown_keys(m, "model",
                      {"variant", "blocks", "growth_rate", "path", "farthest", "nearest", "compression",
                       "stem_channels", "num_classes", "attention_reduction", "input_size"});
  auto require = [&](const std::string& key) -> const std::string& {
    auto it = m.find(key);
    if (it == m.end()) throw ConfigError("[model]: missing required key '" + key + "'");
    return it->second;
  };
  const auto variant = parse_variant(require("variant"));
  if (!variant) throw ConfigError("variant: expected basic, bc or abc, got '" + require("variant") + "'");
  const auto blocks = parse_blocks("blocks", require("blocks"));
  const std::size_t k = parse_count("growth_rate", require("growth_rate"));

  ConnectivityRule rule;
  const bool has_path = m.count("path"), has_far = m.count("farthest"), has_near = m.count("nearest");
  if (has_path && m.at("path") == "dense") {
    if (has_far || has_near) throw ConfigError("path = dense cannot be combined with farthest/nearest");
    rule = ConnectivityRule::dense();
  } else if (has_far && has_near) {
    rule = {parse_count("farthest", m.at("farthest")), parse_count("nearest", m.at("nearest"))};
    if (has_path && parse_count("path", m.at("path")) != rule.path()) {
      throw ConfigError("path: " + m.at("path") + " differs from farthest + nearest = " + std::to_string(rule.path()));
    }
  } else if (has_path) {
    const std::size_t p = parse_count("path", m.at("path"));
    rule = ConnectivityRule::from_path(p);
    if (has_far) {
      const std::size_t f = parse_count("farthest", m.at("farthest"));
      if (f > p) throw ConfigError("farthest: exceeds path");
      rule = {f, p - f};
    } else if (has_near) {
      const std::size_t r = parse_count("nearest", m.at("nearest"));
      if (r > p) throw ConfigError("nearest: exceeds path");
      rule = {p - r, r};
    }
  } else {
    throw ConfigError("[model]: give path, or both farthest and nearest");
  }

  NetworkSpec s = make_spec(*variant, blocks, k, rule);
  if (m.count("compression")) s.compression = parse_real("compression", m.at("compression"));
  if (m.count("stem_channels")) s.stem_channels = parse_count("stem_channels", m.at("stem_channels"));
  if (m.count("num_classes")) s.num_classes = parse_count("num_classes", m.at("num_classes"));
  if (m.count("attention_reduction")) {
    s.attention_reduction = parse_count("attention_reduction", m.at("attention_reduction"));
  }
  if (m.count("input_size")) s.input_size = parse_count("input_size", m.at("input_size"));
  return s;
}

// Inverse of spec_from_config, used to record the model next to run outputs.
inline std::string spec_to_config(const NetworkSpec& s) {
  std::ostringstream os;
  os << "[model]\n";
  os << "variant = " << variant_name(s.variant) << "\n";
  os << "blocks = ";
  for (std::size_t b = 0; b < s.blocks.size(); ++b) os << (b ? "," : "") << s.blocks[b];
  os << "\n";
  os << "growth_rate = " << s.growth_rate << "\n";
  if (s.rule.is_dense()) {
    os << "path = dense\n";
  } else {
    os << "farthest = " << s.rule.farthest << "\n";
    os << "nearest = " << s.rule.nearest << "\n";
  }
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, s.compression);
  os << "compression = " << std::string_view(buf, res.ptr - buf) << "\n";
  os << "stem_channels = " << s.stem_channels << "\n";
  os << "num_classes = " << s.num_classes << "\n";
  os << "attention_reduction = " << s.attention_reduction << "\n";
  os << "input_size = " << s.input_size << "\n";
  return os.str();
}

}  // namespace sparsenet
