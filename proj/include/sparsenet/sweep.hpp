#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sparsenet/analyzers.hpp"
#include "sparsenet/config.hpp"
#include "sparsenet/topology.hpp"

namespace sparsenet {

// A [sweep] section expands into the cross product
//   variant x blocks-or-depth x growth_rate x connectivity
// where connectivity is one of
//   path = 14, 28            default split per path
//   path = 14 + split_stride = 7   (14,0) (7,7) (0,14)
//   splits = 14-0, 10-4, 7-7       explicit farthest-nearest pairs
//   param_budget = 1000000         largest path under the budget
//
// Lists are comma separated; growth_rate also takes a..b or a..b:step;
// blocks lists are separated by ';' since one arrangement is "8-12-16".
struct SweepPoint {
  std::string name;
  NetworkSpec spec;
  std::optional<PathSolution> solved;  // set when chosen by budget
  bool over_budget = false;            // even path 1 exceeds the budget; kept at path 1
};

namespace detail {

inline std::vector<std::size_t> parse_count_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  for (const auto& item : split(value, ',')) {
    if (item.empty()) continue;
    const auto dots = item.find("..");
    if (dots == std::string::npos) {
      out.push_back(parse_count(key, item));
      continue;
    }
    const auto colon = item.find(':', dots);
    const std::size_t lo = parse_count(key, trim(item.substr(0, dots)));
    const std::size_t hi = parse_count(key, trim(item.substr(dots + 2, colon == std::string::npos ? std::string::npos : colon - dots - 2)));
    const std::size_t step = colon == std::string::npos ? 1 : parse_count(key, trim(item.substr(colon + 1)));
    if (step == 0) throw ConfigError(key + ": range step must be >= 1");
    for (std::size_t v = lo; v <= hi; v += step) out.push_back(v);
  }
  return out;
}

// 1000000, 1e6, 1M, 250k
inline std::uint64_t parse_budget(const std::string& value) {
  std::string digits = value;
  double scale = 1;
  if (!digits.empty() && (digits.back() == 'M' || digits.back() == 'm')) {
    scale = 1e6;
    digits.pop_back();
  } else if (!digits.empty() && (digits.back() == 'K' || digits.back() == 'k')) {
    scale = 1e3;
    digits.pop_back();
  }
  const double v = parse_real("param_budget", digits) * scale;
  if (!(v >= 1)) throw ConfigError("param_budget: must be >= 1, got '" + value + "'");
  return static_cast<std::uint64_t>(v);
}

}  // namespace detail

// Every split of `path` from (path, 0) down to (0, path) in steps of
// `stride`; both ends are always present.
inline std::vector<ConnectivityRule> stride_splits(std::size_t path, std::size_t stride) {
  if (stride == 0) throw ConfigError("split_stride: must be >= 1");
  std::vector<ConnectivityRule> out;
  for (std::size_t f = path;; f = f >= stride ? f - stride : 0) {
    out.push_back({f, path - f});
    if (f == 0) break;
  }
  return out;
}

inline std::string sweep_point_name(const NetworkSpec& s) {
  return std::string(variant_name(s.variant)) + "-" + describe_blocks(s.blocks) + "-k" + std::to_string(s.growth_rate) + "-" +
         describe(s.rule);
}

inline std::vector<SweepPoint> generate_sweep(const ConfigFile& cfg) {
  if (!cfg.has("sweep")) throw ConfigError("missing [sweep] section");
  const auto& sw = cfg.section("sweep");
  reject_unknown_keys(sw, "sweep",
                      {"variant", "blocks", "depth", "growth_rate", "path", "split_stride", "splits", "param_budget",
                       "num_classes", "input_size"});
  auto get = [&](const char* key) -> std::optional<std::string> {
    auto it = sw.find(key);
    if (it == sw.end()) return std::nullopt;
    return it->second;
  };

  std::vector<Variant> variants;
  for (const auto& v : detail::split(get("variant").value_or("bc"), ',')) {
    const auto parsed = parse_variant(v);
    if (!parsed) throw ConfigError("variant: expected basic, bc or abc, got '" + v + "'");
    variants.push_back(*parsed);
  }

  const auto blocks_text = get("blocks");
  const auto depth_text = get("depth");
  if (blocks_text.has_value() == depth_text.has_value()) throw ConfigError("[sweep]: give exactly one of blocks or depth");

  if (!get("growth_rate")) throw ConfigError("[sweep]: missing required key 'growth_rate'");
  const auto growth = detail::parse_count_list("growth_rate", *get("growth_rate"));

  const auto path_text = get("path"), stride_text = get("split_stride"), splits_text = get("splits"),
             budget_text = get("param_budget");
  if ((path_text.has_value() + splits_text.has_value() + budget_text.has_value()) != 1) {
    throw ConfigError("[sweep]: give exactly one of path, splits or param_budget");
  }
  if (stride_text && !path_text) throw ConfigError("split_stride: needs path");

  std::vector<ConnectivityRule> rules;
  if (path_text) {
    for (const auto& item : detail::split(*path_text, ',')) {
      if (item == "dense") {
        if (stride_text) throw ConfigError("split_stride: cannot split a dense path");
        rules.push_back(ConnectivityRule::dense());
        continue;
      }
      const std::size_t p = parse_count("path", item);
      if (stride_text) {
        for (const auto& r : stride_splits(p, parse_count("split_stride", *stride_text))) rules.push_back(r);
      } else {
        rules.push_back(ConnectivityRule::from_path(p));
      }
    }
  } else if (splits_text) {
    for (const auto& item : detail::split(*splits_text, ',')) {
      const auto parts = detail::split(item, '-');
      if (parts.size() != 2) throw ConfigError("splits: expected farthest-nearest pairs, got '" + item + "'");
      rules.push_back({parse_count("splits", parts[0]), parse_count("splits", parts[1])});
    }
  }
  std::optional<std::uint64_t> budget;
  if (budget_text) {
    budget = detail::parse_budget(*budget_text);
    rules.push_back(ConnectivityRule::from_path(1));  // placeholder, replaced per point
  }

  std::size_t num_classes = 10, input_size = 32;
  if (auto v = get("num_classes")) num_classes = parse_count("num_classes", *v);
  if (auto v = get("input_size")) input_size = parse_count("input_size", *v);

  std::vector<SweepPoint> out;
  for (Variant variant : variants) {
    std::vector<std::vector<std::size_t>> arrangements;
    if (blocks_text) {
      for (const auto& item : detail::split(*blocks_text, ';')) arrangements.push_back(parse_blocks("blocks", item));
    } else {
      for (std::size_t depth : detail::parse_count_list("depth", *depth_text)) {
        auto b = blocks_for_depth(variant, depth);
        if (!b) {
          throw ConfigError("depth: " + std::to_string(depth) + " has no equal 3-block arrangement for " +
                            std::string(variant_name(variant)));
        }
        arrangements.push_back(*b);
      }
    }
    for (const auto& blocks : arrangements) {
      for (std::size_t k : growth) {
        for (const auto& rule : rules) {
          SweepPoint pt;
          pt.spec = make_spec(variant, blocks, k, rule, num_classes);
          pt.spec.input_size = input_size;
          if (auto problems = validate_spec(pt.spec); !problems.empty()) {
            throw ConfigError(sweep_point_name(pt.spec) + ": " + problems.front());
          }
          if (budget) {
            // Infeasible points stay in the product so a grid keeps its shape;
            // callers see the flag.
            if (count_params(pt.spec) > *budget) {
              pt.over_budget = true;
            } else {
              pt.solved = solve_path(pt.spec, *budget);
              pt.spec.rule = ConnectivityRule::from_path(pt.solved->path);
            }
          }
          pt.name = sweep_point_name(pt.spec);
          out.push_back(std::move(pt));
        }
      }
    }
  }
  if (out.empty()) throw ConfigError("[sweep]: the requested product is empty");
  return out;
}

inline std::vector<AnalysisReport> analyze_sweep(const std::vector<SweepPoint>& points) {
  std::vector<AnalysisReport> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(analyze(p.spec, p.name));
  return out;
}

}  // namespace sparsenet
