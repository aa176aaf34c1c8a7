#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "sparsenet/topology.hpp"

// Static counting straight from a NetworkSpec. Deliberately does not go
// through build_layer_graph so it can cross-check the model builder.

namespace sparsenet {

struct ParamGroups {
  std::uint64_t stem = 0;
  std::uint64_t layers = 0;  // composite-layer convs and BNs
  std::uint64_t gates = 0;   // attention gates
  std::uint64_t transitions = 0;
  std::uint64_t head = 0;    // final BN + linear

  std::uint64_t total() const { return stem + layers + gates + transitions + head; }
};

struct AnalysisReport {
  std::string name;
  NetworkSpec spec;
  ParamGroups params;
  std::uint64_t total_params = 0;
  std::uint64_t running_stats = 0;  // BN running mean/var, not trainable
  std::uint64_t flops = 0;
  std::uint64_t connections = 0;
  std::uint64_t depth = 0;
};

namespace detail {

struct Counter {
  ParamGroups params;
  std::uint64_t running = 0;
  std::uint64_t flops = 0;

  // conv with BN in front: weights + 2*cin affine, running stats 2*cin
  std::uint64_t bn_conv(std::uint64_t cin, std::uint64_t cout, std::uint64_t kernel, std::uint64_t hw) {
    running += 2 * cin;
    flops += 2 * hw * hw * cout * cin * kernel * kernel;
    return 2 * cin + cout * cin * kernel * kernel;
  }
};

}  // namespace detail

inline AnalysisReport analyze(const NetworkSpec& s, std::string name = {}) {
  if (auto problems = validate_spec(s); !problems.empty()) throw SpecError(problems);
  detail::Counter c;
  const std::uint64_t k = s.growth_rate;
  const bool bottleneck = uses_bottleneck(s.variant);
  const bool attention = uses_attention(s.variant);
  const std::uint64_t d = gate_hidden_width(s);
  std::uint64_t hw = s.input_size;

  c.params.stem = 3 * s.stem_channels * 9;
  c.flops += 2 * hw * hw * s.stem_channels * 3 * 9;

  std::uint64_t c0 = s.stem_channels;
  for (std::size_t b = 0; b < s.blocks.size(); ++b) {
    for (std::size_t i = 1; i <= s.blocks[b]; ++i) {
      const auto src = input_sources(i, s.rule);
      std::uint64_t cin = 0;
      for (std::size_t j : src) cin += j == 0 ? c0 : k;
      if (bottleneck) {
        c.params.layers += c.bn_conv(cin, 4 * k, 1, hw) + c.bn_conv(4 * k, k, 3, hw);
      } else {
        c.params.layers += c.bn_conv(cin, k, 3, hw);
      }
      if (attention) {
        const std::uint64_t ca = bottleneck ? 4 * k : cin;
        c.params.gates += c.bn_conv(ca, d, 1, 1) + c.bn_conv(ca + d, k, 1, 1);
      }
    }
    const std::uint64_t out = c0 + s.blocks[b] * k;
    if (b + 1 < s.blocks.size()) {
      const auto next = static_cast<std::uint64_t>(std::floor(s.compression * static_cast<double>(out)));
      c.params.transitions += c.bn_conv(out, next, 1, hw);
      c0 = next;
      hw /= 2;
    } else {
      c.running += 2 * out;
      c.params.head = 2 * out + s.num_classes * out + s.num_classes;
      c.flops += 2 * s.num_classes * out;
    }
  }

  AnalysisReport r;
  r.name = std::move(name);
  r.spec = s;
  r.params = c.params;
  r.total_params = c.params.total();
  r.running_stats = c.running;
  r.flops = c.flops;
  r.connections = count_connections(s);
  r.depth = reported_depth(s);
  return r;
}

inline std::uint64_t count_params(const NetworkSpec& s) { return analyze(s).total_params; }

// Convolutions and the final linear at 2 FLOPs per multiply-accumulate.
inline std::uint64_t count_flops(const NetworkSpec& s) { return analyze(s).flops; }

struct PathSolution {
  std::size_t path = 0;
  std::uint64_t params = 0;
  bool saturated = false;  // path reached the longest block: wiring is dense
};

// Largest path whose parameter count fits the budget. Paths beyond the
// longest block wire identically, so the search stops there.
inline PathSolution solve_path(NetworkSpec s, std::uint64_t budget) {
  std::size_t longest = 0;
  for (std::size_t l : s.blocks) longest = std::max(longest, l);
  s.rule = ConnectivityRule::from_path(1);
  const auto floor_cost = count_params(s);
  if (floor_cost > budget) {
    throw std::invalid_argument("budget " + std::to_string(budget) + " is below the path=1 cost of " +
                                std::to_string(floor_cost) + " parameters");
  }
  PathSolution best{1, floor_cost, longest <= 1};
  for (std::size_t p = 2; p <= longest; ++p) {
    s.rule = ConnectivityRule::from_path(p);
    const auto cost = count_params(s);
    if (cost > budget) break;
    best = {p, cost, p == longest};
  }
  return best;
}

// ----------------------------------------------------------------- presets

struct NamedSpec {
  std::string name;
  NetworkSpec spec;
};

// The V1..V4 setups for each variant plus the DenseNet-bc reference points.
inline std::vector<NamedSpec> preset_specs(std::size_t num_classes = 10) {
  struct Size {
    const char* tag;
    std::vector<std::size_t> blocks;
    std::size_t k, path;
  };
  const std::vector<Size> sizes{{"v1", {8, 12, 16}, 16, 14},
                                {"v2", {12, 18, 24}, 24, 21},
                                {"v3", {16, 24, 32}, 32, 28},
                                {"v4", {20, 30, 40}, 50, 35}};
  std::vector<NamedSpec> out;
  for (Variant v : {Variant::basic, Variant::bc, Variant::abc}) {
    for (const auto& sz : sizes) {
      const std::string prefix = v == Variant::basic ? "sparsenet-" : "sparsenet-" + std::string(variant_name(v)) + "-";
      out.push_back({prefix + sz.tag, make_spec(v, sz.blocks, sz.k, ConnectivityRule::from_path(sz.path), num_classes)});
    }
  }
  out.push_back({"densenet-bc-100-12", make_spec(Variant::bc, {16, 16, 16}, 12, ConnectivityRule::dense(), num_classes)});
  out.push_back({"densenet-bc-190-40", make_spec(Variant::bc, {31, 31, 31}, 40, ConnectivityRule::dense(), num_classes)});
  out.push_back({"densenet-bc-250-24", make_spec(Variant::bc, {41, 41, 41}, 24, ConnectivityRule::dense(), num_classes)});
  return out;
}

inline std::optional<NetworkSpec> find_preset(std::string_view name, std::size_t num_classes = 10) {
  for (auto& p : preset_specs(num_classes))
    if (p.name == name) return p.spec;
  return std::nullopt;
}

// ------------------------------------------------------------------ output

enum class ReportFormat { text, csv, json_lines };

inline ReportFormat parse_report_format(std::string_view s) {
  if (s == "text") return ReportFormat::text;
  if (s == "csv") return ReportFormat::csv;
  if (s == "json" || s == "jsonl" || s == "json-lines") return ReportFormat::json_lines;
  throw std::invalid_argument("unknown report format '" + std::string(s) + "' (expected text, csv or json-lines)");
}

inline constexpr std::string_view kReportCsvHeader = "name,variant,depth,growth,path,params,flops,connections";

inline std::string path_field(const ConnectivityRule& r) { return r.is_dense() ? "dense" : std::to_string(r.path()); }

inline std::string millions(std::uint64_t n) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(n >= 10'000'000 ? 1 : 2) << static_cast<double>(n) / 1e6 << "M";
  return os.str();
}

inline nlohmann::ordered_json report_json(const AnalysisReport& r) {
  nlohmann::ordered_json j;
  j["name"] = r.name;
  j["variant"] = std::string(variant_name(r.spec.variant));
  j["blocks"] = r.spec.blocks;
  j["depth"] = r.depth;
  j["growth"] = r.spec.growth_rate;
  if (r.spec.rule.is_dense()) {
    j["path"] = "dense";
  } else {
    j["path"] = r.spec.rule.path();
    j["farthest"] = r.spec.rule.farthest;
    j["nearest"] = r.spec.rule.nearest;
  }
  j["compression"] = r.spec.compression;
  j["num_classes"] = r.spec.num_classes;
  j["params"] = r.total_params;
  j["params_by_group"] = {{"stem", r.params.stem},
                          {"layers", r.params.layers},
                          {"gates", r.params.gates},
                          {"transitions", r.params.transitions},
                          {"head", r.params.head}};
  j["running_stats"] = r.running_stats;
  j["flops"] = r.flops;
  j["input_size"] = r.spec.input_size;
  j["connections"] = r.connections;
  return j;
}

inline std::string emit_report(const std::vector<AnalysisReport>& reports, ReportFormat format) {
  std::ostringstream os;
  switch (format) {
    case ReportFormat::csv:
      os << kReportCsvHeader << "\n";
      for (const auto& r : reports) {
        os << r.name << "," << variant_name(r.spec.variant) << "," << r.depth << "," << r.spec.growth_rate << ","
           << path_field(r.spec.rule) << "," << r.total_params << "," << r.flops << "," << r.connections << "\n";
      }
      break;
    case ReportFormat::json_lines:
      for (const auto& r : reports) os << report_json(r).dump() << "\n";
      break;
    case ReportFormat::text:
      for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        if (i) os << "\n";
        if (!r.name.empty()) os << "name:         " << r.name << "\n";
        os << "variant:      " << variant_name(r.spec.variant) << "\n";
        os << "blocks:       " << describe_blocks(r.spec.blocks) << "\n";
        os << "depth:        " << r.depth << "\n";
        os << "growth rate:  " << r.spec.growth_rate << "\n";
        os << "path:         " << path_field(r.spec.rule);
        if (!r.spec.rule.is_dense()) os << " (farthest " << r.spec.rule.farthest << ", nearest " << r.spec.rule.nearest << ")";
        os << "\n";
        os << "params:       " << r.total_params << " (" << millions(r.total_params) << ")\n";
        os << "  stem        " << r.params.stem << "\n";
        os << "  layers      " << r.params.layers << "\n";
        if (r.params.gates) os << "  gates       " << r.params.gates << "\n";
        os << "  transitions " << r.params.transitions << "\n";
        os << "  head        " << r.params.head << "\n";
        os << "running stats: " << r.running_stats << " (not trainable)\n";
        os << "flops:        " << r.flops << " (" << millions(r.flops) << " at " << r.spec.input_size << "x"
           << r.spec.input_size << ")\n";
        os << "connections:  " << r.connections << "\n";
      }
      break;
  }
  return os.str();
}

}  // namespace sparsenet
