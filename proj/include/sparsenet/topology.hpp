#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sparsenet {

class SpecError : public std::invalid_argument {
 public:
  SpecError(const std::vector<std::string>& problems)
      : std::invalid_argument(join(problems)), problems_(problems) {}
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& problems) {
    std::string out = "invalid network spec:";
    for (const auto& p : problems) out += "\n  - " + p;
    return out;
  }
  std::vector<std::string> problems_;
};

enum class Variant { basic, bc, abc };

constexpr std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::basic: return "basic";
    case Variant::bc: return "bc";
    case Variant::abc: return "abc";
  }
  return "?";
}

inline std::optional<Variant> parse_variant(std::string_view s) {
  if (s == "basic") return Variant::basic;
  if (s == "bc") return Variant::bc;
  if (s == "abc") return Variant::abc;
  return std::nullopt;
}

constexpr bool uses_bottleneck(Variant v) { return v != Variant::basic; }
constexpr bool uses_attention(Variant v) { return v == Variant::abc; }

// Keep the `farthest` earliest and the `nearest` latest predecessors of each
// layer. The dense rule keeps every predecessor.
struct ConnectivityRule {
  static constexpr std::size_t kUnbounded = std::numeric_limits<std::size_t>::max() / 4;

  std::size_t farthest = 1;
  std::size_t nearest = 1;

  // Default split of a path: the odd connection goes to the farthest side.
  static constexpr ConnectivityRule from_path(std::size_t path) { return {(path + 1) / 2, path / 2}; }
  static constexpr ConnectivityRule dense() { return {kUnbounded, 0}; }

  constexpr bool is_dense() const { return farthest >= kUnbounded || nearest >= kUnbounded; }
  constexpr std::size_t path() const { return is_dense() ? kUnbounded : farthest + nearest; }

  friend constexpr bool operator==(const ConnectivityRule&, const ConnectivityRule&) = default;
};

inline std::string describe(const ConnectivityRule& rule) {
  if (rule.is_dense()) return "dense";
  return std::to_string(rule.farthest) + "-" + std::to_string(rule.nearest);
}

// Sources of composite layer i (1-based) within a block: 0 is the block
// input, j >= 1 the output of layer j. Sorted ascending.
inline std::vector<std::size_t> input_sources(std::size_t i, const ConnectivityRule& rule) {
  if (i == 0) throw std::invalid_argument("input_sources: layer index must be >= 1");
  if (rule.path() == 0) throw std::invalid_argument("input_sources: farthest + nearest must be >= 1");
  std::vector<std::size_t> out;
  const std::size_t far_end = std::min(rule.farthest, i);
  const std::size_t near_begin = rule.nearest >= i ? 0 : i - rule.nearest;
  for (std::size_t j = 0; j < far_end; ++j) out.push_back(j);
  for (std::size_t j = std::max(near_begin, far_end); j < i; ++j) out.push_back(j);
  return out;
}

// Declarative model description.
struct NetworkSpec {
  Variant variant = Variant::bc;
  std::vector<std::size_t> blocks;  // composite layers per block
  std::size_t growth_rate = 12;
  ConnectivityRule rule = ConnectivityRule::from_path(2);
  double compression = 0.5;
  std::size_t stem_channels = 24;
  std::size_t num_classes = 10;
  std::size_t attention_reduction = 8;
  std::size_t input_size = 32;  // square input extent

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

// Fills compression and stem width with the per-variant defaults
// (basic: theta 1, stem 16; bc/abc: theta 0.5, stem 2k).
inline NetworkSpec make_spec(Variant variant, std::vector<std::size_t> blocks, std::size_t growth_rate,
                             ConnectivityRule rule, std::size_t num_classes = 10) {
  NetworkSpec s;
  s.variant = variant;
  s.blocks = std::move(blocks);
  s.growth_rate = growth_rate;
  s.rule = rule;
  s.compression = variant == Variant::basic ? 1.0 : 0.5;
  s.stem_channels = variant == Variant::basic ? 16 : 2 * growth_rate;
  s.num_classes = num_classes;
  return s;
}

// Hidden width of an attention gate: max(4, k / reduction).
inline std::size_t gate_hidden_width(const NetworkSpec& s) {
  return std::max<std::size_t>(4, s.growth_rate / std::max<std::size_t>(1, s.attention_reduction));
}

// Every violated constraint, not just the first.
inline std::vector<std::string> validate_spec(const NetworkSpec& s) {
  std::vector<std::string> problems;
  if (s.blocks.empty()) problems.push_back("blocks: at least one block is required");
  for (std::size_t b = 0; b < s.blocks.size(); ++b) {
    if (s.blocks[b] == 0) problems.push_back("blocks[" + std::to_string(b) + "]: layer count must be >= 1");
  }
  if (s.growth_rate == 0) problems.push_back("growth_rate: must be >= 1");
  if (s.rule.path() == 0) problems.push_back("path: farthest + nearest must be >= 1");
  if (!(s.compression > 0.0 && s.compression <= 1.0)) {
    problems.push_back("compression: must lie in (0, 1], got " + std::to_string(s.compression));
  } else if ((s.compression == 1.0) != (s.variant == Variant::basic)) {
    problems.push_back("compression: " + std::to_string(s.compression) + " is inconsistent with variant " +
                       std::string(variant_name(s.variant)) + " (theta = 1 exactly when variant = basic)");
  }
  if (s.stem_channels == 0) problems.push_back("stem_channels: must be >= 1");
  if (s.num_classes == 0) problems.push_back("num_classes: must be >= 1");
  if (uses_attention(s.variant) && s.attention_reduction == 0) problems.push_back("attention_reduction: must be >= 1");
  if (!s.blocks.empty()) {
    const std::size_t pools = s.blocks.size() - 1;
    const std::size_t divisor = pools >= 63 ? 0 : (std::size_t{1} << pools);
    if (divisor == 0 || s.input_size % divisor != 0 || s.input_size / divisor == 0) {
      problems.push_back("input: " + std::to_string(s.input_size) + "x" + std::to_string(s.input_size) +
                         " is not divisible by the " + std::to_string(pools) + " 2x2 poolings between blocks");
    }
  }
  if (problems.empty()) {
    // Transitions must keep at least one channel.
    std::size_t c0 = s.stem_channels;
    for (std::size_t b = 0; b + 1 < s.blocks.size(); ++b) {
      const std::size_t out = static_cast<std::size_t>(std::floor(s.compression * static_cast<double>(c0 + s.blocks[b] * s.growth_rate)));
      if (out == 0) problems.push_back("compression: transition " + std::to_string(b + 1) + " keeps zero channels");
      c0 = out;
    }
  }
  return problems;
}

struct LayerWiring {
  std::size_t index = 0;             // 1-based within the block
  std::vector<std::size_t> sources;  // sorted; 0 = block input
  std::size_t in_channels = 0;
  std::size_t dense_in_channels = 0;    // c0 + (i-1)k, what all-previous wiring would give
  std::size_t bottleneck_channels = 0;  // 4k for bc/abc, 0 for basic
  std::size_t out_channels = 0;         // k
  std::size_t gate_hidden = 0;          // 0 when no attention gate
};

struct TransitionWiring {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
};

struct BlockWiring {
  std::size_t input_channels = 0;
  std::size_t spatial = 0;
  std::vector<LayerWiring> layers;
  std::size_t output_channels = 0;  // c0 + L*k
  std::optional<TransitionWiring> transition;
};

struct LayerGraph {
  std::size_t stem_in = 3;
  std::size_t stem_out = 0;
  std::vector<BlockWiring> blocks;
  std::size_t classifier_in = 0;
  std::size_t num_classes = 0;
};

inline LayerGraph build_layer_graph(const NetworkSpec& s) {
  if (auto problems = validate_spec(s); !problems.empty()) throw SpecError(problems);
  LayerGraph g;
  g.stem_out = s.stem_channels;
  g.num_classes = s.num_classes;
  const std::size_t k = s.growth_rate;
  std::size_t c0 = s.stem_channels;
  std::size_t spatial = s.input_size;
  for (std::size_t b = 0; b < s.blocks.size(); ++b) {
    BlockWiring block;
    block.input_channels = c0;
    block.spatial = spatial;
    for (std::size_t i = 1; i <= s.blocks[b]; ++i) {
      LayerWiring layer;
      layer.index = i;
      layer.sources = input_sources(i, s.rule);
      const bool has_input = layer.sources.front() == 0;
      layer.in_channels = (has_input ? c0 : 0) + k * (layer.sources.size() - (has_input ? 1 : 0));
      layer.dense_in_channels = c0 + (i - 1) * k;
      layer.bottleneck_channels = uses_bottleneck(s.variant) ? 4 * k : 0;
      layer.out_channels = k;
      layer.gate_hidden = uses_attention(s.variant) ? gate_hidden_width(s) : 0;
      block.layers.push_back(std::move(layer));
    }
    block.output_channels = c0 + s.blocks[b] * k;
    if (b + 1 < s.blocks.size()) {
      TransitionWiring t;
      t.in_channels = block.output_channels;
      t.out_channels = static_cast<std::size_t>(std::floor(s.compression * static_cast<double>(t.in_channels)));
      block.transition = t;
      c0 = t.out_channels;
      spatial /= 2;
    } else {
      g.classifier_in = block.output_channels;
    }
    g.blocks.push_back(std::move(block));
  }
  return g;
}

// Sum over all composite layers of the number of retained input sources.
inline std::size_t count_connections(const NetworkSpec& s) {
  std::size_t total = 0;
  for (std::size_t layers : s.blocks)
    for (std::size_t i = 1; i <= layers; ++i) total += input_sources(i, s.rule).size();
  return total;
}

// Stem conv + 1 (basic) or 2 (bottleneck) per composite layer + one conv
// per transition + final linear.
inline std::size_t reported_depth(const NetworkSpec& s) {
  std::size_t layers = 0;
  for (std::size_t l : s.blocks) layers += l;
  const std::size_t transitions = s.blocks.empty() ? 0 : s.blocks.size() - 1;
  return 1 + layers * (uses_bottleneck(s.variant) ? 2 : 1) + transitions + 1;
}

// Equal blocks reproducing a reported depth, e.g. basic 40 -> 12-12-12.
inline std::optional<std::vector<std::size_t>> blocks_for_depth(Variant v, std::size_t depth, std::size_t num_blocks = 3) {
  const std::size_t fixed = 1 + (num_blocks - 1) + 1;
  const std::size_t per_layer = uses_bottleneck(v) ? 2 : 1;
  if (depth <= fixed || (depth - fixed) % (per_layer * num_blocks) != 0) return std::nullopt;
  return std::vector<std::size_t>(num_blocks, (depth - fixed) / (per_layer * num_blocks));
}

inline std::string describe_blocks(const std::vector<std::size_t>& blocks) {
  std::string out;
  for (std::size_t b = 0; b < blocks.size(); ++b) out += (b ? "-" : "") + std::to_string(blocks[b]);
  return out;
}

}  // namespace sparsenet
