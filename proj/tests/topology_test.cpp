#include <gtest/gtest.h>

#include <set>
#include <vector>

#include "oracles.hpp"
#include "sparsenet/config.hpp"
#include "sparsenet/topology.hpp"

namespace sparsenet {
namespace {

std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> out;
  for (std::size_t j = begin; j < end; ++j) out.push_back(j);
  return out;
}

TEST(InputSources, ShortLayerSeesAllPredecessors) {
  EXPECT_EQ(input_sources(5, {7, 7}), range(0, 5));
  EXPECT_EQ(input_sources(3, {0, 14}), range(0, 3));
}

TEST(InputSources, DeepLayerKeepsFarthestAndNearest) {
  const auto enumerated = oracle::sources_by_definition(20, 7, 7);
  const auto got = input_sources(20, {7, 7});
  EXPECT_EQ(std::set<std::size_t>(got.begin(), got.end()), enumerated);
  std::vector<std::size_t> expected = range(0, 7);
  for (std::size_t j = 13; j < 20; ++j) expected.push_back(j);
  EXPECT_EQ(got, expected);
}

TEST(InputSources, DenseRuleIsAllPrevious) { EXPECT_EQ(input_sources(10, ConnectivityRule::dense()), range(0, 10)); }

TEST(InputSources, ZeroPathRejected) {
  EXPECT_THROW(input_sources(3, {0, 0}), std::invalid_argument);
  EXPECT_THROW(input_sources(0, {1, 1}), std::invalid_argument);
}

TEST(InputSources, ExhaustiveAgainstSetDefinition) {
  for (std::size_t f = 0; f <= 32; ++f) {
    for (std::size_t r = 0; r <= 32; ++r) {
      if (f + r == 0) continue;
      for (std::size_t i = 1; i <= 64; ++i) {
        const auto got = input_sources(i, {f, r});
        ASSERT_TRUE(std::is_sorted(got.begin(), got.end()));
        ASSERT_EQ(std::set<std::size_t>(got.begin(), got.end()), oracle::sources_by_definition(i, f, r))
            << "i=" << i << " f=" << f << " r=" << r;
        ASSERT_EQ(got.size(), std::min(i, f + r));
      }
    }
  }
}

TEST(ConnectivityRule, DefaultSplitFavoursFarthest) {
  EXPECT_EQ(ConnectivityRule::from_path(14), (ConnectivityRule{7, 7}));
  EXPECT_EQ(ConnectivityRule::from_path(21), (ConnectivityRule{11, 10}));
  EXPECT_EQ(ConnectivityRule::from_path(1), (ConnectivityRule{1, 0}));
}

TEST(LayerGraph, BasicV1ChannelAccumulation) {
  auto spec = make_spec(Variant::basic, {8, 12, 16}, 16, ConnectivityRule::from_path(14));
  const auto g = build_layer_graph(spec);
  ASSERT_EQ(g.blocks.size(), 3u);
  EXPECT_EQ(g.blocks[0].input_channels, 16u);
  EXPECT_EQ(g.blocks[1].input_channels, 144u);
  EXPECT_EQ(g.blocks[2].input_channels, 336u);
  EXPECT_EQ(g.classifier_in, 592u);
  EXPECT_EQ(g.blocks[1].spatial, 16u);
  EXPECT_EQ(g.blocks[2].spatial, 8u);
}

TEST(LayerGraph, BcTinyChannelAccumulation) {
  auto spec = make_spec(Variant::bc, {2, 2, 2}, 4, ConnectivityRule::from_path(2));
  spec.stem_channels = 8;
  const auto g = build_layer_graph(spec);
  EXPECT_EQ(g.blocks[0].output_channels, 16u);
  EXPECT_EQ(g.blocks[0].transition->out_channels, 8u);
  EXPECT_EQ(g.blocks[1].output_channels, 16u);
  EXPECT_EQ(g.blocks[1].transition->out_channels, 8u);
  EXPECT_EQ(g.blocks[2].output_channels, 16u);
  EXPECT_FALSE(g.blocks[2].transition.has_value());
  EXPECT_EQ(g.blocks[0].layers[0].bottleneck_channels, 16u);
}

TEST(LayerGraph, SecondLayerSeesBlockInputAndFirstLayer) {
  for (std::size_t path : {2u, 3u, 14u}) {
    auto spec = make_spec(Variant::bc, {4, 4, 4}, 12, ConnectivityRule::from_path(path));
    const auto g = build_layer_graph(spec);
    for (const auto& block : g.blocks) EXPECT_EQ(block.layers[1].in_channels, block.input_channels + 12);
  }
}

TEST(LayerGraph, ChannelInvariant) {
  auto spec = make_spec(Variant::abc, {8, 12, 16}, 16, {0, 6});
  const auto g = build_layer_graph(spec);
  for (const auto& block : g.blocks) {
    for (const auto& layer : block.layers) {
      const bool has0 = layer.sources.front() == 0;
      EXPECT_EQ(layer.in_channels, (has0 ? block.input_channels : 0) + 16 * (layer.sources.size() - (has0 ? 1 : 0)));
      EXPECT_EQ(layer.dense_in_channels, block.input_channels + (layer.index - 1) * 16);
      EXPECT_EQ(layer.gate_hidden, 4u);
    }
  }
}

TEST(LayerGraph, DenseEquivalenceWhenPathCoversBlocks) {
  for (std::size_t f = 0; f <= 12; ++f) {
    const ConnectivityRule rule{f, 12 - f};
    auto sparse = make_spec(Variant::bc, {5, 9, 12}, 8, rule);
    auto dense = make_spec(Variant::bc, {5, 9, 12}, 8, ConnectivityRule::dense());
    const auto a = build_layer_graph(sparse), b = build_layer_graph(dense);
    for (std::size_t blk = 0; blk < 3; ++blk) {
      ASSERT_EQ(a.blocks[blk].layers.size(), b.blocks[blk].layers.size());
      for (std::size_t l = 0; l < a.blocks[blk].layers.size(); ++l) {
        EXPECT_EQ(a.blocks[blk].layers[l].sources, b.blocks[blk].layers[l].sources);
        EXPECT_EQ(a.blocks[blk].layers[l].in_channels, b.blocks[blk].layers[l].in_channels);
      }
    }
    EXPECT_EQ(a.classifier_in, b.classifier_in);
  }
}

TEST(LayerGraph, InvalidSpecRejectedWithDiagnostics) {
  auto spec = make_spec(Variant::basic, {8, 0, 16}, 0, {0, 0});
  try {
    build_layer_graph(spec);
    FAIL();
  } catch (const SpecError& e) {
    EXPECT_GE(e.problems().size(), 3u);
  }
}

TEST(CountConnections, SmallEnumerations) {
  EXPECT_EQ(count_connections(make_spec(Variant::basic, {4}, 4, {1, 1})), 7u);
  EXPECT_EQ(count_connections(make_spec(Variant::basic, {4}, 4, ConnectivityRule::dense())), 10u);
  EXPECT_EQ(count_connections(make_spec(Variant::basic, {1}, 4, {3, 0})), 1u);
  EXPECT_EQ(count_connections(make_spec(Variant::basic, {1}, 4, {0, 1})), 1u);
}

TEST(CountConnections, MonotoneInFarthestAndNearest) {
  for (std::size_t f = 0; f <= 16; ++f) {
    for (std::size_t r = 0; r <= 16; ++r) {
      if (f + r == 0) continue;
      const auto base = count_connections(make_spec(Variant::bc, {8, 12, 16}, 4, {f, r}));
      EXPECT_LE(base, count_connections(make_spec(Variant::bc, {8, 12, 16}, 4, {f + 1, r})));
      EXPECT_LE(base, count_connections(make_spec(Variant::bc, {8, 12, 16}, 4, {f, r + 1})));
    }
  }
}

TEST(CountConnections, SplitInvariantAndLinearBound) {
  const std::vector<std::size_t> blocks{8, 12, 16};
  for (std::size_t path = 1; path <= 20; ++path) {
    const auto reference = count_connections(make_spec(Variant::basic, blocks, 16, {path, 0}));
    for (std::size_t f = 0; f <= path; ++f) {
      EXPECT_EQ(count_connections(make_spec(Variant::basic, blocks, 16, {f, path - f})), reference);
    }
    EXPECT_LE(reference, path * 36);
  }
}

TEST(ValidateSpec, Examples) {
  auto v1 = make_spec(Variant::bc, {8, 12, 16}, 16, ConnectivityRule::from_path(14));
  EXPECT_TRUE(validate_spec(v1).empty());

  auto wrong_theta = make_spec(Variant::basic, {8, 12, 16}, 16, ConnectivityRule::from_path(14));
  wrong_theta.compression = 0.7;
  EXPECT_EQ(validate_spec(wrong_theta).size(), 1u);

  auto bc_theta_one = v1;
  bc_theta_one.compression = 1.0;
  EXPECT_EQ(validate_spec(bc_theta_one).size(), 1u);

  auto no_path = v1;
  no_path.rule = {0, 0};
  EXPECT_EQ(validate_spec(no_path).size(), 1u);

  auto odd = v1;
  odd.input_size = 30;  // 30 / 4 not integral
  EXPECT_EQ(validate_spec(odd).size(), 1u);

  auto many = v1;
  many.rule = {0, 0};
  many.growth_rate = 0;
  many.num_classes = 0;
  EXPECT_EQ(validate_spec(many).size(), 3u);
}

TEST(ReportedDepth, MatchesKnownConfigurations) {
  const auto rule = ConnectivityRule::from_path(14);
  EXPECT_EQ(reported_depth(make_spec(Variant::basic, {8, 12, 16}, 16, rule)), 40u);
  EXPECT_EQ(reported_depth(make_spec(Variant::bc, {8, 12, 16}, 16, rule)), 76u);
  EXPECT_EQ(reported_depth(make_spec(Variant::basic, {16, 24, 32}, 32, rule)), 76u);
  EXPECT_EQ(reported_depth(make_spec(Variant::abc, {16, 24, 32}, 32, rule)), 148u);
  EXPECT_EQ(reported_depth(make_spec(Variant::bc, {16, 16, 16}, 12, ConnectivityRule::dense())), 100u);
  EXPECT_EQ(reported_depth(make_spec(Variant::bc, {31, 31, 31}, 40, ConnectivityRule::dense())), 190u);
  EXPECT_EQ(*blocks_for_depth(Variant::basic, 28), (std::vector<std::size_t>{8, 8, 8}));
  EXPECT_EQ(*blocks_for_depth(Variant::bc, 190), (std::vector<std::size_t>{31, 31, 31}));
  EXPECT_FALSE(blocks_for_depth(Variant::bc, 101).has_value());
}

// ---------------------------------------------------------------- config

TEST(Config, ParsesModelSection) {
  const auto cfg = parse_config(R"(
# SparseNet-bc-V1
[model]
variant = bc
blocks = 8,12,16
growth_rate = 16
path = 14     # default split
num_classes = 100
)");
  const auto s = spec_from_config(cfg);
  EXPECT_EQ(s.variant, Variant::bc);
  EXPECT_EQ(s.blocks, (std::vector<std::size_t>{8, 12, 16}));
  EXPECT_EQ(s.rule, (ConnectivityRule{7, 7}));
  EXPECT_EQ(s.compression, 0.5);
  EXPECT_EQ(s.stem_channels, 32u);
  EXPECT_EQ(s.num_classes, 100u);
}

TEST(Config, ExplicitSplitAndDense) {
  auto s = spec_from_config(parse_config("[model]\nvariant=basic\nblocks=8-12-16\ngrowth_rate=16\npath=14\nfarthest=10\n"));
  EXPECT_EQ(s.rule, (ConnectivityRule{10, 4}));
  s = spec_from_config(parse_config("[model]\nvariant=basic\nblocks=8\ngrowth_rate=16\nfarthest=0\nnearest=14\n"));
  EXPECT_EQ(s.rule, (ConnectivityRule{0, 14}));
  s = spec_from_config(parse_config("[model]\nvariant=bc\nblocks=16,16,16\ngrowth_rate=12\npath=dense\n"));
  EXPECT_TRUE(s.rule.is_dense());
}

TEST(Config, RoundTripsThroughText) {
  auto s = make_spec(Variant::abc, {3, 4, 5}, 6, {2, 1}, 100);
  s.attention_reduction = 2;
  EXPECT_EQ(spec_from_config(parse_config(spec_to_config(s))), s);
}

TEST(Config, Errors) {
  EXPECT_THROW(spec_from_config(parse_config("[model]\nvariant=bc\nblocks=8\ngrowth_rate=4\npath=2\ncolour=red\n")),
               ConfigError);
  EXPECT_THROW(spec_from_config(parse_config("[model]\nvariant=xyz\nblocks=8\ngrowth_rate=4\npath=2\n")), ConfigError);
  EXPECT_THROW(spec_from_config(parse_config("[model]\nvariant=bc\nblocks=8\ngrowth_rate=4\n")), ConfigError);
  EXPECT_THROW(spec_from_config(parse_config("[model]\nvariant=bc\nblocks=8\ngrowth_rate=four\npath=2\n")),
               ConfigError);
  EXPECT_THROW(parse_config("variant = bc\n"), ConfigError);
  EXPECT_THROW(parse_config("[model]\na=1\na=2\n"), ConfigError);
  EXPECT_THROW(spec_from_config(parse_config("[train]\nepochs=1\n")), ConfigError);
}

}  // namespace
}  // namespace sparsenet
