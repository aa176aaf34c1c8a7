#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sparsenet/analyzers.hpp"
#include "sparsenet/checkpoint.hpp"
#include "sparsenet/config.hpp"
#include "sparsenet/data.hpp"
#include "sparsenet/sweep.hpp"
#include "sparsenet/topology.hpp"
#include "sparsenet/train.hpp"

namespace sparsenet {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// Synthetic runs always draw from the same images so seeds only change the
// model and the batch order.
inline constexpr std::uint64_t kSyntheticDataSeed = 0x5eed;
inline constexpr std::size_t kSyntheticTrainSize = 1000;
inline constexpr std::size_t kSyntheticTestSize = 500;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunData {
  Dataset train;
  Dataset test;
  ChannelStats stats;
};

inline std::optional<CifarVariant> cifar_variant(const std::string& dataset) {
  if (dataset == "cifar10") return CifarVariant::cifar10;
  if (dataset == "cifar100") return CifarVariant::cifar100;
  return std::nullopt;
}

// Raw (unnormalized) split for a run configuration.
inline Dataset load_split(const TrainConfig& cfg, std::size_t classes, const std::string& data_dir, Split split) {
  const std::size_t limit = split == Split::train ? cfg.limit : cfg.test_limit;
  if (cfg.dataset == "synthetic") {
    const std::size_t n = limit ? limit : (split == Split::train ? kSyntheticTrainSize : kSyntheticTestSize);
    return synthetic_cifar(n, classes, kSyntheticDataSeed, split);
  }
  const auto v = cifar_variant(cfg.dataset);
  if (!v) throw ConfigError("dataset: unknown '" + cfg.dataset + "'");
  if (data_dir.empty()) {
    throw DataError(DataError::Kind::missing_file,
                    cfg.dataset + " needs --data-dir or SPARSENET_DATA_DIR (directory with the binary batches)");
  }
  return load_cifar(data_dir, *v, split, limit);
}

inline RunData load_run_data(const TrainConfig& cfg, std::size_t classes, const std::string& data_dir) {
  RunData d;
  d.train = load_split(cfg, classes, data_dir, Split::train);
  d.test = load_split(cfg, classes, data_dir, Split::test);
  d.stats = channel_stats(d.train);
  normalize(d.train, d.stats);
  normalize(d.test, d.stats);
  return d;
}

inline std::string stats_to_config(const std::string& dataset, const ChannelStats& s) {
  std::ostringstream os;
  os.precision(17);
  os << "[data]\ndataset = " << dataset << "\n";
  os << "mean = " << s.mean[0] << "," << s.mean[1] << "," << s.mean[2] << "\n";
  os << "std = " << s.std[0] << "," << s.std[1] << "," << s.std[2] << "\n";
  return os.str();
}

inline std::optional<ChannelStats> stats_from_config(const ConfigFile& cfg) {
  if (!cfg.has("data")) return std::nullopt;
  const auto& d = cfg.section("data");
  if (!d.count("mean") || !d.count("std")) return std::nullopt;
  ChannelStats s;
  auto fill = [](const std::string& key, const std::string& text, std::array<double, 3>& out) {
    const auto parts = detail::split(text, ',');
    if (parts.size() != 3) throw ConfigError("[data] " + key + ": expected three comma-separated values");
    for (std::size_t c = 0; c < 3; ++c) out[c] = parse_real(key, parts[c]);
  };
  fill("mean", d.at("mean"), s.mean);
  fill("std", d.at("std"), s.std);
  return s;
}

// ------------------------------------------------------------------ inspect

inline std::string format_sources(const std::vector<std::size_t>& sources) {
  std::string out = "[";
  for (std::size_t i = 0; i < sources.size(); ++i) out += (i ? "," : "") + std::to_string(sources[i]);
  return out + "]";
}

inline std::string inspect_text(const NetworkSpec& s) {
  const auto g = build_layer_graph(s);
  std::ostringstream os;
  os << "model: " << variant_name(s.variant) << " blocks " << describe_blocks(s.blocks) << " k=" << s.growth_rate
     << " path " << path_field(s.rule) << " (" << describe(s.rule) << ") depth " << reported_depth(s) << "\n";
  os << "stem: conv3x3 " << g.stem_in << " -> " << g.stem_out << "\n";
  for (std::size_t b = 0; b < g.blocks.size(); ++b) {
    const auto& blk = g.blocks[b];
    os << "block " << b + 1 << ": " << blk.spatial << "x" << blk.spatial << ", input " << blk.input_channels
       << " channels\n";
    for (const auto& l : blk.layers) {
      os << "  layer " << std::setw(3) << l.index << ": sources " << format_sources(l.sources) << " in " << l.in_channels;
      if (l.bottleneck_channels) os << " -> " << l.bottleneck_channels;
      os << " -> " << l.out_channels;
      if (l.gate_hidden) os << " gate " << l.gate_hidden;
      os << "\n";
    }
    if (blk.transition) {
      os << "  transition: " << blk.transition->in_channels << " -> " << blk.transition->out_channels << ", pool 2x2\n";
    }
  }
  os << "head: bn-relu-gap-linear " << g.classifier_in << " -> " << g.num_classes << "\n";
  return os.str();
}

// ---------------------------------------------------------------- commands

namespace cli_detail {

struct ModelSource {
  std::vector<std::string> configs;
  std::vector<std::string> presets;
  std::optional<std::size_t> num_classes;
};

inline void add_model_source(CLI::App* sub, ModelSource& m, bool many) {
  if (many) {
    sub->add_option("--config,-c", m.configs, "config file with a [model] section (repeatable)");
    sub->add_option("--preset,-p", m.presets, "named setup, see `analyze --list-presets` (repeatable)");
  } else {
    sub->add_option("--config,-c", m.configs, "config file with a [model] section")->expected(1);
    sub->add_option("--preset,-p", m.presets, "named setup")->expected(1);
  }
  sub->add_option("--num-classes", m.num_classes, "override the class count");
}

inline std::vector<NamedSpec> resolve_models(const ModelSource& m) {
  std::vector<NamedSpec> out;
  for (const auto& path : m.configs) {
    auto spec = spec_from_config(load_config(path));
    if (m.num_classes) spec.num_classes = *m.num_classes;
    out.push_back({std::filesystem::path(path).stem().string(), spec});
  }
  for (const auto& name : m.presets) {
    auto spec = find_preset(name, m.num_classes.value_or(10));
    if (!spec) throw UsageError("unknown preset '" + name + "'");
    out.push_back({name, *spec});
  }
  return out;
}

inline NamedSpec single_model(const ModelSource& m) {
  auto all = resolve_models(m);
  if (all.size() != 1) throw UsageError("give exactly one of --config or --preset");
  return all.front();
}

inline std::uint64_t parse_budget_flag(const std::string& text) {
  try {
    return detail::parse_budget(text);
  } catch (const ConfigError& e) {
    throw UsageError(std::string("--budget: ") + e.what());
  }
}

}  // namespace cli_detail

// Returns the process exit code: 0 ok, 1 usage, 2 runtime failure.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"SparseNet: sparse DenseNet variants, analyzers and a deterministic trainer", "sparsenet"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  cli_detail::ModelSource model;
  std::string format = "text", out_dir, data_dir, checkpoint, budget_text, split_name = "test", dataset;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> limit, epochs, threads;
  bool all_presets = false, list_presets = false, quiet = false;
  if (const char* env = std::getenv("SPARSENET_DATA_DIR")) data_dir = env;

  auto* inspect = app.add_subcommand("inspect", "print the layer graph: per-layer sources and channel widths");
  cli_detail::add_model_source(inspect, model, false);

  auto* analyze_cmd = app.add_subcommand("analyze", "parameter, FLOP and connection report");
  cli_detail::add_model_source(analyze_cmd, model, true);
  analyze_cmd->add_flag("--all-presets", all_presets, "report every preset");
  analyze_cmd->add_flag("--list-presets", list_presets, "print preset names and exit");
  analyze_cmd->add_option("--format,-f", format, "text, csv or json")->check(CLI::IsMember({"text", "csv", "json", "jsonl", "json-lines"}));

  auto* solve = app.add_subcommand("solve-path", "largest path whose parameter count fits a budget");
  cli_detail::add_model_source(solve, model, false);
  solve->add_option("--budget,-b", budget_text, "parameter budget, e.g. 1200000 or 1.2M")->required();
  solve->add_option("--format,-f", format, "text, csv or json")->check(CLI::IsMember({"text", "csv", "json", "jsonl", "json-lines"}));

  auto* train_cmd = app.add_subcommand("train", "train from a config; writes metrics.csv, checkpoints and run.cfg");
  cli_detail::add_model_source(train_cmd, model, false);
  train_cmd->add_option("--out,-o", out_dir, "output directory")->required();
  train_cmd->add_option("--data-dir,-d", data_dir, "CIFAR binary directory (default $SPARSENET_DATA_DIR)");
  train_cmd->add_option("--seed,-s", seed, "override [train] seed");
  train_cmd->add_option("--limit,-n", limit, "use the first N training images");
  train_cmd->add_option("--epochs,-e", epochs, "override epochs; milestones scale proportionally");
  train_cmd->add_option("--dataset", dataset, "cifar10, cifar100 or synthetic")->check(CLI::IsMember({"cifar10", "cifar100", "synthetic"}));
  train_cmd->add_option("--threads,-j", threads, "conv worker threads");
  train_cmd->add_flag("--quiet,-q", quiet, "no per-epoch log");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  eval_cmd->add_option("--checkpoint,-k", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--config,-c", model.configs, "run config with [train] and [data] (default: run.cfg beside the checkpoint)")->expected(1);
  eval_cmd->add_option("--data-dir,-d", data_dir, "CIFAR binary directory (default $SPARSENET_DATA_DIR)");
  eval_cmd->add_option("--limit,-n", limit, "evaluate the first N images");
  eval_cmd->add_option("--split", split_name, "train or test")->check(CLI::IsMember({"train", "test"}));
  eval_cmd->add_option("--dataset", dataset, "cifar10, cifar100 or synthetic")->check(CLI::IsMember({"cifar10", "cifar100", "synthetic"}));
  eval_cmd->add_option("--format,-f", format, "text or csv")->check(CLI::IsMember({"text", "csv"}));

  auto* sweep_cmd = app.add_subcommand("sweep", "expand a [sweep] section and report every point");
  sweep_cmd->add_option("--config,-c", model.configs, "config file with a [sweep] section")->required()->expected(1);
  sweep_cmd->add_option("--format,-f", format, "csv, text or json")->check(CLI::IsMember({"text", "csv", "json", "jsonl", "json-lines"}));
  sweep_cmd->add_option("--out,-o", out_dir, "also write <out>/<name>.cfg for every point");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (inspect->parsed()) {
      out << inspect_text(cli_detail::single_model(model).spec);
    } else if (analyze_cmd->parsed()) {
      if (list_presets) {
        for (const auto& p : preset_specs()) out << p.name << "\n";
        return kExitOk;
      }
      auto models = cli_detail::resolve_models(model);
      if (all_presets) {
        for (auto& p : preset_specs(model.num_classes.value_or(10))) models.push_back(p);
      }
      if (models.empty()) throw UsageError("analyze: give --config, --preset or --all-presets");
      std::vector<AnalysisReport> reports;
      for (const auto& m : models) reports.push_back(analyze(m.spec, m.name));
      out << emit_report(reports, parse_report_format(format));
    } else if (solve->parsed()) {
      const auto m = cli_detail::single_model(model);
      const auto budget = cli_detail::parse_budget_flag(budget_text);
      const auto sol = solve_path(m.spec, budget);
      auto spec = m.spec;
      spec.rule = ConnectivityRule::from_path(sol.path);
      const auto fmt = parse_report_format(format);
      if (fmt == ReportFormat::text) {
        out << "path " << sol.path << " (" << describe(spec.rule) << "): " << sol.params << " params, budget " << budget;
        if (sol.saturated) out << " (saturated: wiring is dense)";
        out << "\n";
      } else {
        out << emit_report({analyze(spec, m.name)}, fmt);
      }
    } else if (train_cmd->parsed()) {
      const auto m = cli_detail::single_model(model);
      TrainConfig cfg;
      if (!model.configs.empty()) {
        const auto file = load_config(model.configs.front());
        if (file.has("train")) cfg = train_config_from(file);
      }
      if (epochs) cfg = with_epochs(cfg, *epochs);
      if (seed) cfg.seed = *seed;
      if (limit) cfg.limit = *limit;
      if (threads) cfg.threads = *threads;
      if (!dataset.empty()) cfg.dataset = dataset;
      if (auto problems = validate_train_config(cfg); !problems.empty()) throw ConfigError(problems.front());

      const auto data = load_run_data(cfg, m.spec.num_classes, data_dir);
      std::filesystem::create_directories(out_dir);
      {
        std::ofstream run(std::filesystem::path(out_dir) / "run.cfg");
        run << spec_to_config(m.spec) << "\n" << train_config_to_text(cfg) << "\n" << stats_to_config(cfg.dataset, data.stats);
        if (!run) throw std::runtime_error("cannot write " + (std::filesystem::path(out_dir) / "run.cfg").string());
      }
      TrainHooks hooks;
      if (!quiet) {
        out << kMetricsHeader << "\n";
        hooks.log = &out;
      }
      const auto result = train(m.spec, cfg, data.train, &data.test, out_dir, hooks);
      out << "final: " << result.final_checkpoint.string() << "\n";
      if (result.best_row) {
        out << "best: " << result.best_checkpoint->string() << " (epoch " << result.best_row->epoch << ", test error "
            << std::fixed << std::setprecision(4) << *result.best_row->test_error << ")\n";
      }
    } else if (eval_cmd->parsed()) {
      std::uint32_t epoch = 0;
      auto net = load_checkpoint<float>(checkpoint, &epoch);
      std::filesystem::path run_cfg = model.configs.empty()
                                          ? std::filesystem::path(checkpoint).parent_path() / "run.cfg"
                                          : std::filesystem::path(model.configs.front());
      TrainConfig cfg;
      std::optional<ChannelStats> stats;
      if (std::filesystem::exists(run_cfg)) {
        const auto file = load_config(run_cfg.string());
        if (file.has("train")) cfg = train_config_from(file);
        stats = stats_from_config(file);
      } else if (!model.configs.empty()) {
        throw ConfigError("cannot open config file '" + run_cfg.string() + "'");
      }
      if (!dataset.empty()) cfg.dataset = dataset;
      const Split split = split_name == "train" ? Split::train : Split::test;
      if (limit) (split == Split::train ? cfg.limit : cfg.test_limit) = *limit;
      auto data = load_split(cfg, net.spec().num_classes, data_dir, split);
      if (data.classes != net.spec().num_classes) {
        throw std::invalid_argument("checkpoint has " + std::to_string(net.spec().num_classes) + " classes, dataset " +
                                    std::to_string(data.classes));
      }
      if (!stats) {
        // No recorded statistics: recompute from the full training split.
        auto train_cfg = cfg;
        train_cfg.limit = 0;
        stats = channel_stats(load_split(train_cfg, net.spec().num_classes, data_dir, Split::train));
      }
      normalize(data, *stats);
      const auto r = evaluate(net, data);
      if (format == "csv") {
        out << "checkpoint,epoch,split,count,loss,error\n"
            << checkpoint << "," << epoch << "," << split_name << "," << r.count << "," << std::setprecision(9) << r.loss
            << "," << std::fixed << std::setprecision(6) << r.error << "\n";
      } else {
        out << checkpoint << " (epoch " << epoch << ") on " << cfg.dataset << " " << split_name << " [" << r.count
            << " images]: loss " << std::setprecision(6) << r.loss << ", error " << std::fixed << std::setprecision(4)
            << r.error << "\n";
      }
    } else if (sweep_cmd->parsed()) {
      const auto points = generate_sweep(load_config(model.configs.front()));
      for (const auto& p : points) {
        if (p.over_budget) err << "warning: " << p.name << " exceeds the budget even at path 1\n";
      }
      if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        for (const auto& p : points) {
          std::ofstream f(std::filesystem::path(out_dir) / (p.name + ".cfg"));
          f << spec_to_config(p.spec);
          if (!f) throw std::runtime_error("cannot write sweep config for " + p.name);
        }
      }
      // csv unless asked otherwise
      out << emit_report(analyze_sweep(points), parse_report_format(sweep_cmd->count("--format") ? format : "csv"));
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace sparsenet
