#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sparsenet/checkpoint.hpp"
#include "sparsenet/config.hpp"
#include "sparsenet/data.hpp"
#include "sparsenet/errors.hpp"
#include "sparsenet/model.hpp"
#include "sparsenet/ops.hpp"
#include "sparsenet/optim.hpp"
#include "sparsenet/parallel.hpp"

namespace sparsenet {

struct Milestone {
  std::size_t epoch = 0;
  double lr = 0;
  friend bool operator==(const Milestone&, const Milestone&) = default;
};

struct TrainConfig {
  std::size_t epochs = 280;
  double base_lr = 0.1;
  std::vector<Milestone> milestones{{150, 0.01}, {200, 0.001}, {250, 0.0002}};
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;
  std::string dataset = "cifar10";  // cifar10, cifar100 or synthetic
  std::size_t limit = 0;            // first N training records; 0 = all
  std::size_t test_limit = 0;
  bool augment = true;
  std::size_t prefetch = 1;  // batches assembled ahead on background threads
  std::size_t threads = 1;   // workers inside conv kernels
  bool wall_time = true;     // false leaves wall_seconds empty for byte-stable CSVs

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// "150:0.01,200:0.001"
inline std::vector<Milestone> parse_milestones(const std::string& value) {
  std::vector<Milestone> out;
  if (detail::trim(value).empty()) return out;
  for (const auto& item : detail::split(value, ',')) {
    const auto parts = detail::split(item, ':');
    if (parts.size() != 2) throw ConfigError("milestones: expected epoch:lr pairs, got '" + item + "'");
    out.push_back({parse_count("milestones", parts[0]), parse_real("milestones", parts[1])});
  }
  return out;
}

inline std::string format_milestones(const std::vector<Milestone>& ms) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < ms.size(); ++i) os << (i ? "," : "") << ms[i].epoch << ":" << ms[i].lr;
  return os.str();
}

inline std::vector<std::string> validate_train_config(const TrainConfig& c) {
  std::vector<std::string> problems;
  if (!(c.base_lr > 0)) problems.push_back("base_lr: must be > 0");
  for (std::size_t i = 0; i < c.milestones.size(); ++i) {
    if (!(c.milestones[i].lr > 0)) problems.push_back("milestones: rates must be > 0");
    if (i && c.milestones[i].epoch <= c.milestones[i - 1].epoch) problems.push_back("milestones: epochs must be strictly increasing");
  }
  if (c.momentum < 0 || c.momentum >= 1) problems.push_back("momentum: must lie in [0, 1)");
  if (c.weight_decay < 0) problems.push_back("weight_decay: must be >= 0");
  if (c.batch_size == 0) problems.push_back("batch_size: must be >= 1");
  if (c.eval_every == 0) problems.push_back("eval_every: must be >= 1");
  if (c.dataset != "cifar10" && c.dataset != "cifar100" && c.dataset != "synthetic") {
    problems.push_back("dataset: expected cifar10, cifar100 or synthetic, got '" + c.dataset + "'");
  }
  return problems;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline TrainConfig train_config_from(const ConfigFile& cfg) {
  TrainConfig c;
  const auto& t = cfg.section("train");
  reject_unknown_keys(t, "train",
                      {"epochs", "base_lr", "milestones", "momentum", "weight_decay", "batch_size", "seed", "eval_every",
                       "dataset", "limit", "test_limit", "augment", "prefetch", "threads", "wall_time"});
  auto get = [&](const char* key) -> const std::string* {
    auto it = t.find(key);
    return it == t.end() ? nullptr : &it->second;
  };
  if (auto v = get("epochs")) c.epochs = parse_count("epochs", *v);
  if (auto v = get("base_lr")) c.base_lr = parse_real("base_lr", *v);
  if (auto v = get("milestones")) c.milestones = parse_milestones(*v);
  if (auto v = get("momentum")) c.momentum = parse_real("momentum", *v);
  if (auto v = get("weight_decay")) c.weight_decay = parse_real("weight_decay", *v);
  if (auto v = get("batch_size")) c.batch_size = parse_count("batch_size", *v);
  if (auto v = get("seed")) c.seed = parse_count("seed", *v);
  if (auto v = get("eval_every")) c.eval_every = parse_count("eval_every", *v);
  if (auto v = get("dataset")) c.dataset = *v;
  if (auto v = get("limit")) c.limit = parse_count("limit", *v);
  if (auto v = get("test_limit")) c.test_limit = parse_count("test_limit", *v);
  if (auto v = get("augment")) c.augment = parse_bool("augment", *v);
  if (auto v = get("prefetch")) c.prefetch = parse_count("prefetch", *v);
  if (auto v = get("threads")) c.threads = parse_count("threads", *v);
  if (auto v = get("wall_time")) c.wall_time = parse_bool("wall_time", *v);
  if (auto problems = validate_train_config(c); !problems.empty()) {
    std::string msg = "[train]:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw ConfigError(msg);
  }
  return c;
}

inline std::string train_config_to_text(const TrainConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "[train]\n"
     << "epochs = " << c.epochs << "\n"
     << "base_lr = " << c.base_lr << "\n"
     << "milestones = " << format_milestones(c.milestones) << "\n"
     << "momentum = " << c.momentum << "\n"
     << "weight_decay = " << c.weight_decay << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "seed = " << c.seed << "\n"
     << "eval_every = " << c.eval_every << "\n"
     << "dataset = " << c.dataset << "\n"
     << "limit = " << c.limit << "\n"
     << "test_limit = " << c.test_limit << "\n"
     << "augment = " << (c.augment ? "true" : "false") << "\n"
     << "prefetch = " << c.prefetch << "\n"
     << "threads = " << c.threads << "\n"
     << "wall_time = " << (c.wall_time ? "true" : "false") << "\n";
  return os.str();
}

// New epoch count with milestones scaled by floor(m * new / old). When two
// milestones land on the same epoch the later one wins; milestones at or
// past the new end are dropped.
inline TrainConfig with_epochs(TrainConfig c, std::size_t epochs) {
  const std::size_t old = c.epochs;
  c.epochs = epochs;
  if (old == 0 || old == epochs) return c;
  std::vector<Milestone> scaled;
  for (const auto& m : c.milestones) {
    const std::size_t e = m.epoch * epochs / old;
    if (e >= epochs) continue;
    if (!scaled.empty() && scaled.back().epoch == e) {
      scaled.back().lr = m.lr;
    } else {
      scaled.push_back({e, m.lr});
    }
  }
  c.milestones = scaled;
  return c;
}

// Step schedule: base_lr until the first milestone, then the rate of the
// last milestone reached.
inline double lr_at(std::size_t epoch, const TrainConfig& c) {
  if (epoch >= c.epochs) {
    throw std::out_of_range("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(c.epochs) + ")");
  }
  double lr = c.base_lr;
  for (const auto& m : c.milestones) {
    if (epoch >= m.epoch) lr = m.lr;
  }
  return lr;
}

// ----------------------------------------------------------------- metrics

struct MetricsRow {
  std::size_t epoch = 0;  // epochs completed
  double lr = 0;
  double train_loss = 0;
  double train_error = 0;
  std::optional<double> test_loss;
  std::optional<double> test_error;
  std::optional<double> wall_seconds;
};

inline constexpr std::string_view kMetricsHeader = "epoch,lr,train_loss,train_error,test_loss,test_error,wall_seconds";

inline std::string format_metrics_row(const MetricsRow& r) {
  char buf[256];
  auto opt = [](const std::optional<double>& v, const char* fmt) {
    if (!v) return std::string();
    char b[64];
    std::snprintf(b, sizeof b, fmt, *v);
    return std::string(b);
  };
  std::snprintf(buf, sizeof buf, "%zu,%.10g,%.9g,%.6f,%s,%s,%s", r.epoch, r.lr, r.train_loss, r.train_error,
                opt(r.test_loss, "%.9g").c_str(), opt(r.test_error, "%.6f").c_str(), opt(r.wall_seconds, "%.3f").c_str());
  return buf;
}

struct EvalResult {
  double loss = 0;
  double error = 0;
  std::size_t count = 0;
};

// Eval-mode pass over a split; mean loss and top-1 error. Running
// statistics and weights are left untouched.
inline EvalResult evaluate(SparseNet<float>& model, const Dataset& data, std::size_t batch_size = 100) {
  EvalResult r;
  if (data.size() == 0) return r;
  BatchStream stream(data, BatchPlan::evaluation(batch_size));
  double loss_sum = 0;
  std::size_t wrong = 0;
  while (auto batch = stream.next()) {
    auto images = make_constant(std::move(batch->images));
    auto logits = model.forward(nullptr, images, false);
    const auto ce = softmax_cross_entropy_value(*logits, batch->labels);
    loss_sum += ce.loss * static_cast<double>(batch->labels.size());
    const auto pred = argmax_rows(*logits);
    for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != batch->labels[i];
  }
  r.count = data.size();
  r.loss = loss_sum / static_cast<double>(data.size());
  r.error = static_cast<double>(wrong) / static_cast<double>(data.size());
  return r;
}

struct StepStats {
  double loss = 0;
  std::size_t wrong = 0;
};

// One SGD step on a batch (training-mode forward, backward, update).
inline StepStats train_step(SparseNet<float>& model, SgdNesterov<float>& opt, Tensor<float> images,
                            std::span<const std::size_t> labels, double lr, std::size_t step_index = 0) {
  StepStats s;
  try {
    Tape<float> tape;
    auto logits = model.forward(&tape, make_constant(std::move(images)), true);
    auto loss = softmax_cross_entropy(&tape, logits, labels);
    s.loss = (*loss)[0];
    if (!std::isfinite(s.loss)) throw NonFiniteError("training loss is " + std::to_string(s.loss));
    const auto pred = argmax_rows(*logits);
    for (std::size_t i = 0; i < pred.size(); ++i) s.wrong += pred[i] != labels[i];
    tape.backward(loss);
    opt.step(model.parameters(), static_cast<float>(lr));
  } catch (const NonFiniteError& e) {
    // Ops trip on non-finite values before the loss does; tag them all.
    model.registry().zero_grad();
    throw NonFiniteError("step " + std::to_string(step_index) + ": " + e.what());
  }
  model.registry().zero_grad();
  return s;
}

inline std::uint64_t model_seed(std::uint64_t seed) { return derive_seed(seed, 0x6d6f64656cULL); }

struct TrainResult {
  std::vector<MetricsRow> rows;
  std::filesystem::path metrics_path;
  std::filesystem::path final_checkpoint;
  std::optional<std::filesystem::path> best_checkpoint;
  std::optional<MetricsRow> best_row;
  std::size_t steps = 0;
};

struct TrainHooks {
  std::ostream* log = nullptr;
  // Called after every epoch; lets tests inspect the model mid-run.
  std::function<void(const MetricsRow&, SparseNet<float>&)> on_epoch;
};

// Trains from a fresh model seeded by config.seed. Writes into `out_dir`:
// metrics.csv (flushed per epoch), final.spnf, epoch<N>.spnf at every
// milestone, best.spnf when a test split is given.
inline TrainResult train(const NetworkSpec& spec, const TrainConfig& cfg, const Dataset& train_set, const Dataset* test_set,
                         const std::filesystem::path& out_dir, const TrainHooks& hooks = {}) {
  if (auto problems = validate_train_config(cfg); !problems.empty()) throw ConfigError(problems.front());
  if (train_set.size() == 0 && cfg.epochs > 0) throw std::invalid_argument("train: empty training set");
  if (train_set.classes != spec.num_classes) {
    throw std::invalid_argument("train: dataset has " + std::to_string(train_set.classes) + " classes, model has " +
                                std::to_string(spec.num_classes));
  }
  std::filesystem::create_directories(out_dir);
  set_worker_count(cfg.threads);

  SparseNet<float> model(spec, model_seed(cfg.seed));
  SgdNesterov<float> opt(static_cast<float>(cfg.momentum), static_cast<float>(cfg.weight_decay));
  TrainResult result;
  result.metrics_path = out_dir / "metrics.csv";
  result.final_checkpoint = out_dir / "final.spnf";

  std::ofstream metrics(result.metrics_path, std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot open " + result.metrics_path.string() + " for writing");
  metrics << kMetricsHeader << "\n" << std::flush;
  if (!metrics) throw std::runtime_error("write to " + result.metrics_path.string() + " failed");

  const auto start = std::chrono::steady_clock::now();
  double best_error = std::numeric_limits<double>::infinity();
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const double lr = lr_at(e, cfg);
    BatchPlan plan;
    plan.batch_size = cfg.batch_size;
    plan.seed = cfg.seed;
    plan.epoch = e;
    plan.augment = cfg.augment;
    BatchStream stream(train_set, plan, cfg.prefetch);
    double loss_sum = 0;
    std::size_t wrong = 0;
    while (auto batch = stream.next()) {
      const auto stats = train_step(model, opt, std::move(batch->images), batch->labels, lr, result.steps);
      ++result.steps;
      loss_sum += stats.loss * static_cast<double>(batch->labels.size());
      wrong += stats.wrong;
    }
    MetricsRow row;
    row.epoch = e + 1;
    row.lr = lr;
    row.train_loss = loss_sum / static_cast<double>(train_set.size());
    row.train_error = static_cast<double>(wrong) / static_cast<double>(train_set.size());
    const bool eval_now = test_set && test_set->size() && ((e + 1) % cfg.eval_every == 0 || e + 1 == cfg.epochs);
    if (eval_now) {
      try {
        const auto ev = evaluate(model, *test_set, std::max<std::size_t>(cfg.batch_size, 2));
        row.test_loss = ev.loss;
        row.test_error = ev.error;
      } catch (const NonFiniteError& ev_error) {
        // Early on, running statistics can lag far enough behind the weights
        // for the eval forward to overflow. That is a bad score, not a
        // reason to stop training.
        row.test_loss = std::numeric_limits<double>::infinity();
        row.test_error = 1.0;
        if (hooks.log) *hooks.log << "warning: epoch " << e + 1 << " evaluation overflowed (" << ev_error.what() << ")\n";
      }
    }
    if (cfg.wall_time) {
      row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    metrics << format_metrics_row(row) << "\n" << std::flush;
    if (!metrics) throw std::runtime_error("write to " + result.metrics_path.string() + " failed");
    result.rows.push_back(row);
    if (hooks.log) *hooks.log << format_metrics_row(row) << "\n" << std::flush;

    for (const auto& m : cfg.milestones) {
      if (m.epoch == e + 1) {
        save_checkpoint(model, (out_dir / ("epoch" + std::to_string(e + 1) + ".spnf")).string(),
                        static_cast<std::uint32_t>(e + 1), &opt);
      }
    }
    if (row.test_error && *row.test_error < best_error) {
      best_error = *row.test_error;
      result.best_checkpoint = out_dir / "best.spnf";
      result.best_row = row;
      save_checkpoint(model, result.best_checkpoint->string(), static_cast<std::uint32_t>(e + 1), &opt);
    }
    if (hooks.on_epoch) hooks.on_epoch(row, model);
  }
  save_checkpoint(model, result.final_checkpoint.string(), static_cast<std::uint32_t>(cfg.epochs), &opt);
  return result;
}

}  // namespace sparsenet
