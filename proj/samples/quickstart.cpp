// Build a small SparseNet, look at its cost, train it briefly on generated
// images and round-trip the weights through a checkpoint.
#include <filesystem>
#include <iostream>

#include "sparsenet/analyzers.hpp"
#include "sparsenet/checkpoint.hpp"
#include "sparsenet/train.hpp"

using namespace sparsenet;

int main() {
  const auto spec = make_spec(Variant::abc, {2, 2, 2}, 8, ConnectivityRule::from_path(2));
  const auto report = analyze(spec, "quickstart");
  std::cout << emit_report({report}, ReportFormat::text) << "\n";

  auto train_set = synthetic_cifar(256, 10, 1, Split::train);
  auto test_set = synthetic_cifar(128, 10, 1, Split::test);
  const auto stats = channel_stats(train_set);
  normalize(train_set, stats);
  normalize(test_set, stats);

  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.milestones = {{2, 0.01}};
  cfg.batch_size = 32;
  cfg.dataset = "synthetic";
  const auto out = std::filesystem::temp_directory_path() / "sparsenet_quickstart";
  TrainHooks hooks;
  hooks.log = &std::cout;
  std::cout << kMetricsHeader << "\n";
  const auto result = train(spec, cfg, train_set, &test_set, out, hooks);

  auto model = load_checkpoint<float>(result.final_checkpoint.string());
  const auto ev = evaluate(model, test_set);
  std::cout << "reloaded " << result.final_checkpoint << ": test error " << ev.error << "\n";
  std::filesystem::remove_all(out);
}
