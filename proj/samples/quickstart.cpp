// Record one drawing demonstration, train a small SM2SM model on it with
// free-running training, and let the model draw on its own.

#include <iostream>

#include "bcil/bcil.hpp"

int main() {
  using namespace bcil;

  const TaskSpec task = make_task(TaskKind::Draw, 20.0);
  std::vector<TrainingSequence> data;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const Episode demo = run_demo(task, make_operator(task, seed), ControlConfig{}, seed);
    const SyncStats sync = metric_sync(demo);
    std::cout << "demo " << seed << ": mean |th_m - th_s| = " << sync.mean_abs_error[0] << ", "
              << sync.mean_abs_error[1] << ", " << sync.mean_abs_error[2] << " rad\n";
    data.push_back(downsample(demo));
  }

  ModelConfig config;
  config.variant = ModelVariant::SM2SM;
  config.autoregressive = true;
  config.layers = 2;
  config.units = 24;
  config.window = 100;
  config.batch = 8;
  config.epochs = 300;
  auto [model, report] = train(data, config);
  std::cout << config.label() << ": loss " << report.loss.front() << " -> " << report.loss.back() << " in "
            << report.wall_seconds << " s\n";

  AutonomyConfig run;
  run.duration = 3.0;
  const Episode ep = run_autonomous(model, task, run, 1);
  const CorridorResult verdict = metric_corridor(ep, task);
  std::cout << "autonomous draw: " << (verdict.success ? "success" : "failure") << " (" << verdict.diagnostic
            << ", arc " << verdict.score << " rad)\n";
  return 0;
}
