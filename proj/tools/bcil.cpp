// bcil: demonstrations, training, autonomous runs, evaluation, the full
// study matrix and plots from the command line.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "bcil/bcil.hpp"

namespace fs = std::filesystem;
using namespace bcil;

namespace {

std::vector<TrainingSequence> load_sequences(const std::vector<std::string>& inputs) {
  std::vector<std::string> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<std::string> found;
      for (const auto& e : fs::directory_iterator(in))
        if (e.is_regular_file() && e.path().extension() == ".csv") found.push_back(e.path().string());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(in);
    }
  }
  if (files.empty()) throw Error(ErrorKind::EmptyDataset, "no episode files found");
  std::vector<TrainingSequence> out;
  for (const auto& f : files) {
    try {
      out.push_back(downsample(load_episode(f)));
    } catch (const Error& e) {
      throw Error(e.kind(), f + ": " + e.what());
    }
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open '" + path + "' for writing");
  out << text;
}

std::string loss_csv(const TrainReport& r) {
  std::string s = "epoch," + r.config.label() + "\n";
  for (std::size_t e = 0; e < r.loss.size(); ++e) s += std::to_string(e + 1) + "," + format_double(r.loss[e]) + "\n";
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bilateral-control imitation learning bench: simulated 3-DOF master/slave demos, "
               "LSTM training (teacher forcing or free running), autonomous evaluation."};
  app.require_subcommand(1);

  // demo
  auto* demo = app.add_subcommand("demo", "Record scripted 4ch bilateral demonstrations (1 ms episode CSVs)");
  std::string demo_task = "draw", demo_out = "demos";
  std::vector<double> demo_grid;
  int demo_trials = 1;
  std::uint64_t demo_seed = 1;
  double demo_duration = 0, demo_jitter = 0.004;
  std::string demo_letter = "A";
  demo->add_option("--task", demo_task, "draw | erase | write")->capture_default_str();
  demo->add_option("--grid", demo_grid, "task values: inclination [deg] for draw, height [mm] otherwise "
                                        "(default: the training grid of the task)")->delimiter(',');
  demo->add_option("--trials", demo_trials, "demonstrations per value")->capture_default_str()->check(CLI::PositiveNumber);
  demo->add_option("--seed", demo_seed, "base seed")->capture_default_str();
  demo->add_option("--duration", demo_duration, "seconds (0 = task default: draw 3, erase 10, write 20)")->capture_default_str();
  demo->add_option("--jitter", demo_jitter, "operator tremor std [rad]")->capture_default_str();
  demo->add_option("--letter", demo_letter, "write only: A | B")->capture_default_str();
  demo->add_option("--out", demo_out, "output directory")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "Train a sequence model on episode CSVs");
  std::string tr_variant = "SM2SM", tr_out = "model.bcil";
  std::vector<std::string> tr_data;
  ModelConfig mc;
  tr->add_option("--variant", tr_variant, "S2S | S2M | SM2SM")->capture_default_str();
  tr->add_flag("--ar", mc.autoregressive, "free-running training with periodic re-anchoring");
  tr->add_option("--ar-period", mc.ar_period, "re-anchor every N steps (0 = never)")->capture_default_str();
  tr->add_option("--layers", mc.layers, "LSTM layers")->capture_default_str();
  tr->add_option("--units", mc.units, "units per layer")->capture_default_str();
  tr->add_option("--window", mc.window, "rows per training window (20 ms each)")->capture_default_str();
  tr->add_option("--batch", mc.batch, "windows per Adam step")->capture_default_str();
  tr->add_option("--epochs", mc.epochs, "Adam steps")->capture_default_str();
  tr->add_option("--lr", mc.adam.lr, "Adam learning rate")->capture_default_str();
  tr->add_option("--clip", mc.clip_norm, "gradient-norm clip in free-running mode (0 = off)")->capture_default_str();
  tr->add_option("--target-loss", mc.target_loss, "stop once the batch loss is below (0 = off)")->capture_default_str();
  tr->add_option("--seed", mc.seed, "seed")->capture_default_str();
  tr->add_option("--data", tr_data, "episode CSVs or directories of them")->required();
  tr->add_option("--out", tr_out, "checkpoint path; the loss curve goes to <out>.loss.csv")->capture_default_str();

  // run
  auto* run = app.add_subcommand("run", "Run a trained model autonomously on a task");
  std::string run_model, run_task = "draw", run_out = "run.csv", run_letter = "A";
  double run_param = 20, run_duration = 0, run_pose_jitter = 0;
  std::uint64_t run_seed = 1;
  run->add_option("--model", run_model, "checkpoint")->required();
  run->add_option("--task", run_task, "draw | erase | write")->capture_default_str();
  run->add_option("--param", run_param, "inclination [deg] or height [mm]")->capture_default_str();
  run->add_option("--letter", run_letter, "write only: A | B")->capture_default_str();
  run->add_option("--duration", run_duration, "seconds (0 = task default: draw 3, erase 8, write 20)")->capture_default_str();
  run->add_option("--pose-jitter", run_pose_jitter, "start pose spread [rad]")->capture_default_str();
  run->add_option("--seed", run_seed, "seed")->capture_default_str();
  run->add_option("--out", run_out, "episode CSV")->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "Score an episode: sync, corridor, cycle repeatability");
  std::string ev_episode, ev_task, ev_out;
  double ev_param = std::numeric_limits<double>::quiet_NaN();
  double ev_transient = 0.5;
  ev->add_option("--episode", ev_episode, "episode CSV")->required();
  ev->add_option("--task", ev_task, "expected task (default: from the episode)");
  ev->add_option("--param", ev_param, "task value (default: from the episode)");
  ev->add_option("--transient", ev_transient, "seconds skipped before metrics")->capture_default_str();
  ev->add_option("--out", ev_out, "report file (key=value); stdout when omitted");

  // matrix
  auto* mx = app.add_subcommand("matrix", "Run the full study from a spec file");
  std::string mx_spec, mx_out = "results";
  mx->add_option("--spec", mx_spec, "INI spec ([experiment], [demo], [model] sections)")->required();
  mx->add_option("--out", mx_out, "output directory")->capture_default_str();

  // plot
  auto* pl = app.add_subcommand("plot", "Render CSV columns as an SVG line plot");
  std::string pl_csv, pl_out = "plot.svg";
  std::vector<std::string> pl_columns;
  pl->add_option("--csv", pl_csv, "CSV file; first column is x")->required();
  pl->add_option("--columns", pl_columns, "series to draw (default: all)")->delimiter(',');
  pl->add_option("--out", pl_out, "SVG path")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*demo) {
      const TaskKind kind = parse_task_kind(demo_task);
      if (demo_grid.empty()) demo_grid = default_grids(kind).first;
      fs::create_directories(demo_out);
      for (std::size_t g = 0; g < demo_grid.size(); ++g)
        for (int trial = 0; trial < demo_trials; ++trial) {
          const std::uint64_t seed = mix_seed(demo_seed, 1000 * g + static_cast<std::uint64_t>(trial));
          const TaskSpec task = make_task(kind, demo_grid[g], demo_duration, demo_letter.empty() ? 'A' : demo_letter[0]);
          const Episode ep = run_demo(task, make_operator(task, seed, demo_jitter), ControlConfig{}, seed);
          const std::string path = (fs::path(demo_out) / (std::string(to_string(kind)) + "_" +
                                                           format_double(demo_grid[g]) + "_" + std::to_string(trial) + ".csv"))
                                       .string();
          save_episode(ep, path);
          const auto sync = metric_sync(ep);
          std::cout << path << "  sync_mean_rad=" << format_double(sync.mean_abs_error[0]) << ','
                    << format_double(sync.mean_abs_error[1]) << ',' << format_double(sync.mean_abs_error[2]) << '\n';
        }
    } else if (*tr) {
      mc.variant = parse_variant(tr_variant);
      const auto data = load_sequences(tr_data);
      auto [model, report] = train(data, mc);
      save_model(model, tr_out);
      write_text(tr_out + ".loss.csv", loss_csv(report));
      std::cout << "model=" << tr_out << " config=" << report.config.label() << " epochs=" << report.loss.size()
                << " final_loss=" << (report.loss.empty() ? "" : format_double(report.loss.back()))
                << " weights=" << report.weights_hash << " seconds=" << report.wall_seconds << '\n';
    } else if (*run) {
      const SequenceModel model = load_model(run_model);
      const TaskKind kind = parse_task_kind(run_task);
      AutonomyConfig cfg;
      cfg.duration = run_duration > 0 ? run_duration : default_duration(kind, true);
      cfg.pose_jitter = run_pose_jitter;
      const TaskSpec task = make_task(kind, run_param, cfg.duration, run_letter.empty() ? 'A' : run_letter[0]);
      const Episode ep = run_autonomous(model, task, cfg, run_seed);
      save_episode(ep, run_out);
      const auto c = metric_corridor(ep, task);
      std::cout << run_out << "  success=" << (c.success ? 1 : 0) << " diagnostic=" << c.diagnostic << '\n';
    } else if (*ev) {
      const Episode ep = load_episode(ev_episode);
      TaskSpec task = task_of(ep);
      if (!ev_task.empty() && parse_task_kind(ev_task) != task.kind)
        throw Error(ErrorKind::TaskMismatch, "episode is a '" + ep.get("task") + "' run, not '" + ev_task + "'");
      if (!std::isnan(ev_param)) task = make_task(task.kind, ev_param, ep.duration(), task.letter);
      std::ostringstream o;
      const auto sync = metric_sync(ep, ev_transient);
      o << "mode=" << ep.get("mode") << '\n' << "task=" << task.name() << '\n';
      for (std::size_t j = 0; j < 3; ++j)
        o << "sync_mean_rad_" << j + 1 << '=' << format_double(sync.mean_abs_error[j]) << '\n'
          << "sync_max_rad_" << j + 1 << '=' << format_double(sync.max_abs_error[j]) << '\n'
          << "force_sum_mean_nm_" << j + 1 << '=' << format_double(sync.mean_force_sum[j]) << '\n';
      const auto c = metric_corridor(ep, task, ev_transient);
      o << "success=" << (c.success ? 1 : 0) << '\n'
        << "diagnostic=" << c.diagnostic << '\n'
        << "score=" << format_double(c.score) << '\n'
        << "limit_hit=" << ep.get("limit_hit", "0") << '\n';
      if (task.kind == TaskKind::Write) {
        try {
          const auto cv = metric_cycle_variance(ep, task, ev_transient);
          o << "cycles=" << cv.cycles << '\n' << "cycle_rms_rad=" << format_double(cv.mean_pairwise_rms) << '\n';
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::NoCycles) throw;
          o << "cycles=0\ncycle_rms_rad=\n";
        }
      }
      if (ev_out.empty())
        std::cout << o.str();
      else
        write_text(ev_out, o.str());
    } else if (*mx) {
      const ExperimentSpec spec = load_experiment_spec(mx_spec);
      const MetricsReport report = run_matrix(spec, mx_out);
      for (int layers : spec.layers) std::cout << "L" << layers << ":\n" << success_table_csv(report, layers);
    } else if (*pl) {
      emit_plot(pl_csv, pl_out, pl_columns);
      std::cout << pl_out << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
