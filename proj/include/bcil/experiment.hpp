#pragma once

// The full study: demonstrations over a training grid, the five model
// configurations, autonomous evaluation over a wider grid, and the result
// tables.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "bcil/autonomy.hpp"
#include "bcil/core.hpp"
#include "bcil/metrics.hpp"
#include "bcil/seqmodel.hpp"
#include "bcil/tasks.hpp"
#include "bcil/teleop.hpp"

namespace bcil {

/// One row of the model table: variant and training regime.
struct ModelSlot {
  ModelVariant variant;
  bool autoregressive;

  std::string label() const { return std::string(to_string(variant)) + (autoregressive ? "-AR" : "-w/o-AR"); }
  std::string file_stem() const { return std::string(to_string(variant)) + (autoregressive ? "-AR" : "-noAR"); }
};

/// The five compared configurations, in table order.
inline const std::vector<ModelSlot>& model_slots() {
  static const std::vector<ModelSlot> slots{{ModelVariant::S2S, false},
                                            {ModelVariant::S2S, true},
                                            {ModelVariant::S2M, false},
                                            {ModelVariant::SM2SM, false},
                                            {ModelVariant::SM2SM, true}};
  return slots;
}

struct ExperimentSpec {
  TaskKind task = TaskKind::Draw;
  char letter = 'A';
  std::uint64_t seed = 1;
  std::vector<double> train_grid{0, 20, 40};
  std::vector<double> eval_grid{-30, -20, -10, 0, 10, 20, 30, 40, 50, 60, 70, 80};
  int demo_trials = 2;   // demonstrations per training value
  int trials = 3;        // autonomous runs per evaluation value
  double duration = 0;   // autonomous run length [s]; <= 0 uses the task default
  double pose_jitter = 0.01;   // rad, start-pose spread between trials
  double operator_jitter = 0.004;
  double tempo_spread = 0.04;
  std::size_t open_loop_horizon = 100;

  std::vector<int> layers{6};
  int units = 50;
  int window = 150;
  int batch = 100;
  int epochs = 200;
  int ar_epochs = 0;  // <= 0: same as epochs
  int ar_period = 10;
  double lr = 1e-3;
  double target_loss = 0;
  int batch_chunk = 32;

  void validate() const {
    if (train_grid.empty()) throw Error(ErrorKind::InvalidArgument, "training grid is empty");
    for (double p : train_grid)
      if (std::find(eval_grid.begin(), eval_grid.end(), p) == eval_grid.end())
        throw Error(ErrorKind::InvalidArgument,
                    "evaluation grid must contain every training value (missing " + format_double(p) + ")");
    if (demo_trials < 1 || trials < 1) throw Error(ErrorKind::InvalidArgument, "trial counts must be >= 1");
    if (layers.empty()) throw Error(ErrorKind::InvalidArgument, "no layer count given");
    if (open_loop_horizon < 1) throw Error(ErrorKind::InvalidArgument, "open-loop horizon must be >= 1");
    for (int l : layers) model_config(model_slots().front(), l).validate();
  }

  ModelConfig model_config(const ModelSlot& slot, int layer_count) const {
    ModelConfig c;
    c.variant = slot.variant;
    c.autoregressive = slot.autoregressive;
    c.layers = layer_count;
    c.units = units;
    c.window = window;
    c.batch = batch;
    c.epochs = slot.autoregressive && ar_epochs > 0 ? ar_epochs : epochs;
    c.ar_period = ar_period;
    c.adam.lr = lr;
    c.target_loss = target_loss;
    c.batch_chunk = batch_chunk;
    return c;
  }

  double run_duration() const { return duration > 0 ? duration : default_duration(task, true); }
};

namespace detail {
template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  for (auto part : split(text, ',')) {
    part = trim(part);
    if (part.empty()) continue;
    double v;
    if (!parse_double(part, v) || !std::isfinite(v))
      throw Error(ErrorKind::InvalidArgument, "bad number '" + std::string(part) + "' in " + key);
    if constexpr (std::is_integral_v<T>) {
      if (v != std::floor(v)) throw Error(ErrorKind::InvalidArgument, key + " takes integers");
    }
    out.push_back(static_cast<T>(v));
  }
  if (out.empty()) throw Error(ErrorKind::InvalidArgument, key + " is empty");
  return out;
}
}  // namespace detail

/// Training and evaluation values used when a spec leaves them out:
/// inclinations in degrees for draw, heights in mm otherwise.
inline std::pair<std::vector<double>, std::vector<double>> default_grids(TaskKind kind) {
  if (kind == TaskKind::Draw) return {{0, 20, 40}, {-30, -20, -10, 0, 10, 20, 30, 40, 50, 60, 70, 80}};
  return {{35, 55, 75}, {25, 35, 45, 55, 65, 75, 85}};
}

/// Parses an INI-style spec (`key = value` under [experiment], [demo] and [model]).
/// Unknown keys are rejected so typos do not silently fall back to defaults.
inline ExperimentSpec parse_experiment_spec(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("spec: ") + e.what());
  }
  ExperimentSpec s;
  auto number = [](const std::string& key, const std::string& text) {
    double v;
    if (!parse_double(text, v) || !std::isfinite(v))
      throw Error(ErrorKind::InvalidArgument, "spec: bad number for " + key + ": '" + text + "'");
    return v;
  };
  auto integer = [&](const std::string& key, const std::string& text) {
    const double v = number(key, text);
    if (v != std::floor(v)) throw Error(ErrorKind::InvalidArgument, "spec: " + key + " takes an integer");
    return static_cast<long long>(v);
  };
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw Error(ErrorKind::InvalidArgument, "spec: key '" + section + "' outside a section");
    for (const auto& [key, node] : body) {
      const std::string v = node.data();
      const std::string full = section + "." + key;
      if (full == "experiment.task") s.task = parse_task_kind(trim(v));
      else if (full == "experiment.letter") s.letter = std::string(trim(v)).empty() ? 'A' : std::string(trim(v))[0];
      else if (full == "experiment.seed") s.seed = static_cast<std::uint64_t>(integer(full, v));
      else if (full == "experiment.train_grid") s.train_grid = detail::parse_list<double>(full, v);
      else if (full == "experiment.eval_grid") s.eval_grid = detail::parse_list<double>(full, v);
      else if (full == "experiment.trials") s.trials = static_cast<int>(integer(full, v));
      else if (full == "experiment.duration") s.duration = number(full, v);
      else if (full == "experiment.pose_jitter") s.pose_jitter = number(full, v);
      else if (full == "experiment.open_loop_horizon") s.open_loop_horizon = static_cast<std::size_t>(integer(full, v));
      else if (full == "demo.trials") s.demo_trials = static_cast<int>(integer(full, v));
      else if (full == "demo.jitter") s.operator_jitter = number(full, v);
      else if (full == "demo.tempo_spread") s.tempo_spread = number(full, v);
      else if (full == "model.layers") s.layers = detail::parse_list<int>(full, v);
      else if (full == "model.units") s.units = static_cast<int>(integer(full, v));
      else if (full == "model.window") s.window = static_cast<int>(integer(full, v));
      else if (full == "model.batch") s.batch = static_cast<int>(integer(full, v));
      else if (full == "model.epochs") s.epochs = static_cast<int>(integer(full, v));
      else if (full == "model.ar_epochs") s.ar_epochs = static_cast<int>(integer(full, v));
      else if (full == "model.ar_period") s.ar_period = static_cast<int>(integer(full, v));
      else if (full == "model.lr") s.lr = number(full, v);
      else if (full == "model.target_loss") s.target_loss = number(full, v);
      else if (full == "model.batch_chunk") s.batch_chunk = static_cast<int>(integer(full, v));
      else throw Error(ErrorKind::InvalidArgument, "spec: unknown key '" + full + "'");
    }
  }
  if (!tree.get_optional<std::string>("experiment.train_grid") || !tree.get_optional<std::string>("experiment.eval_grid")) {
    const auto [train, eval] = default_grids(s.task);
    if (!tree.get_optional<std::string>("experiment.train_grid")) s.train_grid = train;
    if (!tree.get_optional<std::string>("experiment.eval_grid")) s.eval_grid = eval;
  }
  s.validate();
  return s;
}

inline ExperimentSpec load_experiment_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  return parse_experiment_spec(in);
}

// ---------------------------------------------------------------------------
// Reports

struct TrialRecord {
  int layers = 0;
  std::string model;
  double param = 0;
  bool learned = false;
  int trial = 0;
  bool success = false;
  std::string diagnostic;
  double score = 0;
  bool limit_hit = false;
  double sync_mean = 0;   // mean over joints of mean |theta_cmd - theta_s| [rad]
  double cycle_rms = std::numeric_limits<double>::quiet_NaN();  // write only
};

struct ModelRecord {
  int layers = 0;
  ModelSlot slot;
  TrainReport report;
  double open_loop_mse = std::numeric_limits<double>::quiet_NaN();  // not defined for S2M
};

struct MetricsReport {
  ExperimentSpec spec;
  std::vector<ModelRecord> models;
  std::vector<TrialRecord> trials;

  /// (successes, runs) for one model over the selected cells.
  std::pair<int, int> tally(int layers, const std::string& model, int learned_filter = -1,
                            const double* param = nullptr) const {
    int s = 0, n = 0;
    for (const auto& t : trials) {
      if (t.layers != layers || t.model != model) continue;
      if (learned_filter >= 0 && t.learned != (learned_filter == 1)) continue;
      if (param && t.param != *param) continue;
      ++n;
      s += t.success ? 1 : 0;
    }
    return {s, n};
  }
};

inline std::string percent(int s, int n) {
  if (n == 0) return "";
  const double p = 100.0 * s / n;
  char buf[32];
  if (p == std::floor(p))
    std::snprintf(buf, sizeof buf, "%.0f", p);
  else
    std::snprintf(buf, sizeof buf, "%.1f", p);
  return buf;
}

/// Success-rate table: one row per model, one column per evaluation value
/// (training values starred), subtotals for learned and unlearned values, total.
inline std::string success_table_csv(const MetricsReport& r, int layers) {
  std::ostringstream o;
  const auto& spec = r.spec;
  std::vector<double> unlearned;
  for (double p : spec.eval_grid)
    if (std::find(spec.train_grid.begin(), spec.train_grid.end(), p) == spec.train_grid.end()) unlearned.push_back(p);
  o << "model,input_dims,output_dims";
  for (double p : spec.eval_grid) {
    const bool learned = std::find(spec.train_grid.begin(), spec.train_grid.end(), p) != spec.train_grid.end();
    o << ',' << format_double(p) << (learned ? "*" : "");
  }
  o << ",subtotal_learned";
  if (!unlearned.empty()) o << ",subtotal_unlearned";
  o << ",total\n";
  for (const auto& slot : model_slots()) {
    const auto lay = layout_of(slot.variant);
    const std::string name = slot.label();
    o << name << ',' << lay.in_dims << ',' << lay.out_dims;
    for (double p : spec.eval_grid) {
      const auto [s, n] = r.tally(layers, name, -1, &p);
      o << ',' << percent(s, n);
    }
    auto cell = [&](int filter) {
      const auto [s, n] = r.tally(layers, name, filter);
      return percent(s, n) + " (" + std::to_string(s) + "/" + std::to_string(n) + ")";
    };
    o << ',' << cell(1);
    if (!unlearned.empty()) o << ',' << cell(0);
    o << ',' << cell(-1) << '\n';
  }
  return o.str();
}

/// Loss curves side by side; runs that stopped early leave blank cells.
inline std::string loss_curves_csv(const MetricsReport& r, int layers) {
  std::vector<const ModelRecord*> recs;
  for (const auto& slot : model_slots())
    for (const auto& m : r.models)
      if (m.layers == layers && m.slot.label() == slot.label()) recs.push_back(&m);
  std::ostringstream o;
  o << "epoch";
  std::size_t longest = 0;
  for (const auto* m : recs) {
    o << ',' << m->slot.label();
    longest = std::max(longest, m->report.loss.size());
  }
  o << '\n';
  for (std::size_t e = 0; e < longest; ++e) {
    o << e + 1;
    for (const auto* m : recs) {
      o << ',';
      if (e < m->report.loss.size()) o << format_double(m->report.loss[e]);
    }
    o << '\n';
  }
  return o.str();
}

inline std::string trials_csv(const MetricsReport& r, int layers) {
  std::ostringstream o;
  o << "model,param,learned,trial,success,diagnostic,score,limit_hit,sync_mean_rad,cycle_rms_rad\n";
  for (const auto& t : r.trials) {
    if (t.layers != layers) continue;
    o << t.model << ',' << format_double(t.param) << ',' << (t.learned ? 1 : 0) << ',' << t.trial << ','
      << (t.success ? 1 : 0) << ',' << t.diagnostic << ',' << format_double(t.score) << ',' << (t.limit_hit ? 1 : 0)
      << ',' << format_double(t.sync_mean) << ',' << (std::isnan(t.cycle_rms) ? "" : format_double(t.cycle_rms))
      << '\n';
  }
  return o.str();
}

inline std::string models_csv(const MetricsReport& r) {
  std::ostringstream o;
  o << "layers,model,input_dims,output_dims,epochs_run,final_loss,open_loop_mse,weights_hash\n";
  for (const auto& m : r.models) {
    const auto lay = layout_of(m.slot.variant);
    o << m.layers << ',' << m.slot.label() << ',' << lay.in_dims << ',' << lay.out_dims << ','
      << m.report.loss.size() << ',' << (m.report.loss.empty() ? "" : format_double(m.report.loss.back())) << ','
      << (std::isnan(m.open_loop_mse) ? "" : format_double(m.open_loop_mse)) << ',' << m.report.weights_hash << '\n';
  }
  return o.str();
}

namespace detail {
inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

inline Error tagged(const Error& e, const std::string& cell) { return Error(e.kind(), cell + ": " + e.what()); }
}  // namespace detail

/// Demonstrations for the training grid (and one held-out run at the first
/// training value), in grid order.
struct DemoSet {
  std::vector<Episode> episodes;
  std::vector<TrainingSequence> sequences;
  Episode held_out;
};

inline DemoSet generate_demos(const ExperimentSpec& spec, const ControlConfig& control = {}) {
  DemoSet d;
  for (std::size_t g = 0; g < spec.train_grid.size(); ++g)
    for (int trial = 0; trial < spec.demo_trials; ++trial) {
      const std::uint64_t seed = mix_seed(spec.seed, 1000 * g + static_cast<std::uint64_t>(trial));
      const TaskSpec task = make_task(spec.task, spec.train_grid[g], 0.0, spec.letter);
      d.episodes.push_back(run_demo(task, make_operator(task, seed, spec.operator_jitter, spec.tempo_spread), control, seed));
      d.sequences.push_back(downsample(d.episodes.back()));
    }
  const TaskSpec task = make_task(spec.task, spec.train_grid.front(), 0.0, spec.letter);
  const std::uint64_t seed = mix_seed(spec.seed, 999999);
  d.held_out = run_demo(task, make_operator(task, seed, spec.operator_jitter, spec.tempo_spread), control, seed);
  return d;
}

/// Runs the whole study and writes, under out_dir:
///   demos/<task>_<value>_<trial>.csv, models/L<n>_<model>.bcil,
///   success_L<n>.csv, loss_L<n>.csv, trials_L<n>.csv, models.csv
inline MetricsReport run_matrix(const ExperimentSpec& spec, const std::string& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  const fs::path root(out_dir);
  fs::create_directories(root / "demos");
  fs::create_directories(root / "models");
  MetricsReport report;
  report.spec = spec;
  const ControlConfig control;

  const DemoSet demos = generate_demos(spec, control);
  for (std::size_t i = 0; i < demos.episodes.size(); ++i) {
    const std::size_t g = i / static_cast<std::size_t>(spec.demo_trials);
    const std::size_t trial = i % static_cast<std::size_t>(spec.demo_trials);
    save_episode(demos.episodes[i], (root / "demos" /
                                     (std::string(to_string(spec.task)) + "_" + format_double(spec.train_grid[g]) +
                                      "_" + std::to_string(trial) + ".csv"))
                                        .string());
  }
  const TrainingSequence held_out = downsample(demos.held_out);

  AutonomyConfig auto_cfg;
  auto_cfg.control = control;
  auto_cfg.duration = spec.run_duration();
  auto_cfg.pose_jitter = spec.pose_jitter;

  for (int layers : spec.layers) {
    for (std::size_t si = 0; si < model_slots().size(); ++si) {
      const ModelSlot& slot = model_slots()[si];
      const std::string cell = "L" + std::to_string(layers) + " " + slot.label();
      ModelConfig mc = spec.model_config(slot, layers);
      mc.seed = mix_seed(spec.seed, 500 + 10 * static_cast<std::uint64_t>(layers) + si);
      SequenceModel model;
      ModelRecord rec;
      rec.layers = layers;
      rec.slot = slot;
      try {
        auto trained = train(demos.sequences, mc);
        model = std::move(trained.first);
        rec.report = std::move(trained.second);
        if (supports_feedback(slot.variant)) {
          const std::size_t h = std::min(spec.open_loop_horizon, held_out.rows.size() - 1);
          rec.open_loop_mse = metric_open_loop(model, held_out, h);
        }
      } catch (const Error& e) {
        throw detail::tagged(e, cell);
      }
      save_model(model, (root / "models" / ("L" + std::to_string(layers) + "_" + slot.file_stem() + ".bcil")).string());
      report.models.push_back(rec);

      for (std::size_t gi = 0; gi < spec.eval_grid.size(); ++gi) {
        const double p = spec.eval_grid[gi];
        const TaskSpec task = make_task(spec.task, p, auto_cfg.duration, spec.letter);
        for (int trial = 0; trial < spec.trials; ++trial) {
          TrialRecord t;
          t.layers = layers;
          t.model = slot.label();
          t.param = p;
          t.learned = std::find(spec.train_grid.begin(), spec.train_grid.end(), p) != spec.train_grid.end();
          t.trial = trial;
          const std::uint64_t seed = mix_seed(spec.seed, 7000 + 100 * gi + static_cast<std::uint64_t>(trial));
          try {
            const Episode ep = run_autonomous(model, task, auto_cfg, seed);
            const auto c = metric_corridor(ep, task);
            t.success = c.success;
            t.diagnostic = c.diagnostic;
            t.score = c.score;
            t.limit_hit = ep.get("limit_hit") == "1";
            const auto sync = metric_sync(ep);
            t.sync_mean = (sync.mean_abs_error[0] + sync.mean_abs_error[1] + sync.mean_abs_error[2]) / 3.0;
            if (spec.task == TaskKind::Write) {
              try {
                t.cycle_rms = metric_cycle_variance(ep, task).mean_pairwise_rms;
              } catch (const Error& e) {
                if (e.kind() != ErrorKind::NoCycles) throw;
              }
            }
          } catch (const Error& e) {
            if (e.kind() != ErrorKind::NonFinite) throw detail::tagged(e, cell + " @" + format_double(p));
            t.success = false;
            t.diagnostic = "diverged";
          }
          report.trials.push_back(t);
        }
      }
    }
    const std::string suffix = "_L" + std::to_string(layers) + ".csv";
    detail::write_text(root / ("success" + suffix), success_table_csv(report, layers));
    detail::write_text(root / ("loss" + suffix), loss_curves_csv(report, layers));
    detail::write_text(root / ("trials" + suffix), trials_csv(report, layers));
  }
  detail::write_text(root / "models.csv", models_csv(report));
  return report;
}

}  // namespace bcil
