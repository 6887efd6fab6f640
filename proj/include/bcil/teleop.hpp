#pragma once

// Scripted bilateral demonstrations, the 1 ms episode log and its CSV form,
// and the 20 ms training sequences cut from it.

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "bcil/control.hpp"
#include "bcil/core.hpp"
#include "bcil/plant.hpp"
#include "bcil/tasks.hpp"

namespace bcil {

inline constexpr double kControlPeriod = 1e-3;  // s
inline constexpr int kPredictionStride = 20;    // control ticks per model step

struct ControlConfig {
  ControlGains gains;
  PlantParams plant;
  int substeps = 10;  // plant substeps per control tick

  void validate() const {
    gains.validate();
    plant.validate();
    if (substeps < 1) throw Error(ErrorKind::InvalidArgument, "substeps must be >= 1");
  }

  std::string hash() const {
    Fnv1a h;
    for (double x : {gains.kp, gains.kd, gains.kf, gains.g_diff, gains.g_dob, gains.g_rfob, plant.inertia[0],
                     plant.inertia[1], plant.inertia[2], plant.g1, plant.g2, plant.g3, plant.viscous,
                     plant.joint_limit, static_cast<double>(substeps)})
      h.update(x);
    return hex64(h.digest());
  }
};

// ---------------------------------------------------------------------------
// Virtual operator

/// Impedance model of a hand holding the master: a spring-damper towards the
/// intended path plus slow, seeded tremor on the aim point.
struct OperatorModel {
  CubicPath reference;
  JointTriple stiffness{0.5, 0.9, 0.25};    // N·m/rad
  JointTriple damping{0.1, 0.17, 0.045};    // N·m·s/rad
  double time_scale = 1.0;                  // >1 runs the path faster
  double jitter_amplitude = 0.0;            // rad, stationary std
  double jitter_cutoff = 5.0;               // rad/s
  std::uint64_t seed = 0;
  std::vector<JointTriple> jitter;          // one sample per control tick

  /// Precomputes the tremor for `duration` seconds.
  void generate_jitter(double duration) {
    jitter.clear();
    if (jitter_amplitude <= 0.0) return;
    const auto n = static_cast<std::size_t>(std::ceil(duration / kControlPeriod)) + 1;
    const double a = std::exp(-jitter_cutoff * kControlPeriod);
    const double drive = jitter_amplitude * std::sqrt((1.0 + a) / (1.0 - a));
    Rng rng(mix_seed(seed, 0x6a17));
    JointTriple y{jitter_amplitude * rng.normal(), jitter_amplitude * rng.normal(), jitter_amplitude * rng.normal()};
    jitter.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
      jitter.push_back(y);
      for (std::size_t j = 0; j < 3; ++j) y[j] = a * y[j] + (1.0 - a) * drive * rng.normal();
    }
  }

  JointTriple jitter_at(double t) const {
    if (jitter.empty()) return {};
    const auto k = static_cast<std::size_t>(std::max(0.0, std::round(t / kControlPeriod)));
    return jitter[std::min(k, jitter.size() - 1)];
  }

  void validate() const {
    for (std::size_t j = 0; j < 3; ++j)
      if (stiffness[j] < 0 || damping[j] < 0) throw Error(ErrorKind::InvalidArgument, "operator gains must be >= 0");
    if (!(time_scale > 0.0)) throw Error(ErrorKind::InvalidArgument, "operator time scale must be > 0");
  }
};

/// Demonstrator for a task: the task path, trial-to-trial tempo variation
/// and tremor, all drawn from `seed`.
inline OperatorModel make_operator(const TaskSpec& task, std::uint64_t seed, double jitter_amplitude = 0.004,
                                   double tempo_spread = 0.04) {
  OperatorModel op;
  op.reference = task.reference;
  op.seed = seed;
  op.jitter_amplitude = jitter_amplitude;
  Rng rng(mix_seed(seed, 0x7e3b0));
  op.time_scale = 1.0 + tempo_spread * (2.0 * rng.uniform() - 1.0);
  op.generate_jitter(task.duration);
  return op;
}

inline JointTriple operator_torque(const OperatorModel& op, const RobotState9& master, double t) {
  const double tau_t = t * op.time_scale;
  const JointTriple aim = op.reference.position(tau_t) + op.jitter_at(t);
  const JointTriple aim_rate = op.time_scale * op.reference.velocity(tau_t);
  return hadamard(op.stiffness, aim - master.theta) + hadamard(op.damping, aim_rate - master.dtheta);
}

// ---------------------------------------------------------------------------
// Episodes

struct EpisodeRow {
  double t_ms = 0.0;
  RobotState9 slave;
  RobotState9 master;
  JointTriple ref_s;
  JointTriple ref_m;
  JointTriple env;  // torque the environment applies to the slave

  friend bool operator==(const EpisodeRow&, const EpisodeRow&) = default;
};

struct Episode {
  std::map<std::string, std::string> meta;
  std::vector<EpisodeRow> rows;

  double duration() const { return static_cast<double>(rows.size()) * kControlPeriod; }
  std::string get(const std::string& key, const std::string& fallback = "") const {
    const auto it = meta.find(key);
    return it == meta.end() ? fallback : it->second;
  }
};

inline TaskSpec task_of(const Episode& ep) {
  const std::string kind = ep.get("task");
  if (kind.empty()) throw Error(ErrorKind::Malformed, "episode has no #task metadata");
  double param = 0.0;
  if (!parse_double(ep.get("param"), param)) throw Error(ErrorKind::Malformed, "episode has no valid #param");
  const std::string letter = ep.get("letter", "A");
  return make_task(parse_task_kind(kind), param, ep.duration(), letter.empty() ? 'A' : letter[0]);
}

/// Runs a full 4ch bilateral demonstration at 1 ms.
inline Episode run_demo(const TaskSpec& task, const OperatorModel& op, const ControlConfig& config, std::uint64_t seed) {
  config.validate();
  op.validate();
  task.env.validate();
  const auto& params = config.plant;
  const auto ticks = static_cast<std::size_t>(std::llround(task.duration / kControlPeriod));

  PlantState master{task.initial_pose, {}};
  PlantState slave{task.initial_pose, {}};
  RobotObserver master_obs(params, config.gains, kControlPeriod, master.theta);
  RobotObserver slave_obs(params, config.gains, kControlPeriod, slave.theta);
  const EnvironmentModel free_space;

  Episode ep;
  ep.rows.reserve(ticks);
  bool limit_hit = false;
  for (std::size_t k = 0; k < ticks; ++k) {
    const double t = static_cast<double>(k) * kControlPeriod;
    EpisodeRow row;
    row.t_ms = static_cast<double>(k);
    row.master = master_obs.measure(master.theta);
    row.slave = slave_obs.measure(slave.theta);
    const BilateralRefs refs = bilateral_refs(row.master, row.slave, config.gains, params);
    row.ref_m = refs.master;
    row.ref_s = refs.slave;
    row.env = env_torque(task.env, slave, t);
    const JointTriple hand = operator_torque(op, row.master, t);
    try {
      const auto m = advance_plant(master, master_obs.actuate(refs.master), free_space, params, kControlPeriod,
                                   config.substeps, t, hand);
      const auto s = advance_plant(slave, slave_obs.actuate(refs.slave), task.env, params, kControlPeriod,
                                   config.substeps, t);
      master = m.state;
      slave = s.state;
      limit_hit = limit_hit || m.limit_hit || s.limit_hit;
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::NonFinite)
        throw Error(ErrorKind::NonFinite, "demo diverged at tick " + std::to_string(k));
      throw;
    }
    if (!row.master.finite() || !row.slave.finite())
      throw Error(ErrorKind::NonFinite, "demo diverged at tick " + std::to_string(k));
    ep.rows.push_back(row);
  }
  ep.meta["mode"] = "demo";
  ep.meta["task"] = to_string(task.kind);
  ep.meta["param"] = format_double(task.param);
  ep.meta["letter"] = std::string(1, task.letter);
  ep.meta["seed"] = std::to_string(seed);
  ep.meta["config_hash"] = config.hash();
  ep.meta["limit_hit"] = limit_hit ? "1" : "0";
  return ep;
}

// ---------------------------------------------------------------------------
// Training sequences

inline constexpr std::size_t kStateDims = 18;  // slave 9 | master 9
using StateRow = std::array<double, kStateDims>;

struct TrainingSequence {
  double stride_ms = 20.0;
  std::vector<StateRow> rows;
};

inline StateRow state_row(const EpisodeRow& r) {
  StateRow out{};
  const auto s = r.slave.flat();
  const auto m = r.master.flat();
  std::copy(s.begin(), s.end(), out.begin());
  std::copy(m.begin(), m.end(), out.begin() + 9);
  return out;
}

/// Instantaneous pick of every 20th row; consecutive rows form (t, t + 20 ms) pairs.
inline TrainingSequence downsample(const Episode& ep) {
  if (ep.rows.size() < 2 * kPredictionStride)
    throw Error(ErrorKind::TooShort, "episode shorter than 40 ms cannot be downsampled");
  TrainingSequence seq;
  seq.stride_ms = kPredictionStride * kControlPeriod * 1e3;
  const std::size_t n = ep.rows.size() / kPredictionStride;
  seq.rows.reserve(n);
  for (std::size_t k = 0; k < n; ++k) seq.rows.push_back(state_row(ep.rows[k * kPredictionStride]));
  return seq;
}

// ---------------------------------------------------------------------------
// CSV

inline const std::vector<std::string>& episode_columns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c{"t_ms"};
    for (const char* who : {"s", "m"})
      for (const char* q : {"th", "dth", "tau"})
        for (int j = 1; j <= 3; ++j) c.push_back(std::string(who) + "_" + q + std::to_string(j));
    for (const char* q : {"ref_s", "ref_m", "env"})
      for (int j = 1; j <= 3; ++j) c.push_back(q + std::to_string(j));
    return c;
  }();
  return cols;
}

inline void write_episode(const Episode& ep, std::ostream& out) {
  out << "#format=bcil-episode-1\n";
  for (const auto& [k, v] : ep.meta)
    if (k != "format" && k != "rows") out << '#' << k << '=' << v << '\n';
  out << "#rows=" << ep.rows.size() << '\n';
  const auto& cols = episode_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  std::string line;
  for (const auto& r : ep.rows) {
    line = format_double(r.t_ms);
    auto put = [&](const JointTriple& x) {
      for (double v : x.v) {
        line += ',';
        line += format_double(v);
      }
    };
    for (const auto* s : {&r.slave, &r.master}) {
      put(s->theta);
      put(s->dtheta);
      put(s->tau);
    }
    put(r.ref_s);
    put(r.ref_m);
    put(r.env);
    line += '\n';
    out << line;
  }
}

inline void save_episode(const Episode& ep, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open '" + path + "' for writing");
  write_episode(ep, out);
  if (!out) throw Error(ErrorKind::Io, "write failed for '" + path + "'");
}

inline Episode read_episode(std::istream& in) {
  Episode ep;
  std::string line;
  std::size_t lineno = 0;
  auto malformed = [&](const std::string& why) {
    return Error(ErrorKind::Malformed, "line " + std::to_string(lineno) + ": " + why);
  };
  bool header_seen = false;
  const auto& cols = episode_columns();
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header_seen) {
      if (!line.empty() && line[0] == '#') {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw malformed("metadata line without '='");
        ep.meta[line.substr(1, eq - 1)] = line.substr(eq + 1);
        continue;
      }
      const auto fields = split(line, ',');
      if (fields.size() != cols.size()) throw malformed("header mismatch");
      for (std::size_t i = 0; i < cols.size(); ++i)
        if (fields[i] != cols[i]) throw malformed("header mismatch at column '" + std::string(fields[i]) + "'");
      header_seen = true;
      continue;
    }
    if (line.empty()) throw malformed("empty row");
    const auto fields = split(line, ',');
    if (fields.size() != cols.size()) throw malformed("expected " + std::to_string(cols.size()) + " fields");
    std::array<double, 28> v{};
    for (std::size_t i = 0; i < fields.size(); ++i)
      if (!parse_double(fields[i], v[i]) || !std::isfinite(v[i])) throw malformed("bad number in column " + cols[i]);
    EpisodeRow r;
    r.t_ms = v[0];
    r.slave = RobotState9::from_flat(std::span<const double>(v.data() + 1, 9));
    r.master = RobotState9::from_flat(std::span<const double>(v.data() + 10, 9));
    for (std::size_t j = 0; j < 3; ++j) {
      r.ref_s[j] = v[19 + j];
      r.ref_m[j] = v[22 + j];
      r.env[j] = v[25 + j];
    }
    ep.rows.push_back(r);
  }
  if (!header_seen) throw malformed("missing header");
  if (ep.get("format") != "bcil-episode-1") throw Error(ErrorKind::Malformed, "unknown episode format");
  double declared = -1;
  if (!parse_double(ep.get("rows"), declared) || declared != static_cast<double>(ep.rows.size()))
    throw malformed("row count does not match #rows (truncated file?)");
  ep.meta.erase("format");
  ep.meta.erase("rows");
  return ep;
}

inline Episode load_episode(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  return read_episode(in);
}

}  // namespace bcil
