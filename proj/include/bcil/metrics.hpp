#pragma once

// Episode metrics: bilateral synchronisation, contact transparency, free-running
// prediction error, task corridors and cycle repeatability.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "bcil/core.hpp"
#include "bcil/seqmodel.hpp"
#include "bcil/tasks.hpp"
#include "bcil/teleop.hpp"

namespace bcil {

struct SyncStats {
  JointTriple mean_abs_error;   // mean |theta_m - theta_s| [rad]
  JointTriple max_abs_error;    // [rad]
  JointTriple mean_force_sum;   // mean |tau_m + tau_s| [N·m]
  JointTriple peak_slave_torque;  // max |tau_s| [N·m]
  std::size_t samples = 0;
};

inline std::size_t transient_rows(double transient) {
  return static_cast<std::size_t>(std::llround(std::max(0.0, transient) / kControlPeriod));
}

inline SyncStats metric_sync(const Episode& ep, double transient = 0.5) {
  const std::size_t first = transient_rows(transient);
  if (ep.rows.size() <= first)
    throw Error(ErrorKind::TooShort, "episode has no rows after the " + format_double(transient) + " s transient");
  SyncStats s;
  for (std::size_t k = first; k < ep.rows.size(); ++k) {
    const auto& r = ep.rows[k];
    for (std::size_t j = 0; j < 3; ++j) {
      const double e = std::abs(r.master.theta[j] - r.slave.theta[j]);
      s.mean_abs_error[j] += e;
      s.max_abs_error[j] = std::max(s.max_abs_error[j], e);
      s.mean_force_sum[j] += std::abs(r.master.tau[j] + r.slave.tau[j]);
      s.peak_slave_torque[j] = std::max(s.peak_slave_torque[j], std::abs(r.slave.tau[j]));
    }
  }
  s.samples = ep.rows.size() - first;
  const double n = static_cast<double>(s.samples);
  s.mean_abs_error = (1.0 / n) * s.mean_abs_error;
  s.mean_force_sum = (1.0 / n) * s.mean_force_sum;
  return s;
}

/// Force-channel error on one joint over sustained contact: samples where the
/// environment has pushed on the joint for at least `settle` seconds without a
/// break. Returns mean |tau_m + tau_s| / peak |tau_s| over those samples.
struct ContactStats {
  double mean_force_sum = 0.0;
  double peak_slave_torque = 0.0;
  double ratio = 0.0;
  std::size_t samples = 0;
};

inline ContactStats metric_contact(const Episode& ep, std::size_t joint, double settle = 0.2) {
  if (joint > 2) throw Error(ErrorKind::InvalidArgument, "joint index must be 0..2");
  const std::size_t need = transient_rows(settle);
  ContactStats c;
  std::size_t run = 0;
  for (const auto& r : ep.rows) {
    run = r.env[joint] != 0.0 ? run + 1 : 0;
    if (run <= need) continue;
    c.mean_force_sum += std::abs(r.master.tau[joint] + r.slave.tau[joint]);
    c.peak_slave_torque = std::max(c.peak_slave_torque, std::abs(r.slave.tau[joint]));
    ++c.samples;
  }
  if (c.samples == 0) throw Error(ErrorKind::TooShort, "episode has no sustained contact");
  c.mean_force_sum /= static_cast<double>(c.samples);
  c.ratio = c.peak_slave_torque > 0.0 ? c.mean_force_sum / c.peak_slave_torque : 0.0;
  return c;
}

/// Free-running prediction error: the model sees row `start`, then only its own
/// outputs for `horizon` steps; MSE against the recorded rows in normalized space.
inline double metric_open_loop(const SequenceModel& model, const TrainingSequence& seq, std::size_t horizon,
                               std::size_t start = 0) {
  if (!supports_feedback(model.config.variant))
    throw Error(ErrorKind::UnsupportedVariant, std::string(to_string(model.config.variant)) +
                                                   " has no free-running form (output space differs from input)");
  if (horizon < 1) throw Error(ErrorKind::InvalidArgument, "horizon must be >= 1");
  if (start + horizon >= seq.rows.size())
    throw Error(ErrorKind::TooShort, "sequence has " + std::to_string(seq.rows.size()) + " rows, need " +
                                         std::to_string(start + horizon + 1));
  ModelRunner runner(model);
  Eigen::VectorXd x = model.input_of(seq.rows[start]);
  double sse = 0.0;
  for (std::size_t t = 0; t < horizon; ++t) {
    const Eigen::VectorXd y = runner.step(x);
    sse += (y - model.target_of(seq.rows[start + t + 1])).squaredNorm();
    x = y;
  }
  return sse / static_cast<double>(horizon * model.config.out_dims());
}

inline double metric_open_loop(const SequenceModel& model, const Episode& ep, std::size_t horizon,
                               std::size_t start = 0) {
  return metric_open_loop(model, downsample(ep), horizon, start);
}

// ---------------------------------------------------------------------------
// Corridors

struct CorridorResult {
  bool success = false;
  std::string diagnostic;  // "ok" or the first failing check
  double score = 0.0;      // draw: arc [rad]; erase: strokes; write: consecutive cycles
};

namespace detail {

inline double planar_distance(const JointTriple& a, const JointTriple& b) {
  return std::hypot(a[0] - b[0], a[2] - b[2]);
}

inline bool in_contact_band(const TaskSpec& task, const JointTriple& theta) {
  const double pen = task.surface.penetration(theta);
  return pen >= task.contact_min && pen <= task.contact_max;
}

inline CorridorResult corridor_draw(const Episode& ep, const TaskSpec& task, std::size_t first) {
  // longest unbroken stretch on the wall, and how far joint 1 travelled in it
  double best = 0.0;
  double lo = 0.0, hi = 0.0;
  bool on = false;
  for (std::size_t k = first; k < ep.rows.size(); ++k) {
    const auto& th = ep.rows[k].slave.theta;
    if (!in_contact_band(task, th)) {
      on = false;
      continue;
    }
    if (!on) lo = hi = th[0];
    on = true;
    lo = std::min(lo, th[0]);
    hi = std::max(hi, th[0]);
    best = std::max(best, hi - lo);
  }
  CorridorResult r;
  r.score = best;
  r.success = best >= task.arc;
  r.diagnostic = r.success ? "ok" : (best == 0.0 ? "no-contact" : "short-arc");
  return r;
}

/// Turning points of a signal with hysteresis `swing`: (index, is_max).
inline std::vector<std::pair<std::size_t, bool>> turning_points(const std::vector<double>& x, double swing) {
  std::vector<std::pair<std::size_t, bool>> out;
  std::size_t lo = 0, hi = 0, ext = 0;
  int dir = 0;  // +1 rising, -1 falling
  for (std::size_t k = 1; k < x.size(); ++k) {
    if (dir == 0) {
      if (x[k] > x[hi]) hi = k;
      if (x[k] < x[lo]) lo = k;
      if (x[hi] - x[lo] >= swing) {
        dir = hi > lo ? 1 : -1;
        ext = hi > lo ? hi : lo;
      }
    } else if (dir == 1) {
      if (x[k] > x[ext]) {
        ext = k;
      } else if (x[ext] - x[k] >= swing) {
        out.emplace_back(ext, true);
        dir = -1;
        ext = k;
      }
    } else {
      if (x[k] < x[ext]) {
        ext = k;
      } else if (x[k] - x[ext] >= swing) {
        out.emplace_back(ext, false);
        dir = 1;
        ext = k;
      }
    }
  }
  return out;
}

inline CorridorResult corridor_erase(const Episode& ep, const TaskSpec& task, std::size_t first) {
  CorridorResult r;
  std::vector<double> x;
  for (std::size_t k = first; k < ep.rows.size(); ++k) {
    if (!in_contact_band(task, ep.rows[k].slave.theta)) {
      r.diagnostic = "lost-contact";
      return r;
    }
    x.push_back(ep.rows[k].slave.theta[0]);
  }
  const auto turns = turning_points(x, task.min_swing);
  r.score = static_cast<double>(turns.size());
  for (const auto& [k, is_max] : turns) {
    const double centre = is_max ? task.turn_hi : task.turn_lo;
    if (std::abs(x[k] - centre) > task.turn_half_width) {
      r.diagnostic = "turn-out-of-band";
      return r;
    }
  }
  // a reversal at least once per full period, from the start through to the end
  const auto max_gap = static_cast<std::size_t>(std::llround(task.period / kControlPeriod));
  std::size_t prev = 0;
  for (const auto& [k, is_max] : turns) {
    if (k - prev > max_gap) {
      r.diagnostic = "stopped";
      return r;
    }
    prev = k;
  }
  if (x.size() - prev > max_gap) {
    r.diagnostic = "stopped";
    return r;
  }
  r.success = true;
  r.diagnostic = "ok";
  return r;
}

inline double distance_to_loop(const TaskSpec& task, const JointTriple& th) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : task.loop) best = std::min(best, planar_distance(th, p));
  return best;
}

inline CorridorResult corridor_write(const Episode& ep, const TaskSpec& task, std::size_t first) {
  // corners must be reached in letter order; other corners crossed on the way
  // (letter strokes may run through them) are ignored, but the next corner has
  // to come within one letter period
  CorridorResult r;
  const std::size_t n = task.waypoints.size();
  const auto patience = static_cast<std::size_t>(std::llround(task.period / kControlPeriod));
  int cycles = 0, best = 0;
  std::size_t next = 0;
  std::size_t last_advance = first;
  bool started = false;
  std::string failure = "short-run";
  auto restart = [&](const char* why) {
    if (started) failure = why;
    started = false;
    cycles = 0;
    next = 0;
  };
  for (std::size_t k = first; k < ep.rows.size(); ++k) {
    const auto& th = ep.rows[k].slave.theta;
    if (!in_contact_band(task, th)) {
      restart("lost-contact");
      continue;
    }
    if (distance_to_loop(task, th) > task.corridor_width) {
      restart("left-corridor");
      continue;
    }
    if (started && k - last_advance > patience) restart("segment-order");
    if (planar_distance(th, task.waypoints[next]) > task.waypoint_radius) continue;
    if (!started) {
      if (next != 0) continue;
      started = true;
    } else if (next == 0) {
      ++cycles;
      best = std::max(best, cycles);
    }
    next = (next + 1) % n;
    last_advance = k;
  }
  r.score = best;
  r.success = best >= task.cycles_required;
  r.diagnostic = r.success ? "ok" : failure;
  return r;
}

}  // namespace detail

/// Success predicate of a task analogue in joint space.
inline CorridorResult metric_corridor(const Episode& ep, const TaskSpec& task, double transient = 0.5) {
  const std::string kind = ep.get("task");
  if (!kind.empty() && kind != to_string(task.kind))
    throw Error(ErrorKind::TaskMismatch, "episode is a '" + kind + "' run, task is '" + to_string(task.kind) + "'");
  CorridorResult r;
  if (ep.get("limit_hit") == "1") {
    r.diagnostic = "out-of-band";
    return r;
  }
  for (const auto& row : ep.rows)
    for (std::size_t j = 0; j < 3; ++j)
      if (!(std::abs(row.slave.theta[j]) < PlantParams{}.joint_limit)) {
        r.diagnostic = "out-of-band";
        return r;
      }
  const std::size_t first = transient_rows(transient);
  // no motion after the transient
  JointTriple lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  for (std::size_t k = first; k < ep.rows.size(); ++k)
    for (std::size_t j = 0; j < 3; ++j) {
      lo[j] = std::min(lo[j], ep.rows[k].slave.theta[j]);
      hi[j] = std::max(hi[j], ep.rows[k].slave.theta[j]);
    }
  bool moving = false;
  for (std::size_t j = 0; j < 3; ++j) moving = moving || (hi[j] - lo[j] >= 1e-3);
  if (!moving) {
    r.diagnostic = "stopped";
    return r;
  }
  switch (task.kind) {
    case TaskKind::Draw: return detail::corridor_draw(ep, task, first);
    case TaskKind::Erase: return detail::corridor_erase(ep, task, first);
    case TaskKind::Write: return detail::corridor_write(ep, task, first);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Cycle repeatability

struct CycleStats {
  double mean_pairwise_rms = 0.0;  // rad
  std::size_t cycles = 0;
  std::vector<std::size_t> boundaries;  // row indices of cycle starts
};

/// Splits the slave path at its closest passes to the first letter corner,
/// resamples each cycle onto a common phase grid and averages the RMS
/// difference over all cycle pairs.
inline CycleStats metric_cycle_variance(const Episode& ep, const TaskSpec& task, double transient = 0.5,
                                        std::size_t grid = 200) {
  if (task.kind != TaskKind::Write || task.waypoints.empty())
    throw Error(ErrorKind::TaskMismatch, "cycle variance needs a write task");
  const std::string kind = ep.get("task");
  if (!kind.empty() && kind != to_string(task.kind))
    throw Error(ErrorKind::TaskMismatch, "episode is a '" + kind + "' run");
  const std::size_t first = transient_rows(transient);
  const JointTriple anchor = task.waypoints[0];
  const double gate = 3.0 * task.waypoint_radius;
  const auto spacing = static_cast<std::size_t>(std::llround(0.5 * task.period / kControlPeriod));

  // local minima of the distance to the anchor, inside the gate, far enough apart
  std::vector<std::size_t> passes;
  std::size_t k = first;
  while (k < ep.rows.size()) {
    if (detail::planar_distance(ep.rows[k].slave.theta, anchor) > gate) {
      ++k;
      continue;
    }
    std::size_t best = k;
    while (k < ep.rows.size() && detail::planar_distance(ep.rows[k].slave.theta, anchor) <= gate) {
      if (detail::planar_distance(ep.rows[k].slave.theta, anchor) <
          detail::planar_distance(ep.rows[best].slave.theta, anchor))
        best = k;
      ++k;
    }
    if (passes.empty() || best - passes.back() >= spacing) passes.push_back(best);
  }
  if (passes.size() < 3) throw Error(ErrorKind::NoCycles, "fewer than two complete cycles detected");

  const std::size_t cycles = passes.size() - 1;
  std::vector<std::vector<JointTriple>> resampled(cycles, std::vector<JointTriple>(grid));
  for (std::size_t c = 0; c < cycles; ++c) {
    const double a = static_cast<double>(passes[c]);
    const double len = static_cast<double>(passes[c + 1] - passes[c]);
    for (std::size_t g = 0; g < grid; ++g) {
      const double pos = a + len * static_cast<double>(g) / static_cast<double>(grid);
      const auto i = static_cast<std::size_t>(pos);
      const double f = pos - static_cast<double>(i);
      const auto& p0 = ep.rows[i].slave.theta;
      const auto& p1 = ep.rows[std::min(i + 1, ep.rows.size() - 1)].slave.theta;
      resampled[c][g] = p0 + f * (p1 - p0);
    }
  }
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < cycles; ++a)
    for (std::size_t b = a + 1; b < cycles; ++b) {
      double sq = 0.0;
      for (std::size_t g = 0; g < grid; ++g)
        for (std::size_t j = 0; j < 3; ++j) {
          const double d = resampled[a][g][j] - resampled[b][g][j];
          sq += d * d;
        }
      total += std::sqrt(sq / static_cast<double>(3 * grid));
      ++pairs;
    }
  CycleStats s;
  s.cycles = cycles;
  s.boundaries = passes;
  s.mean_pairwise_rms = pairs ? total / static_cast<double>(pairs) : 0.0;
  return s;
}

}  // namespace bcil
