#pragma once

// Joint-space analogues of the three demonstration tasks.
//
//  draw  : press joint 2 onto an inclined wall and slide along it with joint 1.
//          The parameter is the wall inclination in degrees.
//  erase : press joint 2 onto a wall whose position encodes the sheet height
//          (mm) and reciprocate joint 1 against dry friction.
//  write : press joint 2 onto a height-dependent wall and trace a closed
//          letter loop in (joint 1, joint 3), repeatedly.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "bcil/core.hpp"
#include "bcil/plant.hpp"
#include "bcil/trajectory.hpp"

namespace bcil {

enum class TaskKind { Draw, Erase, Write };

inline const char* to_string(TaskKind k) {
  switch (k) {
    case TaskKind::Draw: return "draw";
    case TaskKind::Erase: return "erase";
    case TaskKind::Write: return "write";
  }
  return "?";
}

inline TaskKind parse_task_kind(std::string_view s) {
  if (s == "draw") return TaskKind::Draw;
  if (s == "erase") return TaskKind::Erase;
  if (s == "write") return TaskKind::Write;
  throw Error(ErrorKind::InvalidArgument, "unknown task '" + std::string(s) + "' (draw | erase | write)");
}

struct TaskSpec {
  TaskKind kind = TaskKind::Draw;
  double param = 0.0;  // inclination [deg] for draw, sheet height [mm] otherwise
  char letter = 'A';   // write only
  double duration = 3.0;
  JointTriple initial_pose{0.0, 0.2, 0.3};

  SpringWall surface;  // the contact the task is about (joint 2)
  EnvironmentModel env;
  CubicPath reference;  // the demonstrator's intended path
  double period = 0.0;  // erase stroke / write letter period [s]

  // success corridor, all in joint space
  double contact_min = -0.02;  // allowed penetration band of `surface` [rad]
  double contact_max = 0.12;
  double arc = 0.25;              // draw: joint-1 travel along the wall [rad]
  double turn_lo = 0.0;           // erase: joint-1 turnaround centres [rad]
  double turn_hi = 0.0;
  double turn_half_width = 0.06;  // erase
  double min_swing = 0.1;         // erase: smallest excursion counted as a stroke
  double corridor_width = 0.05;   // write: max distance from the letter loop
  double waypoint_radius = 0.05;  // write
  int cycles_required = 5;        // write
  std::vector<JointTriple> waypoints;  // write: letter corners (absolute)
  std::vector<JointTriple> loop;       // write: dense samples of one letter

  std::string name() const {
    std::string s = to_string(kind);
    s += ":" + format_double(param);
    if (kind == TaskKind::Write) s += std::string(":") + letter;
    return s;
  }
};

namespace task_constants {
inline constexpr double wall_stiffness = 4.0;  // N·m/rad
inline constexpr double wall_damping = 0.02;   // N·m·s/rad
inline constexpr double press = 0.05;          // how far the operator aims past a surface [rad]
inline constexpr double draw_sweep = 0.35;     // rad
inline constexpr double erase_stroke = 0.4;    // rad
inline constexpr double erase_period = 1.0;    // s
inline constexpr double erase_friction = 0.03; // N·m
inline constexpr double write_period = 3.5;    // s
}  // namespace task_constants

inline double default_duration(TaskKind kind, bool autonomous) {
  switch (kind) {
    case TaskKind::Draw: return 3.0;
    case TaskKind::Erase: return autonomous ? 8.0 : 10.0;
    case TaskKind::Write: return 20.0;
  }
  return 3.0;
}

inline std::vector<JointTriple> letter_offsets(char letter) {
  // (d theta1, 0, d theta3) corners of a closed stroke loop
  if (letter == 'A') return {{0, 0, 0}, {0.12, 0, 0.3}, {0.24, 0, 0}, {0.18, 0, 0.15}, {0.06, 0, 0.15}};
  if (letter == 'B') return {{0, 0, 0}, {0, 0, 0.3}, {0.15, 0, 0.24}, {0.02, 0, 0.15}, {0.16, 0, 0.07}};
  throw Error(ErrorKind::InvalidArgument, std::string("unknown letter '") + letter + "' (A | B)");
}

/// Builds a task analogue. duration <= 0 selects the demonstration length.
inline TaskSpec make_task(TaskKind kind, double param, double duration = 0.0, char letter = 'A') {
  namespace tc = task_constants;
  if (!std::isfinite(param)) throw Error(ErrorKind::InvalidArgument, "task parameter must be finite");
  TaskSpec t;
  t.kind = kind;
  t.param = param;
  t.letter = letter;
  t.duration = duration > 0.0 ? duration : default_duration(kind, false);
  const JointTriple q0 = t.initial_pose;

  t.surface.joint = 1;
  t.surface.side = +1;
  t.surface.stiffness = tc::wall_stiffness;
  t.surface.damping = tc::wall_damping;

  // path knots are laid out past the episode end so longer runs stay defined
  const double horizon = t.duration + 2.0;
  std::vector<double> ts;
  std::vector<JointTriple> ps;

  switch (kind) {
    case TaskKind::Draw: {
      const double incl = param * std::numbers::pi / 180.0;
      t.surface.position = q0[1] + 0.12;
      t.surface.slope_joint = 0;
      t.surface.slope = 0.4 * incl;
      t.surface.pivot = q0[0];
      t.env.kind = Composite{{EnvironmentModel{t.surface},
                              EnvironmentModel{CoulombPatch{0, 0.004, q0[0] - 0.2, q0[0] + 0.8}}}};
      auto on_wall = [&](double th1) {
        JointTriple q{th1, 0.0, q0[2]};
        q[1] = t.surface.surface(q) + tc::press;
        return q;
      };
      ts = {0.0, 0.7, 1.0, 2.6, horizon};
      ps = {q0, on_wall(q0[0]), on_wall(q0[0]), on_wall(q0[0] + tc::draw_sweep), on_wall(q0[0] + tc::draw_sweep)};
      break;
    }
    case TaskKind::Erase: {
      t.surface.position = q0[1] + 0.08 + 0.003 * (param - 55.0);
      t.period = tc::erase_period;
      t.turn_lo = q0[0];
      t.turn_hi = q0[0] + tc::erase_stroke;
      t.env.kind = Composite{{EnvironmentModel{t.surface},
                              EnvironmentModel{CoulombPatch{0, tc::erase_friction, q0[0] - 0.6, q0[0] + 1.0}}}};
      const double pressed = t.surface.position + tc::press;
      ts = {0.0, 0.5};
      ps = {q0, {q0[0], pressed, q0[2]}};
      for (double tk = 0.5 + t.period / 2; tk < horizon; tk += t.period / 2) {
        const bool right = ps.back()[0] == t.turn_lo;
        ts.push_back(tk);
        ps.push_back({right ? t.turn_hi : t.turn_lo, pressed, q0[2]});
      }
      break;
    }
    case TaskKind::Write: {
      t.surface.position = q0[1] + 0.06 + 0.003 * (param - 55.0);
      t.period = tc::write_period;
      t.env.kind = Composite{{EnvironmentModel{t.surface}}};
      const double pressed = t.surface.position + tc::press;
      const auto offsets = letter_offsets(letter);
      for (const auto& o : offsets) t.waypoints.push_back({q0[0] + o[0], pressed, q0[2] + o[2]});
      const double seg = t.period / static_cast<double>(offsets.size());
      ts = {0.0, 0.5};
      ps = {q0, t.waypoints[0]};
      std::size_t k = 1;
      for (double tk = 0.5 + seg; tk < horizon; tk += seg, ++k) {
        ts.push_back(tk);
        ps.push_back(t.waypoints[k % offsets.size()]);
      }
      break;
    }
  }
  t.reference = CubicPath(std::move(ts), std::move(ps));
  if (kind == TaskKind::Write) {
    // one steady-state letter (the second), sampled densely
    const double t0 = 0.5 + t.period;
    for (int i = 0; i < 400; ++i) t.loop.push_back(t.reference.position(t0 + t.period * i / 400.0));
  }
  t.env.validate();
  return t;
}

}  // namespace bcil
