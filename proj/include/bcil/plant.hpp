#pragma once

// Decoupled 3-DOF joint dynamics and joint-space contact environments.
//
//   J1 th1'' = tau1 - dis1 - D th1'
//   J2 th2'' = tau2 - dis2 - G1 cos(th2) - G2 sin(th3)
//   J3 th3'' = tau3 - dis3 - G3 sin(th3)
//
// Off-diagonal inertia is neglected, so every joint integrates independently.

#include <cmath>
#include <numbers>
#include <variant>
#include <vector>

#include "bcil/core.hpp"

namespace bcil {

/// Identified plant parameters, SI units.
struct PlantParams {
  JointTriple inertia{2.55e-3, 4.30e-3, 1.12e-3};  // kg·m²
  double g1 = 79.0e-3;                             // N·m
  double g2 = 55.0e-3;                             // N·m
  double g3 = 33.0e-3;                             // N·m
  double viscous = 4.55e-3;                        // kg·m²/s, joint 1 only
  double joint_limit = std::numbers::pi;           // symmetric, rad

  void validate() const {
    for (double j : inertia.v)
      if (!(j > 0.0) || !std::isfinite(j)) throw Error(ErrorKind::InvalidArgument, "inertia must be > 0");
    if (!(viscous >= 0.0)) throw Error(ErrorKind::InvalidArgument, "viscous friction must be >= 0");
    if (!(joint_limit > 0.0)) throw Error(ErrorKind::InvalidArgument, "joint limit must be > 0");
  }
};

struct PlantState {
  JointTriple theta;   // rad
  JointTriple dtheta;  // rad/s

  bool finite() const { return theta.finite() && dtheta.finite(); }
  friend bool operator==(const PlantState&, const PlantState&) = default;
};

inline JointTriple gravity_torque(const PlantParams& p, const JointTriple& theta) {
  return {0.0, p.g1 * std::cos(theta[1]) + p.g2 * std::sin(theta[2]), p.g3 * std::sin(theta[2])};
}

inline JointTriple friction_torque(const PlantParams& p, const JointTriple& dtheta) {
  return {p.viscous * dtheta[0], 0.0, 0.0};
}

// ---------------------------------------------------------------------------
// Environments. All return the torque the environment exerts on the joints.

struct FreeSpace {};

/// One-sided spring-damper wall on a single joint. The wall may be inclined
/// against a second joint: surface = position + slope * (theta[slope_joint] - pivot).
/// side = +1 blocks motion above the surface, -1 below it.
struct SpringWall {
  int joint = 0;
  double position = 0.0;   // rad
  double stiffness = 0.0;  // N·m/rad
  double damping = 0.0;    // N·m·s/rad
  int side = +1;
  int slope_joint = -1;
  double slope = 0.0;
  double pivot = 0.0;

  double surface(const JointTriple& theta) const {
    if (slope_joint < 0) return position;
    return position + slope * (theta[static_cast<std::size_t>(slope_joint)] - pivot);
  }
  /// Positive when the joint is inside the wall.
  double penetration(const JointTriple& theta) const {
    return side * (theta[static_cast<std::size_t>(joint)] - surface(theta));
  }
};

/// Dry friction on one joint while its angle lies in [lo, hi].
struct CoulombPatch {
  int joint = 0;
  double level = 0.0;  // N·m
  double lo = -std::numbers::pi;
  double hi = std::numbers::pi;
  static constexpr double deadband = 1e-4;  // rad/s
};

struct EnvironmentModel;

struct Composite {
  std::vector<EnvironmentModel> parts;
};

struct EnvironmentModel {
  std::variant<FreeSpace, SpringWall, CoulombPatch, Composite> kind{FreeSpace{}};

  static EnvironmentModel free() { return {}; }
  void validate() const;
};

namespace detail {
inline void check_joint(int j) {
  if (j < 0 || j > 2) throw Error(ErrorKind::InvalidArgument, "joint index out of range");
}
}  // namespace detail

inline void EnvironmentModel::validate() const {
  std::visit(
      [](const auto& e) {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, SpringWall>) {
          detail::check_joint(e.joint);
          if (e.slope_joint >= 0) detail::check_joint(e.slope_joint);
          if (e.stiffness < 0 || e.damping < 0) throw Error(ErrorKind::InvalidArgument, "wall gains must be >= 0");
          if (e.side != 1 && e.side != -1) throw Error(ErrorKind::InvalidArgument, "wall side must be +1 or -1");
        } else if constexpr (std::is_same_v<T, CoulombPatch>) {
          detail::check_joint(e.joint);
          if (e.level < 0) throw Error(ErrorKind::InvalidArgument, "friction level must be >= 0");
          if (e.lo > e.hi) throw Error(ErrorKind::InvalidArgument, "friction region is empty");
        } else if constexpr (std::is_same_v<T, Composite>) {
          for (const auto& part : e.parts) part.validate();
        }
      },
      kind);
}

inline JointTriple env_torque(const EnvironmentModel& env, const PlantState& s, double t) {
  return std::visit(
      [&](const auto& e) -> JointTriple {
        using T = std::decay_t<decltype(e)>;
        JointTriple out;
        if constexpr (std::is_same_v<T, SpringWall>) {
          const auto j = static_cast<std::size_t>(e.joint);
          const double pen = e.penetration(s.theta);
          if (pen > 0.0) {
            // never adhesive: the wall can only push the joint out
            const double push = e.stiffness * pen + e.side * e.damping * s.dtheta[j];
            out[j] = -e.side * std::max(0.0, push);
          }
        } else if constexpr (std::is_same_v<T, CoulombPatch>) {
          const auto j = static_cast<std::size_t>(e.joint);
          const double q = s.theta[j];
          const double w = s.dtheta[j];
          if (q >= e.lo && q <= e.hi && std::abs(w) >= CoulombPatch::deadband)
            out[j] = w > 0.0 ? -e.level : e.level;
        } else if constexpr (std::is_same_v<T, Composite>) {
          for (const auto& part : e.parts) out += env_torque(part, s, t);
        }
        return out;
      },
      env.kind);
}

// ---------------------------------------------------------------------------
// Integration

struct StepResult {
  PlantState state;
  JointTriple tau_dis;  // external disturbance that entered the dynamics
  bool limit_hit = false;
};

/// One semi-implicit Euler step. `applied` is an extra external torque that
/// assists motion (the operator's hand on the master); the disturbance fed to
/// the dynamics is tau_dis = -(env + applied).
inline StepResult step_plant(const PlantState& state, const JointTriple& tau_ref, const EnvironmentModel& env,
                             const PlantParams& params, double dt, double t = 0.0,
                             const JointTriple& applied = {}) {
  if (!(dt > 0.0 && dt <= 1e-3)) throw Error(ErrorKind::InvalidArgument, "step_plant: dt must be in (0, 1e-3]");
  StepResult r;
  r.tau_dis = -(env_torque(env, state, t) + applied);
  const JointTriple load = r.tau_dis + gravity_torque(params, state.theta) + friction_torque(params, state.dtheta);
  r.state = state;
  for (std::size_t j = 0; j < 3; ++j) {
    const double acc = (tau_ref[j] - load[j]) / params.inertia[j];
    r.state.dtheta[j] += acc * dt;
    r.state.theta[j] += r.state.dtheta[j] * dt;
    const double lim = params.joint_limit;
    if (r.state.theta[j] > lim || r.state.theta[j] < -lim) {
      r.state.theta[j] = std::clamp(r.state.theta[j], -lim, lim);
      r.state.dtheta[j] = 0.0;
      r.limit_hit = true;
    }
  }
  if (!r.state.finite() || !r.tau_dis.finite())
    throw Error(ErrorKind::NonFinite, "plant state diverged (unstable gains or step size)");
  return r;
}

/// Advances one control tick with the torque held, using `substeps` inner steps.
/// The returned tau_dis is the mean over the substeps.
inline StepResult advance_plant(const PlantState& state, const JointTriple& tau_ref, const EnvironmentModel& env,
                                const PlantParams& params, double tick, int substeps, double t = 0.0,
                                const JointTriple& applied = {}) {
  if (substeps < 1) throw Error(ErrorKind::InvalidArgument, "substeps must be >= 1");
  const double h = tick / substeps;
  StepResult acc{state, {}, false};
  JointTriple dis_sum;
  for (int i = 0; i < substeps; ++i) {
    const StepResult r = step_plant(acc.state, tau_ref, env, params, h, t + i * h, applied);
    acc.state = r.state;
    acc.limit_hit = acc.limit_hit || r.limit_hit;
    dis_sum += r.tau_dis;
  }
  acc.tau_dis = (1.0 / substeps) * dis_sum;
  return acc;
}

}  // namespace bcil
