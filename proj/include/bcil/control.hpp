#pragma once

// Velocity estimation, disturbance / reaction-force observers and the
// four-channel bilateral control law.

#include <array>
#include <cmath>
#include <utility>

#include "bcil/core.hpp"
#include "bcil/plant.hpp"

namespace bcil {

struct ControlGains {
  double kp = 121.0;     // 1/s²
  double kd = 22.0;      // 1/s
  double kf = 1.0;       // -
  double g_diff = 40.0;  // rad/s, pseudo-differentiation cutoff
  double g_dob = 40.0;   // rad/s
  double g_rfob = 40.0;  // rad/s

  void validate() const {
    for (double x : {kp, kd, kf, g_diff, g_dob, g_rfob})
      if (!(x > 0.0) || !std::isfinite(x)) throw Error(ErrorKind::InvalidArgument, "control gains must be > 0");
  }
};

/// Response values of one robot: angle, angular velocity, torque per joint.
struct RobotState9 {
  JointTriple theta;   // rad
  JointTriple dtheta;  // rad/s
  JointTriple tau;     // N·m

  std::array<double, 9> flat() const {
    return {theta[0], theta[1], theta[2], dtheta[0], dtheta[1], dtheta[2], tau[0], tau[1], tau[2]};
  }
  template <class Range>
  static RobotState9 from_flat(const Range& v) {
    RobotState9 s;
    for (std::size_t j = 0; j < 3; ++j) {
      s.theta[j] = v[j];
      s.dtheta[j] = v[3 + j];
      s.tau[j] = v[6 + j];
    }
    return s;
  }
  bool finite() const { return theta.finite() && dtheta.finite() && tau.finite(); }
  friend bool operator==(const RobotState9&, const RobotState9&) = default;
};

/// First-order low-pass cutoff/(s + cutoff), exact for inputs held over each tick.
/// The sample passed to update() is the value held during the tick that just ended.
class Lpf1 {
 public:
  Lpf1(double cutoff, double dt) : cutoff_(cutoff), a_(std::exp(-cutoff * dt)) {
    if (!(cutoff > 0.0) || !(dt > 0.0)) throw Error(ErrorKind::InvalidArgument, "Lpf1: cutoff and dt must be > 0");
  }

  double update(double u) {
    if (!initialized_) {
      y_ = u;
      initialized_ = true;
    } else {
      y_ = a_ * y_ + (1.0 - a_) * u;
    }
    return y_;
  }
  /// Sets the state without consuming a sample.
  void reset(double y) {
    y_ = y;
    initialized_ = true;
  }

  double value() const { return y_; }
  double cutoff() const { return cutoff_; }
  double coefficient() const { return a_; }

 private:
  double cutoff_;
  double a_;
  double y_ = 0.0;
  bool initialized_ = false;
};

/// Band-limited differentiator g·s/(s+g). Realised as the low-pass of the
/// backward difference, which is exact for ramps and decays as exp(-g t) once
/// the input stops moving. The first sample yields zero velocity.
class PseudoDiff {
 public:
  PseudoDiff(double cutoff, double dt) : dt_(dt), lpf_(cutoff, dt) { lpf_.reset(0.0); }

  double update(double theta) {
    if (!initialized_) {
      prev_ = theta;
      initialized_ = true;
      return lpf_.value();
    }
    const double diff = (theta - prev_) / dt_;
    prev_ = theta;
    return lpf_.update(diff);
  }

  double value() const { return lpf_.value(); }

 private:
  double dt_;
  Lpf1 lpf_;
  double prev_ = 0.0;
  bool initialized_ = false;
};

/// Velocity-form disturbance observer for one joint:
///   zeta' = g (tau + g J w - zeta),  tau_dis_hat = zeta - g J w
/// which is g/(s+g) (tau - J s w) without differentiating w. The discretisation
/// is exact for a torque held over each tick and a velocity that is linear
/// within the tick (the free-joint case under a held torque).
class Dob {
 public:
  Dob(double cutoff, double inertia, double dt)
      : gj_(cutoff * inertia), a_(std::exp(-cutoff * dt)) {
    if (!(cutoff > 0.0) || !(dt > 0.0) || !(inertia > 0.0))
      throw Error(ErrorKind::InvalidArgument, "Dob: cutoff, inertia and dt must be > 0");
    // first-order-hold weights for the current and previous velocity sample
    const double ratio = (1.0 - a_) / (cutoff * dt);
    b_now_ = 1.0 - ratio;
    b_prev_ = ratio - a_;
  }

  /// tau_applied: torque held over the tick that just ended; dtheta: velocity now.
  double update(double tau_applied, double dtheta) {
    if (!primed_) reset(0.0, dtheta);
    zeta_ = a_ * zeta_ + (1.0 - a_) * tau_applied + gj_ * (b_now_ * dtheta + b_prev_ * prev_dtheta_);
    prev_dtheta_ = dtheta;
    estimate_ = zeta_ - gj_ * dtheta;
    return estimate_;
  }

  /// Starts the observer at rest with a known disturbance estimate.
  void reset(double estimate, double dtheta = 0.0) {
    zeta_ = estimate + gj_ * dtheta;
    prev_dtheta_ = dtheta;
    primed_ = true;
    estimate_ = estimate;
  }

  double estimate() const { return estimate_; }

 private:
  double gj_;
  double a_;
  double b_now_ = 0.0;
  double b_prev_ = 0.0;
  double zeta_ = 0.0;
  double prev_dtheta_ = 0.0;
  double estimate_ = 0.0;
  bool primed_ = false;
};

/// Reaction torque: the disturbance estimate minus modelled friction and gravity.
inline JointTriple rfob_torque(const JointTriple& tau_dis_hat, const PlantState& state, const PlantParams& params) {
  return tau_dis_hat - friction_torque(params, state.dtheta) - gravity_torque(params, state.theta);
}

struct BilateralRefs {
  JointTriple master;
  JointTriple slave;
};

namespace detail {
// Position and force channels of the 4ch law for one joint.
struct Channels {
  double position;
  double force;
};
inline Channels channels(const RobotState9& master, const RobotState9& slave, const ControlGains& gains,
                         const PlantParams& params, std::size_t j) {
  const double e = master.theta[j] - slave.theta[j];
  const double de = master.dtheta[j] - slave.dtheta[j];
  return {0.5 * params.inertia[j] * (gains.kp * e + gains.kd * de), 0.5 * gains.kf * (master.tau[j] + slave.tau[j])};
}
}  // namespace detail

/// Torque references of both robots under 4ch bilateral control.
inline BilateralRefs bilateral_refs(const RobotState9& master, const RobotState9& slave, const ControlGains& gains,
                                    const PlantParams& params) {
  BilateralRefs out;
  for (std::size_t j = 0; j < 3; ++j) {
    const auto c = detail::channels(master, slave, gains, params, j);
    out.slave[j] = c.position - c.force;
    out.master[j] = -c.position - c.force;
  }
  return out;
}

/// Slave half of the 4ch law with the master replaced by a command state.
inline JointTriple slave_ref_autonomous(const RobotState9& command, const RobotState9& slave, const ControlGains& gains,
                                        const PlantParams& params) {
  JointTriple out;
  for (std::size_t j = 0; j < 3; ++j) {
    const auto c = detail::channels(command, slave, gains, params, j);
    out[j] = c.position - c.force;
  }
  return out;
}

/// Sensing and actuation pipeline of one robot: encoder angles in, response
/// values out, and DOB-compensated torque to the motors.
class RobotObserver {
 public:
  RobotObserver(const PlantParams& params, const ControlGains& gains, double dt, const JointTriple& theta0)
      : params_(params),
        velocity_{PseudoDiff(gains.g_diff, dt), PseudoDiff(gains.g_diff, dt), PseudoDiff(gains.g_diff, dt)},
        dob_{Dob(gains.g_dob, params.inertia[0], dt), Dob(gains.g_dob, params.inertia[1], dt),
             Dob(gains.g_dob, params.inertia[2], dt)},
        rfob_{Lpf1(gains.g_rfob, dt), Lpf1(gains.g_rfob, dt), Lpf1(gains.g_rfob, dt)} {
    // at rest the observer has settled on the static load of the initial pose
    const JointTriple hold = gravity_torque(params, theta0);
    for (std::size_t j = 0; j < 3; ++j) {
      dob_[j].reset(hold[j]);
      rfob_[j].reset(0.0);
    }
    applied_ = hold;
    tau_dis_hat_ = hold;
  }

  /// Consumes one encoder sample; call once per control tick before actuate().
  RobotState9 measure(const JointTriple& theta) {
    RobotState9 s;
    s.theta = theta;
    for (std::size_t j = 0; j < 3; ++j) {
      s.dtheta[j] = velocity_[j].update(theta[j]);
      tau_dis_hat_[j] = dob_[j].update(applied_[j], s.dtheta[j]);
    }
    const JointTriple raw = rfob_torque(tau_dis_hat_, PlantState{s.theta, s.dtheta}, params_);
    for (std::size_t j = 0; j < 3; ++j) s.tau[j] = rfob_[j].update(raw[j]);
    return s;
  }

  /// Motor torque for this tick: reference plus disturbance compensation.
  JointTriple actuate(const JointTriple& tau_ref) {
    applied_ = tau_ref + tau_dis_hat_;
    return applied_;
  }

  const JointTriple& disturbance_estimate() const { return tau_dis_hat_; }

 private:
  PlantParams params_;
  std::array<PseudoDiff, 3> velocity_;
  std::array<Dob, 3> dob_;
  std::array<Lpf1, 3> rfob_;
  JointTriple applied_;
  JointTriple tau_dis_hat_;
};

}  // namespace bcil
