#pragma once

// Autonomous operation: a sequence model stands in for the master robot and
// its controller. The model runs every `stride` control ticks; the slave
// controller runs every tick on the held command.

#include <Eigen/Dense>

#include <concepts>
#include <cstdint>
#include <string>

#include "bcil/control.hpp"
#include "bcil/core.hpp"
#include "bcil/plant.hpp"
#include "bcil/seqmodel.hpp"
#include "bcil/tasks.hpp"
#include "bcil/teleop.hpp"

namespace bcil {

struct AutonomyConfig {
  ControlConfig control;
  double duration = 0.0;         // s; <= 0 uses the task duration
  int stride = kPredictionStride;  // control ticks per prediction
  double pose_jitter = 0.0;      // rad, uniform start-pose perturbation drawn from the run seed

  void validate() const {
    control.validate();
    if (stride < 1) throw Error(ErrorKind::InvalidArgument, "prediction stride must be >= 1 tick");
    if (!(pose_jitter >= 0.0)) throw Error(ErrorKind::InvalidArgument, "pose jitter must be >= 0");
  }
};

/// The master state the model predicted one step before.
struct VirtualMasterState {
  RobotState9 master;
};

namespace detail {
inline void put_block(Eigen::VectorXd& x, Eigen::Index at, const Normalizer& n, std::size_t dim0,
                      const RobotState9& s) {
  const auto f = s.flat();
  for (std::size_t d = 0; d < 9; ++d) x(at + static_cast<Eigen::Index>(d)) = n.normalize(dim0 + d, f[d]);
}
inline RobotState9 get_block(const Eigen::VectorXd& y, Eigen::Index at, const Normalizer& n, std::size_t dim0) {
  std::array<double, 9> f{};
  for (std::size_t d = 0; d < 9; ++d) f[d] = n.denormalize(dim0 + d, y(at + static_cast<Eigen::Index>(d)));
  return RobotState9::from_flat(f);
}
}  // namespace detail

/// Normalized model input: the measured slave, plus the virtual master for SM2SM.
inline Eigen::VectorXd build_input(ModelVariant variant, const Normalizer& norm, const RobotState9& slave,
                                   const VirtualMasterState& vm) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(layout_of(variant).in_dims));
  detail::put_block(x, 0, norm, 0, slave);
  if (variant == ModelVariant::SM2SM) detail::put_block(x, 9, norm, 9, vm.master);
  return x;
}

/// Command state for the slave controller from one normalized prediction.
/// S2S predicts the slave itself, so its torque is mirrored into the master
/// convention (tau_m = -tau_s under ideal bilateral control).
inline RobotState9 command_from_output(ModelVariant variant, const Normalizer& norm, const Eigen::VectorXd& y) {
  const auto lay = layout_of(variant);
  if (static_cast<std::size_t>(y.size()) != lay.out_dims)
    throw Error(ErrorKind::DimensionMismatch, "model output has " + std::to_string(y.size()) + " dims, expected " +
                                                  std::to_string(lay.out_dims));
  switch (variant) {
    case ModelVariant::S2S: {
      RobotState9 c = detail::get_block(y, 0, norm, 0);
      c.tau = -c.tau;
      return c;
    }
    case ModelVariant::S2M: return detail::get_block(y, 0, norm, 9);
    case ModelVariant::SM2SM: return detail::get_block(y, 9, norm, 9);
  }
  return {};
}

/// Anything that maps a normalized input vector to a normalized output, with state.
template <class P>
concept StepPredictor = requires(P p, const Eigen::VectorXd& x) {
  p.reset();
  { p.step(x) } -> std::convertible_to<Eigen::VectorXd>;
};

/// Closed loop of predictor and simulated slave; records a 1 ms episode whose
/// master columns hold the command state.
template <StepPredictor P>
Episode run_autonomous(P& predictor, ModelVariant variant, const Normalizer& norm, const TaskSpec& task,
                       const AutonomyConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  task.env.validate();
  const auto& params = cfg.control.plant;
  const auto& gains = cfg.control.gains;
  const double duration = cfg.duration > 0.0 ? cfg.duration : task.duration;
  const auto ticks = static_cast<std::size_t>(std::llround(duration / kControlPeriod));
  const auto stride = static_cast<std::size_t>(cfg.stride);

  JointTriple start = task.initial_pose;
  if (cfg.pose_jitter > 0.0) {
    Rng rng(mix_seed(seed, 0x5ade));
    for (std::size_t j = 0; j < 3; ++j) start[j] += rng.uniform(-cfg.pose_jitter, cfg.pose_jitter);
  }
  PlantState slave{start, {}};
  RobotObserver slave_obs(params, gains, kControlPeriod, slave.theta);
  predictor.reset();

  Episode ep;
  ep.rows.reserve(ticks);
  VirtualMasterState vm;
  RobotState9 command;
  bool limit_hit = false;
  std::size_t predictions = 0;
  for (std::size_t k = 0; k < ticks; ++k) {
    const double t = static_cast<double>(k) * kControlPeriod;
    EpisodeRow row;
    row.t_ms = static_cast<double>(k);
    row.slave = slave_obs.measure(slave.theta);
    if (k == 0) vm.master = row.slave;
    if (k % stride == 0) {
      const Eigen::VectorXd y = predictor.step(build_input(variant, norm, row.slave, vm));
      if (!y.allFinite()) throw Error(ErrorKind::NonFinite, "model output not finite at tick " + std::to_string(k));
      command = command_from_output(variant, norm, y);
      vm.master = command;
      ++predictions;
    }
    row.master = command;
    row.ref_s = slave_ref_autonomous(command, row.slave, gains, params);
    row.env = env_torque(task.env, slave, t);
    try {
      const auto s = advance_plant(slave, slave_obs.actuate(row.ref_s), task.env, params, kControlPeriod,
                                   cfg.control.substeps, t);
      slave = s.state;
      limit_hit = limit_hit || s.limit_hit;
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::NonFinite)
        throw Error(ErrorKind::NonFinite, "autonomous run diverged at tick " + std::to_string(k));
      throw;
    }
    if (!row.slave.finite()) throw Error(ErrorKind::NonFinite, "autonomous run diverged at tick " + std::to_string(k));
    ep.rows.push_back(row);
  }
  ep.meta["mode"] = "autonomous";
  ep.meta["variant"] = to_string(variant);
  ep.meta["task"] = to_string(task.kind);
  ep.meta["param"] = format_double(task.param);
  ep.meta["letter"] = std::string(1, task.letter);
  ep.meta["seed"] = std::to_string(seed);
  ep.meta["config_hash"] = cfg.control.hash();
  ep.meta["limit_hit"] = limit_hit ? "1" : "0";
  ep.meta["predictions"] = std::to_string(predictions);
  return ep;
}

/// Runs a trained model; the model's own variant and normalizer are used.
inline Episode run_autonomous(const SequenceModel& model, const TaskSpec& task, const AutonomyConfig& cfg,
                              std::uint64_t seed) {
  ModelRunner runner(model);
  Episode ep = run_autonomous(runner, model.config.variant, model.normalizer, task, cfg, seed);
  ep.meta["model_hash"] = model.weights.hash();
  ep.meta["model"] = model.config.label();
  return ep;
}

}  // namespace bcil
