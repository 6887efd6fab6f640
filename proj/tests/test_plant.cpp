#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "bcil/plant.hpp"

using namespace bcil;

namespace {
constexpr double kPi = std::numbers::pi;

EnvironmentModel wall(int joint, double pos, double k, double b, int side = +1) {
  SpringWall w;
  w.joint = joint;
  w.position = pos;
  w.stiffness = k;
  w.damping = b;
  w.side = side;
  return EnvironmentModel{w};
}
}  // namespace

TEST(Gravity, UprightPoseLoadsOnlyJoint2) {
  const auto g = gravity_torque(PlantParams{}, {0, 0, 0});
  EXPECT_DOUBLE_EQ(g[0], 0.0);
  EXPECT_NEAR(g[1], 0.0790, 1e-12);
  EXPECT_DOUBLE_EQ(g[2], 0.0);
}

TEST(Gravity, VanishesWithJoint2Vertical) {
  for (double th1 : {-1.0, 0.0, 2.5}) {
    const auto g = gravity_torque(PlantParams{}, {th1, kPi / 2, 0});
    EXPECT_NEAR(g[0], 0.0, 1e-15);
    EXPECT_NEAR(g[1], 0.0, 1e-15);
    EXPECT_NEAR(g[2], 0.0, 1e-15);
  }
}

TEST(Gravity, Joint3AtQuarterTurn) {
  const auto g = gravity_torque(PlantParams{}, {0, 0, kPi / 2});
  EXPECT_NEAR(g[1], 0.1340, 1e-12);
  EXPECT_NEAR(g[2], 0.0330, 1e-12);
}

TEST(Gravity, Joint1NeverLoaded) {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const JointTriple th{rng.uniform(-kPi, kPi), rng.uniform(-kPi, kPi), rng.uniform(-kPi, kPi)};
    EXPECT_EQ(gravity_torque(PlantParams{}, th)[0], 0.0);
  }
}

TEST(Friction, ViscousOnJoint1Only) {
  const PlantParams p;
  EXPECT_EQ(friction_torque(p, {0, 0, 0}), (JointTriple{0, 0, 0}));
  const auto f = friction_torque(p, {1, 1, 1});
  EXPECT_NEAR(f[0], 4.55e-3, 1e-15);
  EXPECT_EQ(f[1], 0.0);
  EXPECT_EQ(f[2], 0.0);
  EXPECT_NEAR(friction_torque(p, {-2, 0, 0})[0], -9.10e-3, 1e-15);
}

TEST(Environment, FreeIsZero) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    PlantState s{{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)},
                 {rng.uniform(-9, 9), rng.uniform(-9, 9), rng.uniform(-9, 9)}};
    EXPECT_EQ(env_torque(EnvironmentModel::free(), s, 0.0), JointTriple{});
  }
}

TEST(Environment, SpringWallPenetration) {
  const auto env = wall(0, 0.5, 10, 0.1);
  EXPECT_NEAR(env_torque(env, PlantState{{0.6, 0, 0}, {}}, 0)[0], -1.0, 1e-12);
  EXPECT_EQ(env_torque(env, PlantState{{0.4, 0, 0}, {}}, 0)[0], 0.0);
}

TEST(Environment, SpringWallNeverPulls) {
  // leaving the wall fast: the damper would pull, the wall must not
  const auto env = wall(0, 0.5, 10, 0.1);
  EXPECT_EQ(env_torque(env, PlantState{{0.501, 0, 0}, {-50, 0, 0}}, 0)[0], 0.0);
  const auto lower = wall(1, -0.2, 10, 0.0, -1);
  EXPECT_NEAR(env_torque(lower, PlantState{{0, -0.3, 0}, {}}, 0)[1], 1.0, 1e-12);
}

TEST(Environment, CompositeOfOneEqualsElement) {
  const auto single = wall(2, 0.1, 3, 0.05);
  const EnvironmentModel comp{Composite{{single}}};
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    PlantState s{{0, 0, rng.uniform(-0.5, 0.5)}, {0, 0, rng.uniform(-2, 2)}};
    EXPECT_EQ(env_torque(comp, s, 0), env_torque(single, s, 0));
  }
}

TEST(Environment, CoulombPatchOpposesMotionInsideRegion) {
  const EnvironmentModel env{CoulombPatch{0, 0.03, -0.5, 0.5}};
  EXPECT_EQ(env_torque(env, PlantState{{0, 0, 0}, {1, 0, 0}}, 0)[0], -0.03);
  EXPECT_EQ(env_torque(env, PlantState{{0, 0, 0}, {-1, 0, 0}}, 0)[0], 0.03);
  EXPECT_EQ(env_torque(env, PlantState{{0, 0, 0}, {5e-5, 0, 0}}, 0)[0], 0.0);  // deadband
  EXPECT_EQ(env_torque(env, PlantState{{0.6, 0, 0}, {1, 0, 0}}, 0)[0], 0.0);
}

TEST(Environment, InvalidJointRejected) {
  EXPECT_THROW(wall(3, 0, 1, 0).validate(), Error);
  EXPECT_THROW(wall(0, 0, -1, 0).validate(), Error);
}

TEST(StepPlant, EquilibriumIsStationary) {
  const PlantParams p;
  // joint 2 vertical, joint 3 hanging straight: no gravity torque anywhere
  PlantState s{{0.3, kPi / 2, 0}, {}};
  for (int i = 0; i < 1000; ++i) s = step_plant(s, {}, EnvironmentModel::free(), p, 1e-4).state;
  // cos(pi/2) is 6e-17 in binary64, so "unchanged" means to rounding
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_NEAR(s.theta[j], (JointTriple{0.3, kPi / 2, 0})[j], 1e-15);
    EXPECT_NEAR(s.dtheta[j], 0.0, 1e-12);
  }
}

TEST(StepPlant, ConstantTorqueReachesViscousTerminalSpeed) {
  const PlantParams p;
  const double c = 2e-3;
  PlantState s{{-3.0, kPi / 2, 0}, {}};
  // time constant J1/D = 0.56 s; 10 s is ~18 time constants
  for (int i = 0; i < 100000; ++i) s = step_plant(s, {c, 0, 0}, EnvironmentModel::free(), p, 1e-4).state;
  EXPECT_NEAR(s.dtheta[0], c / p.viscous, 1e-6 * c / p.viscous);
}

TEST(StepPlant, ConvergesUnderStepRefinement) {
  // first-order scheme: the change on halving dt halves with dt, and drops
  // below 1e-6 rad after 1 s once dt is small enough
  const PlantParams p;
  auto run = [&](double dt) {
    PlantState s{{0, 0.2, 0.3}, {}};
    const int n = static_cast<int>(std::llround(1.0 / dt));
    for (int i = 0; i < n; ++i) {
      const double t = i * dt;
      const JointTriple tau{2e-3 * std::sin(3 * t), 0.079 + 5e-3 * std::cos(2 * t), 0.01 * std::sin(5 * t)};
      s = step_plant(s, tau, EnvironmentModel::free(), p, dt, t).state;
    }
    return s.theta;
  };
  const auto a = run(4e-6), b = run(2e-6), c = run(1e-6);
  for (std::size_t j = 0; j < 3; ++j) {
    const double d1 = std::abs(a[j] - b[j]);
    const double d2 = std::abs(b[j] - c[j]);
    EXPECT_LT(d2, 1e-6) << "joint " << j;
    if (d1 > 1e-9) EXPECT_NEAR(d1 / d2, 2.0, 0.1) << "joint " << j;
  }
}

TEST(StepPlant, EnergyDoesNotDriftWithoutDamping) {
  // The joint-2 load from joint 3 is one-directional and not conservative, so
  // the energy check runs with that coupling removed. Semi-implicit Euler keeps
  // a bounded O(h) energy oscillation; the quantity conserved to O(h^2) is
  // E + (h/2) * sum_j w_j * dV/dq_j, which is what is compared here.
  PlantParams p;
  p.viscous = 0.0;
  p.g2 = 0.0;
  const double h = 1e-4;
  auto modified_energy = [&](const PlantState& s) {
    double e = 0;
    for (std::size_t j = 0; j < 3; ++j) e += 0.5 * p.inertia[j] * s.dtheta[j] * s.dtheta[j];
    e += p.g1 * std::sin(s.theta[1]) - p.g3 * std::cos(s.theta[2]) + p.g3;
    const auto grad = gravity_torque(p, s.theta);
    for (std::size_t j = 0; j < 3; ++j) e += 0.5 * h * s.dtheta[j] * grad[j];
    return e;
  };
  PlantState s{{-0.5, -1.2, 0.8}, {0.1, 0.0, 0.5}};
  const double e0 = modified_energy(s);
  double worst = 0.0;
  for (int i = 0; i < 100000; ++i) {
    s = step_plant(s, {}, EnvironmentModel::free(), p, h).state;
    worst = std::max(worst, std::abs(modified_energy(s) - e0));
  }
  EXPECT_LT(worst / e0, 1e-6);
}

TEST(StepPlant, PureFunction) {
  const PlantParams p;
  const auto env = wall(1, 0.3, 4, 0.02);
  const PlantState s{{0.1, 0.31, -0.2}, {0.4, 0.2, -1}};
  const auto a = step_plant(s, {1e-3, 0.08, 0.01}, env, p, 1e-4, 0.5);
  const auto b = step_plant(s, {1e-3, 0.08, 0.01}, env, p, 1e-4, 0.5);
  EXPECT_EQ(a.state, b.state);
  EXPECT_EQ(a.tau_dis, b.tau_dis);
}

TEST(StepPlant, DisturbanceIsNegatedEnvironmentTorque) {
  const PlantParams p;
  const auto env = wall(1, 0.3, 4, 0.0);
  const PlantState s{{0, 0.35, 0}, {}};
  const auto r = step_plant(s, {}, env, p, 1e-4, 0, {0.01, 0, 0});
  EXPECT_NEAR(r.tau_dis[1], 4 * 0.05, 1e-12);
  EXPECT_NEAR(r.tau_dis[0], -0.01, 1e-15);
}

TEST(StepPlant, JointLimitClampsAndFlags) {
  const PlantParams p;
  PlantState s{{kPi - 1e-4, kPi / 2, 0}, {5, 0, 0}};
  const auto r = step_plant(s, {}, EnvironmentModel::free(), p, 1e-4);
  EXPECT_TRUE(r.limit_hit);
  EXPECT_EQ(r.state.theta[0], kPi);
  EXPECT_EQ(r.state.dtheta[0], 0.0);
}

TEST(StepPlant, RejectsBadStepAndDivergence) {
  const PlantParams p;
  EXPECT_THROW(step_plant({}, {}, EnvironmentModel::free(), p, 0.0), Error);
  EXPECT_THROW(step_plant({}, {}, EnvironmentModel::free(), p, 2e-3), Error);
  try {
    step_plant({}, {std::nan(""), 0, 0}, EnvironmentModel::free(), p, 1e-4);
    FAIL() << "expected NonFinite";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFinite);
  }
}

TEST(AdvancePlant, SubstepsMatchRepeatedSteps) {
  const PlantParams p;
  const auto env = wall(1, 0.3, 4, 0.02);
  PlantState a{{0, 0.28, 0.1}, {0, 0.5, 0}};
  PlantState b = a;
  const JointTriple tau{1e-3, 0.09, 0.0};
  a = advance_plant(a, tau, env, p, 1e-3, 10, 0.0).state;
  for (int i = 0; i < 10; ++i) b = step_plant(b, tau, env, p, 1e-4, i * 1e-4).state;
  EXPECT_EQ(a, b);
}
