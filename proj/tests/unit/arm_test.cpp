#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "teleop/simarm.hpp"

using namespace teleop;
using namespace teleop::simarm;
using geometry::Vec3;

namespace {

const ArmModel& arm() {
  static const ArmModel m = [] {
    ArmModel a = ArmModel::desk_arm();
    a.validate();
    return a;
  }();
  return m;
}

JointVector random_q(oracle::Rng& rng) {
  JointVector q;
  for (int j = 0; j < kJointCount; ++j) {
    const auto& joint = arm().joints[static_cast<std::size_t>(j)];
    q[j] = rng.uniform(joint.lower, joint.upper);
  }
  return q;
}

control::RobotCommand move_to(const Vec3& p, double roll = 0.0) {
  return control::RobotCommand::move({p, geometry::RollQuaternion::from_roll(roll)}, 0);
}

control::RobotCommand simple(control::CommandKind k) { return control::RobotCommand::simple(k, 0); }

}  // namespace

TEST(Kinematics, HomePoseIsFullyExtendedAlongX) {
  const auto home = fk(arm(), JointVector::Zero());
  EXPECT_NEAR((home.position - Vec3(0.98, 0, 0)).norm(), 0.0, 1e-12);
  EXPECT_LT((home.rotation - Eigen::Matrix3d::Identity()).norm(), 1e-12);
  EXPECT_NEAR(arm().reach_m, home.position.norm(), 1e-3);
}

TEST(Kinematics, BaseYawRotatesAboutZ) {
  oracle::Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    JointVector q = random_q(rng);
    const double delta = rng.uniform(-0.5, 0.5);
    q[0] = std::clamp(q[0], -2.0, 2.0);
    JointVector r = q;
    r[0] += delta;
    const Vec3 a = fk(arm(), q).position;
    const Vec3 b = fk(arm(), r).position;
    EXPECT_NEAR((geometry::rot_z(delta) * a - b).norm(), 0.0, 1e-12);
    EXPECT_NEAR(a.head<2>().norm(), b.head<2>().norm(), 1e-12);
  }
}

TEST(Kinematics, MatchesOracle) {
  oracle::Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const JointVector q = random_q(rng);
    const auto got = fk(arm(), q);
    const auto want = oracle::fk(arm(), q);
    EXPECT_LT((got.position - want.translation()).norm(), 1e-9);
    EXPECT_LT((got.rotation - want.rotation()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Kinematics, RejectsOutOfLimitJoints) {
  JointVector q = arm().ready;
  q[2] = -0.1;
  try {
    fk(arm(), q);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::JointLimit);
  }
}

TEST(Kinematics, JacobianMatchesFiniteDifferences) {
  oracle::Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    JointVector q = random_q(rng) * 0.8;
    const Jacobian j = jacobian(arm(), chain_frames(arm(), q));
    for (int k = 0; k < kJointCount; ++k) {
      JointVector a = q, b = q;
      a[k] -= 1e-6;
      b[k] += 1e-6;
      const Vec3 d = (fk_unchecked(arm(), b).position - fk_unchecked(arm(), a).position) / 2e-6;
      EXPECT_LT((d - j.block<3, 1>(0, k)).norm(), 1e-6);
    }
  }
}

TEST(InverseKinematics, FixedPointNeedsNoIterations) {
  oracle::Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const JointVector q = random_q(rng);
    const auto t = fk(arm(), q);
    const auto r = ik(arm(), t.position, t.rotation, q);
    EXPECT_TRUE(r.converged);
    EXPECT_EQ(r.iterations, 0);
    EXPECT_EQ(r.q, q);
  }
}

TEST(InverseKinematics, RoundTripFromPerturbedSeed) {
  oracle::Rng rng(5);
  int ok = 0;
  for (int i = 0; i < 1000; ++i) {
    const JointVector q = random_q(rng);
    const auto t = fk(arm(), q);
    const auto r = ik(arm(), t.position, t.rotation, arm().clamp(q + JointVector::Constant(0.1)));
    EXPECT_TRUE(arm().within_limits(r.q));
    const double residual = (fk(arm(), r.q).position - t.position).norm();
    // The reported residual is the true one, converged or not.
    EXPECT_NEAR(residual, r.position_residual, 1e-12);
    ok += residual < 1e-4;
  }
  EXPECT_GE(ok, 990);
}

TEST(InverseKinematics, UnreachableTargetReportsHonestResidual) {
  const Vec3 far(2.0, 0.5, 0.3);
  const auto r = ik(arm(), far, Eigen::Matrix3d::Identity(), arm().ready);
  EXPECT_FALSE(r.converged);
  EXPECT_GE(r.position_residual, far.norm() - arm().reach_m - 1e-9);
}

TEST(Collision, ReadyPoseIsFree) {
  EXPECT_FALSE(in_collision(arm(), arm().ready, {}));
  EXPECT_FALSE(self_collides(arm(), link_spheres(arm(), JointVector::Zero())));
}

TEST(Collision, FoldedElbowSelfCollides) {
  JointVector q = arm().ready;
  q[2] = 3.05;
  EXPECT_TRUE(self_collides(arm(), link_spheres(arm(), q)));
}

TEST(Collision, SegmentHitsSphere) {
  EXPECT_TRUE(segment_hits_sphere(Vec3(0, 0, 0), Vec3(2, 0, 0), Vec3(1, 0.05, 0), 0.1));
  EXPECT_FALSE(segment_hits_sphere(Vec3(0, 0, 0), Vec3(2, 0, 0), Vec3(1, 0.2, 0), 0.1));
  EXPECT_FALSE(segment_hits_sphere(Vec3(0, 0, 0), Vec3(0.5, 0, 0), Vec3(1, 0, 0), 0.1));
  EXPECT_TRUE(segment_hits_sphere(Vec3(0.95, 0, 0), Vec3(0.95, 0, 0), Vec3(1, 0, 0), 0.1));
}

TEST(Selection, Examples) {
  const Vec3 ee(0, 0, 0);
  std::vector<SceneObject> objs = {{"bottle", "bottle", Vec3(0.5, 0, 0), 0.9, true},
                                   {"can", "can", Vec3(0.3, 0, 0), 0.9, true},
                                   {"cup", "cup", Vec3(1.0, 0, 0), 0.95, true}};
  const std::vector<std::string> all = {"bottle", "can", "cup"};
  EXPECT_EQ(select_object(objs, ee, all).id, "cup");
  objs.pop_back();
  EXPECT_EQ(select_object(objs, ee, all).id, "can");
  const std::vector<std::string> none = {"box"};
  EXPECT_THROW(select_object(objs, ee, none), Error);
  EXPECT_THROW(select_object(std::vector<SceneObject>{}, ee, all), Error);
  objs[1].graspable = false;
  EXPECT_EQ(select_object(objs, ee, all).id, "bottle");
}

TEST(Selection, AgreesWithOracle) {
  oracle::Rng rng(6);
  const std::vector<std::string> classes = {"a", "b", "c"};
  for (int i = 0; i < 2000; ++i) {
    std::vector<SceneObject> objs;
    for (int k = rng.integer(0, 6); k > 0; --k) {
      objs.push_back({"o" + std::to_string(k), classes[static_cast<std::size_t>(rng.integer(0, 2))],
                      rng.vec(-1, 1), rng.integer(0, 3) / 3.0, rng.integer(0, 3) != 0});
    }
    const std::vector<std::string> allowed(classes.begin(), classes.begin() + rng.integer(0, 3));
    const Vec3 ee = rng.vec(-1, 1);
    const auto want = oracle::select(objs, ee, allowed, kConfidenceTie);
    if (want) {
      EXPECT_EQ(select_object(objs, ee, allowed).id, objs[*want].id);
    } else {
      EXPECT_THROW(select_object(objs, ee, allowed), Error);
    }
  }
}

TEST(Step, RejectsBadTimeStep) {
  const auto s = make_state(arm(), arm().ready);
  for (double dt : {0.0, -0.01, 0.51}) {
    try {
      step(arm(), s, simple(control::CommandKind::hold), {}, {}, dt);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InvalidConfig);
    }
  }
}

TEST(Step, ConvergesToStationaryTarget) {
  auto s = make_state(arm(), arm().ready);
  const Vec3 goal(0.6, 0.1, 0.05);
  const auto cmd = move_to(goal, 0.3);
  const double dt = 0.01;
  const int steps = static_cast<int>(std::ceil(10 * arm().time_constant_s / dt));
  for (int i = 0; i < steps; ++i) s = step(arm(), s, cmd, {}, {}, dt);
  EXPECT_LT((s.ee.position - goal).norm(), 1e-4);
  EXPECT_EQ(s.safety, Safety::ok);
}

TEST(Step, FirstOrderGainPerStep) {
  auto s = make_state(arm(), arm().ready);
  const Vec3 goal = s.ee.position + Vec3(0.0, 0.1, 0.0);
  const auto cmd = move_to(goal);
  const double dt = 0.02;
  const auto next = step(arm(), s, cmd, {}, {}, dt);
  const double k = oracle::first_order_gain(dt, arm().time_constant_s);
  const Vec3 want = s.ee.position + k * (goal - s.ee.position);
  EXPECT_LT((next.ee.position - want).norm(), 1e-7);
}

TEST(Step, SteadyStateLagIsSpeedTimesTau) {
  auto s = make_state(arm(), arm().ready);
  const double v = 0.05;
  const double dt = 0.01;
  Vec3 target = s.ee.position;
  const Vec3 dir(0, 1, 0);
  double lag = 0.0;
  for (int i = 0; i < 600; ++i) {
    target += v * dt * dir;
    s = step(arm(), s, move_to(target), {}, {}, dt);
    lag = (target - s.ee.position).norm();
  }
  // Discrete update lags by v*dt/(1 - e^(-dt/tau)) before the step.
  const double k = oracle::first_order_gain(dt, arm().time_constant_s);
  const double discrete = v * dt * (1.0 - k) / k;
  EXPECT_NEAR(lag, discrete, 1e-6);
  // The continuous-time lag is within half a step of the discrete one.
  EXPECT_NEAR(lag, oracle::first_order_lag(v, arm().time_constant_s), v * dt);
}

TEST(Step, ClampsToReachAndWorkspace) {
  const auto s = make_state(arm(), arm().ready);
  const auto next = step(arm(), s, move_to(Vec3(3, 0, 0.2)), {}, {}, 0.01);
  EXPECT_EQ(next.safety, Safety::clamped);
  ASSERT_TRUE(next.goal);
  EXPECT_LE(next.goal->position.norm(), arm().reach_m + 1e-12);
  EXPECT_TRUE(arm().workspace.contains(next.goal->position));
  const auto inside = step(arm(), s, move_to(Vec3(0.5, 0, 0.2)), {}, {}, 0.01);
  EXPECT_EQ(inside.safety, Safety::ok);
}

TEST(Step, PathThroughObstacleIsBlockedBitwise) {
  const auto s = make_state(arm(), arm().ready);
  const std::vector<Obstacle> obstacles = {{s.ee.position + Vec3(0, 0.15, 0), 0.05}};
  const auto next = step(arm(), s, move_to(s.ee.position + Vec3(0, 0.3, 0)), obstacles, {}, 0.01);
  EXPECT_EQ(next.safety, Safety::blocked);
  EXPECT_EQ(next.q, s.q);
  EXPECT_EQ(next.ee, s.ee);
  // Passing just outside the inflated sphere is allowed.
  const std::vector<Obstacle> beside = {{s.ee.position + Vec3(0, 0.15, 0.08), 0.05}};
  EXPECT_NE(step(arm(), s, move_to(s.ee.position + Vec3(0, 0.3, 0)), beside, {}, 0.01).safety, Safety::blocked);
}

TEST(Step, HoldSettlesMonotonically) {
  auto s = make_state(arm(), arm().ready);
  s = step(arm(), s, move_to(s.ee.position + Vec3(0.05, 0.1, -0.1)), {}, {}, 0.01);
  double last = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 700; ++i) {
    const auto next = step(arm(), s, simple(control::CommandKind::hold), {}, {}, 0.01);
    const double moved = (next.ee.position - s.ee.position).norm();
    EXPECT_LE(moved, last + 1e-12);
    last = moved;
    s = next;
  }
  EXPECT_LT(last, 1e-6);
}

TEST(Step, GripperCloseHoldsNearbyGraspable) {
  auto s = make_state(arm(), arm().ready);
  std::vector<SceneObject> objs = {{"can", "can", s.ee.position + Vec3(0, 0, -0.03), 0.9, true},
                                   {"box", "box", s.ee.position + Vec3(0, 0.01, 0), 0.9, false}};
  auto closed = step(arm(), s, simple(control::CommandKind::gripper_close), {}, objs, 0.01);
  EXPECT_EQ(closed.gripper.kind, GripperKind::holding);
  EXPECT_EQ(closed.gripper.object_id, "can");
  auto opened = step(arm(), closed, simple(control::CommandKind::gripper_open), {}, objs, 0.01);
  EXPECT_EQ(opened.gripper.kind, GripperKind::open);
  objs[0].position += Vec3(0, 0, -0.1);
  auto empty = step(arm(), s, simple(control::CommandKind::gripper_close), {}, objs, 0.01);
  EXPECT_EQ(empty.gripper.kind, GripperKind::closed);
}

TEST(Step, EeAlwaysMatchesFk) {
  oracle::Rng rng(7);
  auto s = make_state(arm(), arm().ready);
  for (int i = 0; i < 500; ++i) {
    s = step(arm(), s, move_to(rng.vec(-0.2, 0.2) + Vec3(0.55, 0, 0.15), rng.uniform(-1, 1)), {}, {}, 0.05);
    EXPECT_LT((fk(arm(), s.q).position - s.ee.position).norm(), 1e-9);
  }
}

TEST(ModelValidation, RejectsBadModels) {
  auto expect_invalid = [](ArmModel m) {
    try {
      m.validate();
      ADD_FAILURE() << "model accepted";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InvalidConfig);
    }
  };
  ArmModel a = arm();
  a.reach_m = 1.2;
  expect_invalid(a);
  a = arm();
  a.joints[1].axis = Vec3(0, 2, 0);
  expect_invalid(a);
  a = arm();
  a.time_constant_s = 0;
  expect_invalid(a);
  a = arm();
  a.ready[2] = -1;
  expect_invalid(a);
  a = arm();
  a.spheres[0].group = 17;
  expect_invalid(a);
}

// ---------------------------------------------------------------------------
// simulator and grasp routine

namespace {

Scene table_scene() {
  Scene s;
  s.graspable_classes = {"can", "bottle"};
  s.allowed_classes = {"can", "bottle"};
  s.objects = {{"can-1", "can", Vec3(0.6, 0.1, -0.2), 0.9, true}};
  s.place_zone = PlaceZone{Vec3(0.45, -0.4, -0.2), 0.08};
  return s;
}

RoutineStatus run(GraspRoutine& r, ArmSimulator& sim, int max_steps = 2000) {
  for (int i = 0; i < max_steps && r.status() == RoutineStatus::running; ++i) r.advance(sim, 0.01);
  return r.status();
}

}  // namespace

TEST(Simulator, ConstructorRejectsCollidingReadyPose) {
  Scene s;
  s.obstacles = {{fk(arm(), arm().ready).position, 0.05}};
  EXPECT_THROW(ArmSimulator(arm(), s), Error);
}

TEST(Simulator, HeldObjectFollowsAndDropsToRest) {
  ArmSimulator sim(arm(), table_scene());
  GraspRoutine r(sim.scene().objects[0]);
  ASSERT_EQ(run(r, sim), RoutineStatus::succeeded);
  EXPECT_EQ(sim.state().gripper.object_id, "can-1");
  sim.apply(move_to(Vec3(0.45, -0.4, 0.0)));
  for (int i = 0; i < 400; ++i) sim.advance(0.01);
  EXPECT_LT((sim.object("can-1")->position - sim.state().ee.position).norm(), 1e-12);
  sim.apply(simple(control::CommandKind::release_object));
  sim.advance(0.01);
  EXPECT_EQ(sim.state().gripper.kind, GripperKind::open);
  EXPECT_DOUBLE_EQ(sim.object("can-1")->position.z(), -0.2);
  EXPECT_TRUE(sim.in_place_zone("can-1"));
}

TEST(GraspRoutine, ReachableObjectSucceeds) {
  ArmSimulator sim(arm(), table_scene());
  GraspRoutine r(sim.scene().objects[0]);
  EXPECT_EQ(run(r, sim), RoutineStatus::succeeded);
  EXPECT_EQ(r.phase(), RoutinePhase::done);
  EXPECT_EQ(sim.state().gripper.kind, GripperKind::holding);
}

TEST(GraspRoutine, ObstacleAboveObjectFailsBlocked) {
  Scene s = table_scene();
  s.obstacles = {{Vec3(0.6, 0.1, -0.05), 0.04}};
  ArmSimulator sim(arm(), s);
  GraspRoutine r(sim.scene().objects[0]);
  EXPECT_EQ(run(r, sim), RoutineStatus::failed);
  EXPECT_EQ(r.failure(), "blocked");
  EXPECT_EQ(sim.state().safety, Safety::blocked);
  EXPECT_NE(sim.state().gripper.kind, GripperKind::holding);
}

TEST(GraspRoutine, AbortMidDescentOpensAndHolds) {
  ArmSimulator sim(arm(), table_scene());
  GraspRoutine r(sim.scene().objects[0]);
  for (int i = 0; i < 3000 && r.phase() != RoutinePhase::descend; ++i) r.advance(sim, 0.01);
  ASSERT_EQ(r.phase(), RoutinePhase::descend);
  for (int i = 0; i < 10; ++i) r.advance(sim, 0.01);
  r.abort(sim);
  EXPECT_EQ(r.status(), RoutineStatus::aborted);
  sim.advance(0.01);
  const Vec3 where = sim.state().ee.position;
  for (int i = 0; i < 100; ++i) sim.advance(0.01);
  EXPECT_EQ(sim.state().gripper.kind, GripperKind::open);
  EXPECT_LT((sim.state().ee.position - where).norm(), 1e-9);
}

TEST(GraspRoutine, MisplacedObjectFailsVerification) {
  Scene s = table_scene();
  ArmSimulator sim(arm(), s);
  SceneObject ghost = s.objects[0];
  ghost.position += Vec3(0.0, 0.2, 0.0);  // nothing there
  GraspRoutine r(ghost);
  EXPECT_EQ(run(r, sim), RoutineStatus::failed);
  EXPECT_EQ(r.failure(), "object not within grasp radius");
}
