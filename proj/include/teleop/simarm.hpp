#pragma once

// Simulated 6-DoF arm with a jaw gripper: kinematics, damped least-squares
// IK, first-order tracking dynamics, sphere-based collision guard, object
// selection and the autonomous grasp routine.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "teleop/command.hpp"
#include "teleop/error.hpp"
#include "teleop/geometry.hpp"

namespace teleop::simarm {

using control::CommandKind;
using control::RobotCommand;
using control::TargetPose;
using geometry::Mat3;
using geometry::Point3;
using geometry::Vec3;

inline constexpr int kJointCount = 6;
using JointVector = Eigen::Matrix<double, kJointCount, 1>;
using Jacobian = Eigen::Matrix<double, 6, kJointCount>;

struct Joint {
  Vec3 axis = Vec3::UnitZ();
  /// Translation from the previous joint frame to this joint, in the
  /// previous frame.
  Vec3 offset = Vec3::Zero();
  double lower = -M_PI;
  double upper = M_PI;
};

/// Collision sphere rigidly attached to a kinematic frame (0 = base,
/// i = after joint i).
struct LinkSphere {
  int frame = 0;
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
  int group = 0;
};

struct Box {
  Vec3 min = Vec3::Constant(-1.0);
  Vec3 max = Vec3::Constant(1.0);

  bool contains(const Point3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
};

struct EePose {
  Point3 position = Point3::Zero();
  Mat3 rotation = Mat3::Identity();

  Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(rotation).normalized(); }
  bool operator==(const EePose&) const = default;
};

/// Rodrigues rotation about a unit axis.
inline Mat3 axis_rotation(const Vec3& axis, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  Mat3 k;
  k << 0.0, -axis.z(), axis.y(), axis.z(), 0.0, -axis.x(), -axis.y(), axis.x(), 0.0;
  return Mat3::Identity() + s * k + (1.0 - c) * (k * k);
}

struct Frame {
  Mat3 rotation = Mat3::Identity();
  Point3 origin = Point3::Zero();
};

/// Kinematic and safety description of the simulated arm. The default model
/// is configuration data approximating a ~1 m reach arm; it is not the
/// kinematics of any specific commercial robot.
struct ArmModel {
  std::string id = "desk-arm-6";
  std::array<Joint, kJointCount> joints{};
  Vec3 tool_offset = Vec3::Zero();
  double reach_m = 0.98;
  double time_constant_s = 0.35;
  std::vector<LinkSphere> spheres;
  std::vector<std::string> groups;
  /// Group pairs that touch by construction and are not self-collision checked.
  std::vector<std::pair<int, int>> adjacent_groups;
  Box workspace;
  JointVector ready = JointVector::Zero();

  bool within_limits(const JointVector& q) const {
    for (int i = 0; i < kJointCount; ++i) {
      if (!(q[i] >= joints[i].lower && q[i] <= joints[i].upper)) return false;
    }
    return true;
  }

  JointVector clamp(const JointVector& q) const {
    JointVector out;
    for (int i = 0; i < kJointCount; ++i) out[i] = std::clamp(q[i], joints[i].lower, joints[i].upper);
    return out;
  }

  bool adjacent(int a, int b) const {
    for (const auto& [x, y] : adjacent_groups) {
      if ((x == a && y == b) || (x == b && y == a)) return true;
    }
    return false;
  }

  /// Triangle-inequality bound on |FK(q)|.
  double reach_upper_bound() const {
    double sum = tool_offset.norm();
    for (const auto& j : joints) sum += j.offset.norm();
    return sum;
  }

  void validate() const;

  static ArmModel desk_arm();
};

/// Frames 0..6 (base, then after each joint) and the tool frame.
struct ChainFrames {
  std::array<Frame, kJointCount + 1> frames{};
  Frame tool;
};

inline ChainFrames chain_frames(const ArmModel& model, const JointVector& q) {
  ChainFrames out;
  Frame f;
  out.frames[0] = f;
  for (int i = 0; i < kJointCount; ++i) {
    const Joint& j = model.joints[static_cast<std::size_t>(i)];
    f.origin = f.origin + f.rotation * j.offset;
    f.rotation = f.rotation * axis_rotation(j.axis, q[i]);
    out.frames[static_cast<std::size_t>(i + 1)] = f;
  }
  out.tool.rotation = f.rotation;
  out.tool.origin = f.origin + f.rotation * model.tool_offset;
  return out;
}

inline EePose fk_unchecked(const ArmModel& model, const JointVector& q) {
  const ChainFrames c = chain_frames(model, q);
  return {c.tool.origin, c.tool.rotation};
}

inline EePose fk(const ArmModel& model, const JointVector& q) {
  if (!model.within_limits(q)) throw Error(ErrorCode::JointLimit, "joint angles outside limits");
  return fk_unchecked(model, q);
}

inline Jacobian jacobian(const ArmModel& model, const ChainFrames& c) {
  Jacobian j;
  for (int i = 0; i < kJointCount; ++i) {
    const Frame& f = c.frames[static_cast<std::size_t>(i + 1)];
    const Vec3 axis = f.rotation * model.joints[static_cast<std::size_t>(i)].axis;
    j.block<3, 1>(0, i) = axis.cross(c.tool.origin - f.origin);
    j.block<3, 1>(3, i) = axis;
  }
  return j;
}

/// Rotation vector (axis * angle) taking `from` to `to`, in the base frame.
inline Vec3 rotation_error(const Mat3& to, const Mat3& from) {
  const Eigen::AngleAxisd aa(to * from.transpose());
  return aa.axis() * aa.angle();
}

struct IkOptions {
  double damping = 0.05;
  int max_iterations = 100;
  double position_tol = 1e-4;
  double rotation_tol = 1e-3;
};

struct IkResult {
  JointVector q = JointVector::Zero();
  bool converged = false;
  int iterations = 0;
  double position_residual = 0.0;
  double rotation_residual = 0.0;
};

using PoseError = Eigen::Matrix<double, 6, 1>;

inline PoseError pose_error(const Point3& position, const Mat3& rotation, const Frame& tool) {
  PoseError e;
  e.head<3>() = position - tool.origin;
  e.tail<3>() = rotation_error(rotation, tool.rotation);
  return e;
}

/// Damped least squares: dq = Jᵀ (J Jᵀ + λ² I)⁻¹ e, clamped to the joint
/// limits after every iteration. Near singular configurations the damped
/// step is short, so multiples 2, 4, ..., 64 of it are tried in turn and
/// kept while the error keeps shrinking. Without convergence the best iterate is
/// returned with converged = false.
inline IkResult ik(const ArmModel& model, const Point3& position, const Mat3& rotation, const JointVector& seed,
                   const IkOptions& opts = {}) {
  JointVector q = model.clamp(seed);
  IkResult best;
  double best_score = std::numeric_limits<double>::infinity();
  const double lambda2 = opts.damping * opts.damping;
  for (int it = 0;; ++it) {
    const ChainFrames c = chain_frames(model, q);
    const PoseError e = pose_error(position, rotation, c.tool);
    const double pos_res = e.head<3>().norm();
    const double rot_res = e.tail<3>().norm();
    const double score = pos_res + rot_res;
    if (score < best_score) {
      best_score = score;
      best = {q, false, it, pos_res, rot_res};
    }
    if (pos_res < opts.position_tol && rot_res < opts.rotation_tol) {
      return {q, true, it, pos_res, rot_res};
    }
    if (it >= opts.max_iterations) break;
    const Jacobian j = jacobian(model, c);
    const Eigen::Matrix<double, 6, 6> jjt = j * j.transpose() + lambda2 * Eigen::Matrix<double, 6, 6>::Identity();
    const JointVector dq = j.transpose() * jjt.ldlt().solve(e);
    JointVector next = model.clamp(q + dq);
    double next_err = pose_error(position, rotation, chain_frames(model, next).tool).norm();
    for (double scale = 2.0; scale <= 64.0; scale *= 2.0) {
      const JointVector trial = model.clamp(q + scale * dq);
      const double trial_err = pose_error(position, rotation, chain_frames(model, trial).tool).norm();
      if (!(trial_err < next_err)) break;
      next = trial;
      next_err = trial_err;
    }
    q = next;
  }
  best.iterations = opts.max_iterations;
  return best;
}

inline IkResult ik(const ArmModel& model, const TargetPose& target, const JointVector& seed,
                   const IkOptions& opts = {}) {
  return ik(model, target.position_robot, target.orientation.rotation(), seed, opts);
}

// ---------------------------------------------------------------------------
// Collision geometry

struct Obstacle {
  Point3 center = Point3::Zero();
  double radius_m = 0.1;
};

struct WorldSphere {
  Point3 center;
  double radius;
  int group;
};

inline std::vector<WorldSphere> link_spheres(const ArmModel& model, const JointVector& q) {
  const ChainFrames c = chain_frames(model, q);
  std::vector<WorldSphere> out;
  out.reserve(model.spheres.size());
  for (const auto& s : model.spheres) {
    const Frame& f = c.frames[static_cast<std::size_t>(s.frame)];
    out.push_back({f.origin + f.rotation * s.center, s.radius, s.group});
  }
  return out;
}

inline bool spheres_overlap(const Point3& a, double ra, const Point3& b, double rb) {
  return (a - b).norm() < ra + rb;
}

inline bool self_collides(const ArmModel& model, std::span<const WorldSphere> spheres) {
  for (std::size_t i = 0; i < spheres.size(); ++i) {
    for (std::size_t j = i + 1; j < spheres.size(); ++j) {
      const auto& a = spheres[i];
      const auto& b = spheres[j];
      if (a.group == b.group || model.adjacent(a.group, b.group)) continue;
      if (spheres_overlap(a.center, a.radius, b.center, b.radius)) return true;
    }
  }
  return false;
}

inline bool hits_obstacles(std::span<const WorldSphere> spheres, std::span<const Obstacle> obstacles) {
  for (const auto& s : spheres) {
    for (const auto& o : obstacles) {
      if (spheres_overlap(s.center, s.radius, o.center, o.radius_m)) return true;
    }
  }
  return false;
}

inline bool in_collision(const ArmModel& model, const JointVector& q, std::span<const Obstacle> obstacles) {
  const auto spheres = link_spheres(model, q);
  return self_collides(model, spheres) || hits_obstacles(spheres, obstacles);
}

/// True when the segment a→b passes within r of c.
inline bool segment_hits_sphere(const Point3& a, const Point3& b, const Point3& c, double r) {
  const Vec3 d = b - a;
  const double len2 = d.squaredNorm();
  double t = len2 > 0.0 ? (c - a).dot(d) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (a + t * d - c).norm() < r;
}

inline constexpr double kPathInflation_m = 0.02;

// ---------------------------------------------------------------------------
// Scene

struct SceneObject {
  std::string id;
  std::string class_label;
  Point3 position = Point3::Zero();
  double confidence = 0.0;
  bool graspable = false;
};

/// Circular drop zone on the horizontal plane.
struct PlaceZone {
  Point3 center = Point3::Zero();
  double radius_m = 0.1;

  bool contains(const Point3& p) const { return (p.head<2>() - center.head<2>()).norm() <= radius_m; }
};

struct Scene {
  std::vector<SceneObject> objects;
  std::vector<Obstacle> obstacles;
  /// Classes the grasp routine may target on this run.
  std::vector<std::string> allowed_classes;
  /// Classes the gripper can physically hold; sets SceneObject::graspable.
  std::vector<std::string> graspable_classes;
  std::optional<PlaceZone> place_zone;
};

inline constexpr double kConfidenceTie = 1e-6;

/// Highest confidence among graspable objects whose class is allowed;
/// confidences within 1e-6 of the best are tied and the one closest to the
/// end effector wins (first in list order on exact distance ties).
inline const SceneObject& select_object(std::span<const SceneObject> objects, const Point3& ee,
                                        std::span<const std::string> allowed) {
  auto eligible = [&](const SceneObject& o) {
    return o.graspable && std::find(allowed.begin(), allowed.end(), o.class_label) != allowed.end();
  };
  double best_conf = -std::numeric_limits<double>::infinity();
  for (const auto& o : objects) {
    if (eligible(o)) best_conf = std::max(best_conf, o.confidence);
  }
  const SceneObject* pick = nullptr;
  double pick_dist = std::numeric_limits<double>::infinity();
  for (const auto& o : objects) {
    if (!eligible(o) || best_conf - o.confidence >= kConfidenceTie) continue;
    const double d = (o.position - ee).norm();
    if (d < pick_dist) {
      pick = &o;
      pick_dist = d;
    }
  }
  if (!pick) throw Error(ErrorCode::NoTarget, "no graspable object of an allowed class");
  return *pick;
}

// ---------------------------------------------------------------------------
// Arm state and stepping

enum class GripperKind { open, closed, holding };
enum class Safety { ok, clamped, blocked };

constexpr std::string_view to_string(GripperKind g) {
  switch (g) {
    case GripperKind::open: return "open";
    case GripperKind::closed: return "closed";
    case GripperKind::holding: return "holding";
  }
  return "open";
}

constexpr std::string_view to_string(Safety s) {
  switch (s) {
    case Safety::ok: return "ok";
    case Safety::clamped: return "clamped";
    case Safety::blocked: return "blocked";
  }
  return "ok";
}

struct GripperState {
  GripperKind kind = GripperKind::open;
  std::string object_id;  // set only while holding

  bool operator==(const GripperState&) const = default;
};

struct ArmState {
  JointVector q = JointVector::Zero();
  EePose ee;  // always fk(q)
  GripperState gripper;
  Safety safety = Safety::ok;
  /// Pose the first-order dynamics converge to; empty means at rest.
  std::optional<EePose> goal;
};

inline ArmState make_state(const ArmModel& model, const JointVector& q) {
  ArmState s;
  s.q = q;
  s.ee = fk(model, q);
  return s;
}

/// IK settings used while tracking. Each substep moves the reference only a
/// few millimetres, so a tight tolerance costs one or two iterations and
/// keeps fk(q) on the first-order trajectory.
inline IkOptions tracking_ik_options() {
  IkOptions o;
  o.position_tol = 1e-8;
  o.rotation_tol = 1e-7;
  return o;
}

struct ClampResult {
  Point3 position;
  bool clamped;
};

inline ClampResult clamp_to_workspace(const ArmModel& model, const Point3& p) {
  Point3 out = p;
  bool clamped = false;
  const double r = out.norm();
  if (r > model.reach_m) {
    out *= model.reach_m / r;
    clamped = true;
  }
  const Point3 boxed = out.cwiseMax(model.workspace.min).cwiseMin(model.workspace.max);
  if (boxed != out) clamped = true;
  return {boxed, clamped};
}

namespace detail {

inline ArmState blocked(const ArmState& state) {
  ArmState out = state;
  out.safety = Safety::blocked;
  out.goal = state.ee;
  return out;
}

/// One first-order step toward state.goal, guarded against collisions.
inline ArmState settle(const ArmModel& model, const ArmState& state, std::span<const Obstacle> obstacles,
                       double dt_s, Safety on_success) {
  if (!state.goal) {
    ArmState out = state;
    out.safety = on_success;
    return out;
  }
  const double k = 1.0 - std::exp(-dt_s / model.time_constant_s);
  const Point3 p = state.ee.position + k * (state.goal->position - state.ee.position);
  const Eigen::Quaterniond q0 = state.ee.quaternion();
  const Eigen::Quaterniond q1 = state.goal->quaternion();
  const Mat3 r = q0.slerp(k, q1).toRotationMatrix();
  const IkResult sol = ik(model, p, r, state.q, tracking_ik_options());
  if (in_collision(model, sol.q, obstacles)) return blocked(state);
  ArmState out = state;
  out.q = sol.q;
  out.ee = fk_unchecked(model, sol.q);
  out.safety = on_success;
  return out;
}

inline std::optional<std::string> object_in_jaws(const Point3& tool, std::span<const struct SceneObject> objects,
                                                 double radius) {
  const SceneObject* best = nullptr;
  double best_d = radius;
  for (const auto& o : objects) {
    if (!o.graspable) continue;
    const double d = (o.position - tool).norm();
    if (d <= best_d) {
      best = &o;
      best_d = d;
    }
  }
  if (!best) return std::nullopt;
  return best->id;
}

}  // namespace detail

inline constexpr double kGraspRadius_m = 0.05;

/// Advances the arm by dt_s under cmd. Failures are reported via
/// ArmState::safety; a blocked step leaves q and ee bitwise unchanged.
inline ArmState step(const ArmModel& model, const ArmState& state, const RobotCommand& cmd,
                     std::span<const Obstacle> obstacles, std::span<const SceneObject> objects, double dt_s) {
  if (!(dt_s > 0.0 && dt_s <= 0.5)) throw Error(ErrorCode::InvalidConfig, "dt must be in (0, 0.5] s");
  switch (cmd.kind) {
    case CommandKind::move_ee: {
      if (!cmd.target) throw Error(ErrorCode::MalformedMessage, "move_ee without target");
      const auto [target, clamped] = clamp_to_workspace(model, cmd.target->position_robot);
      for (const auto& o : obstacles) {
        if (segment_hits_sphere(state.ee.position, target, o.center, o.radius_m + kPathInflation_m)) {
          return detail::blocked(state);
        }
      }
      ArmState next = state;
      next.goal = EePose{target, cmd.target->orientation.rotation()};
      return detail::settle(model, next, obstacles, dt_s, clamped ? Safety::clamped : Safety::ok);
    }
    case CommandKind::gripper_close: {
      ArmState next = detail::settle(model, state, obstacles, dt_s, Safety::ok);
      if (next.gripper.kind != GripperKind::holding) {
        if (auto id = detail::object_in_jaws(state.ee.position, objects, kGraspRadius_m)) {
          next.gripper = {GripperKind::holding, *id};
        } else {
          next.gripper = {GripperKind::closed, {}};
        }
      }
      return next;
    }
    case CommandKind::gripper_open:
    case CommandKind::release_object: {
      ArmState next = detail::settle(model, state, obstacles, dt_s, Safety::ok);
      next.gripper = {GripperKind::open, {}};
      return next;
    }
    case CommandKind::hold:
    case CommandKind::grasp_object:
      return detail::settle(model, state, obstacles, dt_s, Safety::ok);
  }
  return state;
}

// ---------------------------------------------------------------------------
// Simulator: owns arm state plus the scene, moves held objects with the
// gripper and drops them on release.

class ArmSimulator {
 public:
  ArmSimulator(ArmModel model, Scene scene) : model_(std::move(model)), scene_(std::move(scene)) {
    model_.validate();
    state_ = make_state(model_, model_.ready);
    for (const auto& o : scene_.objects) rest_height_[o.id] = o.position.z();
    if (in_collision(model_, state_.q, scene_.obstacles)) {
      throw Error(ErrorCode::InvalidConfig, "ready pose collides with the scene");
    }
  }

  const ArmModel& model() const { return model_; }
  const Scene& scene() const { return scene_; }
  const ArmState& state() const { return state_; }

  /// Motion commands persist until replaced; gripper commands act on the
  /// next step only.
  void apply(const RobotCommand& cmd) {
    switch (cmd.kind) {
      case CommandKind::move_ee:
      case CommandKind::hold:
        motion_ = cmd;
        break;
      case CommandKind::gripper_open:
      case CommandKind::gripper_close:
      case CommandKind::release_object:
        pending_ = cmd;
        break;
      case CommandKind::grasp_object:
        break;
    }
  }

  /// Stops at the current pose.
  void halt() {
    motion_ = RobotCommand::simple(CommandKind::hold, 0);
    state_.goal = state_.ee;
  }

  void advance(double dt_s) {
    const RobotCommand cmd = pending_ ? *pending_ : motion_;
    pending_.reset();
    const GripperState before = state_.gripper;
    state_ = step(model_, state_, cmd, scene_.obstacles, scene_.objects, dt_s);
    if (before.kind == GripperKind::holding && state_.gripper.kind != GripperKind::holding) {
      drop(before.object_id);
    }
    if (state_.gripper.kind == GripperKind::holding) {
      if (auto* o = find(state_.gripper.object_id)) o->position = state_.ee.position;
    }
  }

  const SceneObject* object(const std::string& id) const {
    for (const auto& o : scene_.objects) {
      if (o.id == id) return &o;
    }
    return nullptr;
  }

  bool in_place_zone(const std::string& id) const {
    const auto* o = object(id);
    return o && scene_.place_zone && scene_.place_zone->contains(o->position) &&
           state_.gripper.object_id != id;
  }

 private:
  SceneObject* find(const std::string& id) {
    for (auto& o : scene_.objects) {
      if (o.id == id) return &o;
    }
    return nullptr;
  }

  void drop(const std::string& id) {
    if (auto* o = find(id)) o->position.z() = rest_height_[id];
  }

  ArmModel model_;
  Scene scene_;
  ArmState state_;
  RobotCommand motion_ = RobotCommand::simple(CommandKind::hold, 0);
  std::optional<RobotCommand> pending_;
  std::map<std::string, double> rest_height_;
};

// ---------------------------------------------------------------------------
// Autonomous grasp: pre-grasp above the object, descend, close, verify, lift.

enum class RoutinePhase { approach, descend, close, verify, lift, done };
enum class RoutineStatus { running, succeeded, failed, aborted };

constexpr std::string_view to_string(RoutinePhase p) {
  switch (p) {
    case RoutinePhase::approach: return "approach";
    case RoutinePhase::descend: return "descend";
    case RoutinePhase::close: return "close";
    case RoutinePhase::verify: return "verify";
    case RoutinePhase::lift: return "lift";
    case RoutinePhase::done: return "done";
  }
  return "done";
}

struct GraspRoutineConfig {
  double approach_height_m = 0.10;
  double lift_height_m = 0.10;
  double arrive_tolerance_m = 0.01;
  double phase_timeout_s = 8.0;
};

class GraspRoutine {
 public:
  GraspRoutine(SceneObject target, GraspRoutineConfig cfg = {}) : target_(std::move(target)), cfg_(cfg) {}

  RoutineStatus status() const { return status_; }
  RoutinePhase phase() const { return phase_; }
  const std::string& failure() const { return failure_; }
  const SceneObject& target() const { return target_; }

  /// Issues the command for the current phase, then steps the simulator.
  RoutineStatus advance(ArmSimulator& sim, double dt_s) {
    if (status_ != RoutineStatus::running) return status_;
    if (!started_) {
      roll_ = current_roll(sim.state().ee.rotation);
      enter(sim, RoutinePhase::approach);
      started_ = true;
    }
    sim.advance(dt_s);
    elapsed_s_ += dt_s;
    const ArmState& s = sim.state();
    if (s.safety == Safety::blocked) return fail(sim, "blocked");
    switch (phase_) {
      case RoutinePhase::approach:
        if (arrived(s)) enter(sim, RoutinePhase::descend);
        break;
      case RoutinePhase::descend:
        if (arrived(s)) enter(sim, RoutinePhase::close);
        break;
      case RoutinePhase::close:
        enter(sim, RoutinePhase::verify);
        break;
      case RoutinePhase::verify:
        if (s.gripper.kind != GripperKind::holding || s.gripper.object_id != target_.id) {
          return fail(sim, "object not within grasp radius");
        }
        enter(sim, RoutinePhase::lift);
        break;
      case RoutinePhase::lift:
        if (arrived(s)) {
          phase_ = RoutinePhase::done;
          status_ = RoutineStatus::succeeded;
          sim.halt();
        }
        break;
      case RoutinePhase::done:
        break;
    }
    if (status_ == RoutineStatus::running && elapsed_s_ > cfg_.phase_timeout_s) return fail(sim, "timeout");
    return status_;
  }

  void abort(ArmSimulator& sim) {
    if (status_ != RoutineStatus::running) return;
    sim.apply(RobotCommand::simple(CommandKind::gripper_open, 0));
    sim.halt();
    status_ = RoutineStatus::aborted;
  }

 private:
  static double current_roll(const Mat3& r) { return std::atan2(r(2, 1), r(1, 1)); }

  bool arrived(const ArmState& s) const { return (s.ee.position - goal_).norm() < cfg_.arrive_tolerance_m; }

  void enter(ArmSimulator& sim, RoutinePhase phase) {
    phase_ = phase;
    elapsed_s_ = 0.0;
    const Point3 above = target_.position + Vec3(0.0, 0.0, cfg_.approach_height_m);
    switch (phase) {
      case RoutinePhase::approach: goal_ = above; break;
      case RoutinePhase::descend: goal_ = target_.position; break;
      case RoutinePhase::close:
        sim.apply(RobotCommand::simple(CommandKind::gripper_close, 0));
        return;
      case RoutinePhase::verify: return;
      case RoutinePhase::lift: goal_ = target_.position + Vec3(0.0, 0.0, cfg_.lift_height_m); break;
      case RoutinePhase::done: return;
    }
    sim.apply(RobotCommand::move({goal_, geometry::RollQuaternion::from_roll(roll_)}, 0));
  }

  RoutineStatus fail(ArmSimulator& sim, std::string why) {
    failure_ = std::move(why);
    status_ = RoutineStatus::failed;
    sim.halt();
    return status_;
  }

  SceneObject target_;
  GraspRoutineConfig cfg_;
  RoutinePhase phase_ = RoutinePhase::approach;
  RoutineStatus status_ = RoutineStatus::running;
  Point3 goal_ = Point3::Zero();
  double roll_ = 0.0;
  double elapsed_s_ = 0.0;
  bool started_ = false;
  std::string failure_;
};

// ---------------------------------------------------------------------------
// Model definition and validation

inline void ArmModel::validate() const {
  for (int i = 0; i < kJointCount; ++i) {
    const Joint& j = joints[static_cast<std::size_t>(i)];
    if (std::abs(j.axis.norm() - 1.0) > 1e-9) {
      throw Error(ErrorCode::InvalidConfig, "joint " + std::to_string(i + 1) + " axis is not a unit vector");
    }
    if (!(j.lower <= 0.0 && j.upper >= 0.0 && j.lower < j.upper)) {
      throw Error(ErrorCode::InvalidConfig, "joint " + std::to_string(i + 1) + " limits must bracket zero");
    }
  }
  if (!(time_constant_s > 0.0)) throw Error(ErrorCode::InvalidConfig, "time_constant_s must be positive");
  // The zero configuration is the fully extended pose, so the triangle bound
  // is attained there.
  const double bound = reach_upper_bound();
  const double attained = fk_unchecked(*this, JointVector::Zero()).position.norm();
  if (std::abs(bound - attained) > 1e-3 || std::abs(reach_m - bound) > 1e-3) {
    throw Error(ErrorCode::InvalidConfig, "reach_m " + std::to_string(reach_m) + " does not match kinematic reach " +
                                              std::to_string(attained));
  }
  for (const auto& s : spheres) {
    if (s.frame < 0 || s.frame > kJointCount || !(s.radius > 0.0) || s.group < 0 ||
        s.group >= static_cast<int>(groups.size())) {
      throw Error(ErrorCode::InvalidConfig, "invalid link sphere");
    }
  }
  if (!within_limits(ready)) throw Error(ErrorCode::InvalidConfig, "ready pose outside joint limits");
}

inline ArmModel ArmModel::desk_arm() {
  ArmModel m;
  m.id = "desk-arm-6";
  m.joints = {{
      {Vec3::UnitZ(), Vec3(0.0, 0.0, 0.0), -2.6, 2.6},  // base yaw
      {Vec3::UnitY(), Vec3(0.0, 0.0, 0.0), -3.1, 0.5},  // shoulder pitch
      {Vec3::UnitY(), Vec3(0.40, 0.0, 0.0), 0.0, 3.1},  // elbow pitch
      {Vec3::UnitX(), Vec3(0.20, 0.0, 0.0), -2.8, 2.8}, // forearm roll
      {Vec3::UnitY(), Vec3(0.20, 0.0, 0.0), -1.9, 1.9}, // wrist pitch
      {Vec3::UnitX(), Vec3(0.0, 0.0, 0.0), -2.8, 2.8},  // wrist roll
  }};
  m.tool_offset = Vec3(0.18, 0.0, 0.0);
  m.reach_m = 0.98;
  m.time_constant_s = 0.35;
  m.groups = {"body", "upper_arm", "forearm", "gripper"};
  m.adjacent_groups = {{1, 2}, {2, 3}};
  m.spheres = {
      {0, Vec3(-0.45, 0.0, -0.30), 0.17, 0},
      {0, Vec3(-0.20, 0.0, -0.30), 0.17, 0},
      {0, Vec3(0.02, 0.0, -0.30), 0.17, 0},
      {2, Vec3(0.10, 0.0, 0.0), 0.055, 1},
      {2, Vec3(0.20, 0.0, 0.0), 0.055, 1},
      {2, Vec3(0.30, 0.0, 0.0), 0.055, 1},
      {3, Vec3(0.10, 0.0, 0.0), 0.05, 2},
      {3, Vec3(0.20, 0.0, 0.0), 0.05, 2},
      {3, Vec3(0.30, 0.0, 0.0), 0.05, 2},
      {6, Vec3(0.06, 0.0, 0.0), 0.045, 3},
      {6, Vec3(0.14, 0.0, 0.0), 0.045, 3},
  };
  m.workspace = {Vec3(0.10, -0.70, -0.35), Vec3(0.95, 0.70, 0.75)};
  m.ready << 0.0, -1.4335, 2.0960, 0.0, -0.6625, 0.0;
  return m;
}

}  // namespace teleop::simarm
