// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails. Tolerances and runtime bounds are fixed
// here.

#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "teleop/config.hpp"
#include "teleop/control.hpp"
#include "teleop/geometry.hpp"
#include "teleop/handpose.hpp"
#include "teleop/session.hpp"
#include "teleop/simarm.hpp"
#include "teleop/synthetic.hpp"
#include "teleop/tracking.hpp"

namespace {

using namespace teleop;
using geometry::Mat3;
using geometry::Vec3;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

struct Criterion {
  std::string name;
  double max_seconds;
  std::function<Outcome()> run;
};

session::SessionRecord generate(const std::string& spec_json) {
  return synthetic::generate_synthetic(synthetic::spec_from_json(config::Json::parse(spec_json)));
}

bool has_event(const std::vector<PipelineEvent>& events, const std::string& kind, std::int64_t* at = nullptr) {
  for (const auto& e : events) {
    if (e.kind == kind) {
      if (at) *at = e.t_ms;
      return true;
    }
  }
  return false;
}

Outcome back_projection() {
  Outcome out;
  oracle::Rng rng(101);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    geometry::CameraIntrinsics k;
    k.width = rng.integer(320, 1920);
    k.height = rng.integer(240, 1080);
    k.fx = rng.uniform(200.0, 2000.0);
    k.fy = rng.uniform(200.0, 2000.0);
    k.cx = rng.uniform(0.3, 0.7) * k.width;
    k.cy = rng.uniform(0.3, 0.7) * k.height;
    geometry::PixelDepthPoint p{rng.uniform(0.0, k.width), rng.uniform(0.0, k.height), rng.integer(1, 10000)};
    const Vec3 got = geometry::back_project(p, k);
    const Vec3 want = oracle::back_project(p.u, p.v, p.depth_mm, k.fx, k.fy, k.cx, k.cy);
    worst = std::max(worst, (got - want).norm() / want.norm());
  }
  out.require(worst <= 1e-12, "max relative error " + num(worst));
  out.detail = out.pass ? "max relative error " + num(worst) + " over 1000 tuples" : out.detail;
  return out;
}

Outcome transform_algebra() {
  Outcome out;
  oracle::Rng rng(202);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const geometry::RigidTransform t(rng.rotation(), rng.vec(-2.0, 2.0));
    const geometry::RigidTransform u(rng.rotation(), rng.vec(-2.0, 2.0));
    const Vec3 p = rng.vec(-1.0, 1.0);
    for (const auto& id : {geometry::compose(t, geometry::invert(t)), geometry::compose(geometry::invert(t), t)}) {
      worst = std::max(worst, (id.rotation() - Mat3::Identity()).cwiseAbs().maxCoeff());
      worst = std::max(worst, id.translation().cwiseAbs().maxCoeff());
    }
    worst = std::max(worst, (geometry::compose(t, u) * p - t * (u * p)).cwiseAbs().maxCoeff());
  }
  out.require(worst <= 1e-9, "identity law deviation " + num(worst));

  // Marker seen at Rz(90 deg), (1, 0, 0): the inverse is Rz(-90 deg), (0, 1, 0).
  Mat3 rz90;
  rz90 << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  Mat3 rz_minus90;
  rz_minus90 << 0, 1, 0, -1, 0, 0, 0, 0, 1;
  const auto inv = geometry::invert_pose(rz90, Vec3(1, 0, 0));
  out.require(inv.rotation() == rz_minus90, "hand example rotation differs");
  out.require(inv.translation() == Vec3(0, 1, 0), "hand example translation differs");
  out.require(inv * Vec3(1, 0, 0) == Vec3(0, 0, 0), "marker origin does not map to zero");
  if (out.pass) out.detail = "identity deviation " + num(worst) + ", hand example exact";
  return out;
}

Outcome filter_contract() {
  Outcome out;
  tracking::WristFilter f;
  f.step(Vec3(0, 0, 0), 0);
  const auto s = f.step(Vec3(0.2, 0, 0), 33);
  out.require(s.position == Vec3(0.1, 0, 0) && s.fresh, "EMA step is not exactly (0.1, 0, 0)");

  const auto j = f.step(Vec3(0.4, 0, 0), 66);  // 0.30 m from the accepted (0.1, 0, 0)
  out.require(!j.fresh && j.position == Vec3(0.1, 0, 0), "0.30 m jump was not rejected");

  tracking::WristFilter g;
  g.step(Vec3(0, 0, 0), 0);
  int held = 0;
  std::int64_t t = 0;
  const Vec3 far(1.0, 0, 0);
  for (int i = 0; i < 15; ++i) {
    const auto r = g.step(far, t += 33);
    held += r.fresh ? 0 : 1;
  }
  const auto reseed = g.step(far, t += 33);
  out.require(held == 15, "expected 15 held samples, got " + std::to_string(held));
  out.require(reseed.fresh && reseed.position == far, "filter did not re-seed after 15 rejects");
  if (out.pass) out.detail = "EMA exact, 0.30 m rejected, re-seeded on sample 16";
  return out;
}

Outcome orientation() {
  Outcome out;
  handpose::HandLandmarks h;
  for (auto& p : h.points) p = Vec3(0.5, 0.5, 0.0);
  h[handpose::landmark::kWrist] = Vec3(0, 0, 0);
  h[handpose::landmark::kLittleMcp] = Vec3(1, 0, 0);
  h[handpose::landmark::kIndexMcp] = Vec3(1, 0, -1);
  const auto palm = handpose::palm_normal(h);
  const auto q = handpose::roll_quaternion(palm);
  out.require((palm.normal - Vec3(0, 1, 0)).norm() < 1e-12, "normal is not (0, 1, 0)");
  out.require(std::abs(q.qx() + 0.70711) < 1e-5 && std::abs(q.qw() - 0.70711) < 1e-5 && q.qy() == 0.0 &&
                  q.qz() == 0.0,
              "q = (" + num(q.qx()) + ", 0, 0, " + num(q.qw()) + ")");

  oracle::Rng rng(303);
  double worst_norm = 0.0;
  double worst_invariance = 0.0;
  int zero_violations = 0;
  int checked = 0;
  for (int i = 0; i < 10000; ++i) {
    handpose::HandLandmarks r;
    for (auto& p : r.points) p = rng.vec(-0.1, 0.1) + Vec3(0.0, 0.0, 0.5);
    try {
      const auto frame = handpose::palm_normal(r);
      const auto rq = handpose::roll_quaternion(frame);
      if (rq.qy() != 0.0 || rq.qz() != 0.0) ++zero_violations;
      worst_norm = std::max(worst_norm, std::abs(std::hypot(rq.qx(), rq.qw()) - 1.0));
      const auto normalized = handpose::palm_normal(handpose::normalize_hand(r));
      worst_invariance = std::max(worst_invariance, (normalized.normal - frame.normal).norm());
      ++checked;
    } catch (const Error&) {
    }
  }
  out.require(checked >= 9900, "too many degenerate random hands: " + std::to_string(10000 - checked));
  out.require(zero_violations == 0, std::to_string(zero_violations) + " quaternions with qy or qz != 0");
  out.require(worst_norm <= 1e-12, "norm deviation " + num(worst_norm));
  out.require(worst_invariance <= 1e-9, "normalize_hand changed the normal by " + num(worst_invariance));
  if (out.pass) {
    out.detail = "q = (" + num(q.qx()) + ", 0, 0, " + num(q.qw()) + "), " + std::to_string(checked) +
                 " random hands, invariance " + num(worst_invariance);
  }
  return out;
}

Outcome state_machine() {
  Outcome out;
  using control::CommandKind;
  using control::ControlMode;
  using control::GestureEdge;
  using control::GraspPhase;
  // Expected command per (mode/phase, gesture edge), for a fresh and a stale
  // target. "-" means nothing is sent; "stream" means move_ee when fresh and
  // hold when stale.
  struct Row {
    ControlMode mode;
    GraspPhase phase;
    const char* by_edge[4];  // none, neutral, open_palm, closed_fist
  };
  const Row table[] = {
      {ControlMode::idle, GraspPhase::armed, {"-", "-", "-", "-"}},
      {ControlMode::manual, GraspPhase::armed, {"stream", "stream", "gripper_open", "gripper_close"}},
      {ControlMode::semi_autonomous, GraspPhase::armed, {"stream", "stream", "stream", "grasp_object"}},
      {ControlMode::semi_autonomous, GraspPhase::executing, {"-", "hold", "-", "-"}},
      {ControlMode::semi_autonomous, GraspPhase::holding, {"stream", "stream", "release_object", "stream"}},
  };
  const GestureEdge edges[] = {GestureEdge::none, GestureEdge::neutral, GestureEdge::open_palm,
                               GestureEdge::closed_fist};
  int combos = 0;
  for (const auto& row : table) {
    for (int e = 0; e < 4; ++e) {
      for (bool fresh : {true, false}) {
        std::string want = row.by_edge[e];
        if (want == "stream") want = fresh ? "move_ee" : "hold";
        const auto got = control::decide(row.mode, row.phase, edges[e], fresh);
        const std::string got_s = got ? std::string(control::to_string(*got)) : "-";
        ++combos;
        out.require(got_s == want, std::string(control::to_string(row.mode)) + "/" +
                                       std::string(control::to_string(row.phase)) + " edge " + std::to_string(e) +
                                       (fresh ? " fresh" : " stale") + ": " + got_s + " != " + want);
      }
    }
  }

  const auto manual = session::replay(generate(R"({
    "seed": 5, "segments": [{"dwell_ms": 6000}],
    "gestures": [{"pose": "one", "duration_ms": 2000}, {"pose": "fist", "duration_ms": 1500},
                 {"pose": "open", "duration_ms": 2500}]
  })"));
  std::int64_t t_mode = -1, t_close = -1, t_open = -1;
  const bool entered = has_event(manual.events, "mode", &t_mode);
  out.require(entered && manual.events.size() > 1, "manual session never changed mode");
  for (const auto& e : manual.events) {
    if (e.kind == "mode") out.require(e.detail == "manual", "one finger selected " + e.detail);
  }
  out.require(has_event(manual.events, "gripper_close", &t_close), "fist did not close the gripper");
  out.require(has_event(manual.events, "gripper_open", &t_open), "palm did not open the gripper");
  out.require(t_mode < t_close && t_close < t_open, "manual events out of order");
  out.require(manual.final_mode == ControlMode::manual, "manual session did not stay in manual");

  const auto semi = session::replay(generate(R"({
    "seed": 6, "segments": [{"dwell_ms": 3000}], "gestures": [{"pose": "two", "duration_ms": 3000}]
  })"));
  out.require(semi.final_mode == ControlMode::semi_autonomous, "two fingers did not select semi-autonomous");
  if (out.pass) {
    out.detail = std::to_string(combos) + " table entries; manual at " + std::to_string(t_mode) + " ms, close at " +
                 std::to_string(t_close) + " ms, open at " + std::to_string(t_open) + " ms; two fingers -> " +
                 std::string(control::to_string(semi.final_mode));
  }
  return out;
}

simarm::JointVector random_q(const simarm::ArmModel& m, oracle::Rng& rng) {
  simarm::JointVector q;
  for (int j = 0; j < simarm::kJointCount; ++j) {
    q[j] = rng.uniform(m.joints[static_cast<std::size_t>(j)].lower, m.joints[static_cast<std::size_t>(j)].upper);
  }
  return q;
}

Outcome kinematics() {
  Outcome out;
  const auto m = simarm::ArmModel::desk_arm();
  oracle::Rng rng(404);
  double worst_fk = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto q = random_q(m, rng);
    const auto got = simarm::fk(m, q);
    const auto want = oracle::fk(m, q);
    worst_fk = std::max(worst_fk, (got.position - want.translation()).norm());
    worst_fk = std::max(worst_fk, (got.rotation - want.rotation()).cwiseAbs().maxCoeff());
  }
  out.require(worst_fk <= 1e-9, "FK deviates from oracle by " + num(worst_fk));

  int ok = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto q = random_q(m, rng);
    const auto target = simarm::fk(m, q);
    const auto r = simarm::ik(m, target.position, target.rotation, m.clamp(q + simarm::JointVector::Constant(0.1)));
    const double residual = (simarm::fk(m, r.q).position - target.position).norm();
    if (m.within_limits(r.q) && residual < 1e-4) ++ok;
  }
  out.require(ok >= 990, "IK round trip " + std::to_string(ok) + "/1000");
  if (out.pass) out.detail = "FK deviation " + num(worst_fk) + ", IK round trip " + std::to_string(ok) + "/1000";
  return out;
}

Outcome precision() {
  Outcome out;
  const auto rec = generate(R"({
    "seed": 3, "start": [0.55, 0.0, 0.15], "pixel_noise_px": 0.3, "depth_noise_mm": 2.0,
    "segments": [{"dwell_ms": 3000},
                 {"to": [0.55, -0.45, -0.05], "speed": 0.1}, {"dwell_ms": 2000},
                 {"to": [0.55, 0.45, 0.35], "speed": 0.1}, {"dwell_ms": 2000},
                 {"to": [0.55, -0.45, -0.05], "speed": 0.2}, {"dwell_ms": 2000},
                 {"to": [0.55, 0.45, 0.35], "speed": 0.4}, {"dwell_ms": 2000}],
    "gestures": [{"pose": "one", "duration_ms": 1000}]
  })");
  const auto r = session::replay(rec);
  const double tau = rec.config.arm.time_constant_s;
  const std::vector<std::pair<int, double>> ramps = {{1, 0.1}, {3, 0.1}, {5, 0.2}, {7, 0.4}};
  std::string table;
  for (const auto& [segment, speed] : ramps) {
    const session::SegmentStats* s = nullptr;
    for (const auto& x : r.segments) {
      if (x.segment == segment) s = &x;
    }
    if (!s) {
      out.require(false, "segment " + std::to_string(segment) + " has no samples");
      continue;
    }
    const double want = oracle::first_order_lag(speed, tau);
    const double rel = std::abs(s->mean_error_m - want) / want;
    out.require(rel <= 0.10, "v=" + num(speed) + ": " + num(s->mean_error_m) + " m vs " + num(want) + " m");
    table += (table.empty() ? "" : ", ") + num(speed) + " m/s -> " + num(s->mean_error_m) + " m";
  }
  const double corr = r.precision ? r.precision->correlation : 0.0;
  out.require(r.precision.has_value(), "no precision series");
  out.require(corr >= 0.5, "speed-error correlation " + num(corr));
  if (out.pass) out.detail = table + "; correlation " + num(corr);
  return out;
}

Outcome safety() {
  Outcome out;
  const auto m = simarm::ArmModel::desk_arm();
  const std::vector<simarm::Obstacle> obstacles = {
      {Vec3(0.7, 0.25, 0.1), 0.08}, {Vec3(0.45, -0.35, 0.0), 0.07}, {Vec3(0.6, 0.0, 0.45), 0.06},
      {Vec3(0.3, 0.4, 0.3), 0.05}};
  std::vector<simarm::SceneObject> objects = {{"a", "can", Vec3(0.6, 0.1, -0.2), 0.9, true}};
  oracle::Rng rng(505);
  simarm::ArmState s = simarm::make_state(m, m.ready);
  int collisions = 0, blocked = 0, blocked_moved = 0, limit_violations = 0, fk_mismatch = 0;
  for (int i = 0; i < 10000; ++i) {
    control::RobotCommand cmd;
    const int kind = rng.integer(0, 9);
    if (kind <= 6) {
      const Vec3 p = rng.vec(-1.2, 1.2);
      cmd = control::RobotCommand::move({p, geometry::RollQuaternion::from_roll(rng.uniform(-3.0, 3.0))}, i);
    } else if (kind == 7) {
      cmd = control::RobotCommand::simple(control::CommandKind::gripper_close, i);
    } else if (kind == 8) {
      cmd = control::RobotCommand::simple(control::CommandKind::gripper_open, i);
    } else {
      cmd = control::RobotCommand::simple(control::CommandKind::hold, i);
    }
    const double dt = rng.uniform(0.005, 0.2);
    const simarm::ArmState next = simarm::step(m, s, cmd, obstacles, objects, dt);
    const auto spheres = simarm::link_spheres(m, next.q);
    if (simarm::self_collides(m, spheres) || simarm::hits_obstacles(spheres, obstacles)) ++collisions;
    if (!m.within_limits(next.q)) ++limit_violations;
    if ((simarm::fk(m, next.q).position - next.ee.position).norm() > 1e-9) ++fk_mismatch;
    if (next.safety == simarm::Safety::blocked) {
      ++blocked;
      if (!(next.q == s.q) || !(next.ee == s.ee)) ++blocked_moved;
    }
    s = next;
  }
  out.require(collisions == 0, std::to_string(collisions) + " states in collision");
  out.require(blocked_moved == 0, std::to_string(blocked_moved) + " blocked steps changed the pose");
  out.require(limit_violations == 0, std::to_string(limit_violations) + " joint limit violations");
  out.require(fk_mismatch == 0, std::to_string(fk_mismatch) + " states with ee != fk(q)");
  out.require(blocked > 0, "fuzzer never hit the guard");
  if (out.pass) out.detail = "10000 commands, 0 collisions, " + std::to_string(blocked) + " blocked with pose unchanged";
  return out;
}

Outcome selection() {
  Outcome out;
  oracle::Rng rng(606);
  const std::vector<std::string> classes = {"bottle", "can", "cup", "box", "ball"};
  int mismatches = 0, no_target = 0;
  for (int i = 0; i < 10000; ++i) {
    std::vector<simarm::SceneObject> objects;
    const int n = rng.integer(0, 8);
    for (int k = 0; k < n; ++k) {
      simarm::SceneObject o;
      o.id = "o" + std::to_string(k);
      o.class_label = classes[static_cast<std::size_t>(rng.integer(0, 4))];
      o.position = rng.vec(-0.5, 0.5) + Vec3(0.5, 0.0, 0.0);
      // Coarse confidences make ties common.
      o.confidence = rng.integer(5, 10) / 10.0;
      if (rng.integer(0, 3) == 0) o.confidence += rng.uniform(-5e-7, 5e-7);
      o.confidence = std::clamp(o.confidence, 0.0, 1.0);
      o.graspable = rng.integer(0, 4) != 0;
      objects.push_back(o);
    }
    std::vector<std::string> allowed;
    for (const auto& c : classes) {
      if (rng.integer(0, 1)) allowed.push_back(c);
    }
    const Vec3 ee = rng.vec(-0.3, 0.3) + Vec3(0.5, 0.0, 0.2);
    const auto want = oracle::select(objects, ee, allowed, simarm::kConfidenceTie);
    try {
      const auto& got = simarm::select_object(objects, ee, allowed);
      if (!want || got.id != objects[*want].id) ++mismatches;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoTarget || want) ++mismatches;
      ++no_target;
    }
  }
  out.require(mismatches == 0, std::to_string(mismatches) + " scenes disagree with the oracle");
  if (out.pass) out.detail = "10000 scenes agree (" + std::to_string(no_target) + " with no target)";
  return out;
}

Outcome end_to_end_grasp() {
  Outcome out;
  const auto spec = synthetic::spec_from_json(
      config::parse_json(config::read_file(std::string(TELEOP_TEST_DATA) + "/golden_spec.json"), "golden spec"));
  const auto r = session::replay(synthetic::generate_synthetic(spec));
  std::int64_t t_grasp = -1, t_release = -1, t_placed = -1;
  std::string grasped, placed;
  for (const auto& e : r.events) {
    if (e.kind == "grasp_succeeded" && t_grasp < 0) {
      t_grasp = e.t_ms;
      grasped = e.detail;
    }
    if (e.kind == "release_object" && t_grasp >= 0 && t_release < 0) t_release = e.t_ms;
    if (e.kind == "placed" && t_release >= 0 && t_placed < 0) {
      t_placed = e.t_ms;
      placed = e.detail;
    }
    out.require(e.kind != "grasp_failed" && e.kind != "dropped", "unexpected event " + e.kind);
  }
  out.require(t_grasp >= 0, "no grasp_succeeded");
  out.require(t_release >= 0, "no release after the grasp");
  out.require(t_placed >= 0 && placed == grasped, "released object did not land in the place zone");
  const double sim_s = static_cast<double>(r.end_ms - r.start_ms) / 1000.0;
  out.require(sim_s < 60.0, "session took " + num(sim_s) + " simulated seconds");
  if (out.pass) {
    out.detail = grasped + " grasped at " + std::to_string(t_grasp) + " ms, placed at " + std::to_string(t_placed) +
                 " ms, " + num(sim_s) + " s simulated";
  }
  return out;
}

Outcome replay_determinism() {
  Outcome out;
  const std::string dir = TELEOP_TEST_DATA;
  const auto rec = session::load_session(dir + "/golden_session.jsonl");
  const std::string a = session::report_text(session::replay(rec));
  const std::string b = session::report_text(session::replay(session::load_session(dir + "/golden_session.jsonl")));
  out.require(a == b, "two replays differ");
  const std::string committed = config::read_file(dir + "/golden_report.json");
  out.require(a == committed, "replay differs from the committed golden report");
  if (out.pass) out.detail = std::to_string(a.size()) + " byte report identical across runs and to the committed copy";
  return out;
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"back-projection oracle", 1.0, back_projection},
      {"transform algebra", 5.0, transform_algebra},
      {"filter contract", 1.0, filter_contract},
      {"orientation", 5.0, orientation},
      {"state machine", 5.0, state_machine},
      {"kinematics", 30.0, kinematics},
      {"precision analysis", 60.0, precision},
      {"safety fuzz", 60.0, safety},
      {"object selection", 10.0, selection},
      {"end-to-end grasp", 30.0, end_to_end_grasp},
      {"replay determinism", 30.0, replay_determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.max_seconds) {
      o.pass = false;
      o.detail += (o.detail.empty() ? "" : "; ") + std::string("took ") + num(secs) + " s, limit " +
                  num(c.max_seconds) + " s";
    }
    std::printf("%s %s (%.2f s): %s\n", o.pass ? "PASS" : "FAIL", c.name.c_str(), secs, o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
