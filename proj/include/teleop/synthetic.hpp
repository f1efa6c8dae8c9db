#pragma once

// Synthetic operator sessions: scripted wrist paths rendered through a
// virtual pinhole camera, plus landmark hands in fixed poses.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "teleop/config.hpp"
#include "teleop/error.hpp"
#include "teleop/handpose.hpp"
#include "teleop/session.hpp"

namespace teleop::synthetic {

using config::Json;
using geometry::Mat3;
using geometry::Point3;
using geometry::Vec3;

enum class HandPose { none, open, fist, one, two, three };

inline HandPose hand_pose_from_string(const std::string& s) {
  if (s == "none") return HandPose::none;
  if (s == "open") return HandPose::open;
  if (s == "fist") return HandPose::fist;
  if (s == "one") return HandPose::one;
  if (s == "two") return HandPose::two;
  if (s == "three") return HandPose::three;
  throw Error(ErrorCode::InfeasibleSpec, "unknown hand pose '" + s + "'");
}

inline std::string to_string(HandPose p) {
  switch (p) {
    case HandPose::none: return "none";
    case HandPose::open: return "open";
    case HandPose::fist: return "fist";
    case HandPose::one: return "one";
    case HandPose::two: return "two";
    case HandPose::three: return "three";
  }
  return "none";
}

/// Which of thumb, index, middle, ring, little are extended.
inline std::array<bool, 5> extended_fingers(HandPose p) {
  switch (p) {
    case HandPose::open: return {true, true, true, true, true};
    case HandPose::one: return {false, true, false, false, false};
    case HandPose::two: return {false, true, true, false, false};
    case HandPose::three: return {false, true, true, true, false};
    case HandPose::fist:
    case HandPose::none: break;
  }
  return {false, false, false, false, false};
}

/// Hand in its own frame: x across the palm toward the index finger, y along
/// the fingers, z out of the back of the hand. Wrist at the origin.
inline handpose::HandLandmarks local_hand(HandPose pose) {
  const auto ext = extended_fingers(pose);
  handpose::HandLandmarks lm;
  lm.points[0] = Vec3::Zero();
  lm.points[1] = Vec3(0.25, 0.25, 0.0);
  lm.points[2] = Vec3(0.45, 0.40, 0.0);
  if (ext[0]) {
    lm.points[3] = Vec3(0.75, 0.50, 0.0);
    lm.points[4] = Vec3(1.15, 0.65, 0.0);
  } else {
    lm.points[3] = Vec3(0.55, 0.45, 0.0);
    lm.points[4] = Vec3(0.30, 0.55, -0.15);
  }
  const std::array<Vec3, 4> mcp = {Vec3(0.30, 0.90, 0.0), Vec3(0.10, 0.95, 0.0), Vec3(-0.10, 0.92, 0.0),
                                   Vec3(-0.28, 0.85, 0.0)};
  for (std::size_t f = 0; f < 4; ++f) {
    const std::size_t base = 5 + 4 * f;
    const Vec3& m = mcp[f];
    lm.points[base] = m;
    if (ext[f + 1]) {
      lm.points[base + 1] = m + Vec3(0.0, 0.35, 0.0);
      lm.points[base + 2] = m + Vec3(0.0, 0.60, 0.0);
      lm.points[base + 3] = m + Vec3(0.0, 0.80, 0.0);
    } else {
      lm.points[base + 1] = m + Vec3(0.0, 0.30, 0.0);
      lm.points[base + 2] = m + Vec3(0.0, 0.25, -0.20);
      lm.points[base + 3] = m + Vec3(0.0, 0.05, -0.20);
    }
  }
  return lm;
}

/// Places the local hand so that its palm normal is (cos φ, sin φ, 0).
inline handpose::HandLandmarks posed_hand(HandPose pose, double phi, double scale, const Point3& wrist) {
  Mat3 m;
  m.col(0) = Vec3(0.0, 0.0, -1.0);
  m.col(1) = Vec3(0.0, -1.0, 0.0);
  m.col(2) = Vec3(-1.0, 0.0, 0.0);
  const Mat3 r = geometry::rot_z(phi) * m;
  handpose::HandLandmarks lm = local_hand(pose);
  for (auto& p : lm.points) p = r * p * scale + wrist;
  return lm;
}

// ---------------------------------------------------------------------------
// Spec

struct MotionSegment {
  std::optional<Point3> to;  // absent: dwell
  double speed_mps = 0.0;
  std::int64_t dwell_ms = 0;
};

struct GestureStep {
  HandPose pose = HandPose::none;
  std::int64_t duration_ms = 0;
};

struct Teleport {
  std::int64_t at_ms = 0;
  Vec3 offset = Vec3::Zero();
};

struct SyntheticSpec {
  std::uint64_t seed = 1;
  Point3 start = Point3(0.55, 0.0, 0.15);
  std::vector<MotionSegment> segments;
  std::vector<GestureStep> gestures;
  double roll_deg = 0.0;
  double pixel_noise_px = 0.0;
  double depth_noise_mm = 0.0;
  double depth_dropout = 0.0;
  std::vector<Teleport> teleports;
  int marker_frames = 3;
  double hand_scale_m = 0.09;
  double frame_rate_hz = 30.0;
  /// Marker pose in the camera frame.
  geometry::RigidTransform marker_pose = default_marker_pose();
  PipelineConfig pipeline = default_pipeline();

  static geometry::RigidTransform default_marker_pose() {
    Mat3 r;
    r.col(0) = Vec3(0.0, 0.0, -1.0);
    r.col(1) = Vec3(1.0, 0.0, 0.0);
    r.col(2) = Vec3(0.0, -1.0, 0.0);
    return geometry::RigidTransform(r, Vec3(0.0, 0.0, 1.6));
  }

  static PipelineConfig default_pipeline() {
    PipelineConfig cfg;
    cfg.robot_from_marker = geometry::RigidTransform::from_translation(Vec3(0.55, 0.0, 0.1));
    return cfg;
  }
};

inline constexpr double kMaxSpeed_mps = 2.0;
inline constexpr double kMinDepth_m = 0.2;
inline constexpr double kMaxDepth_m = 6.0;
inline constexpr double kImageMargin_px = 2.0;

inline SyntheticSpec spec_from_json(const Json& j) {
  config::check_keys(j, {"seed", "start", "segments", "gestures", "roll_deg", "pixel_noise_px", "depth_noise_mm",
                         "depth_dropout", "teleports", "marker_frames", "hand_scale_m", "frame_rate_hz", "marker_pose",
                         "config"},
                     "", ErrorCode::InfeasibleSpec);
  const ErrorCode c = ErrorCode::InfeasibleSpec;
  SyntheticSpec s;
  if (j.contains("seed")) s.seed = static_cast<std::uint64_t>(config::integer(j["seed"], "seed", c));
  if (j.contains("start")) s.start = config::vec3(j["start"], "start", c);
  if (j.contains("segments")) {
    for (std::size_t i = 0; i < j["segments"].size(); ++i) {
      const Json& e = j["segments"][i];
      const std::string p = "segments[" + std::to_string(i) + "]";
      config::check_keys(e, {"to", "speed", "dwell_ms"}, p, c);
      MotionSegment m;
      if (e.contains("dwell_ms")) {
        if (e.contains("to")) throw Error(c, p + " has both dwell_ms and to");
        m.dwell_ms = config::integer(e["dwell_ms"], p + ".dwell_ms", c);
        if (m.dwell_ms <= 0) throw Error(c, p + ".dwell_ms must be positive");
      } else {
        m.to = config::vec3(config::field(e, "to", p, c), p + ".to", c);
        m.speed_mps = config::number(config::field(e, "speed", p, c), p + ".speed", c);
      }
      s.segments.push_back(m);
    }
  }
  if (j.contains("gestures")) {
    for (std::size_t i = 0; i < j["gestures"].size(); ++i) {
      const Json& e = j["gestures"][i];
      const std::string p = "gestures[" + std::to_string(i) + "]";
      config::check_keys(e, {"pose", "duration_ms"}, p, c);
      GestureStep g;
      g.pose = hand_pose_from_string(config::text(config::field(e, "pose", p, c), p + ".pose", c));
      g.duration_ms = config::integer(config::field(e, "duration_ms", p, c), p + ".duration_ms", c);
      if (g.duration_ms <= 0) throw Error(c, p + ".duration_ms must be positive");
      s.gestures.push_back(g);
    }
  }
  if (j.contains("roll_deg")) s.roll_deg = config::number(j["roll_deg"], "roll_deg", c);
  if (j.contains("pixel_noise_px")) s.pixel_noise_px = config::number(j["pixel_noise_px"], "pixel_noise_px", c);
  if (j.contains("depth_noise_mm")) s.depth_noise_mm = config::number(j["depth_noise_mm"], "depth_noise_mm", c);
  if (j.contains("depth_dropout")) s.depth_dropout = config::number(j["depth_dropout"], "depth_dropout", c);
  if (j.contains("teleports")) {
    for (std::size_t i = 0; i < j["teleports"].size(); ++i) {
      const Json& e = j["teleports"][i];
      const std::string p = "teleports[" + std::to_string(i) + "]";
      config::check_keys(e, {"at_ms", "offset"}, p, c);
      s.teleports.push_back({config::integer(config::field(e, "at_ms", p, c), p + ".at_ms", c),
                             config::vec3(config::field(e, "offset", p, c), p + ".offset", c)});
    }
  }
  if (j.contains("marker_frames")) s.marker_frames = static_cast<int>(config::integer(j["marker_frames"], "marker_frames", c));
  if (j.contains("hand_scale_m")) s.hand_scale_m = config::number(j["hand_scale_m"], "hand_scale_m", c);
  if (j.contains("frame_rate_hz")) s.frame_rate_hz = config::number(j["frame_rate_hz"], "frame_rate_hz", c);
  if (j.contains("marker_pose")) s.marker_pose = config::transform_from_json(j["marker_pose"], "marker_pose", c);
  if (j.contains("config")) {
    Json merged = config::to_json(SyntheticSpec::default_pipeline());
    for (const auto& item : j["config"].items()) merged[item.key()] = item.value();
    s.pipeline = config::pipeline_from_json(merged);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Generation

namespace detail {

/// Uniform and normal draws built only on mt19937_64, whose output sequence
/// is fixed by the standard; the std distributions are not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (spare_) {
      const double v = *spare_;
      spare_.reset();
      return v;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    return r * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

}  // namespace detail

/// Piecewise-linear wrist path in the robot frame.
class WristPath {
 public:
  explicit WristPath(const SyntheticSpec& spec) {
    Point3 p = spec.start;
    double t = 0.0;
    knots_.push_back({0.0, p, 0});
    for (std::size_t i = 0; i < spec.segments.size(); ++i) {
      const auto& seg = spec.segments[i];
      const std::string name = "segments[" + std::to_string(i) + "]";
      if (seg.to) {
        if (!(seg.speed_mps > 0.0)) throw Error(ErrorCode::InfeasibleSpec, name + ".speed must be positive");
        if (seg.speed_mps > kMaxSpeed_mps) {
          throw Error(ErrorCode::InfeasibleSpec, name + ".speed " + std::to_string(seg.speed_mps) +
                                                     " m/s exceeds " + std::to_string(kMaxSpeed_mps) + " m/s");
        }
        t += 1000.0 * (*seg.to - p).norm() / seg.speed_mps;
        p = *seg.to;
      } else {
        t += static_cast<double>(seg.dwell_ms);
      }
      knots_.push_back({t, p, static_cast<int>(i)});
    }
  }

  double duration_ms() const { return knots_.back().t_ms; }

  /// Position and segment index at time t (clamped to the path ends).
  std::pair<Point3, int> at(double t_ms) const {
    for (std::size_t i = 1; i < knots_.size(); ++i) {
      if (t_ms <= knots_[i].t_ms) {
        const auto& a = knots_[i - 1];
        const auto& b = knots_[i];
        const double span = b.t_ms - a.t_ms;
        const double s = span > 0.0 ? (t_ms - a.t_ms) / span : 1.0;
        return {a.p + std::clamp(s, 0.0, 1.0) * (b.p - a.p), b.segment};
      }
    }
    return {knots_.back().p, knots_.back().segment};
  }

 private:
  struct Knot {
    double t_ms;
    Point3 p;
    int segment;
  };
  std::vector<Knot> knots_;
};

inline HandPose pose_at(const std::vector<GestureStep>& steps, std::int64_t t_ms) {
  std::int64_t end = 0;
  for (const auto& g : steps) {
    end += g.duration_ms;
    if (t_ms < end) return g.pose;
  }
  return steps.empty() ? HandPose::none : steps.back().pose;
}

/// Renders the spec at the frame rate. Every noise-free wrist projection must
/// stay inside the image and the depth range, otherwise InfeasibleSpec names
/// the offending segment.
inline session::SessionRecord generate_synthetic(const SyntheticSpec& spec) {
  const ErrorCode c = ErrorCode::InfeasibleSpec;
  if (spec.pixel_noise_px < 0.0) throw Error(c, "pixel_noise_px must be >= 0");
  if (spec.depth_noise_mm < 0.0) throw Error(c, "depth_noise_mm must be >= 0");
  if (spec.depth_dropout < 0.0 || spec.depth_dropout >= 1.0) throw Error(c, "depth_dropout must be in [0, 1)");
  if (!(spec.frame_rate_hz > 0.0 && spec.frame_rate_hz <= 1000.0)) throw Error(c, "frame_rate_hz must be in (0, 1000]");
  if (!(spec.hand_scale_m > 0.0)) throw Error(c, "hand_scale_m must be positive");
  if (spec.marker_frames < 0) throw Error(c, "marker_frames must be >= 0");

  const WristPath path(spec);
  const PipelineConfig& cfg = spec.pipeline;
  const geometry::CameraIntrinsics& k = cfg.camera;
  const geometry::RigidTransform marker_from_robot = geometry::invert(cfg.robot_from_marker);
  const geometry::RigidTransform camera_from_robot = geometry::compose(spec.marker_pose, marker_from_robot);
  const double phi = spec.roll_deg * M_PI / 180.0;
  const int side = cfg.filter.depth_window;

  session::SessionRecord rec;
  rec.config = cfg;
  detail::Rng rng(spec.seed);

  std::int64_t gesture_total = 0;
  for (const auto& g : spec.gestures) gesture_total += g.duration_ms;
  const double duration = std::max(path.duration_ms(), static_cast<double>(gesture_total));

  for (std::int64_t n = 0;; ++n) {
    const auto t_ms = static_cast<std::int64_t>(std::llround(static_cast<double>(n) * 1000.0 / spec.frame_rate_hz));
    if (static_cast<double>(t_ms) > duration) break;
    auto [truth, segment] = path.at(static_cast<double>(t_ms));
    for (const auto& tp : spec.teleports) {
      if (t_ms >= tp.at_ms) truth += tp.offset;
    }
    const Point3 cam = camera_from_robot * truth;
    const std::string where = "segments[" + std::to_string(segment) + "] at t=" + std::to_string(t_ms) + " ms";
    if (!(cam.z() >= kMinDepth_m && cam.z() <= kMaxDepth_m)) {
      throw Error(c, where + ": wrist depth " + std::to_string(cam.z()) + " m is outside [0.2, 6] m");
    }
    const auto proj = geometry::project(cam, k);
    if (proj.u < kImageMargin_px || proj.u > k.width - kImageMargin_px || proj.v < kImageMargin_px ||
        proj.v > k.height - kImageMargin_px) {
      throw Error(c, where + ": wrist leaves the image (u=" + std::to_string(proj.u) +
                         ", v=" + std::to_string(proj.v) + ")");
    }

    LandmarkFrame f;
    f.t_ms = t_ms;
    WristObservation obs;
    obs.pixel.u = proj.u + spec.pixel_noise_px * rng.normal();
    obs.pixel.v = proj.v + spec.pixel_noise_px * rng.normal();
    obs.pixel.u = std::clamp(obs.pixel.u, 0.0, static_cast<double>(k.width) - 1e-9);
    obs.pixel.v = std::clamp(obs.pixel.v, 0.0, static_cast<double>(k.height) - 1e-9);
    obs.depth_window.resize(static_cast<std::size_t>(side * side));
    for (auto& d : obs.depth_window) {
      const double mm = cam.z() * 1000.0 + spec.depth_noise_mm * rng.normal();
      const bool dropped = spec.depth_dropout > 0.0 && rng.uniform() < spec.depth_dropout;
      d = dropped ? 0 : static_cast<int>(std::lround(mm));
    }
    obs.pixel.depth_mm = obs.depth_window[obs.depth_window.size() / 2];
    f.wrist = std::move(obs);

    const HandPose pose = pose_at(spec.gestures, t_ms);
    if (pose != HandPose::none) f.hand = posed_hand(pose, phi, spec.hand_scale_m, cam);
    if (n < spec.marker_frames) f.marker = MarkerDetection{spec.marker_pose.rotation(), spec.marker_pose.translation()};

    rec.frames.push_back(std::move(f));
    rec.truth.push_back({t_ms, truth, segment});
  }
  return rec;
}

}  // namespace teleop::synthetic
