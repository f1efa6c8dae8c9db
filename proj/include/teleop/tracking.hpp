#pragma once

// Wrist tracking: median depth, back-projection, EMA smoothing with jump
// rejection, and the camera→marker transform.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "teleop/error.hpp"
#include "teleop/frame.hpp"
#include "teleop/geometry.hpp"

namespace teleop::tracking {

using geometry::CameraIntrinsics;
using geometry::Mat3;
using geometry::Point3;
using geometry::RigidTransform;
using geometry::Vec3;

struct FilterConfig {
  double ema_alpha = 0.5;
  double jump_threshold_m = 0.25;
  int depth_window = 5;
  int max_consecutive_rejects = 15;

  void validate() const {
    if (!(ema_alpha > 0.0 && ema_alpha <= 1.0)) throw Error(ErrorCode::InvalidConfig, "ema_alpha must be in (0, 1]");
    if (!(jump_threshold_m > 0.0)) throw Error(ErrorCode::InvalidConfig, "jump_threshold_m must be positive");
    if (depth_window < 1 || depth_window % 2 == 0) {
      throw Error(ErrorCode::InvalidConfig, "depth_window must be odd and >= 1");
    }
    if (max_consecutive_rejects < 0) throw Error(ErrorCode::InvalidConfig, "max_consecutive_rejects must be >= 0");
  }
};

struct CalibrationState {
  RigidTransform marker_from_camera;
  RigidTransform robot_from_marker;
  bool locked = false;
};

struct CalibrationOutcome {
  CalibrationState state;
  bool already_locked = false;
};

/// Locks marker_from_camera on the first marker detection. Later calls leave
/// the state untouched and report already_locked.
inline CalibrationOutcome calibrate_once(const Mat3& marker_rotation, const Vec3& marker_translation,
                                         const CalibrationState& state) {
  if (state.locked) return {state, true};
  CalibrationState next = state;
  next.marker_from_camera = geometry::invert_pose(marker_rotation, marker_translation);
  next.locked = true;
  return {next, false};
}

/// Median of the non-zero readings; lower median for even counts. Returns 0
/// when every reading is invalid.
inline int median_depth(std::span<const int> window) {
  std::vector<int> valid;
  valid.reserve(window.size());
  for (int d : window) {
    if (d > 0) valid.push_back(d);
  }
  if (valid.empty()) return 0;
  const auto mid = valid.begin() + static_cast<std::ptrdiff_t>((valid.size() - 1) / 2);
  std::nth_element(valid.begin(), mid, valid.end());
  return *mid;
}

struct TrackedWrist {
  Point3 position_marker = Point3::Zero();
  double velocity_mps = 0.0;
  std::int64_t timestamp_ms = 0;
  /// False when this sample repeats the last accepted position.
  bool fresh = false;
};

/// Output of the smoothing stage, expressed in whatever frame the raw
/// samples are in.
struct FilterSample {
  Point3 position = Point3::Zero();
  double velocity_mps = 0.0;
  std::int64_t timestamp_ms = 0;
  bool fresh = false;
};

/// EMA smoother with jump rejection. The jump test compares each raw sample
/// with the last accepted (filtered) position.
class WristFilter {
 public:
  explicit WristFilter(FilterConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  FilterSample step(const Point3& raw, std::int64_t t_ms) {
    if (!raw.allFinite()) throw Error(ErrorCode::InvalidDepth, "raw sample is not finite");
    if (last_ && t_ms <= last_->timestamp_ms) {
      throw Error(ErrorCode::NonMonotonicTimestamp,
                  std::to_string(t_ms) + " <= " + std::to_string(last_->timestamp_ms));
    }
    if (!last_) return seed(raw, t_ms);

    const double jump = (raw - last_->position).norm();
    if (jump > cfg_.jump_threshold_m) {
      ++rejects_;
      if (rejects_ > cfg_.max_consecutive_rejects) return seed(raw, t_ms);
      return hold(t_ms);
    }

    rejects_ = 0;
    const double a = cfg_.ema_alpha;
    const Point3 position = a * raw + (1.0 - a) * last_->position;
    const double dt = static_cast<double>(t_ms - last_accepted_ms_) / 1000.0;
    const double instant = (position - last_->position).norm() / dt;
    FilterSample out;
    out.position = position;
    out.velocity_mps = a * instant + (1.0 - a) * last_->velocity_mps;
    out.timestamp_ms = t_ms;
    out.fresh = true;
    last_ = out;
    last_accepted_ms_ = t_ms;
    return out;
  }

  /// Repeats the last accepted position without consuming a sample (used when
  /// depth is missing). Requires a previous sample.
  FilterSample hold(std::int64_t t_ms) {
    if (!last_) throw Error(ErrorCode::NoTrack, "no accepted sample to hold");
    if (t_ms <= last_->timestamp_ms) {
      throw Error(ErrorCode::NonMonotonicTimestamp,
                  std::to_string(t_ms) + " <= " + std::to_string(last_->timestamp_ms));
    }
    FilterSample out = *last_;
    out.timestamp_ms = t_ms;
    out.fresh = false;
    last_ = out;
    return out;
  }

  const std::optional<FilterSample>& last() const { return last_; }
  int consecutive_rejects() const { return rejects_; }
  const FilterConfig& config() const { return cfg_; }

  void reset() {
    last_.reset();
    rejects_ = 0;
  }

 private:
  FilterSample seed(const Point3& raw, std::int64_t t_ms) {
    FilterSample out;
    out.position = raw;
    out.velocity_mps = 0.0;
    out.timestamp_ms = t_ms;
    out.fresh = true;
    last_ = out;
    last_accepted_ms_ = t_ms;
    rejects_ = 0;
    return out;
  }

  FilterConfig cfg_;
  std::optional<FilterSample> last_;
  std::int64_t last_accepted_ms_ = 0;
  int rejects_ = 0;
};

/// Per-operator wrist tracker. Filtering happens in the camera frame; the
/// result is mapped into the marker frame.
class WristTracker {
 public:
  WristTracker(CameraIntrinsics camera, FilterConfig cfg) : camera_(camera), filter_(cfg) { camera_.validate(); }

  TrackedWrist track(const WristObservation& wrist, std::int64_t t_ms, const CalibrationState& calib) {
    if (!calib.locked) throw Error(ErrorCode::NotCalibrated, "marker calibration has not been locked");
    const int depth = observed_depth(wrist);
    FilterSample sample;
    if (depth <= 0) {
      if (!filter_.last()) throw Error(ErrorCode::NoTrack, "no valid depth and no previous wrist sample");
      sample = filter_.hold(t_ms);
    } else {
      geometry::PixelDepthPoint p = wrist.pixel;
      p.depth_mm = depth;
      sample = filter_.step(geometry::back_project(p, camera_), t_ms);
    }
    TrackedWrist out;
    out.position_marker = calib.marker_from_camera * sample.position;
    out.velocity_mps = sample.velocity_mps;
    out.timestamp_ms = sample.timestamp_ms;
    out.fresh = sample.fresh;
    return out;
  }

  TrackedWrist track(const LandmarkFrame& frame, const CalibrationState& calib) {
    if (!frame.wrist) throw Error(ErrorCode::NoTrack, "frame carries no wrist observation");
    return track(*frame.wrist, frame.t_ms, calib);
  }

  int observed_depth(const WristObservation& wrist) const {
    if (wrist.depth_window.empty()) return wrist.pixel.depth_mm;
    const auto side = static_cast<std::size_t>(filter_.config().depth_window);
    if (wrist.depth_window.size() != side * side) {
      throw Error(ErrorCode::MalformedMessage, "depth window has " + std::to_string(wrist.depth_window.size()) +
                                                   " values, expected " + std::to_string(side * side));
    }
    return median_depth(wrist.depth_window);
  }

  const WristFilter& filter() const { return filter_; }
  const CameraIntrinsics& camera() const { return camera_; }
  void reset() { filter_.reset(); }

 private:
  CameraIntrinsics camera_;
  WristFilter filter_;
};

}  // namespace teleop::tracking
