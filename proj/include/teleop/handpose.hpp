#pragma once

// Palm orientation and finger-count gestures from 21-point hand landmarks.
//
// Landmark indexing follows the common 21-point hand model:
//   0 wrist
//   1-4   thumb  (CMC, MCP, IP, tip)
//   5-8   index  (MCP, PIP, DIP, tip)
//   9-12  middle (MCP, PIP, DIP, tip)
//   13-16 ring   (MCP, PIP, DIP, tip)
//   17-20 little (MCP, PIP, DIP, tip)

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <string_view>

#include "teleop/error.hpp"
#include "teleop/geometry.hpp"

namespace teleop::handpose {

using geometry::RollQuaternion;
using geometry::Vec3;

namespace landmark {
inline constexpr int kWrist = 0;
inline constexpr int kThumbIp = 3;
inline constexpr int kThumbTip = 4;
inline constexpr int kIndexMcp = 5;
inline constexpr int kLittleMcp = 17;
/// PIP and tip indices for index, middle, ring and little fingers.
inline constexpr std::array<int, 4> kPip = {6, 10, 14, 18};
inline constexpr std::array<int, 4> kTip = {8, 12, 16, 20};
}  // namespace landmark

inline constexpr int kLandmarkCount = 21;

struct HandLandmarks {
  std::array<Vec3, kLandmarkCount> points{};

  const Vec3& operator[](int i) const { return points[static_cast<std::size_t>(i)]; }
  Vec3& operator[](int i) { return points[static_cast<std::size_t>(i)]; }

  bool all_finite() const {
    for (const auto& p : points) {
      if (!p.allFinite()) return false;
    }
    return true;
  }

  bool operator==(const HandLandmarks&) const = default;
};

struct PalmFrame {
  Vec3 normal = Vec3::UnitX();
  double phi = 0.0;
};

enum class GestureLabel { neutral, open_palm, closed_fist };

constexpr std::string_view to_string(GestureLabel label) {
  switch (label) {
    case GestureLabel::open_palm: return "open_palm";
    case GestureLabel::closed_fist: return "closed_fist";
    case GestureLabel::neutral: return "neutral";
  }
  return "neutral";
}

struct GestureSignal {
  GestureLabel label = GestureLabel::neutral;
  int finger_count = 0;
  bool stable = false;

  bool operator==(const GestureSignal&) const = default;
};

/// Moves the wrist to the origin and scales so that |p17| = 1.
inline HandLandmarks normalize_hand(const HandLandmarks& lm) {
  if (!lm.all_finite()) throw Error(ErrorCode::DegenerateHand, "landmarks contain non-finite values");
  const Vec3 origin = lm[landmark::kWrist];
  const double scale = (lm[landmark::kLittleMcp] - origin).norm();
  if (!(scale > 1e-6)) throw Error(ErrorCode::DegenerateHand, "wrist and little-finger MCP coincide");
  HandLandmarks out;
  for (int i = 0; i < kLandmarkCount; ++i) out[i] = (lm[i] - origin) / scale;
  return out;
}

inline PalmFrame palm_normal(const HandLandmarks& lm) {
  const Vec3& p0 = lm[landmark::kWrist];
  const Vec3& p5 = lm[landmark::kIndexMcp];
  const Vec3& p17 = lm[landmark::kLittleMcp];
  const Vec3 cross = (p17 - p0).cross(p5 - p17);
  const double norm = cross.norm();
  if (!(norm >= 1e-9)) throw Error(ErrorCode::DegeneratePalm, "wrist, index MCP and little MCP are collinear");
  PalmFrame frame;
  frame.normal = cross / norm;
  frame.phi = std::atan2(frame.normal.y(), frame.normal.x());
  return frame;
}

/// The sign of qw is passed through: for phi near ±π the two halves of the
/// double cover meet, and consumers treat q and −q as the same rotation.
inline RollQuaternion roll_quaternion(const PalmFrame& frame) { return RollQuaternion::from_palm_angle(frame.phi); }

inline constexpr double kFingerMargin = 0.15;

/// Expects normalized landmarks. A finger is raised when its tip is farther
/// from the wrist than its PIP joint by kFingerMargin; the thumb compares tip
/// and IP distances from the little-finger MCP.
inline int count_fingers(const HandLandmarks& lm) {
  const Vec3& wrist = lm[landmark::kWrist];
  int count = 0;
  for (std::size_t f = 0; f < landmark::kPip.size(); ++f) {
    const double tip = (lm[landmark::kTip[f]] - wrist).norm();
    const double pip = (lm[landmark::kPip[f]] - wrist).norm();
    if (tip - pip > kFingerMargin) ++count;
  }
  const Vec3& anchor = lm[landmark::kLittleMcp];
  const double thumb_tip = (lm[landmark::kThumbTip] - anchor).norm();
  const double thumb_ip = (lm[landmark::kThumbIp] - anchor).norm();
  if (thumb_tip - thumb_ip > kFingerMargin) ++count;
  return count;
}

inline GestureLabel label_for_count(int finger_count) {
  if (finger_count >= 4) return GestureLabel::open_palm;
  if (finger_count == 0) return GestureLabel::closed_fist;
  return GestureLabel::neutral;
}

inline constexpr std::size_t kDebounceFrames = 5;

/// Debounced gesture classification. One instance per operator stream.
class GestureClassifier {
 public:
  explicit GestureClassifier(std::size_t window = kDebounceFrames) : window_(window) {}

  /// Landmarks may be raw; they are normalized internally.
  GestureSignal classify(const HandLandmarks& lm) { return push(count_fingers(normalize_hand(lm))); }

  GestureSignal push(int finger_count) {
    const GestureLabel label = label_for_count(finger_count);
    history_.push_back(label);
    while (history_.size() > window_) history_.pop_front();
    GestureSignal s;
    s.label = label;
    s.finger_count = finger_count;
    s.stable = history_.size() == window_;
    for (GestureLabel h : history_) s.stable = s.stable && h == label;
    return s;
  }

  void reset() { history_.clear(); }

 private:
  std::size_t window_;
  std::deque<GestureLabel> history_;
};

/// Freezes the pre-grasp orientation for a short time once a closed fist
/// becomes stable.
class OrientationHold {
 public:
  explicit OrientationHold(std::int64_t hold_ms = 500) : hold_ms_(hold_ms) {}

  RollQuaternion update(std::int64_t t_ms, const RollQuaternion& measured, const GestureSignal& signal) {
    const bool fist = signal.label == GestureLabel::closed_fist;
    const bool stable_fist = fist && signal.stable;
    if (stable_fist && !was_stable_fist_) {
      frozen_ = last_open_;
      until_ms_ = t_ms + hold_ms_;
    }
    was_stable_fist_ = stable_fist;
    if (!fist) last_open_ = measured;
    if (frozen_ && t_ms < until_ms_) return *frozen_;
    frozen_.reset();
    return measured;
  }

  bool holding(std::int64_t t_ms) const { return frozen_.has_value() && t_ms < until_ms_; }

  void reset() {
    frozen_.reset();
    last_open_ = RollQuaternion{};
    was_stable_fist_ = false;
  }

 private:
  std::int64_t hold_ms_;
  std::int64_t until_ms_ = 0;
  std::optional<RollQuaternion> frozen_;
  RollQuaternion last_open_;
  bool was_stable_fist_ = false;
};

}  // namespace teleop::handpose
