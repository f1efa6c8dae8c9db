#pragma once

// Shared-control state machine: finger-count mode selection, 5 Hz pose
// streaming, edge-triggered gesture actions and the grasp lifecycle.

#include <cstdint>
#include <optional>
#include <string_view>

#include "teleop/command.hpp"
#include "teleop/error.hpp"
#include "teleop/handpose.hpp"
#include "teleop/tracking.hpp"

namespace teleop::control {

using handpose::GestureLabel;
using handpose::GestureSignal;

enum class ControlMode { idle, manual, semi_autonomous };

/// Sub-state of semi-autonomous mode.
enum class GraspPhase { armed, executing, holding };

enum class GraspEvent { grasp_started, grasp_succeeded, grasp_failed, released, aborted };

constexpr std::string_view to_string(ControlMode m) {
  switch (m) {
    case ControlMode::idle: return "idle";
    case ControlMode::manual: return "manual";
    case ControlMode::semi_autonomous: return "semi_autonomous";
  }
  return "idle";
}

constexpr std::string_view to_string(GraspPhase p) {
  switch (p) {
    case GraspPhase::armed: return "armed";
    case GraspPhase::executing: return "executing";
    case GraspPhase::holding: return "holding";
  }
  return "armed";
}

constexpr std::string_view to_string(GraspEvent e) {
  switch (e) {
    case GraspEvent::grasp_started: return "grasp_started";
    case GraspEvent::grasp_succeeded: return "grasp_succeeded";
    case GraspEvent::grasp_failed: return "grasp_failed";
    case GraspEvent::released: return "released";
    case GraspEvent::aborted: return "aborted";
  }
  return "aborted";
}

/// A stable gesture that differs from the last one acted upon.
enum class GestureEdge { none, neutral, open_palm, closed_fist };

inline constexpr std::int64_t kModeSelectHoldMs = 1000;

inline ControlMode mode_select(const GestureSignal& signal, std::int64_t held_ms, ControlMode mode) {
  if (mode != ControlMode::idle) return mode;
  if (!signal.stable || held_ms < kModeSelectHoldMs) return ControlMode::idle;
  if (signal.finger_count == 1) return ControlMode::manual;
  if (signal.finger_count == 2) return ControlMode::semi_autonomous;
  return ControlMode::idle;
}

inline TargetPose map_target(const tracking::TrackedWrist& wrist, const geometry::RollQuaternion& q,
                             const tracking::CalibrationState& calib) {
  if (!wrist.fresh) throw Error(ErrorCode::StaleInput, "wrist sample is not fresh");
  if (!calib.locked) throw Error(ErrorCode::NotCalibrated, "marker calibration has not been locked");
  return {calib.robot_from_marker * wrist.position_marker, q};
}

inline GraspPhase grasp_lifecycle(GraspEvent event, GraspPhase phase) {
  switch (event) {
    case GraspEvent::grasp_started:
      if (phase == GraspPhase::armed) return GraspPhase::executing;
      break;
    case GraspEvent::grasp_succeeded:
      if (phase == GraspPhase::executing) return GraspPhase::holding;
      break;
    case GraspEvent::grasp_failed:
    case GraspEvent::aborted:
      if (phase == GraspPhase::executing) return GraspPhase::armed;
      break;
    case GraspEvent::released:
      if (phase == GraspPhase::holding) return GraspPhase::armed;
      break;
  }
  throw Error(ErrorCode::InvalidEvent,
              std::string(to_string(event)) + " is not valid in phase " + std::string(to_string(phase)));
}

/// The command table. nullopt means nothing is sent this tick. A gripper or
/// grasp action replaces the pose command for the tick it fires on.
inline std::optional<CommandKind> decide(ControlMode mode, GraspPhase phase, GestureEdge edge, bool fresh) {
  const CommandKind stream = fresh ? CommandKind::move_ee : CommandKind::hold;
  switch (mode) {
    case ControlMode::idle:
      return std::nullopt;
    case ControlMode::manual:
      if (edge == GestureEdge::open_palm) return CommandKind::gripper_open;
      if (edge == GestureEdge::closed_fist) return CommandKind::gripper_close;
      return stream;
    case ControlMode::semi_autonomous:
      switch (phase) {
        case GraspPhase::armed:
          if (edge == GestureEdge::closed_fist) return CommandKind::grasp_object;
          return stream;
        case GraspPhase::executing:
          // A stable neutral hand is the operator intervening.
          if (edge == GestureEdge::neutral) return CommandKind::hold;
          return std::nullopt;
        case GraspPhase::holding:
          if (edge == GestureEdge::open_palm) return CommandKind::release_object;
          return stream;
      }
  }
  return std::nullopt;
}

/// Single serialized owner of mode and grasp phase.
class Controller {
 public:
  ControlMode mode() const { return mode_; }
  GraspPhase phase() const { return phase_; }

  /// Feed every classified hand frame; drives mode selection.
  void observe_gesture(std::int64_t t_ms, const GestureSignal& signal) {
    latest_ = signal;
    if (mode_ != ControlMode::idle) return;
    if (!signal.stable) {
      streak_count_.reset();
      return;
    }
    if (!streak_count_ || *streak_count_ != signal.finger_count) {
      streak_count_ = signal.finger_count;
      streak_start_ms_ = t_ms;
    }
    const ControlMode next = mode_select(signal, t_ms - streak_start_ms_, mode_);
    if (next != mode_) {
      mode_ = next;
      phase_ = GraspPhase::armed;
      acted_label_ = signal.label;
    }
  }

  /// Called at the command rate. latest_target must only be set from a
  /// fresh tracked wrist; nullopt forces hold.
  std::optional<RobotCommand> tick(std::int64_t now_ms, const std::optional<TargetPose>& latest_target,
                                   const GestureSignal& gesture) {
    GestureEdge edge = GestureEdge::none;
    if (gesture.stable && gesture.label != acted_label_) {
      acted_label_ = gesture.label;
      edge = edge_for(gesture.label);
    }
    const auto kind = decide(mode_, phase_, edge, latest_target.has_value());
    if (!kind) return std::nullopt;
    if (*kind == CommandKind::move_ee) return RobotCommand::move(*latest_target, now_ms);
    if (*kind == CommandKind::grasp_object) return RobotCommand::grasp("", now_ms);
    return RobotCommand::simple(*kind, now_ms);
  }

  std::optional<RobotCommand> tick(std::int64_t now_ms, const std::optional<TargetPose>& latest_target) {
    return tick(now_ms, latest_target, latest_);
  }

  void on_grasp_event(GraspEvent event) {
    if (mode_ != ControlMode::semi_autonomous) {
      throw Error(ErrorCode::InvalidEvent, "grasp events require semi-autonomous mode");
    }
    phase_ = grasp_lifecycle(event, phase_);
  }

  /// Explicit exit from any mode. Estop uses the same transition.
  void reset() {
    mode_ = ControlMode::idle;
    phase_ = GraspPhase::armed;
    streak_count_.reset();
    acted_label_ = latest_.label;
  }

 private:
  static GestureEdge edge_for(GestureLabel label) {
    switch (label) {
      case GestureLabel::open_palm: return GestureEdge::open_palm;
      case GestureLabel::closed_fist: return GestureEdge::closed_fist;
      case GestureLabel::neutral: return GestureEdge::neutral;
    }
    return GestureEdge::none;
  }

  ControlMode mode_ = ControlMode::idle;
  GraspPhase phase_ = GraspPhase::armed;
  GestureSignal latest_;
  GestureLabel acted_label_ = GestureLabel::neutral;
  std::optional<int> streak_count_;
  std::int64_t streak_start_ms_ = 0;
};

}  // namespace teleop::control
