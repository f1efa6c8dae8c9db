#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "teleop/geometry.hpp"

namespace teleop::control {

struct TargetPose {
  geometry::Point3 position_robot = geometry::Point3::Zero();
  geometry::RollQuaternion orientation;

  bool operator==(const TargetPose&) const = default;
};

enum class CommandKind { move_ee, gripper_open, gripper_close, grasp_object, release_object, hold };

constexpr std::string_view to_string(CommandKind kind) {
  switch (kind) {
    case CommandKind::move_ee: return "move_ee";
    case CommandKind::gripper_open: return "gripper_open";
    case CommandKind::gripper_close: return "gripper_close";
    case CommandKind::grasp_object: return "grasp_object";
    case CommandKind::release_object: return "release_object";
    case CommandKind::hold: return "hold";
  }
  return "hold";
}

/// target is set only for move_ee, object_id only for grasp_object.
struct RobotCommand {
  CommandKind kind = CommandKind::hold;
  std::optional<TargetPose> target;
  std::optional<std::string> object_id;
  std::int64_t issued_at_ms = 0;

  static RobotCommand move(const TargetPose& pose, std::int64_t t_ms) {
    return {CommandKind::move_ee, pose, std::nullopt, t_ms};
  }
  static RobotCommand grasp(std::string id, std::int64_t t_ms) {
    return {CommandKind::grasp_object, std::nullopt, std::move(id), t_ms};
  }
  static RobotCommand simple(CommandKind kind, std::int64_t t_ms) { return {kind, std::nullopt, std::nullopt, t_ms}; }

  bool well_formed() const {
    return target.has_value() == (kind == CommandKind::move_ee) &&
           object_id.has_value() == (kind == CommandKind::grasp_object);
  }

  bool operator==(const RobotCommand&) const = default;
};

}  // namespace teleop::control
