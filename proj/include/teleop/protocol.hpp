#pragma once

// Gateway wire messages. Every message is one JSON text object carrying the
// protocol version "v" and a "type" tag.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "teleop/config.hpp"
#include "teleop/error.hpp"
#include "teleop/frame.hpp"
#include "teleop/pipeline.hpp"
#include "teleop/session.hpp"

namespace teleop::protocol {

using config::Json;
using geometry::Vec3;

inline constexpr int kProtocolVersion = 1;

enum class Role { operator_, observer };

inline std::string_view to_string(Role r) { return r == Role::operator_ ? "operator" : "observer"; }

inline Role role_from_string(const std::string& s) {
  if (s == "operator") return Role::operator_;
  if (s == "observer") return Role::observer;
  throw Error(ErrorCode::MalformedMessage, "unknown role '" + s + "'");
}

// ---------------------------------------------------------------------------
// State broadcast

struct WristView {
  Vec3 marker = Vec3::Zero();
  Vec3 robot = Vec3::Zero();
  bool fresh = false;
  double velocity_mps = 0.0;

  bool operator==(const WristView&) const = default;
};

struct ArmView {
  std::array<double, 6> q{};
  Vec3 ee_position = Vec3::Zero();
  /// (x, y, z, w)
  std::array<double, 4> ee_quaternion{0.0, 0.0, 0.0, 1.0};
  std::string gripper = "open";
  std::string held_object;
  std::string safety = "ok";

  bool operator==(const ArmView&) const = default;
};

struct ObjectView {
  std::string id;
  std::string class_label;
  Vec3 position = Vec3::Zero();
  double confidence = 0.0;
  bool graspable = false;

  bool operator==(const ObjectView&) const = default;
};

struct CommandView {
  std::string kind;
  std::int64_t issued_at_ms = 0;
  std::optional<Vec3> target_position;
  /// Roll quaternion (qx, qw); qy = qz = 0.
  std::optional<std::array<double, 2>> target_roll;
  std::optional<std::string> object_id;

  bool operator==(const CommandView&) const = default;
};

struct StateBroadcast {
  std::int64_t t_ms = 0;
  std::string mode = "idle";
  std::string phase = "armed";
  std::string gesture = "neutral";
  int finger_count = 0;
  bool gesture_stable = false;
  std::optional<WristView> wrist;
  ArmView arm;
  std::vector<ObjectView> objects;
  std::optional<CommandView> last_command;

  bool operator==(const StateBroadcast&) const = default;
};

inline StateBroadcast snapshot(const Pipeline& p) {
  StateBroadcast s;
  s.t_ms = p.now_ms();
  s.mode = control::to_string(p.controller().mode());
  s.phase = control::to_string(p.controller().phase());
  s.gesture = handpose::to_string(p.gesture().label);
  s.finger_count = p.gesture().finger_count;
  s.gesture_stable = p.gesture().stable;
  if (p.wrist()) {
    const auto& w = *p.wrist();
    s.wrist = WristView{w.position_marker, p.calibration().robot_from_marker * w.position_marker, w.fresh,
                        w.velocity_mps};
  }
  const auto& arm = p.simulator().state();
  for (int i = 0; i < simarm::kJointCount; ++i) s.arm.q[static_cast<std::size_t>(i)] = arm.q[i];
  s.arm.ee_position = arm.ee.position;
  const auto q = arm.ee.quaternion();
  s.arm.ee_quaternion = {q.x(), q.y(), q.z(), q.w()};
  s.arm.gripper = simarm::to_string(arm.gripper.kind);
  s.arm.held_object = arm.gripper.object_id;
  s.arm.safety = simarm::to_string(arm.safety);
  for (const auto& o : p.simulator().scene().objects) {
    s.objects.push_back({o.id, o.class_label, o.position, o.confidence, o.graspable});
  }
  if (const auto& c = p.last_command()) {
    CommandView v;
    v.kind = control::to_string(c->kind);
    v.issued_at_ms = c->issued_at_ms;
    if (c->target) {
      v.target_position = c->target->position_robot;
      v.target_roll = std::array<double, 2>{c->target->orientation.qx(), c->target->orientation.qw()};
    }
    v.object_id = c->object_id;
    s.last_command = v;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Messages

struct Hello {
  Role role = Role::observer;
  bool operator==(const Hello&) const = default;
};

struct FrameMessage {
  LandmarkFrame frame;
  bool operator==(const FrameMessage&) const = default;
};

struct Reset {
  bool operator==(const Reset&) const = default;
};

struct Estop {
  bool operator==(const Estop&) const = default;
};

struct Welcome {
  Role role = Role::observer;
  double command_rate_hz = 5.0;
  /// Set when the requested role could not be granted.
  std::string note;
  bool operator==(const Welcome&) const = default;
};

struct ErrorReply {
  std::string code;
  std::string message;
  bool operator==(const ErrorReply&) const = default;
};

struct State {
  StateBroadcast state;
  bool operator==(const State&) const = default;
};

using Message = std::variant<Hello, FrameMessage, Reset, Estop, Welcome, ErrorReply, State>;

namespace detail {

constexpr ErrorCode kBad = ErrorCode::MalformedMessage;

inline Json vec(const Vec3& v) { return config::to_json(v); }

inline Json state_to_json(const StateBroadcast& s) {
  Json wrist = nullptr;
  if (s.wrist) {
    wrist = {{"marker", vec(s.wrist->marker)},
             {"robot", vec(s.wrist->robot)},
             {"fresh", s.wrist->fresh},
             {"velocity_mps", s.wrist->velocity_mps}};
  }
  Json objects = Json::array();
  for (const auto& o : s.objects) {
    objects.push_back({{"id", o.id},
                       {"class", o.class_label},
                       {"position", vec(o.position)},
                       {"confidence", o.confidence},
                       {"graspable", o.graspable}});
  }
  Json command = nullptr;
  if (s.last_command) {
    const auto& c = *s.last_command;
    command = {{"kind", c.kind}, {"issued_at_ms", c.issued_at_ms}};
    if (c.target_position) command["target_position"] = vec(*c.target_position);
    if (c.target_roll) command["target_roll"] = *c.target_roll;
    if (c.object_id) command["object_id"] = *c.object_id;
  }
  return {{"t_ms", s.t_ms},
          {"mode", s.mode},
          {"phase", s.phase},
          {"gesture", {{"label", s.gesture}, {"finger_count", s.finger_count}, {"stable", s.gesture_stable}}},
          {"wrist", wrist},
          {"arm",
           {{"q", s.arm.q},
            {"ee_position", vec(s.arm.ee_position)},
            {"ee_quaternion", s.arm.ee_quaternion},
            {"gripper", s.arm.gripper},
            {"held_object", s.arm.held_object},
            {"safety", s.arm.safety}}},
          {"objects", objects},
          {"last_command", command}};
}

template <std::size_t N>
std::array<double, N> fixed(const Json& j, const std::string& path) {
  const auto v = config::numbers(j, N, path, kBad);
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = v[i];
  return out;
}

inline bool boolean(const Json& j, const std::string& path) {
  if (!j.is_boolean()) throw Error(kBad, path + " must be a boolean");
  return j.get<bool>();
}

inline StateBroadcast state_from_json(const Json& j) {
  using config::field;
  config::check_keys(j, {"t_ms", "mode", "phase", "gesture", "wrist", "arm", "objects", "last_command"}, "state", kBad);
  StateBroadcast s;
  s.t_ms = config::integer(field(j, "t_ms", "state", kBad), "state.t_ms", kBad);
  s.mode = config::text(field(j, "mode", "state", kBad), "state.mode", kBad);
  s.phase = config::text(field(j, "phase", "state", kBad), "state.phase", kBad);
  const Json& g = field(j, "gesture", "state", kBad);
  config::check_keys(g, {"label", "finger_count", "stable"}, "state.gesture", kBad);
  s.gesture = config::text(field(g, "label", "state.gesture", kBad), "state.gesture.label", kBad);
  s.finger_count = static_cast<int>(
      config::integer(field(g, "finger_count", "state.gesture", kBad), "state.gesture.finger_count", kBad));
  s.gesture_stable = boolean(field(g, "stable", "state.gesture", kBad), "state.gesture.stable");
  const Json& w = field(j, "wrist", "state", kBad);
  if (!w.is_null()) {
    config::check_keys(w, {"marker", "robot", "fresh", "velocity_mps"}, "state.wrist", kBad);
    WristView v;
    v.marker = config::vec3(field(w, "marker", "state.wrist", kBad), "state.wrist.marker", kBad);
    v.robot = config::vec3(field(w, "robot", "state.wrist", kBad), "state.wrist.robot", kBad);
    v.fresh = boolean(field(w, "fresh", "state.wrist", kBad), "state.wrist.fresh");
    v.velocity_mps = config::number(field(w, "velocity_mps", "state.wrist", kBad), "state.wrist.velocity_mps", kBad);
    s.wrist = v;
  }
  const Json& a = field(j, "arm", "state", kBad);
  config::check_keys(a, {"q", "ee_position", "ee_quaternion", "gripper", "held_object", "safety"}, "state.arm", kBad);
  s.arm.q = fixed<6>(field(a, "q", "state.arm", kBad), "state.arm.q");
  s.arm.ee_position = config::vec3(field(a, "ee_position", "state.arm", kBad), "state.arm.ee_position", kBad);
  s.arm.ee_quaternion = fixed<4>(field(a, "ee_quaternion", "state.arm", kBad), "state.arm.ee_quaternion");
  s.arm.gripper = config::text(field(a, "gripper", "state.arm", kBad), "state.arm.gripper", kBad);
  s.arm.held_object = config::text(field(a, "held_object", "state.arm", kBad), "state.arm.held_object", kBad);
  s.arm.safety = config::text(field(a, "safety", "state.arm", kBad), "state.arm.safety", kBad);
  const Json& objs = field(j, "objects", "state", kBad);
  if (!objs.is_array()) throw Error(kBad, "state.objects must be an array");
  for (const auto& o : objs) {
    config::check_keys(o, {"id", "class", "position", "confidence", "graspable"}, "state.objects[]", kBad);
    ObjectView v;
    v.id = config::text(field(o, "id", "state.objects[]", kBad), "state.objects[].id", kBad);
    v.class_label = config::text(field(o, "class", "state.objects[]", kBad), "state.objects[].class", kBad);
    v.position = config::vec3(field(o, "position", "state.objects[]", kBad), "state.objects[].position", kBad);
    v.confidence = config::number(field(o, "confidence", "state.objects[]", kBad), "state.objects[].confidence", kBad);
    v.graspable = boolean(field(o, "graspable", "state.objects[]", kBad), "state.objects[].graspable");
    s.objects.push_back(v);
  }
  const Json& c = field(j, "last_command", "state", kBad);
  if (!c.is_null()) {
    config::check_keys(c, {"kind", "issued_at_ms", "target_position", "target_roll", "object_id"},
                       "state.last_command", kBad);
    CommandView v;
    v.kind = config::text(field(c, "kind", "state.last_command", kBad), "state.last_command.kind", kBad);
    v.issued_at_ms =
        config::integer(field(c, "issued_at_ms", "state.last_command", kBad), "state.last_command.issued_at_ms", kBad);
    if (c.contains("target_position")) {
      v.target_position = config::vec3(c["target_position"], "state.last_command.target_position", kBad);
    }
    if (c.contains("target_roll")) v.target_roll = fixed<2>(c["target_roll"], "state.last_command.target_roll");
    if (c.contains("object_id")) v.object_id = config::text(c["object_id"], "state.last_command.object_id", kBad);
    s.last_command = v;
  }
  return s;
}

}  // namespace detail

inline Json to_json(const Message& m) {
  Json out = {{"v", kProtocolVersion}};
  std::visit(
      [&](const auto& msg) {
        using T = std::decay_t<decltype(msg)>;
        if constexpr (std::is_same_v<T, Hello>) {
          out["type"] = "hello";
          out["role"] = to_string(msg.role);
        } else if constexpr (std::is_same_v<T, FrameMessage>) {
          out["type"] = "frame";
          Json f = session::frame_to_json(msg.frame);
          f.erase("type");
          out["frame"] = f;
        } else if constexpr (std::is_same_v<T, Reset>) {
          out["type"] = "reset";
        } else if constexpr (std::is_same_v<T, Estop>) {
          out["type"] = "estop";
        } else if constexpr (std::is_same_v<T, Welcome>) {
          out["type"] = "welcome";
          out["role"] = to_string(msg.role);
          out["command_rate_hz"] = msg.command_rate_hz;
          if (!msg.note.empty()) out["note"] = msg.note;
        } else if constexpr (std::is_same_v<T, ErrorReply>) {
          out["type"] = "error";
          out["code"] = msg.code;
          out["message"] = msg.message;
        } else if constexpr (std::is_same_v<T, State>) {
          out["type"] = "state";
          out["state"] = detail::state_to_json(msg.state);
        }
      },
      m);
  return out;
}

inline std::string encode(const Message& m) { return to_json(m).dump(); }

/// Throws ProtocolVersionMismatch for a well-formed message of another
/// version and MalformedMessage for anything else that does not parse.
inline Message decode(std::string_view text) {
  using detail::kBad;
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error&) {
    throw Error(kBad, "message is not valid JSON");
  }
  try {
    if (!j.is_object()) throw Error(kBad, "message must be a JSON object");
    if (!j.contains("v") || !j["v"].is_number_integer()) throw Error(kBad, "missing protocol version 'v'");
    if (j["v"].get<std::int64_t>() != kProtocolVersion) {
      throw Error(ErrorCode::ProtocolVersionMismatch, "server speaks protocol version " +
                                                          std::to_string(kProtocolVersion) + ", client sent " +
                                                          j["v"].dump());
    }
    const std::string type = config::text(config::field(j, "type", "", kBad), "type", kBad);
    if (type == "hello") {
      config::check_keys(j, {"v", "type", "role"}, "", kBad);
      return Hello{role_from_string(config::text(config::field(j, "role", "", kBad), "role", kBad))};
    }
    if (type == "frame") {
      config::check_keys(j, {"v", "type", "frame"}, "", kBad);
      const Json& f = config::field(j, "frame", "", kBad);
      config::check_keys(f, {"t_ms", "wrist", "hand", "marker"}, "frame", kBad);
      return FrameMessage{session::frame_from_json(f, kBad)};
    }
    if (type == "reset") {
      config::check_keys(j, {"v", "type"}, "", kBad);
      return Reset{};
    }
    if (type == "estop") {
      config::check_keys(j, {"v", "type"}, "", kBad);
      return Estop{};
    }
    if (type == "welcome") {
      config::check_keys(j, {"v", "type", "role", "command_rate_hz", "note"}, "", kBad);
      Welcome w;
      w.role = role_from_string(config::text(config::field(j, "role", "", kBad), "role", kBad));
      w.command_rate_hz = config::number(config::field(j, "command_rate_hz", "", kBad), "command_rate_hz", kBad);
      if (j.contains("note")) w.note = config::text(j["note"], "note", kBad);
      return w;
    }
    if (type == "error") {
      config::check_keys(j, {"v", "type", "code", "message"}, "", kBad);
      return ErrorReply{config::text(config::field(j, "code", "", kBad), "code", kBad),
                        config::text(config::field(j, "message", "", kBad), "message", kBad)};
    }
    if (type == "state") {
      config::check_keys(j, {"v", "type", "state"}, "", kBad);
      return State{detail::state_from_json(config::field(j, "state", "", kBad))};
    }
    throw Error(kBad, "unknown message type '" + type + "'");
  } catch (const Json::exception& e) {
    throw Error(kBad, e.what());
  }
}

inline ErrorReply error_reply(const Error& e) {
  return {std::string(teleop::to_string(e.code())), e.what()};
}

}  // namespace teleop::protocol
