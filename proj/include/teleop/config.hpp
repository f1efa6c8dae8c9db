#pragma once

// JSON encoding of configuration: intrinsics, filter, calibration, arm model,
// scene. The same objects make up the session header and the serve config.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "teleop/error.hpp"
#include "teleop/geometry.hpp"
#include "teleop/pipeline.hpp"
#include "teleop/simarm.hpp"
#include "teleop/tracking.hpp"

namespace teleop::config {

using Json = nlohmann::json;
using geometry::Mat3;
using geometry::Vec3;

// ---------------------------------------------------------------------------
// Field access with path-qualified diagnostics

inline std::string join(std::string_view path, std::string_view key) {
  if (path.empty()) return std::string(key);
  return std::string(path) + "." + std::string(key);
}

inline void check_keys(const Json& j, std::initializer_list<std::string_view> allowed, std::string_view path,
                       ErrorCode code = ErrorCode::InvalidConfig) {
  if (!j.is_object()) throw Error(code, std::string(path.empty() ? "value" : path) + " must be an object");
  for (const auto& item : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw Error(code, "unknown field " + join(path, item.key()));
    }
  }
}

inline const Json& field(const Json& j, std::string_view key, std::string_view path,
                         ErrorCode code = ErrorCode::InvalidConfig) {
  const auto it = j.find(key);
  if (it == j.end()) throw Error(code, "missing field " + join(path, key));
  return *it;
}

inline double number(const Json& j, std::string_view path, ErrorCode code = ErrorCode::InvalidConfig) {
  if (!j.is_number()) throw Error(code, std::string(path) + " must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw Error(code, std::string(path) + " must be finite");
  return v;
}

inline std::int64_t integer(const Json& j, std::string_view path, ErrorCode code = ErrorCode::InvalidConfig) {
  if (!j.is_number_integer()) throw Error(code, std::string(path) + " must be an integer");
  return j.get<std::int64_t>();
}

inline std::string text(const Json& j, std::string_view path, ErrorCode code = ErrorCode::InvalidConfig) {
  if (!j.is_string()) throw Error(code, std::string(path) + " must be a string");
  return j.get<std::string>();
}

inline std::vector<double> numbers(const Json& j, std::size_t n, std::string_view path,
                                   ErrorCode code = ErrorCode::InvalidConfig) {
  if (!j.is_array() || j.size() != n) {
    throw Error(code, std::string(path) + " must be an array of " + std::to_string(n) + " numbers");
  }
  std::vector<double> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(number(j[i], std::string(path) + "[" + std::to_string(i) + "]", code));
  return out;
}

inline Vec3 vec3(const Json& j, std::string_view path, ErrorCode code = ErrorCode::InvalidConfig) {
  const auto v = numbers(j, 3, path, code);
  return {v[0], v[1], v[2]};
}

/// Row-major 9-element array.
inline Mat3 mat3(const Json& j, std::string_view path, ErrorCode code = ErrorCode::InvalidConfig) {
  const auto v = numbers(j, 9, path, code);
  Mat3 m;
  m << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
  return m;
}

inline Json to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

inline Json to_json(const Mat3& m) {
  Json out = Json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out.push_back(m(r, c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Camera, filter, transforms

inline Json to_json(const geometry::CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

inline geometry::CameraIntrinsics camera_from_json(const Json& j, std::string_view path = "camera") {
  check_keys(j, {"fx", "fy", "cx", "cy", "width", "height"}, path);
  geometry::CameraIntrinsics k;
  k.fx = number(field(j, "fx", path), join(path, "fx"));
  k.fy = number(field(j, "fy", path), join(path, "fy"));
  k.cx = number(field(j, "cx", path), join(path, "cx"));
  k.cy = number(field(j, "cy", path), join(path, "cy"));
  k.width = static_cast<int>(integer(field(j, "width", path), join(path, "width")));
  k.height = static_cast<int>(integer(field(j, "height", path), join(path, "height")));
  k.validate();
  return k;
}

inline Json to_json(const tracking::FilterConfig& f) {
  return {{"ema_alpha", f.ema_alpha},
          {"jump_threshold_m", f.jump_threshold_m},
          {"depth_window", f.depth_window},
          {"max_consecutive_rejects", f.max_consecutive_rejects}};
}

inline tracking::FilterConfig filter_from_json(const Json& j, std::string_view path = "filter") {
  check_keys(j, {"ema_alpha", "jump_threshold_m", "depth_window", "max_consecutive_rejects"}, path);
  tracking::FilterConfig f;
  if (j.contains("ema_alpha")) f.ema_alpha = number(j["ema_alpha"], join(path, "ema_alpha"));
  if (j.contains("jump_threshold_m")) f.jump_threshold_m = number(j["jump_threshold_m"], join(path, "jump_threshold_m"));
  if (j.contains("depth_window")) f.depth_window = static_cast<int>(integer(j["depth_window"], join(path, "depth_window")));
  if (j.contains("max_consecutive_rejects")) {
    f.max_consecutive_rejects = static_cast<int>(integer(j["max_consecutive_rejects"], join(path, "max_consecutive_rejects")));
  }
  f.validate();
  return f;
}

inline Json to_json(const geometry::RigidTransform& t) {
  return {{"rotation", to_json(t.rotation())}, {"translation", to_json(t.translation())}};
}

inline geometry::RigidTransform transform_from_json(const Json& j, std::string_view path,
                                                    ErrorCode code = ErrorCode::InvalidConfig) {
  check_keys(j, {"rotation", "translation"}, path, code);
  const Mat3 r = j.contains("rotation") ? mat3(j["rotation"], join(path, "rotation"), code) : Mat3::Identity();
  const Vec3 t = vec3(field(j, "translation", path, code), join(path, "translation"), code);
  return geometry::RigidTransform(r, t);
}

// ---------------------------------------------------------------------------
// Arm model

inline Json to_json(const simarm::ArmModel& m) {
  Json joints = Json::array();
  for (const auto& jt : m.joints) {
    joints.push_back({{"axis", to_json(jt.axis)}, {"offset", to_json(jt.offset)}, {"lower", jt.lower}, {"upper", jt.upper}});
  }
  Json spheres = Json::array();
  for (const auto& s : m.spheres) {
    spheres.push_back({{"frame", s.frame},
                       {"center", to_json(s.center)},
                       {"radius", s.radius},
                       {"group", m.groups.at(static_cast<std::size_t>(s.group))}});
  }
  Json adjacent = Json::array();
  for (const auto& [a, b] : m.adjacent_groups) {
    adjacent.push_back({m.groups.at(static_cast<std::size_t>(a)), m.groups.at(static_cast<std::size_t>(b))});
  }
  Json ready = Json::array();
  for (int i = 0; i < simarm::kJointCount; ++i) ready.push_back(m.ready[i]);
  return {{"id", m.id},
          {"joints", joints},
          {"tool_offset", to_json(m.tool_offset)},
          {"reach_m", m.reach_m},
          {"time_constant_s", m.time_constant_s},
          {"groups", m.groups},
          {"adjacent_groups", adjacent},
          {"spheres", spheres},
          {"workspace", {{"min", to_json(m.workspace.min)}, {"max", to_json(m.workspace.max)}}},
          {"ready", ready}};
}

inline simarm::ArmModel builtin_arm(const std::string& id) {
  if (id == "desk-arm-6") return simarm::ArmModel::desk_arm();
  throw Error(ErrorCode::InvalidConfig, "unknown arm model '" + id + "'");
}

/// A string names a built-in model. An object starts from the built-in named
/// by "id" (default desk-arm-6) and overrides the fields it lists.
inline simarm::ArmModel arm_from_json(const Json& j, std::string_view path = "arm") {
  if (j.is_string()) {
    auto m = builtin_arm(j.get<std::string>());
    m.validate();
    return m;
  }
  check_keys(j, {"id", "joints", "tool_offset", "reach_m", "time_constant_s", "groups", "adjacent_groups", "spheres",
                 "workspace", "ready"},
             path);
  simarm::ArmModel m = builtin_arm(j.contains("id") ? text(j["id"], join(path, "id")) : "desk-arm-6");
  if (j.contains("joints")) {
    const Json& js = j["joints"];
    const std::string jp = join(path, "joints");
    if (!js.is_array() || js.size() != simarm::kJointCount) throw Error(ErrorCode::InvalidConfig, jp + " must list 6 joints");
    for (std::size_t i = 0; i < js.size(); ++i) {
      const std::string p = jp + "[" + std::to_string(i) + "]";
      check_keys(js[i], {"axis", "offset", "lower", "upper"}, p);
      auto& jt = m.joints[i];
      jt.axis = vec3(field(js[i], "axis", p), join(p, "axis"));
      jt.offset = vec3(field(js[i], "offset", p), join(p, "offset"));
      jt.lower = number(field(js[i], "lower", p), join(p, "lower"));
      jt.upper = number(field(js[i], "upper", p), join(p, "upper"));
    }
  }
  if (j.contains("tool_offset")) m.tool_offset = vec3(j["tool_offset"], join(path, "tool_offset"));
  if (j.contains("reach_m")) m.reach_m = number(j["reach_m"], join(path, "reach_m"));
  if (j.contains("time_constant_s")) m.time_constant_s = number(j["time_constant_s"], join(path, "time_constant_s"));
  if (j.contains("groups")) {
    m.groups.clear();
    for (const auto& g : j["groups"]) m.groups.push_back(text(g, join(path, "groups")));
  }
  auto group_index = [&](const Json& g, const std::string& p) {
    const std::string name = text(g, p);
    const auto it = std::find(m.groups.begin(), m.groups.end(), name);
    if (it == m.groups.end()) throw Error(ErrorCode::InvalidConfig, p + " names unknown group '" + name + "'");
    return static_cast<int>(it - m.groups.begin());
  };
  if (j.contains("adjacent_groups")) {
    m.adjacent_groups.clear();
    const std::string p = join(path, "adjacent_groups");
    for (const auto& pair : j["adjacent_groups"]) {
      if (!pair.is_array() || pair.size() != 2) throw Error(ErrorCode::InvalidConfig, p + " entries must be pairs");
      m.adjacent_groups.emplace_back(group_index(pair[0], p), group_index(pair[1], p));
    }
  }
  if (j.contains("spheres")) {
    m.spheres.clear();
    const std::string sp = join(path, "spheres");
    for (std::size_t i = 0; i < j["spheres"].size(); ++i) {
      const Json& s = j["spheres"][i];
      const std::string p = sp + "[" + std::to_string(i) + "]";
      check_keys(s, {"frame", "center", "radius", "group"}, p);
      simarm::LinkSphere ls;
      ls.frame = static_cast<int>(integer(field(s, "frame", p), join(p, "frame")));
      ls.center = vec3(field(s, "center", p), join(p, "center"));
      ls.radius = number(field(s, "radius", p), join(p, "radius"));
      ls.group = group_index(field(s, "group", p), join(p, "group"));
      m.spheres.push_back(ls);
    }
  }
  if (j.contains("workspace")) {
    const std::string p = join(path, "workspace");
    check_keys(j["workspace"], {"min", "max"}, p);
    m.workspace.min = vec3(field(j["workspace"], "min", p), join(p, "min"));
    m.workspace.max = vec3(field(j["workspace"], "max", p), join(p, "max"));
  }
  if (j.contains("ready")) {
    const auto v = numbers(j["ready"], simarm::kJointCount, join(path, "ready"));
    for (int i = 0; i < simarm::kJointCount; ++i) m.ready[i] = v[static_cast<std::size_t>(i)];
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Scene

inline Json to_json(const simarm::Scene& s) {
  Json objects = Json::array();
  for (const auto& o : s.objects) {
    objects.push_back({{"id", o.id},
                       {"class", o.class_label},
                       {"position", to_json(o.position)},
                       {"confidence", o.confidence},
                       {"graspable", o.graspable}});
  }
  Json obstacles = Json::array();
  for (const auto& o : s.obstacles) obstacles.push_back({{"center", to_json(o.center)}, {"radius_m", o.radius_m}});
  Json out = {{"objects", objects},
              {"obstacles", obstacles},
              {"allowed_classes", s.allowed_classes},
              {"graspable_classes", s.graspable_classes}};
  if (s.place_zone) {
    out["place_zone"] = {{"center", to_json(s.place_zone->center)}, {"radius_m", s.place_zone->radius_m}};
  }
  return out;
}

inline simarm::Scene scene_from_json(const Json& j, std::string_view path = "scene") {
  check_keys(j, {"objects", "obstacles", "allowed_classes", "graspable_classes", "place_zone"}, path);
  simarm::Scene s;
  auto strings = [&](std::string_view key) {
    std::vector<std::string> out;
    if (!j.contains(key)) return out;
    const std::string p = join(path, key);
    if (!j[key].is_array()) throw Error(ErrorCode::InvalidConfig, p + " must be an array of strings");
    for (const auto& v : j[key]) out.push_back(text(v, p));
    return out;
  };
  s.allowed_classes = strings("allowed_classes");
  s.graspable_classes = strings("graspable_classes");
  if (j.contains("objects")) {
    const std::string op = join(path, "objects");
    for (std::size_t i = 0; i < j["objects"].size(); ++i) {
      const Json& o = j["objects"][i];
      const std::string p = op + "[" + std::to_string(i) + "]";
      check_keys(o, {"id", "class", "position", "confidence", "graspable"}, p);
      simarm::SceneObject obj;
      obj.id = text(field(o, "id", p), join(p, "id"));
      obj.class_label = text(field(o, "class", p), join(p, "class"));
      obj.position = vec3(field(o, "position", p), join(p, "position"));
      obj.confidence = number(field(o, "confidence", p), join(p, "confidence"));
      if (obj.confidence < 0.0 || obj.confidence > 1.0) {
        throw Error(ErrorCode::InvalidConfig, join(p, "confidence") + " must be in [0, 1]");
      }
      if (o.contains("graspable")) {
        if (!o["graspable"].is_boolean()) throw Error(ErrorCode::InvalidConfig, join(p, "graspable") + " must be a boolean");
        obj.graspable = o["graspable"].get<bool>();
      } else {
        obj.graspable = std::find(s.graspable_classes.begin(), s.graspable_classes.end(), obj.class_label) !=
                        s.graspable_classes.end();
      }
      for (const auto& prev : s.objects) {
        if (prev.id == obj.id) throw Error(ErrorCode::InvalidConfig, "duplicate object id '" + obj.id + "'");
      }
      s.objects.push_back(obj);
    }
  }
  if (j.contains("obstacles")) {
    const std::string op = join(path, "obstacles");
    for (std::size_t i = 0; i < j["obstacles"].size(); ++i) {
      const Json& o = j["obstacles"][i];
      const std::string p = op + "[" + std::to_string(i) + "]";
      check_keys(o, {"center", "radius_m"}, p);
      simarm::Obstacle ob;
      ob.center = vec3(field(o, "center", p), join(p, "center"));
      ob.radius_m = number(field(o, "radius_m", p), join(p, "radius_m"));
      if (!(ob.radius_m > 0.0)) throw Error(ErrorCode::InvalidConfig, join(p, "radius_m") + " must be positive");
      s.obstacles.push_back(ob);
    }
  }
  if (j.contains("place_zone")) {
    const std::string p = join(path, "place_zone");
    check_keys(j["place_zone"], {"center", "radius_m"}, p);
    simarm::PlaceZone z;
    z.center = vec3(field(j["place_zone"], "center", p), join(p, "center"));
    z.radius_m = number(field(j["place_zone"], "radius_m", p), join(p, "radius_m"));
    if (!(z.radius_m > 0.0)) throw Error(ErrorCode::InvalidConfig, join(p, "radius_m") + " must be positive");
    s.place_zone = z;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Whole pipeline configuration


/// Writes the pipeline fields into `out` (which may already hold other keys).
inline void write_pipeline(const PipelineConfig& cfg, Json& out) {
  Json calib = {{"robot_from_marker", to_json(cfg.robot_from_marker)}};
  if (cfg.marker_from_camera) calib["marker_from_camera"] = to_json(*cfg.marker_from_camera);
  out["camera"] = to_json(cfg.camera);
  out["filter"] = to_json(cfg.filter);
  out["calibration"] = calib;
  out["arm"] = to_json(cfg.arm);
  out["scene"] = to_json(cfg.scene);
  out["command_rate_hz"] = 1000.0 / static_cast<double>(cfg.command_period_ms);
  out["substep_ms"] = cfg.substep_ms;
  out["stale_after_ms"] = cfg.stale_after_ms;
}

inline Json to_json(const PipelineConfig& cfg) {
  Json out = Json::object();
  write_pipeline(cfg, out);
  return out;
}

/// Reads the pipeline fields of `j` without rejecting unknown keys.
inline PipelineConfig read_pipeline(const Json& j) {
  PipelineConfig cfg;
  if (j.contains("camera")) cfg.camera = camera_from_json(j["camera"]);
  if (j.contains("filter")) cfg.filter = filter_from_json(j["filter"]);
  if (j.contains("calibration")) {
    const Json& c = j["calibration"];
    check_keys(c, {"robot_from_marker", "marker_from_camera"}, "calibration");
    if (c.contains("robot_from_marker")) {
      cfg.robot_from_marker = transform_from_json(c["robot_from_marker"], "calibration.robot_from_marker");
    }
    if (c.contains("marker_from_camera")) {
      cfg.marker_from_camera = transform_from_json(c["marker_from_camera"], "calibration.marker_from_camera");
    }
  }
  if (j.contains("arm")) cfg.arm = arm_from_json(j["arm"]);
  if (j.contains("scene")) cfg.scene = scene_from_json(j["scene"]);
  if (j.contains("command_rate_hz")) {
    const double hz = number(j["command_rate_hz"], "command_rate_hz");
    if (!(hz > 0.0)) throw Error(ErrorCode::InvalidConfig, "command_rate_hz must be positive");
    const double period = 1000.0 / hz;
    if (std::abs(period - std::round(period)) > 1e-9) {
      throw Error(ErrorCode::InvalidConfig, "command_rate_hz must divide 1000 ms evenly");
    }
    cfg.command_period_ms = static_cast<std::int64_t>(std::llround(period));
  }
  if (j.contains("substep_ms")) cfg.substep_ms = integer(j["substep_ms"], "substep_ms");
  if (j.contains("stale_after_ms")) cfg.stale_after_ms = integer(j["stale_after_ms"], "stale_after_ms");
  cfg.validate();
  return cfg;
}

inline PipelineConfig pipeline_from_json(const Json& j) {
  check_keys(j, {"camera", "filter", "calibration", "arm", "scene", "command_rate_hz", "substep_ms", "stale_after_ms"},
             "");
  return read_pipeline(j);
}

inline Json parse_json(const std::string& textual, std::string_view what,
                       ErrorCode code = ErrorCode::InvalidConfig) {
  try {
    return Json::parse(textual);
  } catch (const Json::parse_error& e) {
    throw Error(code, std::string(what) + ": " + e.what());
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline PipelineConfig load_config_file(const std::string& path) {
  return pipeline_from_json(parse_json(read_file(path), path));
}

}  // namespace teleop::config
