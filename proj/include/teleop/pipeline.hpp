#pragma once

// The full perception → control → simulator loop on a single logical clock.
// Frames are ingested as they arrive; advance_to() runs 10 ms simulator
// substeps and fires the command tick every command period.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "teleop/control.hpp"
#include "teleop/error.hpp"
#include "teleop/frame.hpp"
#include "teleop/handpose.hpp"
#include "teleop/simarm.hpp"
#include "teleop/tracking.hpp"

namespace teleop {

struct PipelineConfig {
  geometry::CameraIntrinsics camera{615.0, 615.0, 320.0, 240.0, 640, 480};
  tracking::FilterConfig filter;
  geometry::RigidTransform robot_from_marker;
  /// Pre-locked calibration; otherwise the first marker detection locks it.
  std::optional<geometry::RigidTransform> marker_from_camera;
  simarm::ArmModel arm = simarm::ArmModel::desk_arm();
  simarm::Scene scene;
  std::int64_t command_period_ms = 200;
  std::int64_t substep_ms = 10;
  /// Wrist or hand input older than this no longer drives commands.
  std::int64_t stale_after_ms = 500;
  /// Keep per-frame and per-substep series for metrics (replay only).
  bool record = false;

  void validate() const {
    camera.validate();
    filter.validate();
    arm.validate();
    if (command_period_ms <= 0 || substep_ms <= 0 || command_period_ms % substep_ms != 0) {
      throw Error(ErrorCode::InvalidConfig, "command period must be a positive multiple of the substep");
    }
    if (substep_ms > 500) throw Error(ErrorCode::InvalidConfig, "substep_ms must be <= 500");
    if (stale_after_ms <= 0) throw Error(ErrorCode::InvalidConfig, "stale_after_ms must be positive");
  }
};

struct PipelineEvent {
  std::int64_t t_ms = 0;
  std::string kind;
  std::string detail;

  bool operator==(const PipelineEvent&) const = default;
};

/// Commanded target and end effector after one substep, robot frame.
struct TrackingSample {
  std::int64_t t_ms = 0;
  geometry::Point3 target = geometry::Point3::Zero();
  geometry::Point3 ee = geometry::Point3::Zero();
};

/// Tracked wrist mapped into the robot frame, one per accepted frame.
struct WristSample {
  std::int64_t t_ms = 0;
  geometry::Point3 position_robot = geometry::Point3::Zero();
  bool fresh = false;
};

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg)
      : cfg_((cfg.validate(), std::move(cfg))),
        tracker_(cfg_.camera, cfg_.filter),
        sim_(cfg_.arm, cfg_.scene) {
    calib_.robot_from_marker = cfg_.robot_from_marker;
    if (cfg_.marker_from_camera) {
      calib_.marker_from_camera = *cfg_.marker_from_camera;
      calib_.locked = true;
    }
  }

  const PipelineConfig& config() const { return cfg_; }
  const tracking::CalibrationState& calibration() const { return calib_; }
  const control::Controller& controller() const { return controller_; }
  const simarm::ArmSimulator& simulator() const { return sim_; }
  const std::optional<tracking::TrackedWrist>& wrist() const { return wrist_; }
  const handpose::GestureSignal& gesture() const { return gesture_; }
  const std::optional<control::RobotCommand>& last_command() const { return last_command_; }
  const std::optional<simarm::GraspRoutine>& routine() const { return routine_; }
  std::int64_t now_ms() const { return now_ms_; }
  bool started() const { return started_; }

  const std::vector<PipelineEvent>& events() const { return events_; }
  const std::vector<TrackingSample>& tracking_samples() const { return tracking_samples_; }
  const std::vector<WristSample>& wrist_samples() const { return wrist_samples_; }

  /// Frames must be ingested in strictly increasing time and after
  /// advance_to(frame.t_ms).
  void ingest(const LandmarkFrame& frame) {
    if (!started_) start(frame.t_ms);
    if (frame.marker && !calib_.locked) {
      calib_ = tracking::calibrate_once(frame.marker->rotation, frame.marker->translation, calib_).state;
      log(frame.t_ms, "calibrated", "marker pose locked");
    }
    if (frame.wrist) ingest_wrist(*frame.wrist, frame.t_ms);
    if (frame.hand) ingest_hand(*frame.hand, frame.t_ms);
  }

  /// Runs every substep that starts before t_ms. A tick due at time T is
  /// fired before the substep starting at T, so it sees frames up to T.
  void advance_to(std::int64_t t_ms) {
    if (!started_) {
      start(t_ms);
      return;
    }
    while (now_ms_ < t_ms) {
      if (now_ms_ >= next_tick_ms_) {
        tick(now_ms_);
        next_tick_ms_ += cfg_.command_period_ms;
      }
      substep();
    }
  }

  /// Operator-requested exit to idle; the arm settles where it is heading.
  void reset() {
    abort_routine("reset");
    controller_.reset();
    streaming_target_.reset();
    sim_.apply(control::RobotCommand::simple(control::CommandKind::hold, now_ms_));
    log(now_ms_, "reset", "mode idle");
  }

  /// Stops the arm at its current pose and drops to idle.
  void estop() {
    abort_routine("estop");
    controller_.reset();
    streaming_target_.reset();
    sim_.halt();
    log(now_ms_, "estop", "arm halted, mode idle");
  }

  /// Forget per-operator perception state, e.g. when the operator changes.
  void reset_operator() {
    tracker_.reset();
    classifier_.reset();
    hold_.reset();
    wrist_.reset();
    gesture_ = {};
    last_hand_ms_.reset();
  }

 private:
  void start(std::int64_t t_ms) {
    started_ = true;
    now_ms_ = t_ms;
    next_tick_ms_ = t_ms;
  }

  void log(std::int64_t t_ms, std::string kind, std::string detail) {
    events_.push_back({t_ms, std::move(kind), std::move(detail)});
  }

  void ingest_wrist(const WristObservation& obs, std::int64_t t_ms) {
    if (!calib_.locked) return;
    try {
      wrist_ = tracker_.track(obs, t_ms, calib_);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoTrack) throw;
      return;
    }
    if (cfg_.record) {
      wrist_samples_.push_back({t_ms, calib_.robot_from_marker * wrist_->position_marker, wrist_->fresh});
    }
  }

  void ingest_hand(const handpose::HandLandmarks& hand, std::int64_t t_ms) {
    handpose::GestureSignal signal;
    geometry::RollQuaternion measured;
    try {
      signal = classifier_.classify(hand);
      measured = handpose::roll_quaternion(handpose::palm_normal(hand));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateHand && e.code() != ErrorCode::DegeneratePalm) throw;
      return;
    }
    gesture_ = signal;
    last_hand_ms_ = t_ms;
    orientation_ = hold_.update(t_ms, measured, signal);
    const control::ControlMode before = controller_.mode();
    controller_.observe_gesture(t_ms, signal);
    if (controller_.mode() != before) {
      log(t_ms, "mode", std::string(control::to_string(controller_.mode())));
    }
  }

  std::optional<control::TargetPose> current_target(std::int64_t t_ms) const {
    if (!wrist_ || !wrist_->fresh || !calib_.locked) return std::nullopt;
    if (t_ms - wrist_->timestamp_ms > cfg_.stale_after_ms) return std::nullopt;
    return control::map_target(*wrist_, orientation_, calib_);
  }

  handpose::GestureSignal current_gesture(std::int64_t t_ms) const {
    if (!last_hand_ms_ || t_ms - *last_hand_ms_ > cfg_.stale_after_ms) return {};
    return gesture_;
  }

  void tick(std::int64_t t_ms) {
    auto cmd = controller_.tick(t_ms, current_target(t_ms), current_gesture(t_ms));
    if (!cmd) return;
    using control::CommandKind;
    switch (cmd->kind) {
      case CommandKind::move_ee:
        streaming_target_ = cmd->target->position_robot;
        sim_.apply(*cmd);
        break;
      case CommandKind::hold:
        streaming_target_.reset();
        if (routine_ && routine_->status() == simarm::RoutineStatus::running) {
          abort_routine("operator intervention");
        } else {
          sim_.apply(*cmd);
        }
        break;
      case CommandKind::gripper_open:
      case CommandKind::gripper_close:
        sim_.apply(*cmd);
        log(t_ms, std::string(control::to_string(cmd->kind)), "");
        break;
      case CommandKind::grasp_object:
        if (!start_grasp(*cmd, t_ms)) return;
        break;
      case CommandKind::release_object: {
        const std::string held = sim_.state().gripper.object_id;
        sim_.apply(*cmd);
        controller_.on_grasp_event(control::GraspEvent::released);
        release_pending_ = held;
        log(t_ms, "release_object", held);
        break;
      }
    }
    last_command_ = std::move(cmd);
  }

  bool start_grasp(control::RobotCommand& cmd, std::int64_t t_ms) {
    const auto& objects = sim_.scene().objects;
    const auto& allowed = sim_.scene().allowed_classes;
    try {
      const simarm::SceneObject& target = simarm::select_object(objects, sim_.state().ee.position, allowed);
      cmd.object_id = target.id;
      routine_.emplace(target);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoTarget) throw;
      log(t_ms, "no_target", "no graspable object of an allowed class");
      return false;
    }
    streaming_target_.reset();
    controller_.on_grasp_event(control::GraspEvent::grasp_started);
    log(t_ms, "grasp_started", *cmd.object_id);
    return true;
  }

  void abort_routine(const std::string& why) {
    if (!routine_ || routine_->status() != simarm::RoutineStatus::running) return;
    routine_->abort(sim_);
    if (controller_.mode() == control::ControlMode::semi_autonomous &&
        controller_.phase() == control::GraspPhase::executing) {
      controller_.on_grasp_event(control::GraspEvent::aborted);
    }
    log(now_ms_, "grasp_aborted", why);
    routine_.reset();
  }

  void substep() {
    const double dt = static_cast<double>(cfg_.substep_ms) / 1000.0;
    const simarm::Safety before = sim_.state().safety;
    if (routine_ && routine_->status() == simarm::RoutineStatus::running) {
      const auto status = routine_->advance(sim_, dt);
      finish_routine(status);
    } else {
      sim_.advance(dt);
    }
    now_ms_ += cfg_.substep_ms;
    const simarm::Safety after = sim_.state().safety;
    if (after == simarm::Safety::blocked && before != simarm::Safety::blocked) log(now_ms_, "blocked", "");
    if (release_pending_) {
      const bool placed = sim_.in_place_zone(*release_pending_);
      log(now_ms_, placed ? "placed" : "dropped", *release_pending_);
      release_pending_.reset();
    }
    if (cfg_.record && streaming_target_) {
      tracking_samples_.push_back({now_ms_, *streaming_target_, sim_.state().ee.position});
    }
  }

  void finish_routine(simarm::RoutineStatus status) {
    using simarm::RoutineStatus;
    if (status == RoutineStatus::running) return;
    if (status == RoutineStatus::succeeded) {
      controller_.on_grasp_event(control::GraspEvent::grasp_succeeded);
      log(now_ms_ + cfg_.substep_ms, "grasp_succeeded", routine_->target().id);
    } else if (status == RoutineStatus::failed) {
      controller_.on_grasp_event(control::GraspEvent::grasp_failed);
      log(now_ms_ + cfg_.substep_ms, "grasp_failed", routine_->failure());
    }
    routine_.reset();
  }

  PipelineConfig cfg_;
  tracking::CalibrationState calib_;
  tracking::WristTracker tracker_;
  handpose::GestureClassifier classifier_;
  handpose::OrientationHold hold_;
  control::Controller controller_;
  simarm::ArmSimulator sim_;
  std::optional<simarm::GraspRoutine> routine_;

  std::optional<tracking::TrackedWrist> wrist_;
  handpose::GestureSignal gesture_;
  std::optional<std::int64_t> last_hand_ms_;
  geometry::RollQuaternion orientation_;
  std::optional<geometry::Point3> streaming_target_;
  std::optional<control::RobotCommand> last_command_;
  std::optional<std::string> release_pending_;

  bool started_ = false;
  std::int64_t now_ms_ = 0;
  std::int64_t next_tick_ms_ = 0;

  std::vector<PipelineEvent> events_;
  std::vector<TrackingSample> tracking_samples_;
  std::vector<WristSample> wrist_samples_;
};

}  // namespace teleop
