#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace teleop {

enum class ErrorCode {
  NonOrthonormalRotation,
  InvalidDepth,
  NotCalibrated,
  NoTrack,
  NonMonotonicTimestamp,
  DegenerateHand,
  DegeneratePalm,
  StaleInput,
  InvalidEvent,
  JointLimit,
  NoTarget,
  Aborted,
  SchemaVersion,
  CorruptFrame,
  InsufficientData,
  InfeasibleSpec,
  InvalidConfig,
  PortInUse,
  MalformedMessage,
  ProtocolVersionMismatch,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonOrthonormalRotation: return "NonOrthonormalRotation";
    case ErrorCode::InvalidDepth: return "InvalidDepth";
    case ErrorCode::NotCalibrated: return "NotCalibrated";
    case ErrorCode::NoTrack: return "NoTrack";
    case ErrorCode::NonMonotonicTimestamp: return "NonMonotonicTimestamp";
    case ErrorCode::DegenerateHand: return "DegenerateHand";
    case ErrorCode::DegeneratePalm: return "DegeneratePalm";
    case ErrorCode::StaleInput: return "StaleInput";
    case ErrorCode::InvalidEvent: return "InvalidEvent";
    case ErrorCode::JointLimit: return "JointLimit";
    case ErrorCode::NoTarget: return "NoTarget";
    case ErrorCode::Aborted: return "Aborted";
    case ErrorCode::SchemaVersion: return "SchemaVersion";
    case ErrorCode::CorruptFrame: return "CorruptFrame";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::InfeasibleSpec: return "InfeasibleSpec";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::PortInUse: return "PortInUse";
    case ErrorCode::MalformedMessage: return "MalformedMessage";
    case ErrorCode::ProtocolVersionMismatch: return "ProtocolVersionMismatch";
  }
  return "Unknown";
}

/// Every failure the library reports carries one of the codes above.
/// Parsers additionally attach the 1-based line number of the offending input.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::optional<int> line = std::nullopt)
      : std::runtime_error(format(code, message, line)), code_(code), line_(line) {}

  ErrorCode code() const noexcept { return code_; }
  std::optional<int> line() const noexcept { return line_; }

 private:
  static std::string format(ErrorCode code, const std::string& message, std::optional<int> line) {
    std::string out(to_string(code));
    if (line) out += " (line " + std::to_string(*line) + ")";
    if (!message.empty()) out += ": " + message;
    return out;
  }

  ErrorCode code_;
  std::optional<int> line_;
};

}  // namespace teleop
