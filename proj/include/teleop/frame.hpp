#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "teleop/geometry.hpp"
#include "teleop/handpose.hpp"

namespace teleop {

struct WristObservation {
  geometry::PixelDepthPoint pixel;
  /// Row-major depth_window × depth_window patch centred on the pixel, in mm.
  /// Empty when the client only sends the centre reading.
  std::vector<int> depth_window;

  bool operator==(const WristObservation&) const = default;
};

/// Marker pose in the camera frame as reported by the fiducial detector.
struct MarkerDetection {
  geometry::Mat3 rotation = geometry::Mat3::Identity();
  geometry::Vec3 translation = geometry::Vec3::Zero();

  bool operator==(const MarkerDetection&) const = default;
};

/// One timestamped observation of the operator.
struct LandmarkFrame {
  std::int64_t t_ms = 0;
  std::optional<WristObservation> wrist;
  std::optional<handpose::HandLandmarks> hand;
  std::optional<MarkerDetection> marker;

  bool empty() const { return !wrist && !hand && !marker; }
  bool operator==(const LandmarkFrame&) const = default;
};

}  // namespace teleop
