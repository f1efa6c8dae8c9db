#pragma once

// Session records (JSON Lines), deterministic replay and precision metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "teleop/config.hpp"
#include "teleop/error.hpp"
#include "teleop/frame.hpp"
#include "teleop/pipeline.hpp"

namespace teleop::session {

using config::Json;
using geometry::Point3;

inline constexpr int kSchemaVersion = 1;
inline constexpr std::string_view kSessionFormat = "teleop-session";
inline constexpr std::string_view kReportFormat = "teleop-report";

/// Reference wrist position (robot frame) with the index of the scripted
/// motion segment it belongs to.
struct TruthSample {
  std::int64_t t_ms = 0;
  Point3 wrist = Point3::Zero();
  int segment = 0;

  bool operator==(const TruthSample&) const = default;
};

struct SessionRecord {
  PipelineConfig config;
  std::vector<LandmarkFrame> frames;
  std::vector<TruthSample> truth;
};

// ---------------------------------------------------------------------------
// Line codecs

inline Json frame_to_json(const LandmarkFrame& f) {
  Json out = {{"type", "frame"}, {"t_ms", f.t_ms}};
  if (f.wrist) {
    out["wrist"] = {{"u", f.wrist->pixel.u},
                    {"v", f.wrist->pixel.v},
                    {"depth_mm", f.wrist->pixel.depth_mm},
                    {"window", f.wrist->depth_window}};
  }
  if (f.hand) {
    Json pts = Json::array();
    for (const auto& p : f.hand->points) pts.push_back(config::to_json(p));
    out["hand"] = pts;
  }
  if (f.marker) {
    out["marker"] = {{"rotation", config::to_json(f.marker->rotation)},
                     {"translation", config::to_json(f.marker->translation)}};
  }
  return out;
}

/// Decodes the body of a frame (shared with the gateway protocol). Failures
/// are reported with `code`.
inline LandmarkFrame frame_from_json(const Json& j, ErrorCode code, std::string_view path = "frame") {
  using config::field;
  using config::join;
  LandmarkFrame f;
  f.t_ms = config::integer(field(j, "t_ms", path, code), join(path, "t_ms"), code);
  if (j.contains("wrist") && !j["wrist"].is_null()) {
    const Json& w = j["wrist"];
    const std::string p = join(path, "wrist");
    config::check_keys(w, {"u", "v", "depth_mm", "window"}, p, code);
    WristObservation obs;
    obs.pixel.u = config::number(field(w, "u", p, code), join(p, "u"), code);
    obs.pixel.v = config::number(field(w, "v", p, code), join(p, "v"), code);
    obs.pixel.depth_mm = static_cast<int>(config::integer(field(w, "depth_mm", p, code), join(p, "depth_mm"), code));
    if (obs.pixel.depth_mm < 0) throw Error(code, join(p, "depth_mm") + " must be >= 0");
    if (w.contains("window")) {
      if (!w["window"].is_array()) throw Error(code, join(p, "window") + " must be an array");
      for (const auto& d : w["window"]) {
        const auto v = config::integer(d, join(p, "window"), code);
        if (v < 0) throw Error(code, join(p, "window") + " values must be >= 0");
        obs.depth_window.push_back(static_cast<int>(v));
      }
    }
    f.wrist = std::move(obs);
  }
  if (j.contains("hand") && !j["hand"].is_null()) {
    const Json& h = j["hand"];
    const std::string p = join(path, "hand");
    if (!h.is_array() || h.size() != handpose::kLandmarkCount) throw Error(code, p + " must hold 21 points");
    handpose::HandLandmarks lm;
    for (std::size_t i = 0; i < h.size(); ++i) lm.points[i] = config::vec3(h[i], p, code);
    f.hand = lm;
  }
  if (j.contains("marker") && !j["marker"].is_null()) {
    const Json& m = j["marker"];
    const std::string p = join(path, "marker");
    config::check_keys(m, {"rotation", "translation"}, p, code);
    MarkerDetection det;
    det.rotation = config::mat3(field(m, "rotation", p, code), join(p, "rotation"), code);
    det.translation = config::vec3(field(m, "translation", p, code), join(p, "translation"), code);
    f.marker = det;
  }
  if (f.empty()) throw Error(code, std::string(path) + " carries no wrist, hand or marker");
  return f;
}

inline Json truth_to_json(const TruthSample& t) {
  return {{"type", "truth"}, {"t_ms", t.t_ms}, {"wrist", config::to_json(t.wrist)}, {"segment", t.segment}};
}

inline Json header_to_json(const PipelineConfig& cfg) {
  Json out = {{"type", "header"}, {"format", kSessionFormat}, {"version", kSchemaVersion}};
  config::write_pipeline(cfg, out);
  return out;
}

inline void write_session(const SessionRecord& rec, std::ostream& out) {
  out << header_to_json(rec.config).dump() << '\n';
  std::size_t ti = 0;
  for (const auto& f : rec.frames) {
    while (ti < rec.truth.size() && rec.truth[ti].t_ms <= f.t_ms) out << truth_to_json(rec.truth[ti++]).dump() << '\n';
    out << frame_to_json(f).dump() << '\n';
  }
  while (ti < rec.truth.size()) out << truth_to_json(rec.truth[ti++]).dump() << '\n';
}

inline std::string serialize_session(const SessionRecord& rec) {
  std::ostringstream ss;
  write_session(rec, ss);
  return ss.str();
}

/// Strict reader. Header problems raise SchemaVersion; any later malformed
/// or out-of-order line raises CorruptFrame with its 1-based line number.
inline SessionRecord read_session(std::istream& in) {
  SessionRecord rec;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  std::optional<std::int64_t> last_frame_t;
  std::optional<std::int64_t> last_truth_t;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error&) {
      throw Error(have_header ? ErrorCode::CorruptFrame : ErrorCode::SchemaVersion, "line is not valid JSON", line_no);
    }
    if (!have_header) {
      const auto tag = [&](const char* key) {
        return j.is_object() && j.contains(key) && j[key].is_string() ? j[key].get<std::string>() : std::string();
      };
      if (tag("type") != "header" || tag("format") != kSessionFormat) {
        throw Error(ErrorCode::SchemaVersion, "first record must be a teleop-session header", line_no);
      }
      if (!j.contains("version") || !j["version"].is_number_integer() || j["version"].get<int>() != kSchemaVersion) {
        throw Error(ErrorCode::SchemaVersion,
                    "unsupported schema version " + (j.contains("version") ? j["version"].dump() : std::string("<none>")),
                    line_no);
      }
      Json body = j;
      body.erase("type");
      body.erase("format");
      body.erase("version");
      try {
        rec.config = config::pipeline_from_json(body);
      } catch (const Error& e) {
        throw Error(ErrorCode::SchemaVersion, std::string("invalid header: ") + e.what(), line_no);
      }
      have_header = true;
      continue;
    }
    try {
      if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
        throw Error(ErrorCode::CorruptFrame, "record has no type");
      }
      const std::string type = j["type"].get<std::string>();
      if (type == "frame") {
        Json body = j;
        body.erase("type");
        config::check_keys(body, {"t_ms", "wrist", "hand", "marker"}, "frame", ErrorCode::CorruptFrame);
        LandmarkFrame f = frame_from_json(body, ErrorCode::CorruptFrame);
        if (last_frame_t && f.t_ms <= *last_frame_t) {
          throw Error(ErrorCode::CorruptFrame, "frame t_ms " + std::to_string(f.t_ms) + " is not after " +
                                                   std::to_string(*last_frame_t));
        }
        last_frame_t = f.t_ms;
        rec.frames.push_back(std::move(f));
      } else if (type == "truth") {
        config::check_keys(j, {"type", "t_ms", "wrist", "segment"}, "truth", ErrorCode::CorruptFrame);
        TruthSample t;
        t.t_ms = config::integer(config::field(j, "t_ms", "truth", ErrorCode::CorruptFrame), "truth.t_ms",
                                 ErrorCode::CorruptFrame);
        t.wrist = config::vec3(config::field(j, "wrist", "truth", ErrorCode::CorruptFrame), "truth.wrist",
                               ErrorCode::CorruptFrame);
        t.segment = static_cast<int>(config::integer(config::field(j, "segment", "truth", ErrorCode::CorruptFrame),
                                                     "truth.segment", ErrorCode::CorruptFrame));
        if (last_truth_t && t.t_ms <= *last_truth_t) throw Error(ErrorCode::CorruptFrame, "truth t_ms is not increasing");
        last_truth_t = t.t_ms;
        rec.truth.push_back(t);
      } else {
        throw Error(ErrorCode::CorruptFrame, "unknown record type '" + type + "'");
      }
    } catch (const Error& e) {
      if (e.line()) throw;
      throw Error(ErrorCode::CorruptFrame, e.what(), line_no);
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::CorruptFrame, e.what(), line_no);
    }
  }
  if (!have_header) throw Error(ErrorCode::SchemaVersion, "session is empty", line_no == 0 ? 1 : line_no);
  return rec;
}

inline SessionRecord parse_session(const std::string& text) {
  std::istringstream in(text);
  return read_session(in);
}

inline SessionRecord load_session(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot open session file " + path);
  return read_session(in);
}

inline void save_session(const SessionRecord& rec, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::InvalidConfig, "cannot write " + path);
  write_session(rec, out);
}

// ---------------------------------------------------------------------------
// Metrics

struct TimedPoint {
  std::int64_t t_ms = 0;
  Point3 p = Point3::Zero();
};

struct MetricsOptions {
  std::int64_t pair_window_ms = 100;
  std::int64_t speed_half_window_ms = 100;
  std::size_t min_pairs = 10;
};

struct PrecisionReport {
  std::vector<std::int64_t> t_ms;
  std::vector<double> errors_m;
  std::vector<double> speeds_mps;
  double mean_error_m = 0.0;
  double max_error_m = 0.0;
  double correlation = 0.0;
  /// True when either series has zero variance and the correlation is
  /// reported as 0.
  bool correlation_degenerate = false;

  std::size_t sample_count() const { return errors_m.size(); }
};

struct Pearson {
  double r = 0.0;
  bool degenerate = true;
};

inline Pearson pearson(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = std::min(x.size(), y.size());
  if (n < 2) return {};
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) return {};
  return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), false};
}

inline void require_increasing(std::span<const TimedPoint> s, const char* what) {
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (s[i].t_ms <= s[i - 1].t_ms) {
      throw Error(ErrorCode::NonMonotonicTimestamp, std::string(what) + " series is not strictly increasing");
    }
  }
}

/// Speed of a series at index i from the samples bracketing t ± h.
inline double windowed_speed(std::span<const TimedPoint> s, std::size_t i, std::int64_t h) {
  const std::int64_t t = s[i].t_ms;
  std::size_t a = i;
  while (a > 0 && s[a - 1].t_ms >= t - h) --a;
  std::size_t b = i;
  while (b + 1 < s.size() && s[b + 1].t_ms <= t + h) ++b;
  if (s[b].t_ms == s[a].t_ms) return 0.0;
  return (s[b].p - s[a].p).norm() / (static_cast<double>(s[b].t_ms - s[a].t_ms) / 1000.0);
}

/// Pairs every reference sample with the nearest follower sample in time
/// (earlier one on ties) and reports the Euclidean error, the reference
/// speed and their Pearson correlation.
inline PrecisionReport compute_metrics(std::span<const TimedPoint> reference, std::span<const TimedPoint> follower,
                                       const MetricsOptions& opts = {}) {
  require_increasing(reference, "reference");
  require_increasing(follower, "follower");
  PrecisionReport out;
  std::size_t j = 0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    if (follower.empty()) break;
    const std::int64_t t = reference[i].t_ms;
    while (j + 1 < follower.size() && follower[j + 1].t_ms <= t) ++j;
    std::size_t best = j;
    if (j + 1 < follower.size() &&
        std::llabs(follower[j + 1].t_ms - t) < std::llabs(follower[j].t_ms - t)) {
      best = j + 1;
    }
    if (std::llabs(follower[best].t_ms - t) > opts.pair_window_ms) continue;
    out.t_ms.push_back(t);
    out.errors_m.push_back((reference[i].p - follower[best].p).norm());
    out.speeds_mps.push_back(windowed_speed(reference, i, opts.speed_half_window_ms));
  }
  if (out.errors_m.size() < opts.min_pairs) {
    throw Error(ErrorCode::InsufficientData, std::to_string(out.errors_m.size()) + " aligned pairs, need " +
                                                 std::to_string(opts.min_pairs));
  }
  double sum = 0.0;
  for (double e : out.errors_m) {
    sum += e;
    out.max_error_m = std::max(out.max_error_m, e);
  }
  out.mean_error_m = sum / static_cast<double>(out.errors_m.size());
  const Pearson p = pearson(out.speeds_mps, out.errors_m);
  out.correlation = p.r;
  out.correlation_degenerate = p.degenerate;
  return out;
}

// ---------------------------------------------------------------------------
// Replay

struct SegmentStats {
  int segment = 0;
  std::size_t samples = 0;
  double mean_speed_mps = 0.0;
  double mean_error_m = 0.0;
};

struct ErrorSummary {
  std::size_t samples = 0;
  double mean_error_m = 0.0;
};

struct ReplayOptions {
  /// Samples this soon after a segment starts are left out of its mean.
  std::int64_t settle_ms = 1500;
  MetricsOptions metrics;
};

struct ReplayResult {
  std::size_t frame_count = 0;
  std::int64_t start_ms = 0;
  std::int64_t end_ms = 0;
  std::vector<TimedPoint> targets;
  std::vector<TimedPoint> ee;
  std::vector<WristSample> wrist;
  std::optional<PrecisionReport> precision;
  std::vector<int> sample_segments;  // parallel to precision series; -1 when unknown
  std::vector<SegmentStats> segments;
  std::optional<ErrorSummary> tracking_error;  // tracked wrist vs truth
  std::optional<ErrorSummary> composed_error;  // truth wrist vs end effector
  std::vector<PipelineEvent> events;
  control::ControlMode final_mode = control::ControlMode::idle;
  simarm::ArmState final_arm;
  std::vector<simarm::SceneObject> final_objects;
};

namespace detail {

inline std::optional<ErrorSummary> try_summary(std::span<const TimedPoint> ref, std::span<const TimedPoint> fol,
                                               const MetricsOptions& opts) {
  try {
    const auto r = compute_metrics(ref, fol, opts);
    return ErrorSummary{r.sample_count(), r.mean_error_m};
  } catch (const Error& e) {
    if (e.code() != ErrorCode::InsufficientData) throw;
    return std::nullopt;
  }
}

/// Index of the truth sample at or before t, or -1.
inline int truth_segment_at(std::span<const TruthSample> truth, std::int64_t t) {
  const auto it = std::upper_bound(truth.begin(), truth.end(), t,
                                   [](std::int64_t v, const TruthSample& s) { return v < s.t_ms; });
  if (it == truth.begin()) return -1;
  return std::prev(it)->segment;
}

}  // namespace detail

inline ReplayResult replay(const SessionRecord& rec, const ReplayOptions& opts = {}) {
  PipelineConfig cfg = rec.config;
  cfg.record = true;
  Pipeline pipeline(cfg);
  for (const auto& f : rec.frames) {
    pipeline.advance_to(f.t_ms);
    pipeline.ingest(f);
  }
  if (!rec.frames.empty()) pipeline.advance_to(rec.frames.back().t_ms + cfg.command_period_ms);

  ReplayResult out;
  out.frame_count = rec.frames.size();
  if (!rec.frames.empty()) {
    out.start_ms = rec.frames.front().t_ms;
    out.end_ms = rec.frames.back().t_ms;
  }
  for (const auto& s : pipeline.tracking_samples()) {
    out.targets.push_back({s.t_ms, s.target});
    out.ee.push_back({s.t_ms, s.ee});
  }
  out.wrist = pipeline.wrist_samples();
  out.events = pipeline.events();
  out.final_mode = pipeline.controller().mode();
  out.final_arm = pipeline.simulator().state();
  out.final_objects = pipeline.simulator().scene().objects;

  try {
    out.precision = compute_metrics(out.targets, out.ee, opts.metrics);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::InsufficientData) throw;
  }

  if (!rec.truth.empty()) {
    std::vector<TimedPoint> truth;
    truth.reserve(rec.truth.size());
    for (const auto& t : rec.truth) truth.push_back({t.t_ms, t.wrist});
    std::vector<TimedPoint> tracked;
    for (const auto& w : out.wrist) tracked.push_back({w.t_ms, w.position_robot});
    out.tracking_error = detail::try_summary(truth, tracked, opts.metrics);
    if (!out.ee.empty()) {
      // Only the stretch where the arm is being streamed is comparable.
      std::vector<TimedPoint> streamed_truth;
      for (const auto& t : truth) {
        if (t.t_ms >= out.ee.front().t_ms && t.t_ms <= out.ee.back().t_ms) streamed_truth.push_back(t);
      }
      out.composed_error = detail::try_summary(streamed_truth, out.ee, opts.metrics);
    }

    if (out.precision) {
      std::map<int, std::int64_t> segment_start;
      for (const auto& t : rec.truth) segment_start.try_emplace(t.segment, t.t_ms);
      std::map<int, SegmentStats> stats;
      const auto& p = *out.precision;
      for (std::size_t i = 0; i < p.sample_count(); ++i) {
        const int seg = detail::truth_segment_at(rec.truth, p.t_ms[i]);
        out.sample_segments.push_back(seg);
        if (seg < 0 || p.t_ms[i] - segment_start[seg] < opts.settle_ms) continue;
        auto& s = stats[seg];
        s.segment = seg;
        ++s.samples;
        s.mean_speed_mps += p.speeds_mps[i];
        s.mean_error_m += p.errors_m[i];
      }
      for (auto& [seg, s] : stats) {
        s.mean_speed_mps /= static_cast<double>(s.samples);
        s.mean_error_m /= static_cast<double>(s.samples);
        out.segments.push_back(s);
      }
    }
  } else if (out.precision) {
    out.sample_segments.assign(out.precision->sample_count(), -1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report outputs

inline Json report_to_json(const ReplayResult& r) {
  Json precision = nullptr;
  if (r.precision) {
    precision = {{"sample_count", r.precision->sample_count()},
                 {"mean_error_m", r.precision->mean_error_m},
                 {"max_error_m", r.precision->max_error_m},
                 {"speed_error_correlation", r.precision->correlation},
                 {"correlation_degenerate", r.precision->correlation_degenerate}};
  }
  Json segments = Json::array();
  for (const auto& s : r.segments) {
    segments.push_back({{"segment", s.segment},
                        {"samples", s.samples},
                        {"mean_speed_mps", s.mean_speed_mps},
                        {"mean_error_m", s.mean_error_m}});
  }
  auto summary = [](const std::optional<ErrorSummary>& s) -> Json {
    if (!s) return nullptr;
    return {{"sample_count", s->samples}, {"mean_error_m", s->mean_error_m}};
  };
  Json objects = Json::array();
  for (const auto& o : r.final_objects) objects.push_back({{"id", o.id}, {"position", config::to_json(o.position)}});
  Json events = Json::array();
  for (const auto& e : r.events) events.push_back({{"t_ms", e.t_ms}, {"kind", e.kind}, {"detail", e.detail}});
  Json gripper = {{"state", std::string(simarm::to_string(r.final_arm.gripper.kind))}};
  if (r.final_arm.gripper.kind == simarm::GripperKind::holding) gripper["object_id"] = r.final_arm.gripper.object_id;
  return {{"format", kReportFormat},
          {"version", kSchemaVersion},
          {"frames", r.frame_count},
          {"start_ms", r.start_ms},
          {"end_ms", r.end_ms},
          {"precision", precision},
          {"segments", segments},
          {"tracking_error", summary(r.tracking_error)},
          {"composed_error", summary(r.composed_error)},
          {"final_state",
           {{"mode", std::string(control::to_string(r.final_mode))},
            {"gripper", gripper},
            {"ee", config::to_json(r.final_arm.ee.position)},
            {"objects", objects}}},
          {"events", events}};
}

inline std::string report_text(const ReplayResult& r) {
  return report_to_json(r).dump(2) + "\n";
}

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

/// One row per aligned sample of the precision series.
inline std::string series_csv(const ReplayResult& r) {
  std::string out = "t_ms,target_x,target_y,target_z,ee_x,ee_y,ee_z,error_m,speed_mps,segment\n";
  if (!r.precision) return out;
  const auto& p = *r.precision;
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.sample_count(); ++i) {
    while (k < r.targets.size() && r.targets[k].t_ms < p.t_ms[i]) ++k;
    const auto& tgt = r.targets[k].p;
    const auto& ee = r.ee[k].p;
    out += std::to_string(p.t_ms[i]);
    for (double v : {tgt.x(), tgt.y(), tgt.z(), ee.x(), ee.y(), ee.z(), p.errors_m[i], p.speeds_mps[i]}) {
      out += ',';
      out += fmt_double(v);
    }
    out += ',' + std::to_string(r.sample_segments.empty() ? -1 : r.sample_segments[i]) + '\n';
  }
  return out;
}

/// Short human-readable digest.
inline std::string summary_text(const ReplayResult& r) {
  std::string out;
  out += "frames: " + std::to_string(r.frame_count) + " (" + std::to_string(r.end_ms - r.start_ms) + " ms)\n";
  if (r.precision) {
    out += "target vs ee: mean " + fmt_double(r.precision->mean_error_m) + " m, max " +
           fmt_double(r.precision->max_error_m) + " m over " + std::to_string(r.precision->sample_count()) +
           " samples\n";
    out += "speed-error correlation: " + fmt_double(r.precision->correlation) +
           (r.precision->correlation_degenerate ? " (degenerate)\n" : "\n");
  } else {
    out += "target vs ee: not enough streamed samples\n";
  }
  for (const auto& s : r.segments) {
    out += "  segment " + std::to_string(s.segment) + ": speed " + fmt_double(s.mean_speed_mps) + " m/s, error " +
           fmt_double(s.mean_error_m) + " m (" + std::to_string(s.samples) + " samples)\n";
  }
  if (r.tracking_error) out += "tracked vs truth: mean " + fmt_double(r.tracking_error->mean_error_m) + " m\n";
  if (r.composed_error) out += "truth vs ee: mean " + fmt_double(r.composed_error->mean_error_m) + " m\n";
  out += "final mode: " + std::string(control::to_string(r.final_mode)) + ", gripper " +
         std::string(simarm::to_string(r.final_arm.gripper.kind)) + "\n";
  return out;
}

}  // namespace teleop::session
