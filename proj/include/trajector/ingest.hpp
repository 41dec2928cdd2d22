#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "trajector/error.hpp"
#include "trajector/io.hpp"

namespace trajector {

// iBUG-300W 68-point layout.
inline constexpr int kNumLandmarks = 68;

using Points2d = Eigen::Matrix<double, kNumLandmarks, 2, Eigen::RowMajor>;

enum class Label : int { real = 0, fake = 1 };

struct LandmarkFrame {
  std::int64_t frame_index = 0;
  Points2d points = Points2d::Zero();
  std::optional<double> confidence;

  bool operator==(const LandmarkFrame&) const = default;
};

struct LandmarkTrack {
  std::string video_id;
  double fps = 25.0;
  std::vector<LandmarkFrame> frames;
  std::optional<Label> label;
  // Set by interpolate_gaps when a gap longer than the bound cut the track.
  bool truncated = false;

  bool operator==(const LandmarkTrack&) const = default;
};

inline constexpr int kDefaultMaxGap = 5;

namespace detail {

inline double require_number(const nlohmann::json& value, const char* what) {
  if (!value.is_number()) throw TrackError(std::string("malformed JSON: ") + what + " is not a number");
  const double v = value.get<double>();
  if (!std::isfinite(v)) throw TrackError(std::string("non-finite coordinate in ") + what);
  return v;
}

}  // namespace detail

// Parses and validates a track document:
//   {"video_id": str, "fps": num, "label": 0|1|null,
//    "frames": [{"frame": int, "points": [[x,y] x 68], "conf": num|null}, ...]}
inline LandmarkTrack parse_track(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::out_of_range& e) {
    // Numbers beyond the double range, e.g. 1e999.
    throw TrackError(std::string("non-finite coordinate: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw TrackError(std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw TrackError("malformed JSON: top level is not an object");

  LandmarkTrack track;
  if (!doc.contains("video_id") || !doc["video_id"].is_string())
    throw TrackError("malformed JSON: missing video_id");
  track.video_id = doc["video_id"].get<std::string>();

  if (!doc.contains("fps")) throw TrackError("malformed JSON: missing fps");
  track.fps = detail::require_number(doc["fps"], "fps");
  if (track.fps <= 0.0) throw TrackError("fps must be positive");

  if (doc.contains("label") && !doc["label"].is_null()) {
    const auto& label = doc["label"];
    if (!label.is_number_integer() || (label.get<int>() != 0 && label.get<int>() != 1))
      throw TrackError("label must be 0, 1 or null");
    track.label = static_cast<Label>(label.get<int>());
  }

  if (!doc.contains("frames") || !doc["frames"].is_array())
    throw TrackError("malformed JSON: missing frames array");
  for (const auto& jf : doc["frames"]) {
    LandmarkFrame frame;
    if (!jf.is_object() || !jf.contains("frame") || !jf["frame"].is_number_integer())
      throw TrackError("malformed JSON: frame entry without integer \"frame\"");
    frame.frame_index = jf["frame"].get<std::int64_t>();
    if (frame.frame_index < 0) throw TrackError("negative frame index");
    if (!track.frames.empty() && frame.frame_index <= track.frames.back().frame_index)
      throw TrackError("non-monotone frame index at frame " + std::to_string(frame.frame_index));

    if (!jf.contains("points") || !jf["points"].is_array())
      throw TrackError("malformed JSON: frame without points");
    const auto& pts = jf["points"];
    if (pts.size() != kNumLandmarks)
      throw TrackError("point count " + std::to_string(pts.size()) + " != 68 in frame " +
                       std::to_string(frame.frame_index));
    for (int i = 0; i < kNumLandmarks; ++i) {
      const auto& p = pts[static_cast<std::size_t>(i)];
      if (!p.is_array() || p.size() != 2) throw TrackError("malformed JSON: point is not [x, y]");
      frame.points(i, 0) = detail::require_number(p[0], "point");
      frame.points(i, 1) = detail::require_number(p[1], "point");
    }
    if (jf.contains("conf") && !jf["conf"].is_null()) {
      const double c = detail::require_number(jf["conf"], "conf");
      if (c < 0.0 || c > 1.0) throw TrackError("confidence outside [0,1]");
      frame.confidence = c;
    }
    track.frames.push_back(std::move(frame));
  }
  return track;
}

inline LandmarkTrack load_track(const std::filesystem::path& path) {
  return parse_track(read_file(path));
}

inline std::string serialize_track(const LandmarkTrack& track) {
  nlohmann::json doc;
  doc["video_id"] = track.video_id;
  doc["fps"] = track.fps;
  doc["label"] = track.label ? nlohmann::json(static_cast<int>(*track.label)) : nlohmann::json(nullptr);
  auto frames = nlohmann::json::array();
  for (const auto& f : track.frames) {
    nlohmann::json jf;
    jf["frame"] = f.frame_index;
    auto pts = nlohmann::json::array();
    for (int i = 0; i < kNumLandmarks; ++i) pts.push_back({f.points(i, 0), f.points(i, 1)});
    jf["points"] = std::move(pts);
    jf["conf"] = f.confidence ? nlohmann::json(*f.confidence) : nlohmann::json(nullptr);
    frames.push_back(std::move(jf));
  }
  doc["frames"] = std::move(frames);
  return doc.dump();
}

// Fills missing frame indices by per-coordinate linear interpolation when the
// gap is at most max_gap frames. A longer gap truncates the track at its start
// and sets `truncated`.
inline LandmarkTrack interpolate_gaps(const LandmarkTrack& track, int max_gap = kDefaultMaxGap) {
  LandmarkTrack out = track;
  out.frames.clear();
  if (track.frames.empty()) return out;
  out.frames.push_back(track.frames.front());
  for (std::size_t k = 1; k < track.frames.size(); ++k) {
    const auto& prev = track.frames[k - 1];
    const auto& next = track.frames[k];
    const std::int64_t missing = next.frame_index - prev.frame_index - 1;
    if (missing > max_gap) {
      out.truncated = true;
      break;
    }
    for (std::int64_t j = 1; j <= missing; ++j) {
      const double t = static_cast<double>(j) / static_cast<double>(missing + 1);
      LandmarkFrame filled;
      filled.frame_index = prev.frame_index + j;
      filled.points = (1.0 - t) * prev.points + t * next.points;
      out.frames.push_back(std::move(filled));
    }
    out.frames.push_back(next);
  }
  return out;
}

// Dataset manifest: CSV with header "path,label"; relative paths resolve
// against the manifest's directory.
struct ManifestEntry {
  std::filesystem::path path;
  Label label = Label::real;
};

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest) {
  std::istringstream in(read_file(manifest));
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty manifest " + manifest.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "path,label") throw IoError("manifest header must be \"path,label\"");
  std::vector<ManifestEntry> entries;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw IoError("bad manifest row: " + line);
    ManifestEntry e;
    e.path = line.substr(0, comma);
    const std::string label = line.substr(comma + 1);
    if (label == "0") {
      e.label = Label::real;
    } else if (label == "1") {
      e.label = Label::fake;
    } else {
      throw IoError("bad manifest label: " + label);
    }
    if (e.path.is_relative()) e.path = manifest.parent_path() / e.path;
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace trajector
