#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "trajector/error.hpp"
#include "trajector/face3d.hpp"
#include "trajector/ingest.hpp"

namespace trajector {

enum class Stream { FE, HP };

inline const char* stream_name(Stream s) { return s == Stream::FE ? "FE" : "HP"; }

inline constexpr int kExpressionDim = 9;
inline constexpr int kHeadPoseDim = 6;

inline int stream_dim(Stream s) { return s == Stream::FE ? kExpressionDim : kHeadPoseDim; }

struct FeatureSequence {
  Stream stream = Stream::FE;
  Eigen::MatrixXd values;  // T x d
  double fps = 25.0;
  std::string video_id;
  std::optional<Label> label;

  Eigen::Index length() const { return values.rows(); }
};

// Outer eye corner distance (36 <-> 45).
inline double interocular_distance(const Shape3d& s) { return (s.row(36) - s.row(45)).norm(); }

namespace detail {

// Interior angle at `vertex` between the rays to `a` and `b`, in the frontal
// (x, y) plane.
inline double interior_angle(const Shape3d& s, int a, int vertex, int b) {
  const Eigen::Vector2d u(s(a, 0) - s(vertex, 0), s(a, 1) - s(vertex, 1));
  const Eigen::Vector2d v(s(b, 0) - s(vertex, 0), s(b, 1) - s(vertex, 1));
  return std::atan2(std::abs(u.x() * v.y() - u.y() * v.x()), u.dot(v));
}

inline double mean_y(const Shape3d& s, int first, int last) {
  double sum = 0.0;
  for (int i = first; i <= last; ++i) sum += s(i, 1);
  return sum / (last - first + 1);
}

}  // namespace detail

// Expression vector of one frontal frame. Lengths are divided by `normalizer`
// (the first-frame inter-ocular distance); f3 is in radians.
//   f1 right-brow mean height      f2 left-brow mean height
//   f3 brow angle at 19 minus 24   f4 y36 - y45
//   f5 |x39 - x42|                 f6 mean eye opening
//   f7 |x48 - x54|                 f8 |y51 - y57|
//   f9 (y48 + y54) / 2
inline Eigen::Matrix<double, kExpressionDim, 1> expression_features(const FrontalFrame& frame, double normalizer) {
  if (!(normalizer > 0.0)) throw SequenceError("inter-ocular distance must be positive");
  const Shape3d& s = frame.points3d;
  const double k = 1.0 / normalizer;
  Eigen::Matrix<double, kExpressionDim, 1> f;
  f(0) = detail::mean_y(s, 17, 21) * k;
  f(1) = detail::mean_y(s, 22, 26) * k;
  f(2) = detail::interior_angle(s, 17, 19, 21) - detail::interior_angle(s, 22, 24, 26);
  f(3) = (s(36, 1) - s(45, 1)) * k;
  f(4) = std::abs(s(39, 0) - s(42, 0)) * k;
  f(5) = 0.25 * (std::abs(s(37, 1) - s(41, 1)) + std::abs(s(38, 1) - s(40, 1)) + std::abs(s(43, 1) - s(47, 1)) +
                 std::abs(s(44, 1) - s(46, 1))) * k;
  f(6) = std::abs(s(48, 0) - s(54, 0)) * k;
  f(7) = std::abs(s(51, 1) - s(57, 1)) * k;
  f(8) = 0.5 * (s(48, 1) + s(54, 1)) * k;
  return f;
}

// [tx, ty, 1/scale, roll, pitch, yaw]; 1/scale stands in for depth.
inline Eigen::Matrix<double, kHeadPoseDim, 1> head_pose_features(const PoseFrame& pose) {
  Eigen::Matrix<double, kHeadPoseDim, 1> h;
  h << pose.tx, pose.ty, 1.0 / pose.scale, pose.roll, pose.pitch, pose.yaw;
  return h;
}

struct FeatureParams {
  int max_gap = kDefaultMaxGap;
  FrontalizeOptions frontalize;
  double max_step = kDefaultMaxStep;  // at 25 fps; rescaled by the track's fps
  double symmetry_bound = 0.1;
};

struct SequencePair {
  FeatureSequence fe;
  FeatureSequence hp;
};

// Gap repair -> frontalization -> geometric constraints -> per-frame features.
inline SequencePair build_sequences(const LandmarkTrack& track, const ShapeModel& model,
                                    const FeatureParams& params = {}) {
  const LandmarkTrack repaired = interpolate_gaps(track, params.max_gap);
  auto frames = frontalize_track(repaired, model, params.frontalize);
  ConstraintOptions constraints;
  constraints.max_step = max_step_for_fps(params.max_step, repaired.fps);
  constraints.symmetry_bound = params.symmetry_bound;
  frames = apply_geometric_constraints(std::move(frames), constraints);

  const auto T = static_cast<Eigen::Index>(frames.size());
  SequencePair out;
  out.fe = {Stream::FE, Eigen::MatrixXd(T, kExpressionDim), repaired.fps, repaired.video_id, repaired.label};
  out.hp = {Stream::HP, Eigen::MatrixXd(T, kHeadPoseDim), repaired.fps, repaired.video_id, repaired.label};
  const double normalizer = interocular_distance(frames.front().points3d);
  for (Eigen::Index t = 0; t < T; ++t) {
    const auto& f = frames[static_cast<std::size_t>(t)];
    out.fe.values.row(t) = expression_features(f, normalizer).transpose();
    out.hp.values.row(t) = head_pose_features(f.pose).transpose();
  }
  return out;
}

}  // namespace trajector
