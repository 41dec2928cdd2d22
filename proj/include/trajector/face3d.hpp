#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "trajector/error.hpp"
#include "trajector/ingest.hpp"
#include "trajector/shape_model.hpp"

namespace trajector {

using Matrix3 = Eigen::Matrix3d;

// Maps homogeneous model points [X; 1] to image pixels. Image convention:
// x to the right, y down (as emitted by landmark detectors).
struct AffineCamera {
  Eigen::Matrix<double, 2, 4> P = Eigen::Matrix<double, 2, 4>::Zero();

  Eigen::Vector2d project(const Eigen::Vector3d& X) const {
    return P.leftCols<3>() * X + P.col(3);
  }
};

// Rigid head pose. Angles in radians, translations in model units. tz is not
// observable through an affine camera and is always 0; distance to the camera
// shows up in `scale` (pixels per model unit).
struct PoseFrame {
  double pitch = 0.0;
  double yaw = 0.0;
  double roll = 0.0;
  double tx = 0.0;
  double ty = 0.0;
  double tz = 0.0;
  double scale = 1.0;
};

struct FrontalFrame {
  Shape3d points3d = Shape3d::Zero();
  PoseFrame pose;
  double residual = 0.0;  // RMS reprojection error, pixels
  Eigen::VectorXd alpha;
  bool asymmetric = false;  // set by apply_geometric_constraints
};

// shape = mean + sum_n alpha_n * sigma_n * component_n
inline Shape3d synthesize_shape(const ShapeModel& model, const Eigen::VectorXd& alpha) {
  if (alpha.size() != model.n_components())
    throw GeometryError("coefficient count " + std::to_string(alpha.size()) + " != " +
                        std::to_string(model.n_components()));
  Shape3d shape = model.mean;
  for (int n = 0; n < model.n_components(); ++n)
    shape += (alpha(n) * model.sigmas[static_cast<std::size_t>(n)]) * model.components[static_cast<std::size_t>(n)];
  return shape;
}

// R = Rx(pitch) * Ry(yaw) * Rz(roll), acting on column vectors.
inline Matrix3 euler_to_matrix(double pitch, double yaw, double roll) {
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  const double cr = std::cos(roll), sr = std::sin(roll);
  Matrix3 rx, ry, rz;
  rx << 1, 0, 0, 0, cp, -sp, 0, sp, cp;
  ry << cy, 0, sy, 0, 1, 0, -sy, 0, cy;
  rz << cr, -sr, 0, sr, cr, 0, 0, 0, 1;
  return rx * ry * rz;
}

struct EulerAngles {
  double pitch = 0.0;
  double yaw = 0.0;
  double roll = 0.0;
};

// Inverse of euler_to_matrix. With R = Rx*Ry*Rz:
//   R(0,2) = sin(yaw), R(0,0) = cos(yaw)cos(roll), R(0,1) = -cos(yaw)sin(roll),
//   R(1,2) = -sin(pitch)cos(yaw), R(2,2) = cos(pitch)cos(yaw).
inline EulerAngles matrix_to_euler(const Matrix3& R) {
  if (((R.transpose() * R) - Matrix3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
    throw GeometryError("matrix is not orthonormal");
  const double cos_yaw = std::hypot(R(0, 0), R(0, 1));
  if (cos_yaw <= std::sin(1e-6)) throw GimbalLockError("yaw within 1e-6 rad of +-pi/2");
  EulerAngles a;
  a.yaw = std::atan2(R(0, 2), cos_yaw);
  a.roll = std::atan2(-R(0, 1), R(0, 0));
  a.pitch = std::atan2(-R(1, 2), R(2, 2));
  return a;
}

// Inverse of decompose_camera: u = s (r1.X + tx), v = -s (r2.X + ty).
inline AffineCamera compose_camera(const PoseFrame& pose) {
  const Matrix3 R = euler_to_matrix(pose.pitch, pose.yaw, pose.roll);
  AffineCamera cam;
  cam.P.row(0) << pose.scale * R.row(0), pose.scale * pose.tx;
  cam.P.row(1) << -pose.scale * R.row(1), -pose.scale * pose.ty;
  return cam;
}

struct CameraFit {
  AffineCamera camera;
  double rms_residual = 0.0;
};

template <typename Points2, typename Points3>
double reprojection_rms(const AffineCamera& camera, const Points2& x, const Points3& X) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::Vector3d p = X.row(i).transpose();
    sum += (x.row(i).transpose() - camera.project(p)).squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(x.rows()));
}

// Gold-standard affine camera estimation: normalize both point sets
// (centroid to origin, RMS distance sqrt(2) in 2D and sqrt(3) in 3D), solve the
// linear least-squares problem for the 2x4 camera, then undo the normalization.
inline CameraFit fit_camera_gold_standard(const Eigen::Ref<const Eigen::MatrixX2d>& x,
                                          const Eigen::Ref<const Eigen::MatrixX3d>& X) {
  const Eigen::Index n = x.rows();
  if (n != X.rows()) throw GeometryError("2D/3D point count mismatch");
  if (n < 4) throw GeometryError("need at least 4 point pairs");

  const Eigen::RowVector2d c2 = x.colwise().mean();
  const Eigen::RowVector3d c3 = X.colwise().mean();
  const double rms2 = std::sqrt((x.rowwise() - c2).rowwise().squaredNorm().mean());
  const double rms3 = std::sqrt((X.rowwise() - c3).rowwise().squaredNorm().mean());
  if (!(rms2 > 0.0) || !(rms3 > 0.0)) throw GeometryError("degenerate point set");
  const double k2 = std::sqrt(2.0) / rms2;
  const double k3 = std::sqrt(3.0) / rms3;

  Eigen::MatrixXd A(n, 4);
  A.leftCols<3>() = k3 * (X.rowwise() - c3);
  A.col(3).setOnes();
  const Eigen::MatrixX2d b = k2 * (x.rowwise() - c2);

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv(3) <= 1e-9 * sv(0)) throw GeometryError("degenerate geometry: 3D points are coplanar");
  const Eigen::Matrix<double, 4, 2> pn = svd.solve(b);

  // x = c2 + (1/k2) * Pn * [k3 (X - c3); 1]
  CameraFit fit;
  const Eigen::Matrix<double, 2, 3> m = (k3 / k2) * pn.topRows<3>().transpose();
  fit.camera.P.leftCols<3>() = m;
  fit.camera.P.col(3) = c2.transpose() + pn.row(3).transpose() / k2 - m * c3.transpose();
  fit.rms_residual = reprojection_rms(fit.camera, x, X);
  return fit;
}

inline PoseFrame decompose_camera(const AffineCamera& camera) {
  Eigen::Matrix<double, 2, 3> m = camera.P.leftCols<3>();
  Eigen::Vector2d t = camera.P.col(3);
  m.row(1) *= -1.0;  // image y-down -> model y-up
  t(1) *= -1.0;

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(m), Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (!(sv(1) > 1e-12 * sv(0))) throw GeometryError("camera is rank deficient");
  const Eigen::Matrix<double, 2, 3> rows = svd.matrixU() * svd.matrixV().transpose();

  Matrix3 R;
  R.row(0) = rows.row(0);
  R.row(1) = rows.row(1);
  R.row(2) = rows.row(0).cross(rows.row(1));

  PoseFrame pose;
  pose.scale = 0.5 * (m.row(0).norm() + m.row(1).norm());
  const EulerAngles a = matrix_to_euler(R);
  pose.pitch = a.pitch;
  pose.yaw = a.yaw;
  pose.roll = a.roll;
  pose.tx = t(0) / pose.scale;
  pose.ty = t(1) / pose.scale;
  pose.tz = 0.0;
  return pose;
}

// argmin_alpha sum_i |x_i - P [shape(alpha)_i; 1]|^2 + lambda |alpha|^2, solved
// in closed form (the residual is linear in alpha for a fixed camera).
inline Eigen::VectorXd fit_shape_coeffs(const Points2d& x, const AffineCamera& camera, const ShapeModel& model,
                                        double lambda) {
  if (lambda < 0.0) throw GeometryError("lambda must be non-negative");
  const int n = model.n_components();
  const Eigen::Matrix<double, 2, 3> m = camera.P.leftCols<3>();
  const Eigen::Vector2d t = camera.P.col(3);

  Eigen::MatrixXd J(2 * kNumLandmarks, n);
  Eigen::VectorXd b(2 * kNumLandmarks);
  for (int i = 0; i < kNumLandmarks; ++i) {
    b.segment<2>(2 * i) = x.row(i).transpose() - m * model.mean.row(i).transpose() - t;
    for (int c = 0; c < n; ++c) {
      const auto cu = static_cast<std::size_t>(c);
      J.block<2, 1>(2 * i, c) = model.sigmas[cu] * (m * model.components[cu].row(i).transpose());
    }
  }
  if (lambda == 0.0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(J);
    qr.setThreshold(1e-10);
    if (qr.rank() < n) throw GeometryError("singular shape system (rank deficient, lambda = 0)");
    return qr.solve(b);
  }
  Eigen::MatrixXd normal = J.transpose() * J;
  normal.diagonal().array() += lambda;
  return normal.llt().solve(J.transpose() * b);
}

struct FrontalizeOptions {
  double lambda = 1e-2;
  int iterations = 3;
};

// Per frame: alternate camera fit (against the current shape, starting from
// the mean) and shape-coefficient fit. The frontal shape is the fitted model
// shape in canonical coordinates; head motion is carried by the pose.
inline FrontalFrame frontalize_frame(const Points2d& x, const ShapeModel& model, const FrontalizeOptions& options) {
  FrontalFrame out;
  Shape3d shape = model.mean;
  AffineCamera camera;
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(model.n_components());
  for (int it = 0; it < options.iterations; ++it) {
    camera = fit_camera_gold_standard(x, shape).camera;
    alpha = fit_shape_coeffs(x, camera, model, options.lambda);
    shape = synthesize_shape(model, alpha);
  }
  out.points3d = shape;
  out.alpha = alpha;
  out.pose = decompose_camera(camera);
  out.residual = reprojection_rms(camera, x, shape);
  return out;
}

inline std::vector<FrontalFrame> frontalize_track(const LandmarkTrack& track, const ShapeModel& model,
                                                  const FrontalizeOptions& options = {}) {
  if (track.frames.size() < 2) throw SequenceError("track too short: need at least 2 frames");
  std::vector<FrontalFrame> frames;
  frames.reserve(track.frames.size());
  for (std::size_t k = 0; k < track.frames.size(); ++k) {
    try {
      frames.push_back(frontalize_frame(track.frames[k].points, model, options));
    } catch (const GeometryError& e) {
      throw FrameFitError(k, e.what());
    }
  }
  return frames;
}

inline constexpr double kDefaultMaxStep = 0.05;  // model units per frame at 25 fps

inline double max_step_for_fps(double base_step, double fps) { return base_step * 25.0 / fps; }

struct ConstraintOptions {
  double max_step = kDefaultMaxStep;
  double symmetry_bound = 0.1;  // |y36 - y45| in model units
};

// Temporal continuity clamp on each landmark plus a bilateral-symmetry flag on
// the outer eye corners. The flag never modifies points.
inline std::vector<FrontalFrame> apply_geometric_constraints(std::vector<FrontalFrame> frames,
                                                             const ConstraintOptions& options = {}) {
  // Relative slack so a step clamped to exactly max_step is not re-clamped by
  // rounding on a second pass.
  const double limit = options.max_step * (1.0 + 1e-12);
  for (std::size_t t = 1; t < frames.size(); ++t) {
    const Shape3d& prev = frames[t - 1].points3d;
    Shape3d& cur = frames[t].points3d;
    for (int i = 0; i < kNumLandmarks; ++i) {
      const Eigen::RowVector3d step = cur.row(i) - prev.row(i);
      const double len = step.norm();
      if (len > limit) cur.row(i) = prev.row(i) + step * (options.max_step / len);
    }
  }
  for (auto& f : frames) f.asymmetric = std::abs(f.points3d(36, 1) - f.points3d(45, 1)) > options.symmetry_bound;
  return frames;
}

}  // namespace trajector
