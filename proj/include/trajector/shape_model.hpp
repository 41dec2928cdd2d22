#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "trajector/error.hpp"
#include "trajector/ingest.hpp"
#include "trajector/io.hpp"

namespace trajector {

// 68x3, one landmark per row, (x, y, z) in model units. Row-major so that the
// flattened layout is (landmark, xyz), matching the model file format.
using Shape3d = Eigen::Matrix<double, kNumLandmarks, 3, Eigen::RowMajor>;

// PCA face shape model: shape = mean + sum_n alpha_n * sigma_n * component_n.
struct ShapeModel {
  Shape3d mean = Shape3d::Zero();
  std::vector<Shape3d> components;
  std::vector<double> sigmas;

  int n_components() const { return static_cast<int>(components.size()); }

  // Throws GeometryError unless components are orthonormal (|<u,v>| <= 1e-9,
  // unit norm within 1e-9) and every sigma is positive.
  void validate() const {
    if (components.empty()) throw GeometryError("shape model has no components");
    if (components.size() != sigmas.size()) throw GeometryError("component/sigma count mismatch");
    for (std::size_t a = 0; a < components.size(); ++a) {
      if (!(sigmas[a] > 0.0) || !std::isfinite(sigmas[a])) throw GeometryError("sigma must be positive");
      for (std::size_t b = a; b < components.size(); ++b) {
        const double dot = components[a].cwiseProduct(components[b]).sum();
        const double expected = a == b ? 1.0 : 0.0;
        if (std::abs(dot - expected) > 1e-9) throw GeometryError("shape components are not orthonormal");
      }
    }
  }
};

// Mirror partner of each landmark under the x -> -x reflection.
inline constexpr std::array<int, kNumLandmarks> kMirrorIndex = {
    16, 15, 14, 13, 12, 11, 10, 9,  8,  7,  6,  5,  4,  3,  2,  1,  0,   // jaw
    26, 25, 24, 23, 22, 21, 20, 19, 18, 17,                              // brows
    27, 28, 29, 30, 35, 34, 33, 32, 31,                                  // nose
    45, 44, 43, 42, 47, 46, 39, 38, 37, 36, 41, 40,                      // eyes
    54, 53, 52, 51, 50, 49, 48, 59, 58, 57, 56, 55,                      // outer lip
    64, 63, 62, 61, 60, 67, 66, 65};                                     // inner lip

namespace detail {

inline double face_depth(double x) {
  const double u = x / 0.9;
  return 0.42 * (1.0 - u * u);
}

// Parametric bilaterally symmetric mean face. Outer eye corners (36, 45) are
// one model unit apart; y points up, z towards the camera.
inline Shape3d parametric_mean_face() {
  Shape3d s = Shape3d::Zero();
  auto set = [&](int i, double x, double y, double z) { s.row(i) << x, y, z; };

  for (int k = 0; k <= 8; ++k) {
    const double theta = std::numbers::pi * (1.0 + k / 16.0);
    const double x = k == 8 ? 0.0 : 0.8 * std::cos(theta);
    const double y = 0.2 + 1.1 * std::sin(theta);
    const double u = x / 0.8;
    set(k, x, y, -0.3 + 0.45 * (1.0 - u * u));
  }
  const double brow_x[] = {-0.68, -0.56, -0.42, -0.28, -0.16};
  const double brow_y[] = {0.50, 0.57, 0.59, 0.57, 0.53};
  for (int k = 0; k < 5; ++k) set(17 + k, brow_x[k], brow_y[k], face_depth(brow_x[k]) - 0.02);

  const double bridge_y[] = {0.40, 0.27, 0.14, 0.01};
  const double bridge_dz[] = {0.02, 0.08, 0.14, 0.22};
  for (int k = 0; k < 4; ++k) set(27 + k, 0.0, bridge_y[k], face_depth(0.0) + bridge_dz[k]);
  set(31, -0.17, -0.08, face_depth(-0.17) + 0.02);
  set(32, -0.09, -0.11, face_depth(-0.09) + 0.07);
  set(33, 0.00, -0.13, face_depth(0.0) + 0.10);

  const double eye[6][2] = {{-0.50, 0.30}, {-0.40, 0.35}, {-0.27, 0.35},
                            {-0.17, 0.30}, {-0.27, 0.26}, {-0.40, 0.26}};
  for (int k = 0; k < 6; ++k) set(36 + k, eye[k][0], eye[k][1], face_depth(eye[k][0]) - 0.03);

  const double outer_lip[][2] = {{-0.30, -0.45}, {-0.20, -0.38}, {-0.08, -0.35}, {0.00, -0.36}};
  for (int k = 0; k < 4; ++k)
    set(48 + k, outer_lip[k][0], outer_lip[k][1], face_depth(outer_lip[k][0]) + (k == 0 ? 0.0 : 0.03));
  const double lower_lip[][2] = {{0.00, -0.58}, {-0.08, -0.57}, {-0.20, -0.53}};
  for (int k = 0; k < 3; ++k)
    set(57 + k, lower_lip[k][0], lower_lip[k][1], face_depth(lower_lip[k][0]) + 0.03);
  set(60, -0.25, -0.45, face_depth(-0.25) + 0.01);
  set(61, -0.08, -0.42, face_depth(-0.08) + 0.02);
  set(62, 0.00, -0.42, face_depth(0.0) + 0.02);
  set(66, 0.00, -0.48, face_depth(0.0) + 0.02);
  set(67, -0.08, -0.48, face_depth(-0.08) + 0.02);

  // Left half by reflection; midline landmarks are their own partners.
  for (int i = 0; i < kNumLandmarks; ++i) {
    const int j = kMirrorIndex[static_cast<std::size_t>(i)];
    if (s(i, 0) < 0.0 && j != i) s.row(j) << -s(i, 0), s(i, 1), s(i, 2);
  }
  return s;
}

inline std::vector<Shape3d> raw_deformation_fields(const Shape3d& mean) {
  std::vector<Shape3d> fields;
  auto field = [&] { return Shape3d(Shape3d::Zero()); };

  Shape3d brow_raise = field();
  for (int i = 17; i <= 26; ++i) brow_raise(i, 1) = 1.0;
  fields.push_back(brow_raise);

  Shape3d brow_tilt = field();
  for (int i = 17; i <= 21; ++i) brow_tilt(i, 1) = 1.0;
  for (int i = 22; i <= 26; ++i) brow_tilt(i, 1) = -1.0;
  fields.push_back(brow_tilt);

  Shape3d eye_open = field();
  for (int i : {37, 38, 43, 44}) eye_open(i, 1) = 1.0;
  for (int i : {40, 41, 46, 47}) eye_open(i, 1) = -1.0;
  fields.push_back(eye_open);

  Shape3d jaw_drop = field();
  for (int i : {55, 56, 57, 58, 59, 65, 66, 67}) jaw_drop(i, 1) = -1.0;
  for (int i = 4; i <= 12; ++i) jaw_drop(i, 1) = -1.0 + 0.15 * std::abs(i - 8);
  fields.push_back(jaw_drop);

  Shape3d smile = field();
  for (int i : {48, 60}) smile.row(i) << -1.0, 1.0, -0.3;
  for (int i : {54, 64}) smile.row(i) << 1.0, 1.0, -0.3;
  for (int i : {49, 53, 59, 55}) smile(i, 1) = 0.5;
  fields.push_back(smile);

  Shape3d pucker = field();
  for (int i = 48; i <= 67; ++i) pucker.row(i) << -1.5 * mean(i, 0), 0.0, 0.5;
  fields.push_back(pucker);

  Shape3d jaw_width = field();
  for (int i = 0; i <= 16; ++i) jaw_width(i, 0) = mean(i, 0);
  fields.push_back(jaw_width);

  Shape3d nose_length = field();
  for (int i = 28; i <= 35; ++i) nose_length(i, 1) = i <= 30 ? -0.4 * (i - 27) : -1.0;
  fields.push_back(nose_length);

  Shape3d eye_spacing = field();
  for (int i = 36; i <= 47; ++i) eye_spacing(i, 0) = mean(i, 0) < 0.0 ? -1.0 : 1.0;
  fields.push_back(eye_spacing);

  Shape3d lip_thickness = field();
  for (int i : {49, 50, 51, 52, 53}) lip_thickness(i, 1) = 1.0;
  for (int i : {55, 56, 57, 58, 59}) lip_thickness(i, 1) = -1.0;
  fields.push_back(lip_thickness);
  return fields;
}

}  // namespace detail

// Default synthetic PCA basis with 10 components. Each deformation field is
// projected off the 12-dimensional span of 3D affine maps of the mean shape
// (so components never mimic a change of camera) and then orthonormalized.
inline ShapeModel default_shape_model() {
  ShapeModel model;
  model.mean = detail::parametric_mean_face();

  std::vector<Shape3d> affine_span;
  for (int axis = 0; axis < 3; ++axis) {
    for (int source = 0; source < 4; ++source) {
      Shape3d d = Shape3d::Zero();
      d.col(axis) = source < 3 ? Eigen::VectorXd(model.mean.col(source))
                               : Eigen::VectorXd(Eigen::VectorXd::Ones(kNumLandmarks));
      affine_span.push_back(d);
    }
  }
  // Orthonormal basis of the affine span first, then the deformations against
  // it. Two Gram-Schmidt passes keep the inner products at rounding level.
  std::vector<Shape3d> basis;
  auto orthonormalize_into = [&basis](Shape3d v) {
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& b : basis) v -= b.cwiseProduct(v).sum() * b;
    v /= v.norm();
    basis.push_back(v);
  };
  for (const auto& a : affine_span) orthonormalize_into(a);
  for (const auto& f : detail::raw_deformation_fields(model.mean)) {
    orthonormalize_into(f);
    model.components.push_back(basis.back());
  }
  model.sigmas = {0.06, 0.03, 0.04, 0.08, 0.05, 0.04, 0.05, 0.03, 0.03, 0.03};
  return model;
}

inline nlohmann::json shape_model_to_json(const ShapeModel& model) {
  auto flat = [](const Shape3d& s) { return std::vector<double>(s.data(), s.data() + s.size()); };
  nlohmann::json doc;
  doc["n_components"] = model.n_components();
  doc["mean"] = flat(model.mean);
  doc["components"] = nlohmann::json::array();
  for (const auto& c : model.components) doc["components"].push_back(flat(c));
  doc["sigma"] = model.sigmas;
  return doc;
}

inline ShapeModel shape_model_from_json(const nlohmann::json& doc) {
  auto unflat = [](const nlohmann::json& values) {
    const auto v = values.get<std::vector<double>>();
    if (v.size() != 3 * kNumLandmarks) throw GeometryError("shape vector must have 204 entries");
    return Shape3d(Eigen::Map<const Shape3d>(v.data()));
  };
  ShapeModel model;
  try {
    const int n = doc.at("n_components").get<int>();
    model.mean = unflat(doc.at("mean"));
    for (const auto& c : doc.at("components")) model.components.push_back(unflat(c));
    model.sigmas = doc.at("sigma").get<std::vector<double>>();
    if (model.n_components() != n) throw GeometryError("n_components does not match component list");
  } catch (const nlohmann::json::exception& e) {
    throw GeometryError(std::string("malformed shape model: ") + e.what());
  }
  model.validate();
  return model;
}

inline ShapeModel load_shape_model(const std::filesystem::path& path) {
  try {
    return shape_model_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw GeometryError(std::string("malformed shape model: ") + e.what());
  }
}

}  // namespace trajector
