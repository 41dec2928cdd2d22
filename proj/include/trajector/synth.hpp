#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "trajector/error.hpp"
#include "trajector/face3d.hpp"
#include "trajector/ingest.hpp"
#include "trajector/rng.hpp"
#include "trajector/shape_model.hpp"

namespace trajector {

// Seeded generator of labelled landmark tracks. Real tracks move smoothly;
// fake tracks share the generative process and add per-frame landmark jitter
// and short expression discontinuities.
struct SynthConfig {
  int n_frames = 150;
  double fps = 25.0;
  double head_motion_amplitude = 0.35;  // radians
  double expression_amplitude = 1.0;    // PCA coefficient units
  double fake_jitter_std = 0.02;        // model units, per coordinate
  double fake_dropout_prob = 0.05;      // per frame
  double detector_noise_px = 0.5;       // 2D localization noise, both labels
  std::uint64_t seed = 1;

  void validate() const {
    if (n_frames <= 0) throw TrackError("n_frames must be positive");
    if (!(fps > 0.0)) throw TrackError("fps must be positive");
    if (head_motion_amplitude < 0.0 || expression_amplitude < 0.0 || fake_jitter_std < 0.0 ||
        detector_noise_px < 0.0)
      throw TrackError("amplitudes must be non-negative");
    if (fake_dropout_prob < 0.0 || fake_dropout_prob > 1.0) throw TrackError("fake_dropout_prob outside [0,1]");
  }
};

namespace detail {

// Sum of 1..max_terms sinusoids whose amplitudes add up to at most `amplitude`.
class SmoothCurve {
 public:
  SmoothCurve(Rng& rng, double amplitude, double min_hz, double max_hz, int max_terms) {
    const int terms = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_terms)));
    double total = 0.0;
    for (int k = 0; k < terms; ++k) {
      Term term;
      term.weight = rng.uniform(0.2, 1.0);
      term.hz = rng.uniform(min_hz, max_hz);
      term.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      total += term.weight;
      terms_.push_back(term);
    }
    const double budget = amplitude * rng.uniform(0.4, 1.0);
    for (auto& term : terms_) term.weight *= budget / total;
  }

  double operator()(double seconds) const {
    double v = 0.0;
    for (const auto& term : terms_) v += term.weight * std::sin(2.0 * std::numbers::pi * term.hz * seconds + term.phase);
    return v;
  }

 private:
  struct Term {
    double weight, hz, phase;
  };
  std::vector<Term> terms_;
};

inline constexpr int kEyeOpenComponent = 2;
// Components treated as identity (constant per video) by the generator.
inline bool is_identity_component(int n) { return n == 6 || n == 7 || n == 8; }

}  // namespace detail

inline LandmarkTrack synth_track(const SynthConfig& config, Label label, const ShapeModel& model,
                                 std::string video_id = {}) {
  config.validate();
  Rng motion(derive_seed(config.seed, 1));
  Rng artifacts(derive_seed(config.seed, 2));
  Rng detector(derive_seed(config.seed, 3));

  const double amp = config.head_motion_amplitude;
  const detail::SmoothCurve pitch(motion, 0.6 * amp, 0.05, 0.5, 3);
  const detail::SmoothCurve yaw(motion, amp, 0.05, 0.5, 3);
  const detail::SmoothCurve roll(motion, 0.4 * amp, 0.05, 0.5, 3);
  const detail::SmoothCurve drift_x(motion, 0.15, 0.05, 0.4, 2);
  const detail::SmoothCurve drift_y(motion, 0.10, 0.05, 0.4, 2);
  const detail::SmoothCurve zoom(motion, 0.08, 0.03, 0.3, 1);
  const double base_scale = motion.uniform(100.0, 140.0);
  const double centre_u = 320.0 + motion.uniform(-40.0, 40.0);
  const double centre_v = 240.0 + motion.uniform(-30.0, 30.0);

  const int n = model.n_components();
  Eigen::VectorXd base_alpha(n);
  std::vector<detail::SmoothCurve> expression;
  for (int c = 0; c < n; ++c) {
    base_alpha(c) = motion.normal(0.0, detail::is_identity_component(c) ? 1.0 : 0.3);
    expression.emplace_back(motion, detail::is_identity_component(c) ? 0.0 : config.expression_amplitude, 0.1, 0.8, 2);
  }
  // Blinks: Gaussian dips of the eye-opening coefficient.
  std::vector<double> blink_centres;
  const double duration = config.n_frames / config.fps;
  for (double t = motion.uniform(0.5, 3.0); t < duration; t += motion.uniform(1.5, 5.0)) blink_centres.push_back(t);

  LandmarkTrack track;
  track.video_id = video_id.empty() ? "synth_" + std::to_string(config.seed) : std::move(video_id);
  track.fps = config.fps;
  track.label = label;
  track.frames.reserve(static_cast<std::size_t>(config.n_frames));

  const bool fake = label == Label::fake;
  Eigen::VectorXd jump = Eigen::VectorXd::Zero(n);
  int jump_frames_left = 0;
  for (int k = 0; k < config.n_frames; ++k) {
    const double sec = k / config.fps;

    Eigen::VectorXd alpha = base_alpha;
    for (int c = 0; c < n; ++c) alpha(c) += expression[static_cast<std::size_t>(c)](sec);
    for (double centre : blink_centres) {
      const double d = (sec - centre) / 0.06;
      alpha(detail::kEyeOpenComponent) -= 2.5 * std::exp(-0.5 * d * d);
    }
    if (fake) {
      if (jump_frames_left == 0 && artifacts.bernoulli(config.fake_dropout_prob)) {
        for (int c = 0; c < n; ++c) jump(c) = detail::is_identity_component(c) ? 0.0 : artifacts.normal(0.0, 1.5);
        jump_frames_left = 1 + static_cast<int>(artifacts.below(3));
      }
      if (jump_frames_left > 0) {
        alpha += jump;
        --jump_frames_left;
      }
    }
    Shape3d shape = synthesize_shape(model, alpha);
    if (fake && config.fake_jitter_std > 0.0) {
      for (Eigen::Index i = 0; i < shape.size(); ++i) shape.data()[i] += artifacts.normal(0.0, config.fake_jitter_std);
    }

    PoseFrame pose;
    pose.pitch = pitch(sec);
    pose.yaw = yaw(sec);
    pose.roll = roll(sec);
    pose.scale = base_scale * (1.0 + zoom(sec));
    pose.tx = centre_u / pose.scale + drift_x(sec);
    pose.ty = -centre_v / pose.scale + drift_y(sec);
    const AffineCamera camera = compose_camera(pose);

    LandmarkFrame frame;
    frame.frame_index = k;
    for (int i = 0; i < kNumLandmarks; ++i) {
      const Eigen::Vector2d p = camera.project(shape.row(i).transpose());
      frame.points(i, 0) = p.x() + detector.normal(0.0, config.detector_noise_px);
      frame.points(i, 1) = p.y() + detector.normal(0.0, config.detector_noise_px);
    }
    track.frames.push_back(std::move(frame));
  }
  return track;
}

inline LandmarkTrack synth_track(const SynthConfig& config, Label label) {
  static const ShapeModel model = default_shape_model();
  return synth_track(config, label, model);
}

}  // namespace trajector
