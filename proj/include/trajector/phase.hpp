#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trajector/error.hpp"
#include "trajector/features.hpp"
#include "trajector/io.hpp"

namespace trajector {

// Time-delay embedding of a T x d sequence: state i is rows i, i+tau, ...,
// i+(m-1)tau concatenated, giving M = T - (m-1)tau states of width m*d.
struct EmbeddedTrajectory {
  Eigen::MatrixXd states;
  int tau = 1;
  int m = 1;

  Eigen::Index size() const { return states.rows(); }
};

using BinaryMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// R(i,j) = 1 iff |X_i - X_j|_1 <= epsilon.
struct RecurrencePlot {
  BinaryMatrix R;
  double epsilon = 0.0;

  Eigen::Index size() const { return R.rows(); }
};

struct PhaseParams {
  int tau = 1;
  int m = 3;
  double recurrence_rate = 0.1;
  bool append_density = false;
};

// Row t minus row 0.
inline FeatureSequence relative_trajectory(const FeatureSequence& seq) {
  if (seq.length() < 2) throw SequenceError("sequence needs at least 2 rows");
  FeatureSequence out = seq;
  out.values = seq.values.rowwise() - seq.values.row(0);
  return out;
}

inline EmbeddedTrajectory delay_embed(const Eigen::MatrixXd& values, int tau, int m) {
  if (tau < 1 || m < 1) throw SequenceError("tau and m must be >= 1");
  const Eigen::Index T = values.rows();
  const Eigen::Index d = values.cols();
  const Eigen::Index span = static_cast<Eigen::Index>(m - 1) * tau;
  if (T < span + 1)
    throw SequenceError("sequence too short for embedding: T=" + std::to_string(T) + ", m=" + std::to_string(m) +
                        ", tau=" + std::to_string(tau));
  EmbeddedTrajectory out;
  out.tau = tau;
  out.m = m;
  out.states.resize(T - span, m * d);
  for (Eigen::Index i = 0; i < out.states.rows(); ++i)
    for (int k = 0; k < m; ++k) out.states.block(i, k * d, 1, d) = values.row(i + k * tau);
  return out;
}

inline EmbeddedTrajectory delay_embed(const FeatureSequence& seq, int tau, int m) {
  return delay_embed(seq.values, tau, m);
}

namespace detail {

inline double l1_distance(const Eigen::MatrixXd& states, Eigen::Index i, Eigen::Index j) {
  double sum = 0.0;
  for (Eigen::Index k = 0; k < states.cols(); ++k) sum += std::abs(states(i, k) - states(j, k));
  return sum;
}

}  // namespace detail

inline RecurrencePlot recurrence_plot(const EmbeddedTrajectory& traj, double epsilon) {
  if (!(epsilon >= 0.0)) throw SequenceError("epsilon must be non-negative");
  const Eigen::Index n = traj.size();
  RecurrencePlot rp;
  rp.epsilon = epsilon;
  rp.R.setZero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    rp.R(i, i) = 1;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const std::uint8_t r = detail::l1_distance(traj.states, i, j) <= epsilon ? 1 : 0;
      rp.R(i, j) = r;
      rp.R(j, i) = r;
    }
  }
  return rp;
}

// Smallest pairwise L1 distance q such that at epsilon = q at least
// `target_rate` of the off-diagonal pairs recur. Exact: sorts all pairs.
inline double epsilon_for_rate(const EmbeddedTrajectory& traj, double target_rate) {
  if (!(target_rate > 0.0 && target_rate <= 1.0)) throw SequenceError("target rate must lie in (0, 1]");
  const Eigen::Index n = traj.size();
  if (n < 2) throw SequenceError("need at least 2 states");
  std::vector<double> distances;
  distances.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) distances.push_back(detail::l1_distance(traj.states, i, j));
  std::sort(distances.begin(), distances.end());
  const auto pairs = static_cast<double>(distances.size());
  // Smallest k (1-based) with k / pairs >= target_rate.
  auto k = static_cast<std::size_t>(std::ceil(target_rate * pairs));
  while (k > 1 && static_cast<double>(k - 1) / pairs >= target_rate) --k;
  while (static_cast<double>(k) / pairs < target_rate) ++k;
  k = std::clamp<std::size_t>(k, 1, distances.size());
  return distances[k - 1];
}

// Fraction of off-diagonal entries that are recurrent.
inline double recurrence_rate(const RecurrencePlot& rp) {
  const Eigen::Index n = rp.size();
  if (n < 2) return 0.0;
  const double ones = rp.R.cast<double>().sum() - static_cast<double>(n);
  return ones / static_cast<double>(n * (n - 1));
}

// Recurrence network adjacency: R without self-loops.
inline BinaryMatrix rp_to_adjacency(const RecurrencePlot& rp) {
  BinaryMatrix a = rp.R;
  a.diagonal().setZero();
  return a;
}

// Per-state recurrence density (row mean of R excluding the diagonal).
inline Eigen::VectorXd recurrence_density(const RecurrencePlot& rp) {
  const Eigen::Index n = rp.size();
  Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
  if (n < 2) return d;
  const BinaryMatrix a = rp_to_adjacency(rp);
  for (Eigen::Index i = 0; i < n; ++i) d(i) = a.row(i).cast<double>().sum() / static_cast<double>(n - 1);
  return d;
}

// Binary PGM (P5): recurrent points black (0), others white (255).
inline std::string encode_rp_pgm(const RecurrencePlot& rp) {
  const Eigen::Index n = rp.size();
  std::string out = "P5\n" + std::to_string(n) + " " + std::to_string(n) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(n * n));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) out.push_back(rp.R(i, j) ? '\0' : '\xff');
  return out;
}

inline void export_rp_image(const RecurrencePlot& rp, const std::filesystem::path& path) {
  write_file_atomic(path, encode_rp_pgm(rp));
}

// Reads back a P5 written by export_rp_image (any pixel < 128 is recurrent).
inline BinaryMatrix read_rp_image(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  std::istringstream in(data);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255) throw IoError("not an 8-bit P5 image: " + path.string());
  in.get();
  const auto offset = static_cast<std::size_t>(in.tellg());
  if (data.size() < offset + static_cast<std::size_t>(w) * static_cast<std::size_t>(h))
    throw IoError("truncated PGM: " + path.string());
  BinaryMatrix R(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      R(i, j) = static_cast<unsigned char>(data[offset + static_cast<std::size_t>(i * w + j)]) < 128 ? 1 : 0;
  return R;
}

inline std::string rp_to_csv(const RecurrencePlot& rp) {
  std::string out;
  for (Eigen::Index i = 0; i < rp.size(); ++i) {
    for (Eigen::Index j = 0; j < rp.size(); ++j) {
      if (j) out.push_back(',');
      out.push_back(rp.R(i, j) ? '1' : '0');
    }
    out.push_back('\n');
  }
  return out;
}

// Model input for one stream: first-frame-relative trajectory, delay embedded,
// optionally with each state's recurrence density appended as an extra column.
inline Eigen::MatrixXd trajectory_states(const FeatureSequence& seq, const PhaseParams& params) {
  EmbeddedTrajectory traj = delay_embed(relative_trajectory(seq), params.tau, params.m);
  if (!params.append_density) return std::move(traj.states);
  const RecurrencePlot rp = recurrence_plot(traj, epsilon_for_rate(traj, params.recurrence_rate));
  Eigen::MatrixXd out(traj.states.rows(), traj.states.cols() + 1);
  out << traj.states, recurrence_density(rp);
  return out;
}

inline int trajectory_width(Stream stream, const PhaseParams& params) {
  return stream_dim(stream) * params.m + (params.append_density ? 1 : 0);
}

}  // namespace trajector
