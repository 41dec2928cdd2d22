#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace trajector;
using namespace trajector::testing;

namespace {

FeatureSequence seq_of(const Eigen::MatrixXd& values) {
  FeatureSequence s;
  s.values = values;
  return s;
}

BinaryMatrix brute_force_rp(const Eigen::MatrixXd& states, double eps) {
  const Eigen::Index n = states.rows();
  BinaryMatrix R(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) R(i, j) = (states.row(i) - states.row(j)).cwiseAbs().sum() <= eps ? 1 : 0;
  return R;
}

EmbeddedTrajectory random_trajectory(Rng& rng, Eigen::Index n, Eigen::Index width) {
  EmbeddedTrajectory t;
  t.states = random_matrix(rng, n, width);
  return t;
}

}  // namespace

TEST(RelativeTrajectory, Cases) {
  EXPECT_TRUE(relative_trajectory(seq_of(Eigen::MatrixXd::Constant(5, 3, 2.5))).values.isZero(0.0));
  Eigen::MatrixXd affine(3, 2);
  affine << 1, 2, 1.5, 1, 2, 0;
  Eigen::MatrixXd expected(3, 2);
  expected << 0, 0, 0.5, -1, 1, -2;
  EXPECT_EQ(relative_trajectory(seq_of(affine)).values, expected);
  Rng rng(1);
  const Eigen::MatrixXd x = random_matrix(rng, 20, 4);
  const Eigen::MatrixXd r = relative_trajectory(seq_of(x)).values;
  for (Eigen::Index t = 0; t < x.rows(); ++t) EXPECT_EQ(Eigen::RowVectorXd(r.row(t)), Eigen::RowVectorXd(x.row(t) - x.row(0)));
  EXPECT_THROW(relative_trajectory(seq_of(Eigen::MatrixXd::Zero(1, 3))), SequenceError);
}

TEST(DelayEmbed, IndexArithmetic) {
  Rng rng(2);
  const Eigen::MatrixXd x = random_matrix(rng, 5, 2);
  EXPECT_EQ(delay_embed(x, 1, 1).states, x);
  const auto e = delay_embed(x, 1, 3);
  ASSERT_EQ(e.size(), 3);
  Eigen::RowVectorXd s0(6);
  s0 << x.row(0), x.row(1), x.row(2);
  EXPECT_EQ(Eigen::RowVectorXd(e.states.row(0)), s0);
  EXPECT_THROW(delay_embed(x, 2, 4), SequenceError);
  EXPECT_THROW(delay_embed(x, 0, 1), SequenceError);
}

TEST(DelayEmbed, MatchesGatherOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const int d = 1 + static_cast<int>(rng.below(6)), tau = 1 + static_cast<int>(rng.below(3)),
              m = 1 + static_cast<int>(rng.below(4));
    const Eigen::Index T = (m - 1) * tau + 1 + static_cast<Eigen::Index>(rng.below(20));
    const Eigen::MatrixXd x = random_matrix(rng, T, d);
    const auto e = delay_embed(x, tau, m);
    ASSERT_EQ(e.size(), T - (m - 1) * tau);
    for (Eigen::Index i = 0; i < e.size(); ++i)
      for (int c = 0; c < m * d; ++c) EXPECT_EQ(e.states(i, c), x(i + (c / d) * tau, c % d));
  }
}

TEST(RecurrencePlot, SmallCases) {
  EmbeddedTrajectory constant;
  constant.states = Eigen::MatrixXd::Constant(6, 3, 1.25);
  EXPECT_TRUE((recurrence_plot(constant, 0.0).R.array() == 1).all());

  Eigen::MatrixXd series(4, 1);
  series << 0, 1, 0, 1;
  BinaryMatrix checker(4, 4);
  checker << 1, 0, 1, 0, 0, 1, 0, 1, 1, 0, 1, 0, 0, 1, 0, 1;
  EXPECT_EQ(recurrence_plot(delay_embed(series, 1, 1), 0.5).R, checker);
  EXPECT_THROW(recurrence_plot(constant, -1.0), SequenceError);
}

TEST(RecurrencePlot, MatchesBruteForceSymmetricReflexiveMonotone) {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const auto t = random_trajectory(rng, 2 + static_cast<Eigen::Index>(rng.below(60)), 1 + static_cast<Eigen::Index>(rng.below(9)));
    const double e1 = rng.uniform(0.0, 6.0), e2 = e1 + rng.uniform(0.0, 3.0);
    const auto r1 = recurrence_plot(t, e1), r2 = recurrence_plot(t, e2);
    EXPECT_EQ(r1.R, brute_force_rp(t.states, e1));
    EXPECT_EQ(r1.R, BinaryMatrix(r1.R.transpose()));
    EXPECT_TRUE((r1.R.diagonal().array() == 1).all());
    EXPECT_TRUE((r1.R.array() <= r2.R.array()).all());
  }
}

TEST(RecurrencePlot, MonotoneSeriesBelowMinimumGapIsIdentity) {
  Eigen::MatrixXd series(10, 1);
  for (int i = 0; i < 10; ++i) series(i, 0) = i * i + 0.5 * i;
  const auto rp = recurrence_plot(delay_embed(series, 1, 1), 0.4);
  EXPECT_EQ(rp.R, BinaryMatrix::Identity(10, 10));
}

TEST(EpsilonForRate, Cases) {
  Rng rng(5);
  const auto t = random_trajectory(rng, 30, 3);
  double max_d = 0.0;
  for (Eigen::Index i = 0; i < 30; ++i)
    for (Eigen::Index j = 0; j < 30; ++j) max_d = std::max(max_d, (t.states.row(i) - t.states.row(j)).cwiseAbs().sum());
  EXPECT_EQ(epsilon_for_rate(t, 1.0), max_d);

  EmbeddedTrajectory two;
  two.states.resize(2, 2);
  two.states << 0, 0, 1, 2;
  EXPECT_EQ(epsilon_for_rate(two, 0.5), 3.0);
  EXPECT_THROW(epsilon_for_rate(two, 0.0), SequenceError);

  for (int trial = 0; trial < 30; ++trial) {
    const auto r = random_trajectory(rng, 5 + static_cast<Eigen::Index>(rng.below(80)), 4);
    const double pairs = static_cast<double>(r.size() * (r.size() - 1) / 2);
    for (double target : {0.1, 0.25, 0.5}) {
      const double rate = recurrence_rate(recurrence_plot(r, epsilon_for_rate(r, target)));
      EXPECT_GE(rate, target);
      EXPECT_LE(rate, target + 1.0 / pairs + 1e-15);
    }
  }
}

TEST(Adjacency, MaskInverse) {
  RecurrencePlot ones;
  ones.R = BinaryMatrix::Ones(3, 3);
  const BinaryMatrix a = rp_to_adjacency(ones);
  EXPECT_EQ(a, BinaryMatrix(BinaryMatrix::Ones(3, 3) - BinaryMatrix::Identity(3, 3)));
  RecurrencePlot id;
  id.R = BinaryMatrix::Identity(4, 4);
  EXPECT_TRUE((rp_to_adjacency(id).array() == 0).all());
  Rng rng(6);
  const auto t = random_trajectory(rng, 40, 2);
  const auto rp = recurrence_plot(t, epsilon_for_rate(t, 0.2));
  const BinaryMatrix back = rp_to_adjacency(rp) + BinaryMatrix::Identity(40, 40);
  EXPECT_EQ(back, rp.R);
}

TEST(RpImage, EncodingAndReadBack) {
  RecurrencePlot id;
  id.R = BinaryMatrix::Identity(2, 2);
  const std::string pgm = encode_rp_pgm(id);
  const std::string header = "P5\n2 2\n255\n";
  ASSERT_EQ(pgm.size(), header.size() + 4);
  EXPECT_EQ(pgm.substr(0, header.size()), header);
  EXPECT_EQ(static_cast<unsigned char>(pgm[header.size() + 0]), 0);
  EXPECT_EQ(static_cast<unsigned char>(pgm[header.size() + 1]), 255);
  EXPECT_EQ(static_cast<unsigned char>(pgm[header.size() + 2]), 255);
  EXPECT_EQ(static_cast<unsigned char>(pgm[header.size() + 3]), 0);

  TempDir dir;
  RecurrencePlot ones;
  ones.R = BinaryMatrix::Ones(5, 5);
  export_rp_image(ones, dir / "black.pgm");
  const ImagePlane img = read_pnm(dir / "black.pgm");
  EXPECT_TRUE(std::all_of(img.pixels.begin(), img.pixels.end(), [](double p) { return p == 0.0; }));

  Rng rng(7);
  const auto t = random_trajectory(rng, 33, 3);
  const auto rp = recurrence_plot(t, epsilon_for_rate(t, 0.3));
  export_rp_image(rp, dir / "rp.pgm");
  EXPECT_EQ(read_rp_image(dir / "rp.pgm"), rp.R);
}

TEST(TrajectoryStates, WidthAndDensityColumn) {
  Rng rng(8);
  FeatureSequence s = seq_of(random_matrix(rng, 20, 6));
  s.stream = Stream::HP;
  PhaseParams p;
  const auto plain = trajectory_states(s, p);
  EXPECT_EQ(plain.rows(), 18);
  EXPECT_EQ(plain.cols(), trajectory_width(Stream::HP, p));
  EXPECT_TRUE(plain.row(0).head(6).isZero(0.0));
  p.append_density = true;
  const auto dense = trajectory_states(s, p);
  EXPECT_EQ(dense.cols(), trajectory_width(Stream::HP, p));
  EXPECT_EQ(dense.leftCols(18), plain);
  EXPECT_TRUE((dense.col(18).array() >= 0.0).all() && (dense.col(18).array() <= 1.0).all());
}
