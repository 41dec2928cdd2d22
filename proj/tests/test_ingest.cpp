#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace trajector;
using namespace trajector::testing;

namespace {

std::string track_json(const std::vector<int>& indices, int points_in_frame0 = 68) {
  nlohmann::json doc;
  doc["video_id"] = "v";
  doc["fps"] = 25;
  doc["label"] = nullptr;
  doc["frames"] = nlohmann::json::array();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    nlohmann::json pts = nlohmann::json::array();
    const int count = k == 0 ? points_in_frame0 : 68;
    for (int i = 0; i < count; ++i) pts.push_back({100.0 + i + indices[k], 200.0 - i});
    doc["frames"].push_back({{"frame", indices[k]}, {"points", pts}, {"conf", nullptr}});
  }
  return doc.dump();
}

std::string error_of(const std::string& text) {
  try {
    parse_track(text);
  } catch (const TrackError& e) {
    return e.what();
  }
  return "";
}

LandmarkTrack frames_at(const std::vector<std::int64_t>& indices) {
  LandmarkTrack t;
  t.video_id = "g";
  for (auto idx : indices) {
    LandmarkFrame f;
    f.frame_index = idx;
    f.points.setConstant(static_cast<double>(idx) * 2.0);
    f.points(5, 1) = 10.0 * static_cast<double>(idx);
    t.frames.push_back(f);
  }
  return t;
}

}  // namespace

TEST(ParseTrack, ValidTwoFrameDocument) {
  const auto t = parse_track(track_json({0, 1}));
  EXPECT_EQ(t.frames.size(), 2u);
  EXPECT_FALSE(t.label.has_value());
  EXPECT_EQ(t.video_id, "v");
  EXPECT_DOUBLE_EQ(t.fps, 25.0);
  EXPECT_DOUBLE_EQ(t.frames[1].points(3, 0), 104.0);
}

TEST(ParseTrack, WrongPointCount) { EXPECT_NE(error_of(track_json({0, 1}, 67)).find("point count"), std::string::npos); }

TEST(ParseTrack, NonMonotoneFrames) {
  EXPECT_NE(error_of(track_json({3, 1})).find("non-monotone frame index"), std::string::npos);
  EXPECT_NE(error_of(track_json({2, 2})).find("non-monotone frame index"), std::string::npos);
}

TEST(ParseTrack, MalformedJson) {
  EXPECT_NE(error_of("{\"video_id\": ").find("malformed JSON"), std::string::npos);
  EXPECT_NE(error_of("[1,2]").find("malformed JSON"), std::string::npos);
}

TEST(ParseTrack, NonFiniteCoordinate) {
  // JSON has no NaN literal; an overflowing number parses to infinity.
  auto doc = nlohmann::json::parse(track_json({0, 1}));
  std::string text = doc.dump();
  const auto pos = text.find("100.0");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 5, "1e999");
  EXPECT_NE(error_of(text).find("non-finite"), std::string::npos);
}

TEST(ParseTrack, LabelAndConfidenceValidation) {
  auto doc = nlohmann::json::parse(track_json({0, 1}));
  doc["label"] = 2;
  EXPECT_THROW(parse_track(doc.dump()), TrackError);
  doc["label"] = 1;
  doc["frames"][0]["conf"] = 1.5;
  EXPECT_THROW(parse_track(doc.dump()), TrackError);
  doc["frames"][0]["conf"] = 0.75;
  const auto t = parse_track(doc.dump());
  EXPECT_EQ(t.label, Label::fake);
  EXPECT_EQ(t.frames[0].confidence, 0.75);
  doc["fps"] = 0;
  EXPECT_THROW(parse_track(doc.dump()), TrackError);
}

TEST(ParseTrack, RoundTripIsIdentity) {
  SynthConfig cfg;
  cfg.n_frames = 12;
  cfg.seed = 99;
  LandmarkTrack t = synth_track(cfg, Label::fake);
  t.frames[3].confidence = 0.5;
  const auto once = parse_track(serialize_track(t));
  EXPECT_EQ(once, t);
  EXPECT_EQ(parse_track(serialize_track(once)), once);
}

TEST(InterpolateGaps, MidpointInserted) {
  const auto out = interpolate_gaps(frames_at({0, 2}), 1);
  ASSERT_EQ(out.frames.size(), 3u);
  EXPECT_EQ(out.frames[1].frame_index, 1);
  EXPECT_TRUE(out.frames[1].points.isApprox(0.5 * (out.frames[0].points + out.frames[2].points), 0.0));
  EXPECT_FALSE(out.truncated);
}

TEST(InterpolateGaps, LongGapTruncates) {
  const auto out = interpolate_gaps(frames_at({0, 5}), 1);
  ASSERT_EQ(out.frames.size(), 1u);
  EXPECT_EQ(out.frames[0].frame_index, 0);
  EXPECT_TRUE(out.truncated);
}

TEST(InterpolateGaps, GapFreeUnchangedAndIdempotent) {
  const auto t = frames_at({0, 1, 2});
  EXPECT_EQ(interpolate_gaps(t), t);
  const auto repaired = interpolate_gaps(frames_at({0, 3, 4, 9}), 5);
  EXPECT_EQ(repaired.frames.size(), 10u);
  EXPECT_EQ(interpolate_gaps(repaired, 5), repaired);
}

TEST(InterpolateGaps, LinearInEveryCoordinate) {
  const auto out = interpolate_gaps(frames_at({2, 6}), 5);
  ASSERT_EQ(out.frames.size(), 5u);
  for (int k = 0; k < 5; ++k) {
    EXPECT_EQ(out.frames[static_cast<std::size_t>(k)].frame_index, 2 + k);
    EXPECT_NEAR(out.frames[static_cast<std::size_t>(k)].points(5, 1), 10.0 * (2 + k), 1e-12);
  }
}

TEST(SynthTrack, DeterministicAndLength) {
  SynthConfig cfg;
  cfg.seed = 1234;
  const auto a = synth_track(cfg, Label::real);
  const auto b = synth_track(cfg, Label::real);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.frames.size(), 150u);
  EXPECT_EQ(a.label, Label::real);
  cfg.seed = 1235;
  EXPECT_FALSE(synth_track(cfg, Label::real) == a);
}

// Mean per-frame landmark displacement over 100 seeded tracks: fakes with
// jitter_std = 1.0 move more than reals.
TEST(SynthTrack, FakeJitterRaisesDisplacement) {
  auto mean_displacement = [](Label label) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
      SynthConfig cfg;
      cfg.seed = 500 + s;
      cfg.n_frames = 40;
      cfg.fake_jitter_std = 1.0;
      const auto t = synth_track(cfg, label);
      for (std::size_t k = 1; k < t.frames.size(); ++k) {
        sum += (t.frames[k].points - t.frames[k - 1].points).rowwise().norm().mean();
        ++count;
      }
    }
    return sum / static_cast<double>(count);
  };
  EXPECT_LT(mean_displacement(Label::real), mean_displacement(Label::fake));
}

TEST(SynthTrack, RealAndFakeShareBaseMotion) {
  SynthConfig cfg;
  cfg.seed = 8;
  cfg.fake_jitter_std = 0.0;
  cfg.fake_dropout_prob = 0.0;
  EXPECT_EQ(synth_track(cfg, Label::real).frames, synth_track(cfg, Label::fake).frames);
}

TEST(SynthTrack, ConfigValidation) {
  SynthConfig cfg;
  cfg.fake_dropout_prob = 1.5;
  EXPECT_THROW(synth_track(cfg, Label::real), TrackError);
  cfg = {};
  cfg.head_motion_amplitude = -1.0;
  EXPECT_THROW(synth_track(cfg, Label::real), TrackError);
}

TEST(Manifest, ParsesAndResolvesRelativePaths) {
  TempDir dir;
  write_file_atomic(dir / "m.csv", "path,label\na.json,0\n/abs/b.json,1\n");
  const auto entries = read_manifest(dir / "m.csv");
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[0].path, dir / "a.json");
  EXPECT_EQ(entries[0].label, Label::real);
  EXPECT_EQ(entries[1].path, "/abs/b.json");
  EXPECT_EQ(entries[1].label, Label::fake);
  write_file_atomic(dir / "bad.csv", "file,label\n");
  EXPECT_THROW(read_manifest(dir / "bad.csv"), IoError);
  write_file_atomic(dir / "bad2.csv", "path,label\nx.json,3\n");
  EXPECT_THROW(read_manifest(dir / "bad2.csv"), IoError);
}

TEST(Rng, ReproducibleStreams) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_NE(derive_seed(42, 1), derive_seed(42, 2));
  Rng c(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(c.below(7), 7u);
  }
}

// Published reference output of xoshiro256** seeded through SplitMix64(0).
TEST(Rng, SplitMixReferenceValues) {
  std::uint64_t s = 0;
  EXPECT_EQ(splitmix64(s), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(splitmix64(s), 0x6E789E6AA1B965F4ULL);
}

TEST(Io, FormatDoubleRoundTrips) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal(0.0, 1e3) * std::pow(10.0, rng.uniform(-20.0, 20.0));
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.5), "0.5");
}

TEST(Parallel, EveryIndexOnceAndErrorsPropagate) {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; }, 4);
  for (int h : hits) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallel_for(10, [](std::size_t i) { if (i == 7) throw IoError("x"); }, 3), IoError);
}
