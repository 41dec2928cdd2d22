#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "test_util.hpp"

using namespace trajector;
using namespace trajector::testing;

namespace {

struct CliRun {
  int status = 0;
  std::string out;
};

// Runs the CLI; stdout is captured, stderr goes to `err_file` when given.
CliRun run_cli(const std::string& args, const fs::path& err_file = "/dev/null") {
  const std::string cmd = std::string(TRAJECTOR_CLI) + " " + args + " 2>" + err_file.string();
  CliRun r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return {-1, {}};
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.status = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

// Small, fast configuration for end-to-end runs.
RunConfig small_run(const fs::path& dir, int n = 10) {
  RunConfig c;
  c.out = dir.string();
  c.n = n;
  c.frames = 40;
  c.hidden = 16;
  c.layers = 1;
  c.heads = 2;
  c.epochs = 3;
  c.lr = 3e-3;
  c.batch_size = 8;
  return c;
}

FeatureSequence ramp(const std::string& id, Stream s, Label label, double slope, int T = 12) {
  FeatureSequence seq;
  seq.stream = s;
  seq.video_id = id;
  seq.label = label;
  seq.values = Eigen::MatrixXd::Zero(T, stream_dim(s));
  for (int t = 0; t < T; ++t) seq.values(t, 0) = slope * t;
  return seq;
}

// A detector whose fake probability is sigmoid(mean of the first column of
// the embedded states): attention and feed-forward contribute nothing.
Checkpoint linear_stub(const RunConfig& cfg, Stream s) {
  Checkpoint ck;
  ck.config = cfg.transformer(s);
  ck.params = init_model(ck.config).zeros_like();
  ck.params.embed(0, 0) = 1.0;
  ck.params.head_w(0, 1) = 1.0;
  ck.input_transform = Eigen::MatrixXd::Identity(ck.config.input_dim, ck.config.input_dim);
  ck.pipeline = checkpoint_settings(cfg);
  return ck;
}

}  // namespace

TEST(RunConfigJson, RoundTripAndRejection) {
  RunConfig c;
  c.tau = 2;
  c.split = {0.7, 0.2, 0.1};
  c.checkpoint_fe = "x.json";
  RunConfig back;
  apply_run_config(back, run_config_to_json(c));
  EXPECT_EQ(run_config_to_json(back), run_config_to_json(c));
  EXPECT_THROW(apply_run_config(back, {{"taux", 1}}), Error);
  EXPECT_THROW(apply_run_config(back, {{"tau", "two"}}), Error);
  RunConfig bad;
  bad.heads = 3;
  EXPECT_THROW(bad.validate(), ModelError);
  bad = RunConfig{};
  bad.split = {0.5, 0.5, 0.5};
  EXPECT_THROW(bad.validate(), Error);
  bad = RunConfig{};
  bad.discount_hp = 1.0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(RunConfigJson, FileOverlaysDefaults) {
  TempDir dir;
  write_file_atomic(dir / "c.json", R"({"tau": 3, "lr": 0.5})");
  const RunConfig c = load_run_config(dir / "c.json");
  EXPECT_EQ(c.tau, 3);
  EXPECT_EQ(c.lr, 0.5);
  EXPECT_EQ(c.embed_dim, 3);
  write_file_atomic(dir / "bad.json", "{");
  EXPECT_THROW(load_run_config(dir / "bad.json"), Error);
}

TEST(Splits, EightOneOneAndSeeded) {
  EXPECT_EQ(split_counts(20, {0.8, 0.1, 0.1}), (std::array<std::size_t, 3>{16, 2, 2}));
  EXPECT_EQ(split_counts(1000, {0.8, 0.1, 0.1}), (std::array<std::size_t, 3>{800, 100, 100}));
  EXPECT_EQ(split_counts(0, {0.8, 0.1, 0.1}), (std::array<std::size_t, 3>{0, 0, 0}));
  const auto a = assign_splits(20, {0.8, 0.1, 0.1}, 5), b = assign_splits(20, {0.8, 0.1, 0.1}, 5);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, assign_splits(20, {0.8, 0.1, 0.1}, 6));
  EXPECT_EQ(std::count(a.begin(), a.end(), Split::test), 2);
}

TEST(FeatureCsv, RoundTripIsExact) {
  Rng rng(1);
  FeatureSequence a = ramp("v1", Stream::HP, Label::fake, 0.1), b = ramp("v2", Stream::HP, Label::real, -0.2, 5);
  a.values = random_matrix(rng, 7, 6);
  const std::string text = encode_feature_csv(Stream::HP, {&a, &b});
  EXPECT_EQ(text.substr(0, text.find('\n')), "video_id,label,stream,frame,c0,c1,c2,c3,c4,c5");
  const auto back = parse_feature_csv(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].values, a.values);
  EXPECT_EQ(back[0].label, Label::fake);
  EXPECT_EQ(back[1].values, b.values);
  EXPECT_EQ(back[1].stream, Stream::HP);
  EXPECT_THROW(parse_feature_csv("id,stream\n"), IoError);
  EXPECT_THROW(parse_feature_csv("video_id,label,stream,frame,c0,c1,c2,c3,c4,c5\nv,0,HP,1,0,0,0,0,0,0\n"), IoError);
  EXPECT_THROW(parse_feature_csv("video_id,label,stream,frame,c0,c1,c2,c3,c4,c5\nv,0,FE,0,0,0,0,0,0,0\n"), IoError);
  EXPECT_THROW(read_feature_csv("/nonexistent/features.csv"), IoError);
}

TEST(Whitening, DecorrelatesTrainingStates) {
  Rng rng(2);
  std::vector<Example> ex(5);
  Eigen::MatrixXd mix = random_matrix(rng, 4, 4);
  mix.col(3) *= 1e-3;
  for (auto& e : ex) e.states = random_matrix(rng, 50, 4) * mix;
  const Eigen::MatrixXd W = whitening_transform(ex);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(4, 4);
  for (const auto& e : ex) m += (e.states * W).transpose() * (e.states * W);
  m /= 250.0;
  EXPECT_LT((m - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((W - W.transpose()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CmdSynth, FilesManifestAndDeterminism) {
  TempDir a, b;
  std::ostringstream log;
  RunConfig c = small_run(a.path(), 10);
  const auto s = cmd_synth(c, log);
  EXPECT_EQ(s.n_tracks, 20u);
  EXPECT_EQ(count_lines(s.manifest), 21u);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a / "tracks")) files += e.path().extension() == ".json";
  EXPECT_EQ(files, 20u);
  EXPECT_TRUE(fs::exists(a / "run_config.json"));

  c.out = b.path().string();
  cmd_synth(c, log);
  for (const auto& e : fs::directory_iterator(a / "tracks"))
    EXPECT_EQ(read_file(e.path()), read_file(b / "tracks" / e.path().filename().string()));
  EXPECT_EQ(read_file(a / "manifest.csv"), read_file(b / "manifest.csv"));
  EXPECT_TRUE(log.str().empty());

  TempDir empty;
  c = small_run(empty.path(), 0);
  std::ostringstream warn;
  cmd_synth(c, warn);
  EXPECT_EQ(read_file(empty / "manifest.csv"), "path,label\n");
  EXPECT_NE(warn.str().find("warning"), std::string::npos);
}

TEST(CmdFeatures, SplitsAndSkipsCorruptTracks) {
  TempDir dir;
  std::ostringstream log;
  RunConfig c = small_run(dir.path(), 10);
  cmd_synth(c, log);
  const auto s = cmd_features(c, log);
  EXPECT_EQ(s.split_sizes, (std::array<std::size_t, 3>{16, 2, 2}));
  EXPECT_TRUE(s.skipped.empty());
  const auto train_fe = read_feature_csv(dir / "features_FE_train.csv");
  EXPECT_EQ(train_fe.size(), 16u);
  EXPECT_EQ(train_fe[0].values.rows(), 40);

  // Same seed, same split; a corrupt track is skipped and counted.
  write_file_atomic(dir / "tracks" / "real_00003.json", "{\"video_id\": ");
  std::ostringstream log2;
  const auto s2 = cmd_features(c, log2);
  ASSERT_EQ(s2.skipped.size(), 1u);
  EXPECT_EQ(s2.skipped[0].first.filename(), "real_00003.json");
  EXPECT_NE(log2.str().find("skipped 1 track"), std::string::npos);
  EXPECT_EQ(s2.split_sizes[0] + s2.split_sizes[1] + s2.split_sizes[2], 19u);

  c.manifest = (dir / "missing.csv").string();
  EXPECT_THROW(cmd_features(c, log2), Error);
}

TEST(CmdEval, PerfectStubScoresOne) {
  TempDir dir;
  RunConfig c = small_run(dir.path());
  c.positional_encoding = false;
  c.embed_dim = 1;
  std::vector<FeatureSequence> fe, hp;
  for (int i = 0; i < 6; ++i) {
    const Label label = i % 2 ? Label::fake : Label::real;
    const double slope = label == Label::fake ? 0.5 : -0.5;
    fe.push_back(ramp("v" + std::to_string(i), Stream::FE, label, slope));
    hp.push_back(ramp("v" + std::to_string(i), Stream::HP, label, slope));
  }
  std::vector<const FeatureSequence*> pf, ph;
  for (int i = 0; i < 6; ++i) {
    pf.push_back(&fe[static_cast<std::size_t>(i)]);
    ph.push_back(&hp[static_cast<std::size_t>(i)]);
  }
  write_file_atomic(dir / "features_FE_test.csv", encode_feature_csv(Stream::FE, pf));
  write_file_atomic(dir / "features_HP_test.csv", encode_feature_csv(Stream::HP, ph));
  save_checkpoint(linear_stub(c, Stream::FE), c.checkpoint_path(Stream::FE));
  save_checkpoint(linear_stub(c, Stream::HP), c.checkpoint_path(Stream::HP));

  std::ostringstream log;
  const auto s = cmd_eval(c, log);
  EXPECT_EQ(s.fused.acc, 1.0);
  EXPECT_EQ(s.fused.auc, 1.0);
  EXPECT_EQ(s.fe.auc, 1.0);
  for (const char* f : {"report_FE.json", "report_HP.json", "report_fused.json", "roc_fused.csv", "verdicts.csv"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_EQ(count_lines(dir / "verdicts.csv"), 7u);
  EXPECT_EQ(read_file(dir / "verdicts.csv").rfind("video_id,p_fe,p_hp,m_real,m_fake,m_theta,label_pred", 0), 0u);
  const auto fused = read_report(dir / "report_fused.json");
  for (std::size_t k = 1; k < fused.roc.size(); ++k) {
    EXPECT_GE(fused.roc[k].fpr, fused.roc[k - 1].fpr);
    EXPECT_GE(fused.roc[k].tpr, fused.roc[k - 1].tpr);
  }

  RunConfig other = c;
  other.tau = 2;
  EXPECT_THROW(cmd_eval(other, log), CheckpointError);
  other = c;
  other.hidden = 32;
  EXPECT_THROW(cmd_eval(other, log), CheckpointError);
}

TEST(EndToEnd, TrainEvalPredictAndDeterminism) {
  TempDir a, b;
  std::ostringstream log;
  RunConfig c = small_run(a.path(), 10);
  c.split = {0.6, 0.2, 0.2};
  cmd_synth(c, log);
  cmd_features(c, log);
  const auto t = cmd_train(c, log);
  ASSERT_EQ(t.results.size(), 2u);
  EXPECT_EQ(t.results.at(Stream::FE).history.size(), 3u);
  const auto h = nlohmann::json::parse(read_file(a / "history.json"));
  EXPECT_EQ(h["HP"]["epochs"].size(), 3u);
  const auto e = cmd_eval(c, log);
  EXPECT_EQ(e.verdicts.size(), 4u);
  const Verdict v = cmd_predict(c, a / "tracks" / "fake_00001.json");
  EXPECT_EQ(v.video_id, "fake_00001");
  EXPECT_TRUE(v.mass.valid());

  c.out = b.path().string();
  cmd_synth(c, log);
  cmd_features(c, log);
  cmd_train(c, log);
  cmd_eval(c, log);
  for (const char* f : {"features_FE_train.csv", "features_HP_test.csv", "checkpoint_FE.json", "checkpoint_HP.json",
                        "history.json", "report_fused.json", "verdicts.csv"})
    EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;

  RunConfig missing = c;
  missing.features = (a / "nowhere").string();
  EXPECT_THROW(cmd_train(missing, log), IoError);
}

TEST(CmdRp, FilesPerStreamAndBlackForConstant) {
  TempDir dir;
  RunConfig c = small_run(dir.path());
  std::ostringstream log;
  cmd_synth(c, log);
  const auto files = cmd_rp(c, {dir / "tracks" / "real_00000.json", dir / "tracks" / "fake_00000.json"});
  EXPECT_EQ(files.size(), 4u);
  for (const auto& f : files) EXPECT_TRUE(fs::exists(f));
  const auto R = read_rp_image(dir / "rp_real_00000_FE.pgm");
  EXPECT_EQ(R.rows(), 38);

  FeatureSequence flat = ramp("flat", Stream::FE, Label::real, 0.0);
  write_file_atomic(dir / "flat.csv", encode_feature_csv(Stream::FE, {&flat}));
  const auto one = cmd_rp(c, {dir / "flat.csv"});
  ASSERT_EQ(one.size(), 1u);
  const ImagePlane img = read_pnm(one[0]);
  EXPECT_TRUE(std::all_of(img.pixels.begin(), img.pixels.end(), [](double p) { return p == 0.0; }));

  const auto traj = delay_embed(relative_trajectory(flat), 1, 3);
  EXPECT_EQ(read_rp_image(one[0]), recurrence_plot(traj, epsilon_for_rate(traj, 0.1)).R);
}

TEST(CmdQuality, IdenticalOffsetMismatch) {
  TempDir dir;
  ImagePlane a;
  a.width = 16;
  a.height = 12;
  for (int i = 0; i < 192; ++i) a.pixels.push_back((i * 37) % 200);
  ImagePlane b = a;
  for (double& p : b.pixels) p += 16.0;
  write_pgm(a, dir / "a.pgm");
  write_pgm(b, dir / "b.pgm");
  const auto same = cmd_quality(dir / "a.pgm", dir / "a.pgm");
  EXPECT_TRUE(std::isinf(same.psnr));
  EXPECT_EQ(same.ssim, 1.0);
  EXPECT_EQ(same.uqi.value, 1.0);
  EXPECT_EQ(quality_line(same), "PSNR=inf SSIM=1 UQI=1 IEF=n/a VIF=n/a RECO=n/a");
  EXPECT_NEAR(cmd_quality(dir / "a.pgm", dir / "b.pgm").psnr, 10.0 * std::log10(65025.0 / 256.0), 1e-6);
  ImagePlane c = a;
  c.width = 12;
  c.height = 16;
  write_pgm(c, dir / "c.pgm");
  EXPECT_THROW(cmd_quality(dir / "a.pgm", dir / "c.pgm"), MetricError);
}

TEST(Cli, ExitCodesAndStreams) {
  TempDir dir;
  const std::string out = "--out " + dir.path().string();
  CliRun r = run_cli("synth --n 3 --frames 30 " + out);
  EXPECT_EQ(r.status, 0);
  EXPECT_NE(r.out.find("wrote 6 tracks"), std::string::npos);
  r = run_cli("features " + out);
  EXPECT_EQ(r.status, 0);
  EXPECT_NE(r.out.find("skipped=0"), std::string::npos);

  write_file_atomic(dir / "broken.json", "not json");
  const fs::path err = dir / "err.txt";
  r = run_cli("predict " + (dir / "broken.json").string() + " " + out, err);
  EXPECT_NE(r.status, 0);
  EXPECT_TRUE(r.out.empty());
  EXPECT_EQ(read_file(err).rfind("error: ", 0), 0u);

  EXPECT_NE(run_cli("synth --no-such-flag").status, 0);
  EXPECT_NE(run_cli("train --heads 3 " + out).status, 0);

  r = run_cli("rp " + (dir / "tracks" / "real_00000.json").string() + " --embed-dim 2 " + out);
  EXPECT_EQ(r.status, 0);
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 2);

  write_file_atomic(dir / "cfg.json", R"({"n": 2, "frames": 25})");
  r = run_cli("synth --config " + (dir / "cfg.json").string() + " --n 1 --out " + (dir / "layered").string());
  EXPECT_EQ(r.status, 0);
  EXPECT_NE(r.out.find("wrote 2 tracks"), std::string::npos);
  const auto echoed = nlohmann::json::parse(read_file(dir / "layered" / "run_config.json"));
  EXPECT_EQ(echoed["n"], 1);
  EXPECT_EQ(echoed["frames"], 25);

  ImagePlane img;
  img.width = img.height = 11;
  img.pixels.assign(121, 0.0);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<double>(i % 97);
  write_pgm(img, dir / "q.pgm");
  r = run_cli("quality " + (dir / "q.pgm").string() + " " + (dir / "q.pgm").string());
  EXPECT_EQ(r.status, 0);
  EXPECT_EQ(r.out, "PSNR=inf SSIM=1 UQI=1 IEF=n/a VIF=n/a RECO=n/a\n");
}
