#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajector/error.hpp"
#include "trajector/eval.hpp"
#include "trajector/features.hpp"
#include "trajector/fusion.hpp"
#include "trajector/ingest.hpp"
#include "trajector/io.hpp"
#include "trajector/model.hpp"
#include "trajector/parallel.hpp"
#include "trajector/phase.hpp"
#include "trajector/rng.hpp"
#include "trajector/shape_model.hpp"
#include "trajector/synth.hpp"

namespace trajector {

namespace fs = std::filesystem;

// Eigenvalues below this fraction of the largest are floored when whitening.
inline constexpr double kWhiteningFloor = 1e-9;

// Every tunable of the pipeline plus paths and the master seed.
struct RunConfig {
  std::uint64_t seed = 1;

  // synthetic data
  int n = 500;  // tracks per class
  int frames = 150;
  double fps = 25.0;
  double head_motion = 0.35;
  double expression_amp = 1.0;
  double fake_jitter = 0.02;
  double fake_dropout = 0.05;
  double detector_noise = 0.5;

  // geometry
  int max_gap = kDefaultMaxGap;
  double lambda = 1e-2;
  int frontalize_iters = 3;
  double max_step = kDefaultMaxStep;
  double symmetry_bound = 0.1;

  // phase space
  int tau = 1;
  int embed_dim = 3;
  double rec_rate = 0.1;
  bool append_density = false;

  // model and training
  int hidden = 128;
  int layers = 2;
  int heads = 2;
  int max_len = 256;
  bool positional_encoding = true;
  double lr = 1e-4;
  int batch_size = 128;
  int epochs = 30;
  int plateau_patience = 3;
  double plateau_factor = 0.5;
  std::array<double, 3> split{0.8, 0.1, 0.1};

  // fusion
  double discount_fe = kDefaultDiscount;
  double discount_hp = kDefaultDiscount;

  // paths; empty means "derived from out"
  std::string out = "out";
  std::string manifest;
  std::string features;
  std::string checkpoint_fe;
  std::string checkpoint_hp;
  std::string shape_model;

  fs::path out_dir() const { return out; }
  fs::path features_dir() const { return features.empty() ? fs::path(out) : fs::path(features); }
  fs::path manifest_path() const { return manifest.empty() ? fs::path(out) / "manifest.csv" : fs::path(manifest); }
  fs::path checkpoint_path(Stream s) const {
    const std::string& p = s == Stream::FE ? checkpoint_fe : checkpoint_hp;
    return p.empty() ? fs::path(out) / ("checkpoint_" + std::string(stream_name(s)) + ".json") : fs::path(p);
  }
  double discount(Stream s) const { return s == Stream::FE ? discount_fe : discount_hp; }

  SynthConfig synth() const {
    SynthConfig c;
    c.n_frames = frames;
    c.fps = fps;
    c.head_motion_amplitude = head_motion;
    c.expression_amplitude = expression_amp;
    c.fake_jitter_std = fake_jitter;
    c.fake_dropout_prob = fake_dropout;
    c.detector_noise_px = detector_noise;
    c.seed = seed;
    return c;
  }

  FeatureParams feature_params() const {
    FeatureParams p;
    p.max_gap = max_gap;
    p.frontalize.lambda = lambda;
    p.frontalize.iterations = frontalize_iters;
    p.max_step = max_step;
    p.symmetry_bound = symmetry_bound;
    return p;
  }

  PhaseParams phase() const {
    PhaseParams p;
    p.tau = tau;
    p.m = embed_dim;
    p.recurrence_rate = rec_rate;
    p.append_density = append_density;
    return p;
  }

  TransformerConfig transformer(Stream s) const {
    TransformerConfig c;
    c.input_dim = trajectory_width(s, phase());
    c.hidden_dim = hidden;
    c.n_layers = layers;
    c.n_heads = heads;
    c.ff_dim = 2 * hidden;
    c.max_len = max_len;
    c.positional_encoding = positional_encoding;
    c.seed = derive_seed(seed, 0x6d6f64656c00ULL + static_cast<std::uint64_t>(s));
    return c;
  }

  TrainConfig training(Stream s) const {
    TrainConfig c;
    c.lr = lr;
    c.batch_size = batch_size;
    c.epochs = epochs;
    c.plateau_patience = plateau_patience;
    c.plateau_factor = plateau_factor;
    c.split = split;
    c.seed = derive_seed(seed, 0x747261696e00ULL + static_cast<std::uint64_t>(s));
    return c;
  }

  void validate() const {
    if (n < 0) throw Error("n must be non-negative");
    synth().validate();
    if (max_gap < 0) throw Error("max_gap must be non-negative");
    if (!(lambda >= 0.0)) throw Error("lambda must be non-negative");
    if (frontalize_iters < 1) throw Error("frontalize_iters must be positive");
    if (!(max_step > 0.0)) throw Error("max_step must be positive");
    if (!(symmetry_bound > 0.0)) throw Error("symmetry_bound must be positive");
    if (tau < 1 || embed_dim < 1) throw Error("tau and embed_dim must be positive");
    if (!(rec_rate > 0.0 && rec_rate <= 1.0)) throw Error("rec_rate must lie in (0,1]");
    if (split[0] < 0.0 || split[1] < 0.0 || split[2] < 0.0 || std::abs(split[0] + split[1] + split[2] - 1.0) > 1e-9)
      throw Error("split fractions must be non-negative and sum to 1");
    transformer(Stream::FE).validate();
    training(Stream::FE).validate();
    for (double u : {discount_fe, discount_hp})
      if (!(u >= 0.0 && u < 1.0)) throw Error("discount must lie in [0,1)");
  }
};

namespace detail {

// Single table of (key, member) bindings drives JSON in both directions.
template <typename Config, typename F>
void bind_fields(Config& c, F&& f) {
  f("seed", c.seed);
  f("n", c.n);
  f("frames", c.frames);
  f("fps", c.fps);
  f("head_motion", c.head_motion);
  f("expression_amp", c.expression_amp);
  f("fake_jitter", c.fake_jitter);
  f("fake_dropout", c.fake_dropout);
  f("detector_noise", c.detector_noise);
  f("max_gap", c.max_gap);
  f("lambda", c.lambda);
  f("frontalize_iters", c.frontalize_iters);
  f("max_step", c.max_step);
  f("symmetry_bound", c.symmetry_bound);
  f("tau", c.tau);
  f("embed_dim", c.embed_dim);
  f("rec_rate", c.rec_rate);
  f("append_density", c.append_density);
  f("hidden", c.hidden);
  f("layers", c.layers);
  f("heads", c.heads);
  f("max_len", c.max_len);
  f("positional_encoding", c.positional_encoding);
  f("lr", c.lr);
  f("batch_size", c.batch_size);
  f("epochs", c.epochs);
  f("plateau_patience", c.plateau_patience);
  f("plateau_factor", c.plateau_factor);
  f("split", c.split);
  f("discount_fe", c.discount_fe);
  f("discount_hp", c.discount_hp);
  f("out", c.out);
  f("manifest", c.manifest);
  f("features", c.features);
  f("checkpoint_fe", c.checkpoint_fe);
  f("checkpoint_hp", c.checkpoint_hp);
  f("shape_model", c.shape_model);
}

// Settings a trained model depends on; stored in checkpoints and checked at
// inference time.
inline const std::vector<std::string>& model_bound_keys() {
  static const std::vector<std::string> keys = {
      "max_gap", "lambda", "frontalize_iters", "max_step", "symmetry_bound", "tau", "embed_dim", "rec_rate",
      "append_density", "hidden", "layers", "heads", "max_len", "positional_encoding"};
  return keys;
}

}  // namespace detail

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  detail::bind_fields(c, [&](const char* key, const auto& value) { j[key] = value; });
  return j;
}

// Overlays the keys present in `j`; unknown keys are rejected.
inline void apply_run_config(RunConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw Error("config must be a JSON object");
  std::map<std::string, bool> seen;
  for (auto it = j.begin(); it != j.end(); ++it) seen[it.key()] = false;
  detail::bind_fields(c, [&](const char* key, auto& value) {
    if (!j.contains(key)) return;
    try {
      value = j.at(key).get<std::decay_t<decltype(value)>>();
    } catch (const nlohmann::json::exception&) {
      throw Error(std::string("config key '") + key + "' has the wrong type");
    }
    seen[key] = true;
  });
  for (const auto& [key, used] : seen)
    if (!used) throw Error("unknown config key '" + key + "'");
}

inline RunConfig load_run_config(const fs::path& path, RunConfig base = {}) {
  try {
    apply_run_config(base, nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("unreadable config " + path.string() + ": " + e.what());
  }
  return base;
}

inline void echo_run_config(const RunConfig& c, const fs::path& dir) {
  write_file_atomic(dir / "run_config.json", run_config_to_json(c).dump(2) + "\n");
}

inline ShapeModel resolve_shape_model(const RunConfig& c) {
  return c.shape_model.empty() ? default_shape_model() : load_shape_model(c.shape_model);
}

// ---------------------------------------------------------------------------
// Dataset split.

enum class Split { train = 0, val = 1, test = 2 };
inline const char* split_name(Split s) {
  static constexpr const char* names[] = {"train", "val", "test"};
  return names[static_cast<int>(s)];
}

// round(f_train n), round(f_val n), remainder.
inline std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& fractions) {
  const auto n_train = std::min(n, static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n))));
  const auto n_val =
      std::min(n - n_train, static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n))));
  return {n_train, n_val, n - n_train - n_val};
}

// Seeded shuffle of indices 0..n-1, then consecutive blocks per split.
inline std::vector<Split> assign_splits(std::size_t n, const std::array<double, 3>& fractions, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x73706c6974ULL));
  rng.shuffle(order);
  const auto counts = split_counts(n, fractions);
  std::vector<Split> out(n);
  for (std::size_t k = 0; k < n; ++k)
    out[order[k]] = k < counts[0] ? Split::train : (k < counts[0] + counts[1] ? Split::val : Split::test);
  return out;
}

// ---------------------------------------------------------------------------
// Feature CSV: video_id,label,stream,frame,c0..c{d-1}; one row per frame.

inline std::string feature_csv_name(Stream s, Split split) {
  return std::string("features_") + stream_name(s) + "_" + split_name(split) + ".csv";
}

inline std::string encode_feature_csv(Stream stream, const std::vector<const FeatureSequence*>& seqs) {
  std::string out = "video_id,label,stream,frame";
  for (int c = 0; c < stream_dim(stream); ++c) out += ",c" + std::to_string(c);
  out += "\n";
  for (const auto* seq : seqs) {
    if (seq->video_id.find_first_of(",\n\r") != std::string::npos)
      throw IoError("video_id not representable in CSV: " + seq->video_id);
    const std::string label = seq->label ? std::to_string(static_cast<int>(*seq->label)) : "";
    for (Eigen::Index t = 0; t < seq->values.rows(); ++t) {
      out += seq->video_id + "," + label + "," + stream_name(stream) + "," + std::to_string(t);
      for (Eigen::Index c = 0; c < seq->values.cols(); ++c) out += "," + format_double(seq->values(t, c));
      out += "\n";
    }
  }
  return out;
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw IoError("bad number in CSV: '" + std::string(s) + "'");
  return v;
}

}  // namespace detail

inline std::vector<FeatureSequence> parse_feature_csv(const std::string& text, double fps = 25.0) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty feature CSV");
  const auto header = detail::split_fields(line);
  if (header.size() < 5 || header[0] != "video_id" || header[1] != "label" || header[2] != "stream" ||
      header[3] != "frame")
    throw IoError("feature CSV header must start with video_id,label,stream,frame");
  const auto dim = static_cast<Eigen::Index>(header.size() - 4);

  std::vector<FeatureSequence> out;
  std::vector<std::vector<double>> rows;
  auto flush = [&]() {
    if (out.empty() || rows.empty()) return;
    auto& seq = out.back();
    seq.values.resize(static_cast<Eigen::Index>(rows.size()), dim);
    for (std::size_t t = 0; t < rows.size(); ++t)
      for (Eigen::Index c = 0; c < dim; ++c) seq.values(static_cast<Eigen::Index>(t), c) = rows[t][c];
    rows.clear();
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_fields(line);
    if (static_cast<Eigen::Index>(f.size()) != dim + 4) throw IoError("feature CSV row has wrong field count");
    Stream stream;
    if (f[2] == "FE") {
      stream = Stream::FE;
    } else if (f[2] == "HP") {
      stream = Stream::HP;
    } else {
      throw IoError("unknown stream '" + std::string(f[2]) + "'");
    }
    if (stream_dim(stream) != dim) throw IoError("column count does not match stream " + std::string(f[2]));
    const auto frame = static_cast<std::size_t>(detail::parse_double(f[3]));
    if (out.empty() || out.back().video_id != f[0]) {
      flush();
      FeatureSequence seq;
      seq.stream = stream;
      seq.fps = fps;
      seq.video_id = std::string(f[0]);
      if (f[1] == "0") {
        seq.label = Label::real;
      } else if (f[1] == "1") {
        seq.label = Label::fake;
      } else if (!f[1].empty()) {
        throw IoError("bad label '" + std::string(f[1]) + "'");
      }
      out.push_back(std::move(seq));
    }
    if (frame != rows.size()) throw IoError("non-consecutive frame numbers for " + out.back().video_id);
    std::vector<double> row(static_cast<std::size_t>(dim));
    for (Eigen::Index c = 0; c < dim; ++c) row[static_cast<std::size_t>(c)] = detail::parse_double(f[4 + c]);
    rows.push_back(std::move(row));
  }
  flush();
  return out;
}

inline std::vector<FeatureSequence> read_feature_csv(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing feature file " + path.string());
  return parse_feature_csv(read_file(path));
}

// ---------------------------------------------------------------------------
// Inference over both streams with fusion.

struct Verdict {
  std::string video_id;
  double p_fe = 0.0;
  double p_hp = 0.0;
  MassFunction mass;
  int label_pred = 0;
  std::optional<Label> label_true;
};

inline std::string verdict_line(const Verdict& v) {
  return v.video_id + " p_fe=" + format_double(v.p_fe) + " p_hp=" + format_double(v.p_hp) +
         " m_real=" + format_double(v.mass.m_real) + " m_fake=" + format_double(v.mass.m_fake) +
         " m_theta=" + format_double(v.mass.m_theta) + " label=" + std::to_string(v.label_pred);
}

inline std::string encode_verdicts_csv(const std::vector<Verdict>& verdicts) {
  const bool with_truth =
      !verdicts.empty() && std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.label_true; });
  std::string out = "video_id,p_fe,p_hp,m_real,m_fake,m_theta,label_pred";
  out += with_truth ? ",label_true\n" : "\n";
  for (const auto& v : verdicts) {
    out += v.video_id + "," + format_double(v.p_fe) + "," + format_double(v.p_hp) + "," +
           format_double(v.mass.m_real) + "," + format_double(v.mass.m_fake) + "," + format_double(v.mass.m_theta) +
           "," + std::to_string(v.label_pred);
    if (with_truth) out += "," + std::to_string(static_cast<int>(*v.label_true));
    out += "\n";
  }
  return out;
}

// Symmetric inverse square root of the (uncentred) second-moment matrix of
// the training states. Slow motion dominates delay-embedded states; whitening
// lifts the small frame-to-frame difference directions to unit scale before
// the linear embedding, which is a reparametrization of that layer.
inline MatrixXd whitening_transform(const std::vector<Example>& examples) {
  const Eigen::Index k = examples.front().states.cols();
  MatrixXd moment = MatrixXd::Zero(k, k);
  double count = 0.0;
  for (const auto& e : examples) {
    moment.noalias() += e.states.transpose() * e.states;
    count += static_cast<double>(e.states.rows());
  }
  moment /= count;
  const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(moment);
  const double top = eig.eigenvalues().maxCoeff();
  if (!(top > 0.0)) return MatrixXd::Identity(k, k);
  const VectorXd inv_sqrt = eig.eigenvalues().cwiseMax(kWhiteningFloor * top).cwiseSqrt().cwiseInverse();
  return eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose();
}

class StreamModel {
 public:
  explicit StreamModel(Checkpoint ck) : ck_(std::move(ck)), net_(ck_.config, ck_.params) {}

  const Checkpoint& checkpoint() const { return ck_; }

  MatrixXd prepare(const FeatureSequence& seq, const PhaseParams& phase) const {
    MatrixXd states = clip_length(trajectory_states(seq, phase), ck_.config.max_len);
    return states * ck_.input_transform;
  }

  double predict(const FeatureSequence& seq, const PhaseParams& phase) const {
    return net_.predict(prepare(seq, phase));
  }

 private:
  Checkpoint ck_;
  Transformer net_;
};

// Applies the checkpoint's stored settings under the caller's config and
// fails if an explicitly differing value would contradict the trained model.
inline void check_checkpoint_config(const Checkpoint& ck, const RunConfig& cfg, Stream stream) {
  const nlohmann::json effective = run_config_to_json(cfg);
  for (const auto& key : detail::model_bound_keys()) {
    if (!ck.pipeline.contains(key)) throw CheckpointError("checkpoint lacks setting '" + key + "'");
    if (ck.pipeline.at(key) != effective.at(key))
      throw CheckpointError(std::string("checkpoint/config mismatch for ") + stream_name(stream) + " on '" + key +
                            "': checkpoint " + ck.pipeline.at(key).dump() + ", config " + effective.at(key).dump());
  }
  TransformerConfig expected = cfg.transformer(stream);
  TransformerConfig stored = ck.config;
  expected.seed = stored.seed = 0;
  if (!(expected == stored)) throw CheckpointError("checkpoint shape mismatch for stream " + std::string(stream_name(stream)));
}

// Checkpoint settings fill in anything the user did not set explicitly.
inline RunConfig config_from_checkpoint(const fs::path& path, RunConfig base) {
  const Checkpoint ck = load_checkpoint(path);
  nlohmann::json bound = nlohmann::json::object();
  for (const auto& key : detail::model_bound_keys())
    if (ck.pipeline.contains(key)) bound[key] = ck.pipeline.at(key);
  apply_run_config(base, bound);
  return base;
}

class Detector {
 public:
  explicit Detector(const RunConfig& cfg)
      : cfg_(cfg),
        fe_(load_checked(cfg, Stream::FE)),
        hp_(load_checked(cfg, Stream::HP)),
        shape_(resolve_shape_model(cfg)) {}

  Verdict classify(const FeatureSequence& fe, const FeatureSequence& hp) const {
    Verdict v;
    v.video_id = fe.video_id;
    v.label_true = fe.label;
    v.p_fe = fe_.predict(fe, cfg_.phase());
    v.p_hp = hp_.predict(hp, cfg_.phase());
    v.mass = dempster_combine(mass_from_prob(v.p_fe, cfg_.discount_fe), mass_from_prob(v.p_hp, cfg_.discount_hp));
    v.label_pred = decide(v.mass);
    return v;
  }

  Verdict classify(const LandmarkTrack& track) const {
    const SequencePair seqs = build_sequences(track, shape_, cfg_.feature_params());
    return classify(seqs.fe, seqs.hp);
  }

  const StreamModel& stream(Stream s) const { return s == Stream::FE ? fe_ : hp_; }

 private:
  static StreamModel load_checked(const RunConfig& cfg, Stream s) {
    Checkpoint ck = load_checkpoint(cfg.checkpoint_path(s));
    check_checkpoint_config(ck, cfg, s);
    return StreamModel(std::move(ck));
  }

  RunConfig cfg_;
  StreamModel fe_, hp_;
  ShapeModel shape_;
};

// ---------------------------------------------------------------------------
// Subcommands. Results go to the return value, diagnostics to `log`.

struct SynthSummary {
  std::size_t n_tracks = 0;
  fs::path manifest;
};

inline std::string synth_track_name(Label label, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05d", label == Label::real ? "real" : "fake", index);
  return buf;
}

inline SynthSummary cmd_synth(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const fs::path dir = cfg.out_dir();
  fs::create_directories(dir / "tracks");
  const ShapeModel model = resolve_shape_model(cfg);
  const auto n = static_cast<std::size_t>(cfg.n);
  if (n == 0) log << "warning: n=0, writing an empty manifest\n";

  // Track i of each class shares its motion seed, so a real/fake pair differs
  // only in the manipulation artifacts.
  parallel_for(2 * n, [&](std::size_t k) {
    const int index = static_cast<int>(k / 2);
    const Label label = k % 2 == 0 ? Label::real : Label::fake;
    SynthConfig sc = cfg.synth();
    sc.seed = derive_seed(cfg.seed, 0x73796e7468000000ULL + static_cast<std::uint64_t>(index));
    const std::string id = synth_track_name(label, index);
    write_file_atomic(dir / "tracks" / (id + ".json"), serialize_track(synth_track(sc, label, model, id)));
  });
  std::string manifest = "path,label\n";
  for (std::size_t k = 0; k < 2 * n; ++k) {
    const Label label = k % 2 == 0 ? Label::real : Label::fake;
    manifest += "tracks/" + synth_track_name(label, static_cast<int>(k / 2)) + ".json," +
                std::to_string(static_cast<int>(label)) + "\n";
  }
  SynthSummary s;
  s.n_tracks = 2 * n;
  s.manifest = dir / "manifest.csv";
  write_file_atomic(s.manifest, manifest);
  echo_run_config(cfg, dir);
  return s;
}

struct FeaturesSummary {
  std::array<std::size_t, 3> split_sizes{};  // successfully extracted tracks per split
  std::vector<std::pair<fs::path, std::string>> skipped;
};

inline FeaturesSummary cmd_features(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const auto entries = read_manifest(cfg.manifest_path());
  const ShapeModel model = resolve_shape_model(cfg);
  const FeatureParams params = cfg.feature_params();
  const auto splits = assign_splits(entries.size(), cfg.split, cfg.seed);

  std::vector<std::optional<SequencePair>> seqs(entries.size());
  std::vector<std::string> errors(entries.size());
  parallel_for(entries.size(), [&](std::size_t i) {
    try {
      LandmarkTrack track = load_track(entries[i].path);
      track.label = entries[i].label;
      seqs[i] = build_sequences(track, model, params);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  FeaturesSummary summary;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (seqs[i]) {
      ++summary.split_sizes[static_cast<std::size_t>(splits[i])];
    } else {
      summary.skipped.emplace_back(entries[i].path, errors[i]);
      log << "skipped " << entries[i].path.string() << ": " << errors[i] << "\n";
    }
  }
  if (!summary.skipped.empty()) log << "skipped " << summary.skipped.size() << " track(s)\n";

  const fs::path dir = cfg.out_dir();
  for (Stream stream : {Stream::FE, Stream::HP}) {
    for (Split split : {Split::train, Split::val, Split::test}) {
      std::vector<const FeatureSequence*> rows;
      for (std::size_t i = 0; i < entries.size(); ++i)
        if (seqs[i] && splits[i] == split) rows.push_back(stream == Stream::FE ? &seqs[i]->fe : &seqs[i]->hp);
      write_file_atomic(dir / feature_csv_name(stream, split), encode_feature_csv(stream, rows));
    }
  }
  echo_run_config(cfg, dir);
  return summary;
}

inline std::vector<Example> to_examples(const std::vector<FeatureSequence>& seqs, const PhaseParams& phase) {
  std::vector<Example> out(seqs.size());
  parallel_for(seqs.size(), [&](std::size_t i) {
    if (!seqs[i].label) throw SequenceError("unlabeled sequence " + seqs[i].video_id);
    out[i].states = trajectory_states(seqs[i], phase);
    out[i].label = static_cast<int>(*seqs[i].label);
  });
  return out;
}

struct TrainSummary {
  std::map<Stream, TrainResult> results;
};

inline nlohmann::json checkpoint_settings(const RunConfig& cfg) {
  const nlohmann::json all = run_config_to_json(cfg);
  nlohmann::json bound = nlohmann::json::object();
  for (const auto& key : detail::model_bound_keys()) bound[key] = all.at(key);
  return bound;
}

// Trains one stream on train/val examples; returns the checkpoint.
inline Checkpoint train_stream(const RunConfig& cfg, Stream stream, std::vector<Example> train_set,
                               std::vector<Example> val_set, TrainResult* result_out = nullptr,
                               const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  if (train_set.empty()) throw ModelError(std::string("no training data for stream ") + stream_name(stream));
  Checkpoint ck;
  ck.config = cfg.transformer(stream);
  ck.pipeline = checkpoint_settings(cfg);
  ck.input_transform = whitening_transform(train_set);
  for (auto* set : {&train_set, &val_set})
    for (auto& e : *set) e.states = clip_length(e.states, ck.config.max_len) * ck.input_transform;
  TrainResult result = train(train_set, val_set, cfg.training(stream), ck.config, on_epoch);
  ck.params = result.params;
  if (result_out) *result_out = std::move(result);
  return ck;
}

inline TrainSummary cmd_train(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const fs::path in = cfg.features_dir();
  TrainSummary summary;
  nlohmann::json history = nlohmann::json::object();
  for (Stream stream : {Stream::FE, Stream::HP}) {
    auto train_set = to_examples(read_feature_csv(in / feature_csv_name(stream, Split::train)), cfg.phase());
    auto val_set = to_examples(read_feature_csv(in / feature_csv_name(stream, Split::val)), cfg.phase());
    TrainResult result;
    const Checkpoint ck =
        train_stream(cfg, stream, std::move(train_set), std::move(val_set), &result, [&](const EpochRecord& r) {
          log << stream_name(stream) << " epoch " << r.epoch << " lr " << r.lr << " train_loss " << r.train_loss
              << " val_loss " << r.val_loss << " val_acc " << r.val_acc << "\n";
        });
    save_checkpoint(ck, cfg.checkpoint_path(stream));
    history[stream_name(stream)] = {{"best_epoch", result.best_epoch}, {"epochs", history_to_json(result.history)}};
    summary.results[stream] = std::move(result);
  }
  write_file_atomic(cfg.out_dir() / "history.json", history.dump(2) + "\n");
  echo_run_config(cfg, cfg.out_dir());
  return summary;
}

struct EvalSummary {
  EvalReport fe, hp, fused;
  std::vector<Verdict> verdicts;
};

// Scores paired FE/HP sequences (matched by video_id) with a detector.
inline EvalSummary evaluate_sequences(const Detector& detector, const std::vector<FeatureSequence>& fe,
                                      const std::vector<FeatureSequence>& hp) {
  std::map<std::string, const FeatureSequence*> hp_by_id;
  for (const auto& s : hp) hp_by_id[s.video_id] = &s;
  std::vector<std::pair<const FeatureSequence*, const FeatureSequence*>> pairs;
  for (const auto& s : fe) {
    const auto it = hp_by_id.find(s.video_id);
    if (it == hp_by_id.end()) throw SequenceError("no HP sequence for " + s.video_id);
    if (!s.label) throw SequenceError("unlabeled test sequence " + s.video_id);
    pairs.emplace_back(&s, it->second);
  }
  if (pairs.empty()) throw MetricError("empty test split");

  EvalSummary out;
  out.verdicts.resize(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) { out.verdicts[i] = detector.classify(*pairs[i].first, *pairs[i].second); });
  std::vector<double> s_fe, s_hp, s_fused;
  std::vector<int> labels;
  for (const auto& v : out.verdicts) {
    s_fe.push_back(v.p_fe);
    s_hp.push_back(v.p_hp);
    s_fused.push_back(pignistic_fake(v.mass));
    labels.push_back(static_cast<int>(*v.label_true));
  }
  out.fe = evaluate_scores(s_fe, labels);
  out.hp = evaluate_scores(s_hp, labels);
  out.fused = evaluate_scores(s_fused, labels);
  return out;
}

inline EvalSummary cmd_eval(const RunConfig& cfg, std::ostream& /*log*/) {
  cfg.validate();
  const Detector detector(cfg);
  const fs::path in = cfg.features_dir();
  EvalSummary out = evaluate_sequences(detector, read_feature_csv(in / feature_csv_name(Stream::FE, Split::test)),
                                       read_feature_csv(in / feature_csv_name(Stream::HP, Split::test)));
  const fs::path dir = cfg.out_dir();
  for (const auto& [name, report] : {std::pair{"FE", &out.fe}, std::pair{"HP", &out.hp}, std::pair{"fused", &out.fused}}) {
    write_report(*report, dir / (std::string("report_") + name + ".json"), ReportFormat::json);
    write_report(*report, dir / (std::string("roc_") + name + ".csv"), ReportFormat::csv);
  }
  write_file_atomic(dir / "verdicts.csv", encode_verdicts_csv(out.verdicts));
  echo_run_config(cfg, dir);
  return out;
}

inline Verdict cmd_predict(const RunConfig& cfg, const fs::path& track_path) {
  cfg.validate();
  return Detector(cfg).classify(load_track(track_path));
}

// One PGM per stream per input. Inputs are track JSON files or feature CSVs.
inline std::vector<fs::path> cmd_rp(const RunConfig& cfg, const std::vector<fs::path>& inputs) {
  cfg.validate();
  const ShapeModel model = resolve_shape_model(cfg);
  std::vector<FeatureSequence> seqs;
  for (const auto& path : inputs) {
    if (path.extension() == ".csv") {
      for (auto& s : read_feature_csv(path)) seqs.push_back(std::move(s));
    } else {
      auto pair = build_sequences(load_track(path), model, cfg.feature_params());
      seqs.push_back(std::move(pair.fe));
      seqs.push_back(std::move(pair.hp));
    }
  }
  std::vector<fs::path> written(seqs.size());
  const PhaseParams phase = cfg.phase();
  parallel_for(seqs.size(), [&](std::size_t i) {
    const auto traj = delay_embed(relative_trajectory(seqs[i]), phase.tau, phase.m);
    const auto rp = recurrence_plot(traj, epsilon_for_rate(traj, phase.recurrence_rate));
    written[i] = cfg.out_dir() / ("rp_" + seqs[i].video_id + "_" + stream_name(seqs[i].stream) + ".pgm");
    export_rp_image(rp, written[i]);
  });
  return written;
}

struct QualityResult {
  double psnr = 0.0;
  double ssim = 0.0;
  UqiResult uqi;
};

inline QualityResult cmd_quality(const fs::path& a, const fs::path& b) {
  const ImagePlane ia = read_pnm(a);
  const ImagePlane ib = read_pnm(b);
  require_same_size(ia, ib);
  return {psnr(ia, ib), ssim(ia, ib), uqi(ia, ib)};
}

inline std::string quality_line(const QualityResult& q) {
  auto num = [](double v) { return std::isinf(v) ? std::string("inf") : std::isnan(v) ? "nan" : format_double(v); };
  return "PSNR=" + num(q.psnr) + " SSIM=" + num(q.ssim) + " UQI=" + num(q.uqi.value) + " IEF=n/a VIF=n/a RECO=n/a";
}

}  // namespace trajector
