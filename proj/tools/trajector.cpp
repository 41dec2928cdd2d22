#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>

#include <CLI11.hpp>

#include "trajector.hpp"

namespace fs = std::filesystem;
using namespace trajector;

namespace {

// Command-line values only override the config when actually given.
struct Overrides {
  nlohmann::json values = nlohmann::json::object();
  std::vector<std::function<void()>> collect;

  template <typename T>
  CLI::Option* add(CLI::App& app, const std::string& flag, const char* key, const std::string& help) {
    auto storage = std::make_shared<T>();
    CLI::Option* opt = app.add_option(flag, *storage, help);
    collect.push_back([this, opt, storage, key] {
      if (opt->count() > 0) values[key] = *storage;
    });
    return opt;
  }

  void add_switch(CLI::App& app, const std::string& flag, const char* key, bool value, const std::string& help) {
    CLI::Option* opt = app.add_flag(flag, help);
    collect.push_back([this, opt, key, value] {
      if (opt->count() > 0) values[key] = value;
    });
  }

  nlohmann::json finish() {
    for (auto& f : collect) f();
    return values;
  }
};

void print_report(const char* name, const EvalReport& r) {
  std::cout << name << " acc=" << format_double(r.acc) << " auc=" << format_double(r.auc) << " n=" << r.n_samples
            << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geometric-trajectory deepfake detector"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file;
  app.add_option("--config", config_file, "JSON run config (flags take precedence)")->check(CLI::ExistingFile);

  Overrides o;
  o.add<std::uint64_t>(app, "--seed", "seed", "master seed");
  o.add<int>(app, "--tau", "tau", "delay-embedding lag");
  o.add<int>(app, "--embed-dim", "embed_dim", "delay-embedding dimension m");
  o.add<double>(app, "--rec-rate", "rec_rate", "target recurrence rate");
  o.add<double>(app, "--lambda", "lambda", "shape-coefficient ridge weight");
  o.add<double>(app, "--max-step", "max_step", "per-frame landmark step clamp at 25 fps (model units)");
  o.add<double>(app, "--lr", "lr", "initial learning rate");
  o.add<int>(app, "--batch-size", "batch_size", "batch size");
  o.add<int>(app, "--epochs", "epochs", "training epochs");
  o.add<int>(app, "--hidden", "hidden", "transformer hidden size");
  o.add<int>(app, "--layers", "layers", "encoder layers");
  o.add<int>(app, "--heads", "heads", "attention heads");
  o.add<int>(app, "--max-len", "max_len", "maximum embedded states per sequence");
  o.add<std::string>(app, "--out", "out", "output directory");
  o.add<std::string>(app, "--manifest", "manifest", "manifest CSV (path,label)");
  o.add<std::string>(app, "--features", "features", "feature CSV directory (default: --out)");
  o.add<std::string>(app, "--checkpoint-fe", "checkpoint_fe", "FE checkpoint path");
  o.add<std::string>(app, "--checkpoint-hp", "checkpoint_hp", "HP checkpoint path");
  o.add<std::string>(app, "--shape-model", "shape_model", "shape model JSON (default: built-in)");
  o.add<int>(app, "--n", "n", "synthetic tracks per class");
  o.add<int>(app, "--frames", "frames", "frames per synthetic track");
  o.add<double>(app, "--discount-fe", "discount_fe", "FE mass discount");
  o.add<double>(app, "--discount-hp", "discount_hp", "HP mass discount");
  o.add_switch(app, "--append-density", "append_density", true, "append per-state recurrence density");
  o.add_switch(app, "--no-positional-encoding", "positional_encoding", false, "disable positional encoding");

  std::optional<double> discount;
  app.add_option("--discount", discount, "mass discount u for both streams");
  std::vector<double> split;
  app.add_option("--split", split, "train,val,test fractions")->delimiter(',')->expected(3);

  auto* synth = app.add_subcommand("synth", "write a seeded synthetic dataset and manifest");
  auto* features = app.add_subcommand("features", "extract FE/HP feature CSVs per split");
  auto* train = app.add_subcommand("train", "train the FE and HP models");
  auto* eval = app.add_subcommand("eval", "evaluate on the test split and fuse");
  auto* predict = app.add_subcommand("predict", "classify one track");
  std::string track;
  predict->add_option("track", track, "landmark track JSON")->required();
  auto* rp = app.add_subcommand("rp", "export recurrence plots as PGM");
  std::vector<std::string> rp_inputs;
  rp->add_option("inputs", rp_inputs, "track JSON files or feature CSVs")->required();
  auto* quality = app.add_subcommand("quality", "PSNR/SSIM/UQI between two images");
  std::string image_a, image_b;
  quality->add_option("a", image_a, "reference PGM/PPM")->required();
  quality->add_option("b", image_b, "distorted PGM/PPM")->required();
  auto* shape = app.add_subcommand("shape-model", "write the built-in shape model as JSON");
  std::string shape_out;
  shape->add_option("path", shape_out, "output file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    nlohmann::json flags = o.finish();
    if (discount) flags["discount_fe"] = flags["discount_hp"] = *discount;
    if (!split.empty()) flags["split"] = split;

    auto layered = [&](RunConfig base) {
      if (!config_file.empty()) base = load_run_config(config_file, base);
      apply_run_config(base, flags);
      return base;
    };
    RunConfig cfg = layered(RunConfig{});
    if (*eval || *predict) {
      // Stored model settings sit between the defaults and the user's config.
      const fs::path ck = cfg.checkpoint_path(Stream::FE);
      if (fs::exists(ck)) cfg = layered(config_from_checkpoint(ck, RunConfig{}));
    }

    if (*synth) {
      const auto s = cmd_synth(cfg, std::cerr);
      std::cout << "wrote " << s.n_tracks << " tracks, manifest " << s.manifest.string() << "\n";
    } else if (*features) {
      const auto s = cmd_features(cfg, std::cerr);
      std::cout << "train=" << s.split_sizes[0] << " val=" << s.split_sizes[1] << " test=" << s.split_sizes[2]
                << " skipped=" << s.skipped.size() << "\n";
    } else if (*train) {
      const auto s = cmd_train(cfg, std::cerr);
      for (const auto& [stream, result] : s.results)
        std::cout << stream_name(stream) << " best_epoch=" << result.best_epoch << "\n";
    } else if (*eval) {
      const auto s = cmd_eval(cfg, std::cerr);
      print_report("FE", s.fe);
      print_report("HP", s.hp);
      print_report("fused", s.fused);
    } else if (*predict) {
      std::cout << verdict_line(cmd_predict(cfg, track)) << "\n";
    } else if (*rp) {
      const auto files = cmd_rp(cfg, {rp_inputs.begin(), rp_inputs.end()});
      for (const auto& f : files) std::cout << f.string() << "\n";
    } else if (*quality) {
      std::cout << quality_line(cmd_quality(image_a, image_b)) << "\n";
    } else if (*shape) {
      write_file_atomic(shape_out, shape_model_to_json(default_shape_model()).dump() + "\n");
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
