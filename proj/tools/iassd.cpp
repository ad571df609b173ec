// iassd: sampling, recall, training, detection, evaluation, benchmarking
// and KITTI conversion from one binary.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "iassd/cli.hpp"

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "csv";
  std::optional<std::size_t> threads;
};

iassd::ExperimentConfig resolve(const Globals& g) {
  iassd::ExperimentConfig e;
  if (!g.config.empty())
    e = iassd::load_experiment(g.config);
  else
    iassd::apply_environment(e);
  if (g.seed) e.seed = *g.seed;
  if (!g.out.empty()) e.out_dir = g.out;
  if (g.threads) {
    if (*g.threads == 0) throw iassd::ConfigError("--threads: must be positive");
    e.threads = *g.threads;
  }
  return e;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace iassd;
  CLI::App app{"Point-based 3D detection toolkit: sampling, training, detection and evaluation."};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("-c,--config", g.config, "experiment configuration (JSON)");
  app.add_option("--seed", g.seed, "override the configured seed");
  app.add_option("-o,--out", g.out, "output directory (default: config or ./out)");
  app.add_option("--format", g.format, "stdout table format")->check(CLI::IsMember({"csv", "json"}));
  app.add_option("--threads", g.threads, "worker threads for per-scene loops");

  std::vector<std::string> inputs;
  auto* sample = app.add_subcommand("sample", "downsample clouds with each configured strategy");
  sample->add_option("inputs", inputs, "point files (default: configured scenes)")->check(CLI::ExistingFile);
  std::optional<std::size_t> sample_k;
  sample->add_option("-k", sample_k, "points to keep");

  app.add_subcommand("recall", "instance recall per layer for each sampling strategy");

  cli::TrainOptions topt;
  std::optional<std::size_t> steps;
  auto* train = app.add_subcommand("train", "train the detector on the configured scenes");
  train->add_option("--resume", topt.resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  train->add_option("--checkpoint-every", topt.checkpoint_every, "write model.ckpt every N steps");
  train->add_option("--steps", steps, "override train.steps");

  std::string checkpoint;
  auto* detect = app.add_subcommand("detect", "run a trained checkpoint and write detections.txt");
  detect->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  detect->add_option("inputs", inputs, "point files (default: configured scenes)")->check(CLI::ExistingFile);

  std::string detections;
  auto* eval = app.add_subcommand("eval", "average precision of a detection file");
  eval->add_option("--detections", detections, "detection file")->required()->check(CLI::ExistingFile);

  app.add_subcommand("bench", "kernel timings");

  cli::ConvertOptions copt;
  auto* convert = app.add_subcommand("convert", "KITTI labels to LiDAR-frame scene labels");
  convert->add_option("--labels", copt.labels, "KITTI label_2 directory")->required();
  convert->add_option("--calib", copt.calib, "KITTI calib directory")->required();
  convert->add_option("--velodyne", copt.velodyne, "KITTI velodyne directory (copied after validation)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kOk : cli::kUsage;
  }

  try {
    ExperimentConfig e = resolve(g);
    const TableFormat fmt = parse_table_format(g.format);
    ReportTable table;
    std::string name;
    if (*sample) {
      if (sample_k) {
        if (*sample_k == 0) throw ConfigError("-k: must be positive");
        e.sample.k = *sample_k;
      }
      table = cli::cmd_sample(e, inputs), name = "sample";
    } else if (app.got_subcommand("recall")) {
      table = cli::cmd_recall(e), name = "recall";
    } else if (*train) {
      if (steps) e.train.steps = *steps;
      table = cli::cmd_train(e, topt), name = "train";
    } else if (*detect) {
      table = cli::cmd_detect(e, checkpoint, inputs), name = "detect";
    } else if (*eval) {
      table = cli::cmd_eval(e, detections), name = "eval";
    } else if (app.got_subcommand("bench")) {
      table = cli::cmd_bench(e), name = "bench";
    } else if (*convert) {
      table = cli::cmd_convert(e, copt), name = "convert";
    }
    cli::emit(table, name, e.out_dir, fmt, std::cout);
    return cli::kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return cli::kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return cli::kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return cli::kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kInternal;
  }
}
