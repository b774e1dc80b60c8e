#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tsmini/commands.hpp"
#include "tsmini/config.hpp"
#include "tsmini/errors.hpp"

namespace fs = std::filesystem;
using namespace tsmini;

namespace {

MeasureKind measure_arg(const std::string& s) {
  try {
    return parse_measure_kind(s);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

void print_metrics(const MetricsReport& rep) { write_metrics(std::cout, rep); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TSMini trajectory similarity learning"};
  app.require_subcommand(1);

  // preprocess
  std::string pre_in, pre_out;
  std::size_t min_len = 20, max_len = 200;
  auto* pre = app.add_subcommand("preprocess", "Clean a lon/lat trajectory file");
  pre->add_option("input", pre_in, "Input trajectory file")->required();
  pre->add_option("output", pre_out, "Cleaned output file")->required();
  pre->add_option("--min-len", min_len, "Minimum points per trajectory");
  pre->add_option("--max-len", max_len, "Maximum points per trajectory");

  // synth
  SynthConfig sc;
  cmd::GeoAnchor anchor;
  std::string synth_out;
  std::vector<double> box;
  auto* syn = app.add_subcommand("synth", "Generate a synthetic lon/lat dataset");
  syn->add_option("output", synth_out, "Output trajectory file")->required();
  syn->add_option("--count", sc.count, "Number of trajectories");
  syn->add_option("--min-len", sc.n_min, "Minimum points per trajectory");
  syn->add_option("--max-len", sc.n_max, "Maximum points per trajectory");
  syn->add_option("--box", box, "Start box in meters: xmin ymin xmax ymax")->expected(4);
  syn->add_option("--heading-noise", sc.heading_noise_std, "Heading drift std (radians per step)");
  syn->add_option("--step-mu", sc.step_log_mu, "Mean of log step length (ln meters)");
  syn->add_option("--step-sigma", sc.step_log_sigma, "Std of log step length");
  syn->add_option("--seed", sc.seed, "Random seed");
  syn->add_option("--lon", anchor.lon_deg, "Longitude of the box origin");
  syn->add_option("--lat", anchor.lat_deg, "Latitude of the box origin");

  // gt
  std::string gt_dataset, gt_measure = "frechet", gt_out, gt_config;
  std::uint64_t gt_seed = 0;
  std::size_t gt_threads = 0;
  auto* gt = app.add_subcommand("gt", "Compute the ground-truth similarity matrix");
  gt->add_option("dataset", gt_dataset, "Cleaned trajectory file");
  gt->add_option("--measure", gt_measure, "dtw, frechet or edwp");
  gt->add_option("--out", gt_out, "Output directory");
  gt->add_option("--config", gt_config, "Run config supplying dataset, measure and out");
  gt->add_option("--seed", gt_seed, "Seed for scale estimation");
  gt->add_option("--threads", gt_threads, "Worker threads (0 = all cores)");

  // train
  std::string train_config, train_out;
  std::optional<std::uint64_t> train_seed;
  auto* tr = app.add_subcommand("train", "Train an encoder from a run config");
  tr->add_option("--config", train_config, "Run config file")->required();
  tr->add_option("--out", train_out, "Output directory (overrides config)");
  tr->add_option("--seed", train_seed, "Seed (overrides config)");

  // embed
  std::string emb_ckpt, emb_data, emb_out;
  auto* em = app.add_subcommand("embed", "Write embeddings of a dataset");
  em->add_option("checkpoint", emb_ckpt, "Checkpoint file")->required();
  em->add_option("dataset", emb_data, "Trajectory file")->required();
  em->add_option("output", emb_out, "Output TEMB file")->required();

  // eval
  std::string ev_ckpt, ev_data, ev_measure, ev_out;
  cmd::EvalOptions ev_opts;
  auto* ev = app.add_subcommand("eval", "kNN retrieval metrics on a test set");
  ev->add_option("checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("dataset", ev_data, "Test trajectory file")->required();
  ev->add_option("--measure", ev_measure, "Override the checkpoint's measure");
  ev->add_option("--mask", ev_opts.robustness.mask_ratio, "Drop this fraction of query points");
  ev->add_option("--shift", ev_opts.robustness.shift_meters, "Shift query points by up to this many meters");
  ev->add_option("--seed", ev_opts.robustness.seed, "Seed for robustness transforms");
  ev->add_flag("--oracle", ev_opts.oracle, "Use the ground truth as the prediction");
  ev->add_option("--out", ev_out, "Directory for metrics.txt");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? cmd::kOk : cmd::kUsage;
  }

  try {
    if (*pre) {
      const auto s = cmd::preprocess(pre_in, pre_out, LengthBounds{min_len, max_len});
      std::cout << "accepted\t" << s.accepted << "\nrejected\t" << s.rejected << '\n';
    } else if (*syn) {
      if (!box.empty()) {
        sc.x_min = box[0];
        sc.y_min = box[1];
        sc.x_max = box[2];
        sc.y_max = box[3];
      }
      cmd::synth(sc, synth_out, anchor);
      std::cout << "wrote\t" << sc.count << '\n';
    } else if (*gt) {
      fs::path dataset = gt_dataset, out = gt_out;
      MeasureKind kind = measure_arg(gt_measure);
      if (!gt_config.empty()) {
        const RunConfig rc = load_run_config(gt_config);
        if (dataset.empty()) dataset = rc.dataset;
        if (out.empty()) out = rc.out;
        if (gt->count("--measure") == 0) kind = rc.measure;
      }
      if (dataset.empty()) throw UsageError("gt: a dataset is required");
      if (out.empty()) out = ".";
      const auto r = cmd::ground_truth(dataset, kind, out, gt_seed, gt_threads);
      std::printf("matrix\t%s\nscale\t%.6f\nseconds\t%.2f\n", r.matrix_path.string().c_str(), r.info.scale.s,
                  r.seconds);
    } else if (*tr) {
      RunConfig rc = load_run_config(train_config);
      if (!train_out.empty()) rc.out = train_out;
      if (train_seed) {
        rc.seed = *train_seed;
        rc.train.seed = *train_seed;
      }
      cmd::train(rc, &std::cout);
    } else if (*em) {
      cmd::embed(emb_ckpt, emb_data, emb_out);
    } else if (*ev) {
      if (!ev_measure.empty()) ev_opts.measure = measure_arg(ev_measure);
      if (!ev_out.empty()) ev_opts.out_dir = fs::path(ev_out);
      print_metrics(cmd::evaluate(ev_ckpt, ev_data, ev_opts));
    }
  } catch (const std::exception& e) {
    const int rc = cmd::exit_code_for_current_exception();
    std::cerr << "error: " << e.what() << '\n';
    return rc;
  }
  return cmd::kOk;
}
