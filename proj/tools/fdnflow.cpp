#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "fdnflow/runner.hpp"

namespace {

struct CommonOpts {
  std::vector<std::string> frames;
  std::string gt;
  int size = 256;
  double shift = 3.0;
  double lambda1 = 0.2;
  double lambda2 = 0.8;
  int epochs = 1000;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  int depth = 4;
  std::string out;
  std::string loss_norm = "mean";
  std::string name;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--frames", o.frames, "paths of frame 1 and frame 2")
      ->expected(2);
  cmd->add_option("--gt", o.gt, "ground-truth .flo path");
  cmd->add_option("--size", o.size, "phantom size in pixels (when no frames given)");
  cmd->add_option("--shift", o.shift, "phantom circle displacement in pixels");
  cmd->add_option("--lambda1", o.lambda1, "L1 data term weight");
  cmd->add_option("--lambda2", o.lambda2, "L2 data term weight");
  cmd->add_option("--epochs", o.epochs, "number of training epochs");
  cmd->add_option("--lr", o.lr, "learning rate");
  cmd->add_option("--seed", o.seed, "initialization seed");
  cmd->add_option("--depth", o.depth, "encoder-decoder depth");
  cmd->add_option("--out", o.out, "output directory")->required();
  cmd->add_option("--loss-norm", o.loss_norm, "loss normalization: mean|sum")
      ->check(CLI::IsMember({"mean", "sum"}));
  cmd->add_option("--name", o.name, "run label used in logs and tables");
}

fdnflow::ExperimentConfig build_config(const CommonOpts& o, double lambda_tv) {
  fdnflow::ExperimentConfig cfg;
  if (!o.frames.empty()) {
    cfg.phantom.reset();
    cfg.frame1_path = o.frames[0];
    cfg.frame2_path = o.frames[1];
    cfg.gt_path = o.gt;
    cfg.name = o.name.empty()
                   ? std::filesystem::path(o.frames[0]).parent_path().filename().string()
                   : o.name;
    if (cfg.name.empty()) cfg.name = "frames";
  } else {
    cfg.phantom = fdnflow::PhantomSpec{o.size, o.shift, {}};
    cfg.name = o.name.empty() ? "phantom" : o.name;
  }
  cfg.weights = {o.lambda1, o.lambda2, lambda_tv};
  cfg.epochs = o.epochs;
  cfg.learning_rate = o.lr;
  cfg.seed = o.seed;
  cfg.depth = o.depth;
  cfg.output_dir = o.out;
  cfg.loss_norm = o.loss_norm == "sum" ? fdnflow::LossNorm::Sum
                                       : fdnflow::LossNorm::Mean;
  return cfg;
}

fdnflow::json summary_json(const fdnflow::RunSummary& s) {
  fdnflow::json j;
  j["best_loss"] = s.best_loss;
  j["best_epoch"] = s.best_epoch;
  j["output_dir"] = s.output_dir;
  if (s.metrics) {
    j["aee"] = s.metrics->aee;
    j["sdee"] = s.metrics->sdee;
    j["aae"] = s.metrics->aae;
    j["sdae"] = s.metrics->sdae;
  }
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised optical flow via an encoder-decoder network "
               "trained on an L1/L2 + total-variation energy"};
  app.require_subcommand(1);

  CommonOpts train_opts;
  double train_lambda_tv = 0.0;
  CLI::App* train = app.add_subcommand("train", "train on one frame pair");
  add_common(train, train_opts);
  train->add_option("--lambda-tv", train_lambda_tv, "TV regularization weight");

  CommonOpts sweep_opts;
  std::vector<double> sweep_lambdas;
  CLI::App* sweep_cmd =
      app.add_subcommand("sweep", "train once per TV weight and tabulate");
  add_common(sweep_cmd, sweep_opts);
  sweep_cmd->add_option("--lambda-tv", sweep_lambdas, "TV weights to sweep over")
      ->required();

  int ph_size = 256;
  double ph_shift = 3.0;
  std::string ph_out;
  CLI::App* phantom = app.add_subcommand(
      "phantom", "emit the synthetic phantom pair and its ground-truth flow");
  phantom->add_option("--size", ph_size, "image size in pixels");
  phantom->add_option("--shift", ph_shift, "circle displacement in pixels");
  phantom->add_option("--out", ph_out, "output directory")->required();

  std::string eval_flow, eval_gt;
  CLI::App* eval = app.add_subcommand("eval", "compare two .flo files");
  eval->add_option("--flow", eval_flow, "predicted .flo")->required();
  eval->add_option("--gt", eval_gt, "ground-truth .flo")->required();

  std::string col_flow, col_out;
  double col_max = 0.0;
  CLI::App* colorize =
      app.add_subcommand("colorize", "render a .flo file with the color wheel");
  colorize->add_option("--flow", col_flow, "input .flo")->required();
  colorize->add_option("--out", col_out, "output image (.png or .ppm)")->required();
  colorize->add_option("--max-magnitude", col_max,
                       "normalization magnitude (default: field maximum)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      auto cfg = build_config(train_opts, train_lambda_tv);
      auto s = fdnflow::run_experiment(cfg);
      std::cout << summary_json(s).dump(2) << "\n";
    } else if (*sweep_cmd) {
      std::vector<fdnflow::ExperimentConfig> cfgs;
      for (double tv : sweep_lambdas) {
        auto cfg = build_config(sweep_opts, tv);
        cfg.output_dir.clear();  // sweep assigns per-run subdirectories
        cfgs.push_back(std::move(cfg));
      }
      auto rows = fdnflow::sweep(std::move(cfgs), sweep_opts.out);
      std::cout << fdnflow::sweep_table_csv(rows);
      for (const auto& r : rows)
        if (r.failed)
          std::cerr << "run failed (" << r.benchmark << ", lambda_tv=" << r.lambda_tv
                    << "): " << r.error << "\n";
    } else if (*phantom) {
      std::filesystem::create_directories(ph_out);
      auto pair = fdnflow::make_phantom_pair(
          ph_size, fdnflow::default_phantom_circles(ph_size, ph_shift));
      const std::filesystem::path dir(ph_out);
      fdnflow::write_pgm((dir / "frame1.pgm").string(), pair.frame1);
      fdnflow::write_pgm((dir / "frame2.pgm").string(), pair.frame2);
      fdnflow::write_flo((dir / "gt.flo").string(), pair.gt);
      fdnflow::write_png((dir / "gt.png").string(),
                         fdnflow::flow_to_color(pair.gt));
      std::cout << "wrote frame1.pgm, frame2.pgm, gt.flo, gt.png to " << ph_out
                << "\n";
    } else if (*eval) {
      auto pred = fdnflow::read_flo(eval_flow);
      auto gt = fdnflow::read_flo(eval_gt);
      auto m = fdnflow::evaluate_flow(pred, gt, fdnflow::known_flow_mask(gt));
      fdnflow::json j;
      j["aee"] = m.aee;
      j["sdee"] = m.sdee;
      j["aae"] = m.aae;
      j["sdae"] = m.sdae;
      j["pixel_count"] = m.pixel_count;
      std::cout << j.dump(2) << "\n";
    } else if (*colorize) {
      auto flow = fdnflow::read_flo(col_flow);
      auto rgb = fdnflow::flow_to_color(
          flow, col_max > 0.0 ? std::optional<double>(col_max) : std::nullopt);
      if (col_out.size() >= 4 && col_out.substr(col_out.size() - 4) == ".ppm")
        fdnflow::write_ppm(col_out, rgb);
      else
        fdnflow::write_png(col_out, rgb);
      std::cout << "wrote " << col_out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
