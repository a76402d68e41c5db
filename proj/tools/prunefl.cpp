// Command-line runner for the PruneFL simulator: config-driven experiments,
// lottery-ticket retraining, time-to-accuracy tables, and cost-model fits.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "prunefl/checkpoint.hpp"
#include "prunefl/experiment.hpp"

using namespace prunefl;

namespace {

int cmd_run(const std::string& config_path,
            const std::vector<std::string>& overrides) {
  ExperimentConfig cfg = load_config(config_path, overrides);
  ExperimentResult res = run_experiment(cfg);
  write_experiment_outputs(cfg, res);
  std::printf("method=%s rounds=%ld time=%.3fs density=%.4f acc=%.4f -> %s\n",
              res.summary.method.c_str(), res.summary.rounds,
              res.summary.total_seconds, res.summary.final_density,
              res.summary.final_test_accuracy, cfg.output_path.c_str());
  return 0;
}

int cmd_lottery(const std::string& config_path,
                const std::vector<std::string>& overrides,
                const std::string& checkpoint, long rounds,
                const std::string& out_prefix) {
  ExperimentConfig cfg = load_config(config_path, overrides);
  LotteryResult res = lottery_eval(cfg, checkpoint, rounds);
  write_records_csv(out_prefix + "_original.csv", res.original);
  write_records_csv(out_prefix + "_random.csv", res.random);
  write_records_csv(out_prefix + "_full.csv", res.full);
  std::printf(
      "lottery: original=%.4f random=%.4f full=%.4f (final accuracy) -> "
      "%s_{original,random,full}.csv\n",
      res.original.back().test_accuracy, res.random.back().test_accuracy,
      res.full.back().test_accuracy, out_prefix.c_str());
  return 0;
}

int cmd_summarize(const std::string& records_path,
                  const std::vector<double>& thresholds) {
  auto records = read_records_csv(records_path);
  auto table = summarize_time_to_accuracy(records, thresholds);
  std::printf("%-12s %-12s %s\n", "threshold", "seconds", "round");
  for (const auto& t : table) {
    if (t.reached)
      std::printf("%-12g %-12.3f %ld\n", t.threshold, t.seconds, t.round);
    else
      std::printf("%-12g %-12s -\n", t.threshold, "not reached");
  }
  return 0;
}

int cmd_fit_cost(const std::string& samples_path, double bandwidth,
                 const std::string& out_path) {
  // Samples CSV: one row per measurement, kept counts per layer then seconds.
  std::ifstream is(samples_path);
  if (!is) throw std::runtime_error("fit-cost: cannot open " + samples_path);
  std::vector<TimingSample> samples;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<double> vals;
    while (std::getline(ss, field, ',')) vals.push_back(std::stod(field));
    if (vals.size() < 2)
      throw std::runtime_error("fit-cost: row needs counts plus seconds");
    TimingSample s;
    for (std::size_t i = 0; i + 1 < vals.size(); ++i)
      s.kept_per_layer.push_back(static_cast<std::size_t>(vals[i]));
    s.seconds = vals.back();
    samples.push_back(std::move(s));
  }
  FitResult fit = fit_cost_model(samples, bandwidth);
  save_cost_model(out_path, fit.model);
  std::printf("fit: c=%.6g", fit.model.c_seconds);
  for (double t : fit.model.t_per_layer) std::printf(" t=%.6g", t);
  std::printf(" R2=%.6f -> %s\n", fit.r_squared, out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PruneFL simulator: adaptive federated pruning experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_path;
  std::vector<std::string> overrides;
  long seed_flag = -1;

  auto add_config_flags = [&](CLI::App* sub, bool config_required = true) {
    sub->add_option("--config", config_path, "experiment config (JSON)")
        ->required(config_required);
    sub->add_option("--override", overrides,
                    "dotted-path override, e.g. sgd.learning_rate=0.1");
    sub->add_option("--seed", seed_flag, "shorthand for seed=N");
    sub->add_option("--out", out_path, "shorthand for output_path=PATH");
  };

  auto* run = app.add_subcommand("run", "run one experiment to CSV");
  add_config_flags(run);

  auto* lottery = app.add_subcommand(
      "lottery", "retrain a pruned checkpoint (lottery-ticket check)");
  add_config_flags(lottery);
  std::string checkpoint;
  long lottery_rounds = 200;
  std::string lottery_prefix = "lottery";
  lottery->add_option("--checkpoint", checkpoint, "final .pfnn checkpoint")
      ->required();
  lottery->add_option("--rounds", lottery_rounds, "rounds per curve");
  lottery->add_option("--prefix", lottery_prefix, "output file prefix");

  auto* summarize =
      app.add_subcommand("summarize", "time-to-accuracy table from a CSV");
  std::string records_path;
  std::vector<double> thresholds{0.8, 0.85, 0.9};
  summarize->add_option("--records", records_path, "metrics CSV")->required();
  summarize->add_option("--threshold", thresholds, "accuracy thresholds");

  auto* fitc = app.add_subcommand("fit-cost", "fit a cost-model preset");
  std::string samples_path;
  double bandwidth = 1.4e6;
  std::string preset_out = "cost_model.json";
  fitc->add_option("--samples", samples_path,
                   "CSV rows: kept-per-layer...,seconds")
      ->required();
  fitc->add_option("--bandwidth", bandwidth, "link bandwidth in bytes/s");
  fitc->add_option("--out", preset_out, "preset output path");

  CLI11_PARSE(app, argc, argv);

  if (seed_flag >= 0)
    overrides.push_back("seed=" + std::to_string(seed_flag));
  if (!out_path.empty() && !app.got_subcommand(fitc))
    overrides.push_back("output_path=" + out_path);

  try {
    if (app.got_subcommand(run)) return cmd_run(config_path, overrides);
    if (app.got_subcommand(lottery))
      return cmd_lottery(config_path, overrides, checkpoint, lottery_rounds,
                         lottery_prefix);
    if (app.got_subcommand(summarize))
      return cmd_summarize(records_path, thresholds);
    if (app.got_subcommand(fitc))
      return cmd_fit_cost(samples_path, bandwidth, preset_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
