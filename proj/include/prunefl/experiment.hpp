#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "prunefl/config.hpp"

namespace prunefl {

// One CSV row. FL rounds are 1-based; row 0 is the starting state (for
// PruneFL, the initial-pruning stage occupies rounds <= 0, five-iteration
// blocks each, ending at round 0). Loss/accuracy carry the latest
// evaluation forward between eval rounds.
struct RoundRecord {
  long round = 0;
  double seconds = 0.0;
  double density = 1.0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_down = 0;
  bool reconfig = false;
};

struct PlanRow {
  long round = 0;
  std::size_t p_size = 0;
  std::size_t pbar_size = 0;
  std::size_t kept = 0;
  double gamma = 0.0;
  double delta = 0.0;
  double time_cost = 0.0;
  double density = 0.0;
};

struct ExperimentSummary {
  std::string method;
  std::uint64_t seed = 0;
  std::uint64_t init_seed = 0;
  long rounds = 0;
  double initial_train_loss = 0.0;
  double initial_test_accuracy = 0.0;
  double final_train_loss = 0.0;
  double final_test_accuracy = 0.0;
  double final_density = 1.0;
  double total_seconds = 0.0;
  std::uint64_t total_bytes_up = 0;
  std::uint64_t total_bytes_down = 0;
  double initial_prune_seconds = 0.0;
  int initial_prune_blocks = 0;
};

struct ExperimentResult {
  std::vector<RoundRecord> records;
  std::vector<PlanRow> plans;
  ExperimentSummary summary;
  MaskedParams final_params;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Writes records (and optional side files) under cfg.output_path:
//   <out>            metrics CSV
//   <stem>_plans.csv reconfiguration dump (when any reconfiguration ran)
//   <stem>_summary.json
//   <stem>.pfnn      final checkpoint
void write_experiment_outputs(const ExperimentConfig& cfg,
                              const ExperimentResult& result);

void write_records_csv(std::ostream& os, const std::vector<RoundRecord>& recs);
void write_records_csv(const std::string& path,
                       const std::vector<RoundRecord>& recs);
std::vector<RoundRecord> read_records_csv(const std::string& path);

void write_plans_csv(const std::string& path, const std::vector<PlanRow>& plans);

struct LotteryResult {
  std::vector<RoundRecord> original;  // final mask, original-seed init
  std::vector<RoundRecord> random;    // final mask, fresh-seed init
  std::vector<RoundRecord> full;      // full model reference, original seed
};

// Retrains the pruned architecture from scratch (no further pruning):
// once reinitialized with the recorded original seed, once with a fresh
// seed, plus the full-model reference.
LotteryResult lottery_eval(const ExperimentConfig& cfg,
                           const std::string& checkpoint_path, long rounds,
                           std::uint64_t fresh_seed_salt = 1);

struct TimeToAccuracy {
  double threshold = 0.0;
  bool reached = false;
  double seconds = 0.0;
  long round = 0;
};

// First simulated time each threshold is met, scanning records in order.
std::vector<TimeToAccuracy> summarize_time_to_accuracy(
    const std::vector<RoundRecord>& records,
    const std::vector<double>& thresholds);

}  // namespace prunefl
