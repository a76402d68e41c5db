#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "prunefl/checkpoint.hpp"
#include "prunefl/experiment.hpp"
#include "prunefl/rng.hpp"

using namespace prunefl;

namespace {

nlohmann::json base_config() {
  return nlohmann::json::parse(R"({
    "method": "conventional",
    "seed": 5,
    "total_rounds": 12,
    "eval_interval": 4,
    "model": {
      "input": [8],
      "layers": [
        {"kind": "fc", "out": 10},
        {"kind": "relu"},
        {"kind": "fc", "out": 4},
        {"kind": "softmax_ce"}
      ]
    },
    "data": {
      "kind": "synthetic",
      "classes": 4,
      "dims": 8,
      "n_train": 240,
      "n_test": 80,
      "partition": {"mode": "iid", "num_clients": 4}
    },
    "round": {"local_iters": 2, "batch_size": 10, "reconfig_interval": 4},
    "sgd": {"learning_rate": 0.2},
    "cost_model": {"c_seconds": 0.1, "bandwidth_Bps": 50000,
                   "t_per_layer": [1e-5, 1e-5]},
    "output_path": "t_harness.csv"
  })");
}

std::string csv_string(const std::vector<RoundRecord>& recs) {
  std::ostringstream ss;
  write_records_csv(ss, recs);
  return ss.str();
}

}  // namespace

TEST_CASE("config parsing validates and rejects unknown keys") {
  ExperimentConfig cfg = parse_config(base_config());
  CHECK(cfg.method == Method::Conventional);
  CHECK(cfg.num_clients == 4);
  CHECK(cfg.round.reconfig_interval == 4);
  CHECK(cfg.layer_specs.size() == 4);
  CHECK(cfg.layer_specs[0].in_features == 8);

  auto bad = base_config();
  bad["typo_key"] = 1;
  CHECK_THROWS_WITH_AS(parse_config(bad), "config: typo_key: unknown key",
                       ConfigError);

  auto bad2 = base_config();
  bad2["round"]["typo"] = 2;
  CHECK_THROWS_WITH_AS(parse_config(bad2), "config: round.typo: unknown key",
                       ConfigError);

  auto bad3 = base_config();
  bad3["sgd"]["learning_rate"] = -1.0;
  CHECK_THROWS_AS(parse_config(bad3), ConfigError);

  auto bad4 = base_config();
  bad4["method"] = "oneshot_init";  // needs matched_density
  CHECK_THROWS_AS(parse_config(bad4), ConfigError);
}

TEST_CASE("overrides rewrite dotted paths") {
  auto doc = base_config();
  doc = apply_override(doc, "sgd.learning_rate=0.5");
  doc = apply_override(doc, "data.partition.num_clients=2");
  doc = apply_override(doc, "output_path=elsewhere.csv");
  ExperimentConfig cfg = parse_config(doc);
  CHECK(cfg.sgd.learning_rate == 0.5);
  CHECK(cfg.num_clients == 2);
  CHECK(cfg.output_path == "elsewhere.csv");
  CHECK_THROWS_AS(apply_override(doc, "no_equals_sign"), ConfigError);
}

TEST_CASE("zero rounds produce a header-only CSV and initial summary") {
  auto doc = base_config();
  doc["total_rounds"] = 0;
  ExperimentConfig cfg = parse_config(doc);
  ExperimentResult res = run_experiment(cfg);
  CHECK(res.records.empty());
  CHECK(res.summary.final_test_accuracy == res.summary.initial_test_accuracy);
  CHECK(res.summary.final_density == 1.0);
  std::string csv = csv_string(res.records);
  CHECK(csv ==
        "round,seconds,density,train_loss,test_accuracy,bytes_up,bytes_down,"
        "reconfig\n");
}

TEST_CASE("conventional FL keeps density pinned at one") {
  ExperimentConfig cfg = parse_config(base_config());
  ExperimentResult res = run_experiment(cfg);
  REQUIRE(res.records.size() == 13);  // starting row + 12 rounds
  for (const auto& r : res.records) {
    CHECK(r.density == 1.0);
    CHECK(!r.reconfig);
  }
  CHECK(res.records.front().round == 0);
  CHECK(res.records.front().seconds == 0.0);
  CHECK(res.plans.empty());
}

TEST_CASE("records are monotone in round and time") {
  auto doc = base_config();
  doc["method"] = "prunefl";
  doc["total_rounds"] = 8;
  doc["round"]["reconfig_interval"] = 3;
  doc["initial_pruning"] = {{"max_reconfigs", 8}};
  ExperimentConfig cfg = parse_config(doc);
  ExperimentResult res = run_experiment(cfg);
  for (std::size_t i = 1; i < res.records.size(); ++i) {
    CHECK(res.records[i].round == res.records[i - 1].round + 1);
    CHECK(res.records[i].seconds >= res.records[i - 1].seconds);
  }
  CHECK(res.records.front().round <= 0);  // initial-pruning rows
  CHECK(res.records.back().round == 8);
  CHECK(!res.plans.empty());
  CHECK(res.summary.initial_prune_blocks > 0);
}

TEST_CASE("one-shot pruning pins the density after round one") {
  auto doc = base_config();
  doc["method"] = "oneshot_init";
  doc["matched_density"] = 0.25;
  ExperimentConfig cfg = parse_config(doc);
  ExperimentResult res = run_experiment(cfg);
  const double cap = 8 * 10 + 10 * 4;
  const double want = std::floor(0.25 * cap) / cap;
  for (const auto& r : res.records) {
    if (r.round >= 1) CHECK(r.density == doctest::Approx(want));
    if (r.round == 1) CHECK(r.reconfig);
    if (r.round > 1) CHECK(!r.reconfig);
  }
  CHECK(res.summary.final_density == doctest::Approx(want));
}

TEST_CASE("iterative pruning steps down to the matched density") {
  auto doc = base_config();
  doc["method"] = "iterative";
  doc["matched_density"] = 0.25;
  doc["total_rounds"] = 16;
  doc["iterative_prunes"] = 4;
  ExperimentConfig cfg = parse_config(doc);
  ExperimentResult res = run_experiment(cfg);
  double prev = 1.0;
  for (const auto& r : res.records) {
    CHECK(r.density <= prev + 1e-12);
    prev = r.density;
  }
  CHECK(res.summary.final_density ==
        doctest::Approx(0.25).epsilon(0.02));  // per-layer rounding granularity
  // All pruning happened in the first half.
  for (const auto& r : res.records)
    if (r.round > 8) CHECK(r.density == res.summary.final_density);
}

TEST_CASE("time-to-accuracy picks the first qualifying record") {
  std::vector<RoundRecord> recs;
  for (int i = 0; i < 5; ++i) {
    RoundRecord r;
    r.round = i;
    r.seconds = i * 10.0;
    r.test_accuracy = 0.2 * i;
    recs.push_back(r);
  }
  auto table = summarize_time_to_accuracy(recs, {0.0, 0.5, 0.95});
  REQUIRE(table.size() == 3);
  CHECK(table[0].reached);
  CHECK(table[0].seconds == 0.0);  // below the starting accuracy
  CHECK(table[0].round == 0);
  CHECK(table[1].reached);
  CHECK(table[1].seconds == 30.0);
  CHECK(!table[2].reached);
}

TEST_CASE("a pinned config reproduces the CSV byte for byte") {
  auto doc = base_config();
  doc["method"] = "prunefl";
  doc["total_rounds"] = 6;
  doc["round"]["reconfig_interval"] = 3;
  doc["initial_pruning"] = {{"max_reconfigs", 6}};
  ExperimentConfig cfg = parse_config(doc);
  std::string a = csv_string(run_experiment(cfg).records);
  std::string b = csv_string(run_experiment(cfg).records);
  CHECK(a == b);
  CHECK(a.find("reconfig") != std::string::npos);
}

TEST_CASE("CSV round-trips through write and read") {
  ExperimentConfig cfg = parse_config(base_config());
  ExperimentResult res = run_experiment(cfg);
  const std::string path = "t_roundtrip.csv";
  write_records_csv(path, res.records);
  auto back = read_records_csv(path);
  REQUIRE(back.size() == res.records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].round == res.records[i].round);
    CHECK(back[i].seconds == res.records[i].seconds);
    CHECK(back[i].density == res.records[i].density);
    CHECK(back[i].train_loss == res.records[i].train_loss);
    CHECK(back[i].test_accuracy == res.records[i].test_accuracy);
    CHECK(back[i].bytes_up == res.records[i].bytes_up);
    CHECK(back[i].bytes_down == res.records[i].bytes_down);
    CHECK(back[i].reconfig == res.records[i].reconfig);
  }
  std::remove(path.c_str());
}

TEST_CASE("experiment outputs land on disk together") {
  auto doc = base_config();
  doc["method"] = "prunefl";
  doc["total_rounds"] = 4;
  doc["round"]["reconfig_interval"] = 2;
  doc["initial_pruning"] = {{"max_reconfigs", 4}};
  doc["output_path"] = "t_out.csv";
  doc["trace_path"] = "t_out_trace.csv";
  ExperimentConfig cfg = parse_config(doc);
  ExperimentResult res = run_experiment(cfg);
  write_experiment_outputs(cfg, res);
  CHECK(!read_records_csv("t_out.csv").empty());
  Checkpoint ck = load_checkpoint("t_out.pfnn");
  CHECK(ck.init_seed == res.summary.init_seed);
  std::ifstream plans("t_out_plans.csv"), summary("t_out_summary.json"),
      trace("t_out_trace.csv");
  CHECK(plans.good());
  CHECK(summary.good());
  CHECK(trace.good());
  for (const char* f : {"t_out.csv", "t_out_plans.csv", "t_out_summary.json",
                        "t_out.pfnn", "t_out_trace.csv"})
    std::remove(f);
}

TEST_CASE("lottery with a full mask makes the original and full curves agree") {
  auto doc = base_config();
  doc["total_rounds"] = 3;
  ExperimentConfig cfg = parse_config(doc);
  // Conventional run: final mask is all ones.
  ExperimentResult res = run_experiment(cfg);
  const std::string ck_path = "t_lottery.pfnn";
  save_checkpoint(ck_path, res.final_params, res.summary.init_seed);
  LotteryResult lot = lottery_eval(cfg, ck_path, 3);
  REQUIRE(lot.original.size() == lot.full.size());
  for (std::size_t i = 0; i < lot.original.size(); ++i) {
    CHECK(lot.original[i].test_accuracy == lot.full[i].test_accuracy);
    CHECK(lot.original[i].train_loss == lot.full[i].train_loss);
  }
  // The fresh-seed curve starts from different parameters.
  bool differs = false;
  for (std::size_t i = 0; i < lot.random.size(); ++i)
    if (lot.random[i].train_loss != lot.full[i].train_loss) differs = true;
  CHECK(differs);
  std::remove(ck_path.c_str());
}

TEST_CASE("original-seed reinit is the masked slice of the full init, bitwise") {
  auto doc = base_config();
  doc["method"] = "prunefl";
  doc["total_rounds"] = 4;
  doc["round"]["reconfig_interval"] = 2;
  doc["initial_pruning"] = {{"max_reconfigs", 3}};
  ExperimentConfig cfg = parse_config(doc);
  ExperimentResult res = run_experiment(cfg);
  REQUIRE(res.summary.final_density < 1.0);

  Model model = cfg.build_model();
  MaskedParams full = model.init_params(res.summary.init_seed);
  MaskSet mask;
  for (const auto& l : res.final_params.layers) mask.push_back(l.mask);
  MaskedParams sliced = apply_mask(full, mask);
  for (std::size_t li = 0; li < sliced.layers.size(); ++li)
    for (std::size_t j = 0; j < sliced.layers[li].w.size(); ++j) {
      if (res.final_params.layers[li].mask[j])
        CHECK(sliced.layers[li].w[j] == full.layers[li].w[j]);
      else
        CHECK(sliced.layers[li].w[j] == 0.0);
    }
}
