#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "prunefl/cost_model.hpp"
#include "prunefl/data.hpp"
#include "prunefl/fl.hpp"
#include "prunefl/nn.hpp"
#include "prunefl/pruner.hpp"

namespace prunefl {

enum class Method { PruneFL, Conventional, OneShotInit, Iterative };

std::string method_name(Method m);

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Validated experiment description. Parsed from a JSON document; unknown
// keys anywhere are rejected with their path.
struct ExperimentConfig {
  Method method = Method::PruneFL;
  std::uint64_t seed = 0;
  long total_rounds = 0;
  long eval_interval = 10;

  TensorShape input_shape;
  std::vector<LayerSpec> layer_specs;

  SyntheticSpec synthetic;  // also carries the data seed (= master seed)
  bool use_idx = false;
  std::string idx_train_images, idx_train_labels;
  std::string idx_test_images, idx_test_labels;
  int idx_classes = 10;

  PartitionMode partition_mode = PartitionMode::IID;
  int labels_per_client = 2;
  std::size_t num_clients = 10;

  RoundConfig round;
  SgdConfig sgd;
  Schedules sched;
  CostModel cost;

  int init_client = 0;
  InitialPruneLimits init_prune;

  std::optional<double> matched_density;  // one-shot / iterative
  int iterative_prunes = 20;

  std::string output_path = "metrics.csv";
  std::string trace_path;  // empty = no trace dump

  Model build_model() const;
  Dataset build_dataset() const;
  std::vector<Shard> build_shards(const Dataset& ds) const;
};

ExperimentConfig parse_config(const nlohmann::json& doc);

// Load from file, apply dotted-path overrides ("a.b.c=value", values parsed
// as JSON when possible, else taken as strings), then parse.
ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides = {});

nlohmann::json apply_override(nlohmann::json doc, const std::string& spec);

}  // namespace prunefl
