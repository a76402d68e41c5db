#include "prunefl/config.hpp"

#include <fstream>
#include <set>

#include "prunefl/rng.hpp"

namespace prunefl {

std::string method_name(Method m) {
  switch (m) {
    case Method::PruneFL: return "prunefl";
    case Method::Conventional: return "conventional";
    case Method::OneShotInit: return "oneshot_init";
    case Method::Iterative: return "iterative";
  }
  return "?";
}

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw ConfigError("config: " + path + ": " + msg);
}

void reject_unknown(const json& obj, const std::string& path,
                    const std::set<std::string>& allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      fail(path.empty() ? it.key() : path + "." + it.key(), "unknown key");
}

template <typename T>
T require(const json& obj, const std::string& path, const std::string& key) {
  if (!obj.contains(key)) fail(path + "." + key, "missing");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    fail(path + "." + key, "wrong type");
  }
}

template <typename T>
T optional_or(const json& obj, const std::string& path, const std::string& key,
              T fallback) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    fail(path + "." + key, "wrong type");
  }
}

Method parse_method(const std::string& s) {
  if (s == "prunefl") return Method::PruneFL;
  if (s == "conventional") return Method::Conventional;
  if (s == "oneshot_init") return Method::OneShotInit;
  if (s == "iterative") return Method::Iterative;
  fail("method", "expected prunefl|conventional|oneshot_init|iterative, got " + s);
}

void parse_model(const json& j, ExperimentConfig& cfg) {
  reject_unknown(j, "model", {"input", "layers"});
  auto input = require<std::vector<int>>(j, "model", "input");
  if (input.size() == 1)
    cfg.input_shape = TensorShape::flat(input[0]);
  else if (input.size() == 3)
    cfg.input_shape = TensorShape::chw(input[0], input[1], input[2]);
  else
    fail("model.input", "expected [features] or [channels, height, width]");

  if (!j.contains("layers") || !j.at("layers").is_array())
    fail("model.layers", "missing or not an array");

  // Walk the shape chain so layer specs can omit their input sizes.
  TensorShape cur = cfg.input_shape;
  int li = 0;
  for (const auto& lj : j.at("layers")) {
    const std::string path = "model.layers[" + std::to_string(li++) + "]";
    auto kind = require<std::string>(lj, path, "kind");
    if (kind == "fc") {
      reject_unknown(lj, path, {"kind", "out"});
      if (cur.spatial) fail(path, "fc needs flat input; add a flatten layer");
      int out = require<int>(lj, path, "out");
      cfg.layer_specs.push_back(LayerSpec::fully_connected(cur.features, out));
      cur = TensorShape::flat(out);
    } else if (kind == "conv") {
      reject_unknown(lj, path,
                     {"kind", "out_channels", "kernel", "stride", "padding"});
      if (!cur.spatial) fail(path, "conv needs [c,h,w] input");
      int oc = require<int>(lj, path, "out_channels");
      int k = require<int>(lj, path, "kernel");
      int stride = optional_or<int>(lj, path, "stride", 1);
      int pad = optional_or<int>(lj, path, "padding", 0);
      cfg.layer_specs.push_back(
          LayerSpec::conv2d(cur.channels, oc, k, stride, pad));
      int ho = (cur.height + 2 * pad - k) / stride + 1;
      int wo = (cur.width + 2 * pad - k) / stride + 1;
      if (ho <= 0 || wo <= 0) fail(path, "conv output would be empty");
      cur = TensorShape::chw(oc, ho, wo);
    } else if (kind == "relu") {
      reject_unknown(lj, path, {"kind"});
      cfg.layer_specs.push_back(LayerSpec::relu());
    } else if (kind == "flatten") {
      reject_unknown(lj, path, {"kind"});
      cfg.layer_specs.push_back(LayerSpec::flatten());
      cur = TensorShape::flat(cur.features);
    } else if (kind == "softmax_ce") {
      reject_unknown(lj, path, {"kind"});
      cfg.layer_specs.push_back(LayerSpec::softmax_cross_entropy());
    } else {
      fail(path + ".kind", "unknown layer kind " + kind);
    }
  }
}

void parse_data(const json& j, ExperimentConfig& cfg) {
  reject_unknown(j, "data",
                 {"kind", "classes", "dims", "n_train", "n_test", "separation",
                  "noise_sigma", "partition", "train_images", "train_labels",
                  "test_images", "test_labels"});
  auto kind = optional_or<std::string>(j, "data", "kind", "synthetic");
  if (kind == "synthetic") {
    cfg.use_idx = false;
    cfg.synthetic.classes = require<int>(j, "data", "classes");
    cfg.synthetic.dims = require<int>(j, "data", "dims");
    cfg.synthetic.n_train = require<std::size_t>(j, "data", "n_train");
    cfg.synthetic.n_test = require<std::size_t>(j, "data", "n_test");
    cfg.synthetic.separation =
        optional_or<double>(j, "data", "separation", 4.0);
    cfg.synthetic.noise_sigma =
        optional_or<double>(j, "data", "noise_sigma", 1.0);
  } else if (kind == "idx") {
    cfg.use_idx = true;
    cfg.idx_train_images = require<std::string>(j, "data", "train_images");
    cfg.idx_train_labels = require<std::string>(j, "data", "train_labels");
    cfg.idx_test_images = require<std::string>(j, "data", "test_images");
    cfg.idx_test_labels = require<std::string>(j, "data", "test_labels");
    cfg.idx_classes = optional_or<int>(j, "data", "classes", 10);
  } else {
    fail("data.kind", "expected synthetic|idx");
  }

  if (j.contains("partition")) {
    const auto& pj = j.at("partition");
    reject_unknown(pj, "data.partition",
                   {"mode", "num_clients", "labels_per_client"});
    auto mode = optional_or<std::string>(pj, "data.partition", "mode", "iid");
    if (mode == "iid")
      cfg.partition_mode = PartitionMode::IID;
    else if (mode == "label_skew")
      cfg.partition_mode = PartitionMode::LabelSkew;
    else
      fail("data.partition.mode", "expected iid|label_skew");
    cfg.num_clients =
        require<std::size_t>(pj, "data.partition", "num_clients");
    cfg.labels_per_client =
        optional_or<int>(pj, "data.partition", "labels_per_client", 2);
  }
}

}  // namespace

ExperimentConfig parse_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config: top level must be an object");
  reject_unknown(doc, "",
                 {"method", "seed", "total_rounds", "eval_interval", "model",
                  "data", "round", "sgd", "schedules", "cost_model",
                  "initial_pruning", "matched_density", "iterative_prunes",
                  "output_path", "trace_path"});

  ExperimentConfig cfg;
  cfg.method = parse_method(require<std::string>(doc, "", "method"));
  cfg.seed = require<std::uint64_t>(doc, "", "seed");
  cfg.total_rounds = require<long>(doc, "", "total_rounds");
  if (cfg.total_rounds < 0) fail("total_rounds", "must be >= 0");
  cfg.eval_interval = optional_or<long>(doc, "", "eval_interval", 10);
  if (cfg.eval_interval < 1) fail("eval_interval", "must be >= 1");

  if (!doc.contains("model")) fail("model", "missing");
  parse_model(doc.at("model"), cfg);
  if (!doc.contains("data")) fail("data", "missing");
  parse_data(doc.at("data"), cfg);
  cfg.synthetic.seed = cfg.seed;

  if (doc.contains("round")) {
    const auto& rj = doc.at("round");
    reject_unknown(rj, "round",
                   {"local_iters", "batch_size", "participants",
                    "reconfig_interval"});
    cfg.round.local_iters = optional_or<int>(rj, "round", "local_iters", 5);
    cfg.round.batch_size = optional_or<int>(rj, "round", "batch_size", 20);
    cfg.round.participants = optional_or<int>(rj, "round", "participants", 0);
    cfg.round.reconfig_interval =
        optional_or<long>(rj, "round", "reconfig_interval", 50);
    if (cfg.round.local_iters < 1) fail("round.local_iters", "must be >= 1");
    if (cfg.round.batch_size < 1) fail("round.batch_size", "must be >= 1");
    if (cfg.round.reconfig_interval < 1)
      fail("round.reconfig_interval", "must be >= 1");
  }

  if (doc.contains("sgd")) {
    const auto& sj = doc.at("sgd");
    reject_unknown(sj, "sgd", {"learning_rate", "momentum", "lr_half_rounds"});
    cfg.sgd.learning_rate = require<double>(sj, "sgd", "learning_rate");
    cfg.sgd.momentum = optional_or<double>(sj, "sgd", "momentum", 0.0);
    cfg.sgd.lr_half_rounds = optional_or<long>(sj, "sgd", "lr_half_rounds", 0);
    if (cfg.sgd.learning_rate <= 0.0) fail("sgd.learning_rate", "must be > 0");
    if (cfg.sgd.momentum < 0.0 || cfg.sgd.momentum >= 1.0)
      fail("sgd.momentum", "must be in [0, 1)");
  }

  if (doc.contains("schedules")) {
    const auto& gj = doc.at("schedules");
    reject_unknown(gj, "schedules",
                   {"alpha0", "alpha_half_rounds", "density_limit",
                    "density_target", "r_max"});
    cfg.sched.alpha0 = optional_or<double>(gj, "schedules", "alpha0", 0.3);
    cfg.sched.alpha_half_rounds =
        optional_or<double>(gj, "schedules", "alpha_half_rounds", 10000.0);
    if (gj.contains("density_limit") && !gj.at("density_limit").is_null())
      cfg.sched.density_limit = gj.at("density_limit").get<double>();
    if (gj.contains("density_target") && !gj.at("density_target").is_null())
      cfg.sched.density_target = gj.at("density_target").get<double>();
    cfg.sched.r_max = optional_or<long>(gj, "schedules", "r_max", 0);
    if (cfg.sched.density_limit.has_value() !=
        cfg.sched.density_target.has_value())
      fail("schedules", "density_limit and density_target must come together");
    if (cfg.sched.density_limit) {
      double dl = *cfg.sched.density_limit, dt = *cfg.sched.density_target;
      if (!(0.0 <= dt && dt <= dl && dl <= 1.0))
        fail("schedules", "need 0 <= density_target <= density_limit <= 1");
      if (cfg.sched.r_max <= 0) fail("schedules.r_max", "must be > 0 with caps");
    }
  }
  cfg.sched.reconfig_interval = cfg.round.reconfig_interval;

  if (!doc.contains("cost_model")) fail("cost_model", "missing");
  {
    const auto& cj = doc.at("cost_model");
    reject_unknown(cj, "cost_model",
                   {"preset", "c_seconds", "bandwidth_Bps", "t_per_layer"});
    if (cj.contains("preset")) {
      cfg.cost = load_cost_model(cj.at("preset").get<std::string>());
    } else {
      cfg.cost.c_seconds = require<double>(cj, "cost_model", "c_seconds");
      cfg.cost.bandwidth_Bps =
          require<double>(cj, "cost_model", "bandwidth_Bps");
      cfg.cost.t_per_layer =
          require<std::vector<double>>(cj, "cost_model", "t_per_layer");
    }
    if (cfg.cost.c_seconds < 0.0) fail("cost_model.c_seconds", "must be >= 0");
    if (cfg.cost.bandwidth_Bps <= 0.0)
      fail("cost_model.bandwidth_Bps", "must be > 0");
    for (double t : cfg.cost.t_per_layer)
      if (t <= 0.0) fail("cost_model.t_per_layer", "entries must be > 0");
  }

  if (doc.contains("initial_pruning")) {
    const auto& ij = doc.at("initial_pruning");
    reject_unknown(ij, "initial_pruning",
                   {"client", "iters_per_block", "batch_size", "max_reconfigs",
                    "stable_threshold", "stable_count"});
    cfg.init_client = optional_or<int>(ij, "initial_pruning", "client", 0);
    cfg.init_prune.iters_per_block =
        optional_or<int>(ij, "initial_pruning", "iters_per_block",
                         cfg.round.local_iters);
    cfg.init_prune.batch_size = optional_or<int>(
        ij, "initial_pruning", "batch_size", cfg.round.batch_size);
    cfg.init_prune.max_reconfigs =
        optional_or<int>(ij, "initial_pruning", "max_reconfigs", 50);
    cfg.init_prune.stable_threshold =
        optional_or<double>(ij, "initial_pruning", "stable_threshold", 0.10);
    cfg.init_prune.stable_count =
        optional_or<int>(ij, "initial_pruning", "stable_count", 5);
  } else {
    cfg.init_prune.iters_per_block = cfg.round.local_iters;
    cfg.init_prune.batch_size = cfg.round.batch_size;
  }

  if (doc.contains("matched_density") && !doc.at("matched_density").is_null())
    cfg.matched_density = doc.at("matched_density").get<double>();
  cfg.iterative_prunes = optional_or<int>(doc, "", "iterative_prunes", 20);
  if ((cfg.method == Method::OneShotInit || cfg.method == Method::Iterative) &&
      !cfg.matched_density)
    fail("matched_density",
         "required for oneshot_init/iterative (take it from a prunefl run)");
  if (cfg.matched_density &&
      !(0.0 < *cfg.matched_density && *cfg.matched_density <= 1.0))
    fail("matched_density", "must be in (0, 1]");

  cfg.output_path =
      optional_or<std::string>(doc, "", "output_path", "metrics.csv");
  cfg.trace_path = optional_or<std::string>(doc, "", "trace_path", "");
  return cfg;
}

Model ExperimentConfig::build_model() const {
  return Model(input_shape, layer_specs);
}

Dataset ExperimentConfig::build_dataset() const {
  if (!use_idx) return generate_synthetic(synthetic);
  Dataset train = load_idx(idx_train_images, idx_train_labels, idx_classes);
  Dataset test = load_idx(idx_test_images, idx_test_labels, idx_classes);
  Dataset ds;
  ds.num_classes = idx_classes;
  ds.train_x = std::move(train.train_x);
  ds.train_y = std::move(train.train_y);
  ds.test_x = std::move(test.train_x);
  ds.test_y = std::move(test.train_y);
  return ds;
}

std::vector<Shard> ExperimentConfig::build_shards(const Dataset& ds) const {
  PartitionSpec spec;
  spec.mode = partition_mode;
  spec.num_clients = num_clients;
  spec.seed = seed;
  spec.labels_per_client = labels_per_client;
  return partition(ds, spec);
}

nlohmann::json apply_override(nlohmann::json doc, const std::string& spec) {
  auto eq = spec.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must look like key.path=value: " + spec);
  const std::string path = spec.substr(0, eq);
  const std::string raw = spec.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // unquoted strings pass through
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    std::size_t dot = path.find('.', start);
    std::string key = path.substr(start, dot - start);
    if (key.empty()) throw ConfigError("override has an empty path segment");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
  return doc;
}

ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
  }
  for (const auto& ov : overrides) doc = apply_override(std::move(doc), ov);
  return parse_config(doc);
}

}  // namespace prunefl
