#include "prunefl/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "prunefl/checkpoint.hpp"
#include "prunefl/rng.hpp"

namespace prunefl {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string stem_of(const std::string& path) {
  auto slash = path.find_last_of('/');
  auto dot = path.find_last_of('.');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
    return path;
  return path.substr(0, dot);
}

// Keep the k highest-importance coordinates (ties to the lower index).
MaskSet topk_importance_mask(const Model& model,
                             const std::vector<double>& importance,
                             std::size_t k) {
  std::vector<std::uint32_t> idx(importance.size());
  for (std::size_t i = 0; i < idx.size(); ++i)
    idx[i] = static_cast<std::uint32_t>(i);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::uint32_t a, std::uint32_t b) {
                     if (importance[a] != importance[b])
                       return importance[a] > importance[b];
                     return a < b;
                   });
  idx.resize(std::min(k, idx.size()));
  std::sort(idx.begin(), idx.end());
  return mask_from_kept(model, idx, {});
}

// Per-layer magnitude mask hitting `target_kept[l]` kept weights per layer
// (largest |w| survive; ties to the lower index). Never adds back.
MaskSet magnitude_mask(const MaskedParams& params,
                       const std::vector<std::size_t>& target_kept) {
  MaskSet masks;
  masks.reserve(params.layers.size());
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    const auto& lp = params.layers[li];
    std::vector<std::uint32_t> kept_idx;
    for (std::size_t j = 0; j < lp.w.size(); ++j)
      if (lp.mask[j]) kept_idx.push_back(static_cast<std::uint32_t>(j));
    std::stable_sort(kept_idx.begin(), kept_idx.end(),
                     [&](std::uint32_t a, std::uint32_t b) {
                       double ma = std::abs(lp.w[a]), mb = std::abs(lp.w[b]);
                       if (ma != mb) return ma > mb;
                       return a < b;
                     });
    if (kept_idx.size() > target_kept[li])
      kept_idx.resize(target_kept[li]);
    std::vector<std::uint8_t> m(lp.w.size(), 0);
    for (auto j : kept_idx) m[j] = 1;
    masks.push_back(std::move(m));
  }
  return masks;
}

struct Evaluator {
  const Model& model;
  const Dataset& ds;
  double train_loss = 0.0;
  double test_acc = 0.0;
  void run(const MaskedParams& params) {
    train_loss = pooled_train_loss(model, params, ds);
    test_acc = test_accuracy(model, params, ds);
  }
};

void dump_trace(const std::string& path, const std::vector<TraceEntry>& trace) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("trace: cannot open " + path);
  os << "round,client,direction,kind,bytes\n";
  for (const auto& t : trace)
    os << t.round << ',' << t.client << ',' << t.direction << ',' << t.kind
       << ',' << t.bytes << '\n';
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  Dataset ds = cfg.build_dataset();
  std::vector<Shard> shards = cfg.build_shards(ds);
  Model model = cfg.build_model();
  const std::uint64_t init_seed = derive_seed(cfg.seed, SeedStream::Init);
  MaskedParams params = model.init_params(init_seed);

  ExperimentResult res;
  res.summary.method = method_name(cfg.method);
  res.summary.seed = cfg.seed;
  res.summary.init_seed = init_seed;
  res.summary.rounds = cfg.total_rounds;

  Evaluator eval{model, ds};
  eval.run(params);
  res.summary.initial_train_loss = eval.train_loss;
  res.summary.initial_test_accuracy = eval.test_acc;

  if (cfg.total_rounds == 0) {
    res.summary.final_train_loss = eval.train_loss;
    res.summary.final_test_accuracy = eval.test_acc;
    res.summary.final_density = params.density();
    res.final_params = std::move(params);
    return res;
  }

  RoundConfig rc = cfg.round;
  rc.reconfig_enabled = cfg.method == Method::PruneFL;
  rc.collect_importance =
      cfg.method == Method::PruneFL || cfg.method == Method::OneShotInit;

  double clock_offset = 0.0;

  if (cfg.method == Method::PruneFL) {
    if (cfg.init_client < 0 ||
        cfg.init_client >= static_cast<int>(shards.size()))
      throw ConfigError("initial_pruning.client out of range");
    InitialPruneResult init = initial_pruning(
        model, ds, shards[static_cast<std::size_t>(cfg.init_client)],
        std::move(params), cfg.sgd, cfg.sched, cfg.cost, cfg.init_prune,
        derive_seed(cfg.seed, SeedStream::ClientBatches,
                    static_cast<std::uint64_t>(cfg.init_client)));
    params = std::move(init.params);
    clock_offset = init.total_seconds;
    res.summary.initial_prune_seconds = init.total_seconds;
    res.summary.initial_prune_blocks = static_cast<int>(init.trace.size());

    const long n_blocks = static_cast<long>(init.trace.size());
    for (long i = 0; i < n_blocks; ++i) {
      const auto& blk = init.trace[static_cast<std::size_t>(i)];
      RoundRecord rec;
      rec.round = -(n_blocks - 1 - i);
      rec.seconds = blk.clock_seconds;
      rec.density = blk.density;
      rec.reconfig = true;
      res.records.push_back(rec);
      PlanRow pr;
      pr.round = rec.round;
      pr.p_size = blk.plan.p_size;
      pr.pbar_size = blk.plan.pbar_size;
      pr.kept = blk.plan.kept.size();
      pr.gamma = blk.plan.gamma;
      pr.delta = blk.plan.delta;
      pr.time_cost = blk.plan.time_cost;
      pr.density = blk.density;
      res.plans.push_back(pr);
    }
    // Evaluate the stage end; earlier block rows reuse the starting metrics
    // (cheap stand-in: the stage is short and its rows mainly carry density).
    for (auto& rec : res.records) {
      rec.train_loss = eval.train_loss;
      rec.test_accuracy = eval.test_acc;
    }
    eval.run(params);
    if (!res.records.empty()) {
      res.records.back().train_loss = eval.train_loss;
      res.records.back().test_accuracy = eval.test_acc;
    }
  }

  FlSystem sys(model, ds, std::move(shards), rc, cfg.sgd, cfg.sched, cfg.cost,
               std::move(params), cfg.seed);
  if (!cfg.trace_path.empty()) sys.enable_trace(true);

  if (res.records.empty() || cfg.method != Method::PruneFL) {
    RoundRecord rec;  // starting state at time zero
    rec.round = 0;
    rec.seconds = 0.0;
    rec.density = sys.server().global.density();
    rec.train_loss = eval.train_loss;
    rec.test_accuracy = eval.test_acc;
    res.records.push_back(rec);
  }

  // Iterative baseline: level targets per layer, matched^(i/n) of capacity
  // after the i-th of n prunes, spread evenly over the first half.
  std::vector<long> iterative_rounds;
  if (cfg.method == Method::Iterative) {
    const long half = std::max<long>(1, cfg.total_rounds / 2);
    for (int i = 1; i <= cfg.iterative_prunes; ++i)
      iterative_rounds.push_back(std::max<long>(
          1, (half * i) / cfg.iterative_prunes));
  }

  for (long r = 0; r < cfg.total_rounds; ++r) {
    RoundOutcome out = sys.run_round();
    RoundRecord rec;
    rec.round = r + 1;
    rec.reconfig = out.reconfig;
    rec.bytes_up = out.bytes_up;
    rec.bytes_down = out.bytes_down;

    if (cfg.method == Method::OneShotInit && r == 0) {
      // One-shot prune to the matched density using first-round importance.
      std::vector<std::pair<const ImportanceAccumulator*, double>> parts;
      for (const auto& cs : sys.clients())
        if (cs.importance.steps > 0) parts.emplace_back(&cs.importance, cs.weight);
      ImportanceAccumulator merged = merge_importance(parts);
      const auto capacity = model.prunable_capacity();
      const auto k = static_cast<std::size_t>(
          *cfg.matched_density * static_cast<double>(capacity));
      MaskSet masks = topk_importance_mask(model, merged.sum_sq, k);
      sys.set_global(apply_mask(sys.server().global, masks));
      sys.set_collect_importance(false);
      sys.reset_importance();
      // The event costs one reconfiguration exchange.
      const auto caps = sys.server().global.capacity_per_layer();
      std::uint64_t cap_total = 0;
      for (auto c : caps) cap_total += c;
      const std::uint64_t down =
          storage_cost(cap_total, sys.server().global.kept_count()).sparse_bytes;
      const std::uint64_t up = 4 * cap_total;
      const auto participants =
          static_cast<std::uint64_t>(sys.clients().size());
      rec.bytes_up += participants * up;
      rec.bytes_down += participants * down;
      const double extra =
          static_cast<double>(up + down) / cfg.cost.bandwidth_Bps;
      sys.advance_clock(extra);
      rec.reconfig = true;
    }

    if (cfg.method == Method::Iterative) {
      int level = 0;
      for (std::size_t i = 0; i < iterative_rounds.size(); ++i)
        if (iterative_rounds[i] == r + 1) level = static_cast<int>(i) + 1;
      if (level > 0) {
        const auto caps = sys.server().global.capacity_per_layer();
        std::vector<std::size_t> targets(caps.size());
        const double frac =
            std::pow(*cfg.matched_density,
                     static_cast<double>(level) / cfg.iterative_prunes);
        for (std::size_t li = 0; li < caps.size(); ++li)
          targets[li] = static_cast<std::size_t>(
              std::llround(frac * static_cast<double>(caps[li])));
        MaskSet masks = magnitude_mask(sys.server().global, targets);
        sys.set_global(apply_mask(sys.server().global, masks));
        std::uint64_t cap_total = 0;
        for (auto c : caps) cap_total += c;
        const std::uint64_t down =
            storage_cost(cap_total, sys.server().global.kept_count())
                .sparse_bytes;
        const auto participants =
            static_cast<std::uint64_t>(sys.clients().size());
        rec.bytes_down += participants * down;
        sys.advance_clock(static_cast<double>(down) / cfg.cost.bandwidth_Bps);
        rec.reconfig = true;
      }
    }

    rec.seconds = clock_offset + sys.server().clock_seconds;
    rec.density = sys.server().global.density();
    if ((r + 1) % cfg.eval_interval == 0 || r + 1 == cfg.total_rounds)
      eval.run(sys.server().global);
    rec.train_loss = eval.train_loss;
    rec.test_accuracy = eval.test_acc;
    res.records.push_back(rec);

    if (out.plan) {
      PlanRow pr;
      pr.round = r + 1;
      pr.p_size = out.plan->p_size;
      pr.pbar_size = out.plan->pbar_size;
      pr.kept = out.plan->kept.size();
      pr.gamma = out.plan->gamma;
      pr.delta = out.plan->delta;
      pr.time_cost = out.plan->time_cost;
      pr.density = rec.density;
      res.plans.push_back(pr);
    }

    res.summary.total_bytes_up += rec.bytes_up;
    res.summary.total_bytes_down += rec.bytes_down;
  }

  if (!cfg.trace_path.empty()) dump_trace(cfg.trace_path, sys.trace());

  res.summary.final_train_loss = eval.train_loss;
  res.summary.final_test_accuracy = eval.test_acc;
  res.summary.final_density = sys.server().global.density();
  res.summary.total_seconds = clock_offset + sys.server().clock_seconds;
  res.final_params = sys.server().global;
  return res;
}

void write_records_csv(std::ostream& os, const std::vector<RoundRecord>& recs) {
  os << "round,seconds,density,train_loss,test_accuracy,bytes_up,bytes_down,"
        "reconfig\n";
  for (const auto& r : recs) {
    os << r.round << ',' << fmt(r.seconds) << ',' << fmt(r.density) << ','
       << fmt(r.train_loss) << ',' << fmt(r.test_accuracy) << ',' << r.bytes_up
       << ',' << r.bytes_down << ',' << (r.reconfig ? 1 : 0) << '\n';
  }
}

void write_records_csv(const std::string& path,
                       const std::vector<RoundRecord>& recs) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("csv: cannot open " + path);
  write_records_csv(os, recs);
}

std::vector<RoundRecord> read_records_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("csv: cannot open " + path);
  std::string line;
  if (!std::getline(is, line) ||
      line !=
          "round,seconds,density,train_loss,test_accuracy,bytes_up,"
          "bytes_down,reconfig")
    throw std::runtime_error("csv: unexpected header in " + path);
  std::vector<RoundRecord> recs;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    RoundRecord r;
    auto next = [&]() -> std::string {
      if (!std::getline(ss, field, ','))
        throw std::runtime_error("csv: short row in " + path);
      return field;
    };
    r.round = std::stol(next());
    r.seconds = std::stod(next());
    r.density = std::stod(next());
    r.train_loss = std::stod(next());
    r.test_accuracy = std::stod(next());
    r.bytes_up = std::stoull(next());
    r.bytes_down = std::stoull(next());
    r.reconfig = std::stoi(next()) != 0;
    recs.push_back(r);
  }
  return recs;
}

void write_plans_csv(const std::string& path,
                     const std::vector<PlanRow>& plans) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("csv: cannot open " + path);
  os << "round,p_size,pbar_size,kept,gamma,delta,time,density\n";
  for (const auto& p : plans)
    os << p.round << ',' << p.p_size << ',' << p.pbar_size << ',' << p.kept
       << ',' << fmt(p.gamma) << ',' << fmt(p.delta) << ',' << fmt(p.time_cost)
       << ',' << fmt(p.density) << '\n';
}

void write_experiment_outputs(const ExperimentConfig& cfg,
                              const ExperimentResult& result) {
  write_records_csv(cfg.output_path, result.records);
  const std::string stem = stem_of(cfg.output_path);
  if (!result.plans.empty())
    write_plans_csv(stem + "_plans.csv", result.plans);
  save_checkpoint(stem + ".pfnn", result.final_params,
                  result.summary.init_seed);

  nlohmann::json j;
  j["method"] = result.summary.method;
  j["seed"] = result.summary.seed;
  j["init_seed"] = result.summary.init_seed;
  j["rounds"] = result.summary.rounds;
  j["initial_train_loss"] = result.summary.initial_train_loss;
  j["initial_test_accuracy"] = result.summary.initial_test_accuracy;
  j["final_train_loss"] = result.summary.final_train_loss;
  j["final_test_accuracy"] = result.summary.final_test_accuracy;
  j["final_density"] = result.summary.final_density;
  j["total_seconds"] = result.summary.total_seconds;
  j["total_bytes_up"] = result.summary.total_bytes_up;
  j["total_bytes_down"] = result.summary.total_bytes_down;
  j["initial_prune_seconds"] = result.summary.initial_prune_seconds;
  j["initial_prune_blocks"] = result.summary.initial_prune_blocks;
  j["records_csv"] = cfg.output_path;
  j["checkpoint"] = stem + ".pfnn";
  std::ofstream os(stem + "_summary.json");
  if (!os) throw std::runtime_error("summary: cannot open " + stem);
  os << j.dump(2) << "\n";
}

namespace {

std::vector<RoundRecord> run_fixed_mask(const ExperimentConfig& cfg,
                                        const Model& model, const Dataset& ds,
                                        const std::vector<Shard>& shards,
                                        MaskedParams start, long rounds) {
  RoundConfig rc = cfg.round;
  rc.reconfig_enabled = false;
  rc.collect_importance = false;
  FlSystem sys(model, ds, shards, rc, cfg.sgd, cfg.sched, cfg.cost,
               std::move(start), cfg.seed);
  Evaluator eval{model, ds};
  eval.run(sys.server().global);
  std::vector<RoundRecord> recs;
  RoundRecord first;
  first.round = 0;
  first.density = sys.server().global.density();
  first.train_loss = eval.train_loss;
  first.test_accuracy = eval.test_acc;
  recs.push_back(first);
  for (long r = 0; r < rounds; ++r) {
    RoundOutcome out = sys.run_round();
    RoundRecord rec;
    rec.round = r + 1;
    rec.seconds = sys.server().clock_seconds;
    rec.density = sys.server().global.density();
    rec.bytes_up = out.bytes_up;
    rec.bytes_down = out.bytes_down;
    if ((r + 1) % cfg.eval_interval == 0 || r + 1 == rounds)
      eval.run(sys.server().global);
    rec.train_loss = eval.train_loss;
    rec.test_accuracy = eval.test_acc;
    recs.push_back(rec);
  }
  return recs;
}

}  // namespace

LotteryResult lottery_eval(const ExperimentConfig& cfg,
                           const std::string& checkpoint_path, long rounds,
                           std::uint64_t fresh_seed_salt) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  Dataset ds = cfg.build_dataset();
  std::vector<Shard> shards = cfg.build_shards(ds);
  Model model = cfg.build_model();

  MaskSet final_mask;
  final_mask.reserve(ck.params.layers.size());
  for (const auto& l : ck.params.layers) final_mask.push_back(l.mask);

  MaskedParams full_init = model.init_params(ck.init_seed);
  if (full_init.layers.size() != ck.params.layers.size())
    throw std::runtime_error("lottery: checkpoint does not match the model");
  for (std::size_t li = 0; li < full_init.layers.size(); ++li)
    if (full_init.layers[li].w.size() != ck.params.layers[li].w.size())
      throw std::runtime_error("lottery: checkpoint does not match the model");

  MaskedParams original = apply_mask(full_init, final_mask);
  MaskedParams fresh = apply_mask(
      model.init_params(
          derive_seed(cfg.seed, SeedStream::LotteryReinit, fresh_seed_salt)),
      final_mask);

  LotteryResult res;
  res.original = run_fixed_mask(cfg, model, ds, shards, std::move(original),
                                rounds);
  res.random = run_fixed_mask(cfg, model, ds, shards, std::move(fresh), rounds);
  res.full = run_fixed_mask(cfg, model, ds, shards, std::move(full_init),
                            rounds);
  return res;
}

std::vector<TimeToAccuracy> summarize_time_to_accuracy(
    const std::vector<RoundRecord>& records,
    const std::vector<double>& thresholds) {
  std::vector<TimeToAccuracy> out;
  out.reserve(thresholds.size());
  for (double th : thresholds) {
    TimeToAccuracy t;
    t.threshold = th;
    for (const auto& r : records) {
      if (r.test_accuracy >= th) {
        t.reached = true;
        t.seconds = r.seconds;
        t.round = r.round;
        break;
      }
    }
    out.push_back(t);
  }
  return out;
}

}  // namespace prunefl
