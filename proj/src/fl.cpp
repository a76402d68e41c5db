#include "prunefl/fl.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "prunefl/rng.hpp"

namespace prunefl {

LocalUpdate client_local_update(const Model& model, const Dataset& ds,
                                ClientState& cs, const MaskedParams& global,
                                const RoundConfig& rc, const SgdConfig& sgd,
                                long round, bool collect_importance) {
  if (!cs.sampler)
    throw std::invalid_argument("client_local_update: client has no data");
  LocalUpdate lu;
  lu.params = global;
  if (collect_importance) {
    if (cs.importance.sum_sq.size() != model.prunable_capacity())
      cs.importance.init(model.prunable_capacity());
    lu.importance_delta.assign(model.prunable_capacity(), 0.0);
  }
  // Local momentum starts fresh each round; between rounds a client keeps
  // only its batch stream and importance sums.
  SgdState sgd_state;
  for (int it = 0; it < rc.local_iters; ++it) {
    Batch batch = gather_batch(
        ds, cs.sampler->next(static_cast<std::size_t>(rc.batch_size)));
    ForwardResult fwd = model.forward(lu.params, batch);
    GradientSample grad = model.backward(lu.params, fwd.cache);
    if (collect_importance) {
      cs.importance.add(grad, model);
      for (std::size_t si = 0; si < model.param_slots().size(); ++si) {
        const auto& gw = grad.layers[si].w;
        double* dst =
            lu.importance_delta.data() + model.param_slots()[si].flat_offset;
        for (std::size_t j = 0; j < gw.size(); ++j) dst[j] += gw[j] * gw[j];
      }
    }
    lu.params = sgd_step(lu.params, grad, sgd, round, &sgd_state);
    lu.samples += batch.size();
  }
  return lu;
}

MaskedParams server_aggregate(
    const std::vector<std::pair<const MaskedParams*, double>>& updates) {
  if (updates.empty())
    throw std::invalid_argument("server_aggregate: no updates");
  double total_w = 0.0;
  for (const auto& [p, w] : updates) total_w += w;
  if (total_w <= 0.0)
    throw std::invalid_argument("server_aggregate: nonpositive total weight");

  const MaskedParams& first = *updates[0].first;
  for (const auto& [p, w] : updates) {
    if (p->layers.size() != first.layers.size())
      throw std::runtime_error("server_aggregate: layer count mismatch");
    for (std::size_t li = 0; li < first.layers.size(); ++li)
      if (p->layers[li].mask != first.layers[li].mask)
        throw std::runtime_error(
            "server_aggregate: participants disagree on the mask");
  }

  MaskedParams out = first;
  for (std::size_t li = 0; li < out.layers.size(); ++li) {
    auto& lp = out.layers[li];
    std::fill(lp.w.begin(), lp.w.end(), 0.0);
    std::fill(lp.b.begin(), lp.b.end(), 0.0);
    for (const auto& [p, w] : updates) {
      const double f = w / total_w;
      const auto& src = p->layers[li];
      for (std::size_t j = 0; j < lp.w.size(); ++j) lp.w[j] += f * src.w[j];
      for (std::size_t j = 0; j < lp.b.size(); ++j) lp.b[j] += f * src.b[j];
    }
  }
  return out;
}

std::vector<std::size_t> select_clients(std::size_t population, std::size_t k,
                                        std::mt19937_64& rng) {
  if (k > population)
    throw std::invalid_argument("select_clients: k exceeds population");
  return sample_without_replacement(population, k, rng);
}

InitialPruneResult initial_pruning(const Model& model, const Dataset& ds,
                                   const Shard& shard, MaskedParams params,
                                   const SgdConfig& sgd,
                                   const Schedules& sched, const CostModel& cm,
                                   const InitialPruneLimits& limits,
                                   std::uint64_t sampler_seed) {
  if (shard.empty())
    throw std::invalid_argument("initial_pruning: empty client dataset");
  InitialPruneResult res;
  res.params = std::move(params);
  if (limits.max_reconfigs <= 0) return res;

  BatchSampler sampler(shard, sampler_seed);
  ImportanceAccumulator importance;
  importance.init(model.prunable_capacity());

  std::size_t prev_size = res.params.kept_count();
  int stable_streak = 0;
  for (int block = 0; block < limits.max_reconfigs; ++block) {
    for (int it = 0; it < limits.iters_per_block; ++it) {
      Batch batch = gather_batch(
          ds, sampler.next(static_cast<std::size_t>(limits.batch_size)));
      ForwardResult fwd = model.forward(res.params, batch);
      GradientSample grad = model.backward(res.params, fwd.cache);
      importance.add(grad, model);
      res.params = sgd_step(res.params, grad, sgd, block);
      ++res.total_iterations;
    }
    res.total_seconds += compute_time(cm, res.params.kept_per_layer());

    auto [pruned, plan] =
        reconfigure(res.params, model, importance, cm, sched, block);
    res.params = std::move(pruned);
    importance.reset();

    const std::size_t size = res.params.kept_count();
    InitialPruneRecord rec;
    rec.block = block;
    rec.kept = size;
    rec.density = res.params.density();
    rec.clock_seconds = res.total_seconds;
    rec.plan = std::move(plan);
    res.trace.push_back(std::move(rec));

    double rel_change;
    if (prev_size == 0)
      rel_change = size == 0 ? 0.0 : 1.0;
    else
      rel_change = std::abs(static_cast<double>(size) -
                            static_cast<double>(prev_size)) /
                   static_cast<double>(prev_size);
    stable_streak = rel_change < limits.stable_threshold ? stable_streak + 1 : 0;
    prev_size = size;
    if (stable_streak >= limits.stable_count) break;
  }
  return res;
}

FlSystem::FlSystem(const Model& model, const Dataset& ds,
                   std::vector<Shard> shards, RoundConfig rc, SgdConfig sgd,
                   Schedules sched, CostModel cm, MaskedParams initial,
                   std::uint64_t master_seed)
    : model_(model), dataset_(ds), rc_(rc), sgd_(sgd) {
  if (shards.empty()) throw std::invalid_argument("fl: no clients");
  std::size_t total = 0;
  for (const auto& s : shards) total += s.size();
  if (total == 0) throw std::invalid_argument("fl: all shards empty");

  clients_.resize(shards.size());
  for (std::size_t i = 0; i < shards.size(); ++i) {
    ClientState& cs = clients_[i];
    cs.id = static_cast<int>(i);
    cs.shard = std::move(shards[i]);
    cs.weight = static_cast<double>(cs.shard.size()) /
                static_cast<double>(total);
    if (!cs.shard.empty())
      cs.sampler.emplace(
          cs.shard, derive_seed(master_seed, SeedStream::ClientBatches, i));
    cs.importance.init(model_.prunable_capacity());
  }

  server_.global = std::move(initial);
  server_.sched = std::move(sched);
  server_.cost = std::move(cm);
  server_.master_seed = master_seed;
  server_.selection_rng.seed(
      derive_seed(master_seed, SeedStream::ClientSelection));

  if (rc_.participants <= 0 ||
      rc_.participants > static_cast<int>(clients_.size()))
    rc_.participants = static_cast<int>(clients_.size());
}

RoundOutcome FlSystem::run_round() {
  const long r = server_.round;
  const bool reconfig_due =
      rc_.reconfig_enabled && rc_.reconfig_interval > 0 &&
      (r + 1) % rc_.reconfig_interval == 0;
  const bool collect = rc_.collect_importance;

  std::vector<std::size_t> selected;
  if (rc_.participants == static_cast<int>(clients_.size())) {
    for (std::size_t i = 0; i < clients_.size(); ++i) selected.push_back(i);
  } else {
    selected = select_clients(clients_.size(),
                              static_cast<std::size_t>(rc_.participants),
                              server_.selection_rng);
  }

  const auto kept_before = server_.global.kept_per_layer();
  const auto capacity = server_.global.capacity_per_layer();
  std::uint64_t kept_total = 0, cap_total = 0;
  for (auto k : kept_before) kept_total += k;
  for (auto c : capacity) cap_total += c;

  // Local updates in ascending client id; skip (and log) empty shards.
  std::vector<LocalUpdate> updates;
  std::vector<std::size_t> contributors;
  for (std::size_t idx : selected) {
    ClientState& cs = clients_[idx];
    if (!cs.sampler) continue;  // empty shard: skipped
    updates.push_back(client_local_update(model_, dataset_, cs, server_.global,
                                          rc_, sgd_, r, collect));
    contributors.push_back(idx);
  }
  if (updates.empty())
    throw std::runtime_error("run_round: every selected client was empty");

  std::vector<std::pair<const MaskedParams*, double>> agg;
  agg.reserve(updates.size());
  for (std::size_t i = 0; i < updates.size(); ++i)
    agg.emplace_back(&updates[i].params, clients_[contributors[i]].weight);
  server_.global = server_aggregate(agg);

  RoundOutcome out;
  out.round = r;
  out.reconfig = reconfig_due;

  // Audit trail mirrors the byte accounting: normal rounds move values both
  // ways; reconfiguration rounds are priced as importance up plus the new
  // sparse model down (the value exchange rides along with those).
  const auto kind = reconfig_due ? RoundKind::Reconfig : RoundKind::Normal;
  if (trace_enabled_) {
    for (std::size_t idx : contributors) {
      const auto cid = static_cast<int>(idx);
      if (reconfig_due) {
        trace_.push_back({r, cid, 'u', "importance", 4 * cap_total});
      } else {
        trace_.push_back(
            {r, cid, 'd', "values", fixed_pattern_bytes(kept_total)});
        trace_.push_back(
            {r, cid, 'u', "values", fixed_pattern_bytes(kept_total)});
      }
    }
  }

  if (reconfig_due) {
    std::vector<std::pair<const ImportanceAccumulator*, double>> parts;
    for (std::size_t idx : contributors)
      parts.emplace_back(&clients_[idx].importance, clients_[idx].weight);
    ImportanceAccumulator merged = merge_importance(parts);
    auto [pruned, plan] = reconfigure(server_.global, model_, merged,
                                      server_.cost, server_.sched, r);
    server_.global = std::move(pruned);
    out.plan = std::move(plan);
    // Everyone deletes the collected importance, selected or not.
    for (auto& cs : clients_) cs.importance.reset();
  }

  // Normal rounds move the (fixed-pattern) kept values; reconfiguration
  // rounds price the full-space importance upload plus the download of the
  // newly laid-out sparse model.
  const std::uint64_t per_client =
      kind == RoundKind::Normal
          ? comm_bytes(kept_before, capacity, kind)
          : comm_bytes(server_.global.kept_per_layer(), capacity, kind);
  const auto participants = static_cast<std::uint64_t>(contributors.size());
  if (kind == RoundKind::Normal) {
    out.bytes_up = participants * fixed_pattern_bytes(kept_total);
    out.bytes_down = participants * fixed_pattern_bytes(kept_total);
  } else {
    const std::uint64_t model_down =
        storage_cost(cap_total, server_.global.kept_count()).sparse_bytes;
    out.bytes_up = participants * 4 * cap_total;
    out.bytes_down = participants * model_down;
    if (trace_enabled_)
      for (std::size_t idx : contributors)
        trace_.push_back(
            {r, static_cast<int>(idx), 'd', "sparse_model", model_down});
  }

  // Round time uses per-client bytes: links run in parallel and the round
  // completes when the (homogeneous) clients do.
  out.seconds = compute_time(server_.cost, kept_before) +
                static_cast<double>(per_client) / server_.cost.bandwidth_Bps;
  server_.clock_seconds += out.seconds;
  server_.round = r + 1;
  return out;
}

namespace {

constexpr std::size_t kEvalChunk = 512;

}  // namespace

double pooled_train_loss(const Model& model, const MaskedParams& params,
                         const Dataset& ds) {
  const std::size_t n = ds.train_size();
  if (n == 0) throw std::invalid_argument("pooled_train_loss: empty train set");
  double total = 0.0;
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    const std::size_t stop = std::min(n, start + kEvalChunk);
    std::vector<std::size_t> idx(stop - start);
    for (std::size_t i = start; i < stop; ++i) idx[i - start] = i;
    Batch b = gather_batch(ds, idx);
    total += model.loss(params, b) * static_cast<double>(b.size());
  }
  return total / static_cast<double>(n);
}

double weighted_client_loss(const Model& model, const MaskedParams& params,
                            const Dataset& ds,
                            const std::vector<ClientState>& clients) {
  double total = 0.0;
  for (const auto& cs : clients) {
    if (cs.shard.empty()) continue;
    Batch b = gather_batch(ds, cs.shard);
    total += cs.weight * model.loss(params, b);
  }
  return total;
}

double test_accuracy(const Model& model, const MaskedParams& params,
                     const Dataset& ds) {
  const std::size_t n = ds.test_size();
  if (n == 0) throw std::invalid_argument("test_accuracy: empty test set");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    const std::size_t stop = std::min(n, start + kEvalChunk);
    DenseMatrix x(stop - start, ds.test_x.cols, 0.0);
    for (std::size_t i = start; i < stop; ++i)
      std::copy_n(&ds.test_x.values[i * ds.test_x.cols], ds.test_x.cols,
                  &x.values[(i - start) * x.cols]);
    std::vector<int> pred = model.predict(params, x);
    for (std::size_t i = start; i < stop; ++i)
      if (pred[i - start] == ds.test_y[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

GradientSample pooled_train_gradient(const Model& model,
                                     const MaskedParams& params,
                                     const Dataset& ds) {
  const std::size_t n = ds.train_size();
  if (n == 0)
    throw std::invalid_argument("pooled_train_gradient: empty train set");
  GradientSample total;
  total.batch_size = n;
  total.layers.resize(model.param_slots().size());
  for (std::size_t si = 0; si < model.param_slots().size(); ++si) {
    total.layers[si].w.assign(model.param_slots()[si].weight_count, 0.0);
    total.layers[si].b.assign(model.param_slots()[si].bias_count, 0.0);
  }
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    const std::size_t stop = std::min(n, start + kEvalChunk);
    std::vector<std::size_t> idx(stop - start);
    for (std::size_t i = start; i < stop; ++i) idx[i - start] = i;
    Batch b = gather_batch(ds, idx);
    ForwardResult fwd = model.forward(params, b);
    GradientSample g = model.backward(params, fwd.cache);
    const double f = static_cast<double>(b.size()) / static_cast<double>(n);
    for (std::size_t si = 0; si < total.layers.size(); ++si) {
      for (std::size_t j = 0; j < total.layers[si].w.size(); ++j)
        total.layers[si].w[j] += f * g.layers[si].w[j];
      for (std::size_t j = 0; j < total.layers[si].b.size(); ++j)
        total.layers[si].b[j] += f * g.layers[si].b[j];
    }
  }
  return total;
}

}  // namespace prunefl
