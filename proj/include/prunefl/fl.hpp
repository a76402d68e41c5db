#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "prunefl/cost_model.hpp"
#include "prunefl/data.hpp"
#include "prunefl/nn.hpp"
#include "prunefl/pruner.hpp"

namespace prunefl {

struct RoundConfig {
  int local_iters = 5;   // E
  int batch_size = 20;   // B
  int participants = 0;  // clients per round; 0 means full participation
  long reconfig_interval = 50;
  bool reconfig_enabled = true;
  bool collect_importance = true;
};

struct ClientState {
  int id = 0;
  Shard shard;
  double weight = 0.0;  // p_n = D_n / D over the full population
  std::optional<BatchSampler> sampler;
  ImportanceAccumulator importance;
};

struct TraceEntry {
  long round;
  int client;
  char direction;  // 'd' server->client, 'u' client->server
  const char* kind;
  std::uint64_t bytes;
};

struct ServerState {
  MaskedParams global;
  long round = 0;  // completed rounds, 0-based
  double clock_seconds = 0.0;
  Schedules sched;
  CostModel cost;
  std::uint64_t master_seed = 0;
  std::mt19937_64 selection_rng;
};

struct LocalUpdate {
  MaskedParams params;
  std::vector<double> importance_delta;  // empty unless collected
  std::size_t samples = 0;
};

struct RoundOutcome {
  long round = 0;  // 0-based index of the round just run
  bool reconfig = false;
  double seconds = 0.0;
  std::uint64_t bytes_up = 0;    // totals across participants
  std::uint64_t bytes_down = 0;
  std::optional<ReconfigPlan> plan;
};

// E masked SGD steps from the received global parameters. Adds the summed
// per-coordinate g^2 of those steps to the client's accumulator when
// collecting, and returns the same sum as a delta.
LocalUpdate client_local_update(const Model& model, const Dataset& ds,
                                ClientState& cs, const MaskedParams& global,
                                const RoundConfig& rc, const SgdConfig& sgd,
                                long round, bool collect_importance);

// p_n-weighted parameter average; weights renormalized over participants.
// All updates must share one mask (protocol invariant) and keep it.
MaskedParams server_aggregate(
    const std::vector<std::pair<const MaskedParams*, double>>& updates);

// Uniform without-replacement draw of k clients, ascending ids.
std::vector<std::size_t> select_clients(std::size_t population, std::size_t k,
                                        std::mt19937_64& rng);

struct InitialPruneLimits {
  int iters_per_block = 5;  // local iterations between reconfigurations
  int batch_size = 20;
  int max_reconfigs = 50;
  double stable_threshold = 0.10;
  int stable_count = 5;
};

struct InitialPruneRecord {
  int block = 0;  // 0-based reconfiguration index
  std::size_t kept = 0;
  double density = 0.0;
  double clock_seconds = 0.0;  // cumulative stage time
  ReconfigPlan plan;
};

struct InitialPruneResult {
  MaskedParams params;
  std::vector<InitialPruneRecord> trace;
  double total_seconds = 0.0;
  long total_iterations = 0;
};

// Adaptive pruning on one client's shard before FL: blocks of local
// iterations, each followed by a reconfiguration, until the kept size
// changes by less than stable_threshold for stable_count consecutive
// reconfigurations (or the block cap is hit). Stage time is compute-only.
InitialPruneResult initial_pruning(const Model& model, const Dataset& ds,
                                   const Shard& shard, MaskedParams params,
                                   const SgdConfig& sgd,
                                   const Schedules& sched, const CostModel& cm,
                                   const InitialPruneLimits& limits,
                                   std::uint64_t sampler_seed);

// The federated loop: clients, server, round kinds, simulated clock.
class FlSystem {
 public:
  FlSystem(const Model& model, const Dataset& ds, std::vector<Shard> shards,
           RoundConfig rc, SgdConfig sgd, Schedules sched, CostModel cm,
           MaskedParams initial, std::uint64_t master_seed);

  // One FedAvg round. Rounds where (r+1) is a multiple of the interval run
  // the reconfiguration protocol on top of the normal exchange.
  RoundOutcome run_round();

  const ServerState& server() const { return server_; }
  const std::vector<ClientState>& clients() const { return clients_; }
  const Model& model() const { return model_; }

  // Harness hooks for baselines that prune outside the reconfiguration
  // protocol (one-shot, iterative): swap the global model, stop collecting,
  // and drop accumulated importance.
  void set_global(MaskedParams params) { server_.global = std::move(params); }
  void set_collect_importance(bool on) { rc_.collect_importance = on; }
  void reset_importance() {
    for (auto& cs : clients_) cs.importance.reset();
  }
  void advance_clock(double seconds) { server_.clock_seconds += seconds; }

  void enable_trace(bool on) { trace_enabled_ = on; }
  const std::vector<TraceEntry>& trace() const { return trace_; }

 private:
  const Model& model_;
  const Dataset& dataset_;
  std::vector<ClientState> clients_;
  RoundConfig rc_;
  SgdConfig sgd_;
  ServerState server_;
  bool trace_enabled_ = false;
  std::vector<TraceEntry> trace_;
};

// Evaluation helpers (no simulated time).
double pooled_train_loss(const Model& model, const MaskedParams& params,
                         const Dataset& ds);
double weighted_client_loss(const Model& model, const MaskedParams& params,
                            const Dataset& ds,
                            const std::vector<ClientState>& clients);
double test_accuracy(const Model& model, const MaskedParams& params,
                     const Dataset& ds);
// Full-batch gradient of the pooled train loss (for trend diagnostics).
GradientSample pooled_train_gradient(const Model& model,
                                     const MaskedParams& params,
                                     const Dataset& ds);

}  // namespace prunefl
