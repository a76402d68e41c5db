#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "prunefl/cost_model.hpp"
#include "prunefl/nn.hpp"

namespace prunefl {

// Per-coordinate sums of squared gradients over the flat prunable space,
// collected between reconfigurations and reset right after each one.
struct ImportanceAccumulator {
  std::vector<double> sum_sq;
  std::uint64_t steps = 0;

  void init(std::size_t capacity) {
    sum_sq.assign(capacity, 0.0);
    steps = 0;
  }
  void reset() {
    std::fill(sum_sq.begin(), sum_sq.end(), 0.0);
    steps = 0;
  }
  // += g_j^2 for every prunable weight coordinate (raw gradients, not
  // momentum-adjusted steps).
  void add(const GradientSample& grad, const Model& model);
};

// Weighted mean of client sums; weights renormalized over the contributors.
ImportanceAccumulator merge_importance(
    const std::vector<std::pair<const ImportanceAccumulator*, double>>& parts);

// P: coordinates that may be pruned or added back (all currently-masked ones
// plus the smallest-magnitude unmasked ones). Pbar: must-keep coordinates.
// Both ascending; disjoint; union = all prunable coordinates.
struct PrunablePartition {
  std::vector<std::uint32_t> candidates;  // P
  std::vector<std::uint32_t> required;    // Pbar
  double alpha_used = 0.0;
};

struct Schedules {
  double alpha0 = 0.3;
  double alpha_half_rounds = 10000.0;
  // Size limit/target schedule; disabled unless both are set.
  std::optional<double> density_limit;   // d_l at round 0
  std::optional<double> density_target;  // d_t at round r_max
  long r_max = 0;
  long reconfig_interval = 50;

  // alpha(r) = alpha0 * 0.5^(r / alpha_half_rounds)
  double alpha_at(long r) const;
  // d_max(r) = (r * d_t + (r_max - r) * d_l) / r_max, clamped to [d_t, d_l];
  // nullopt when the cap schedule is disabled.
  std::optional<double> d_max_at(long r) const;
};

enum class SolverKind { Linear, General };

struct ReconfigPlan {
  std::vector<std::uint32_t> kept;          // A, ascending
  std::vector<std::uint32_t> greedy_order;  // A in inclusion order
  double gamma = 0.0;  // Delta(M) / T(M) at M = A u Pbar
  double delta = 0.0;
  double time_cost = 0.0;
  SolverKind solver = SolverKind::Linear;
  bool cap_violated = false;  // Pbar alone exceeded the size cap
  std::size_t p_size = 0;
  std::size_t pbar_size = 0;
};

// Linear-T instance: T(M) = c + sum of t[j] over M. `importance` and `t`
// cover the full flat prunable space.
struct LinearInstance {
  std::span<const double> importance;
  std::span<const double> t;
  double c = 0.0;
};

// Canonical evaluation used by the solvers and any oracle comparing against
// them: Delta = imp over Pbar in ascending order, then over A in ascending
// order; T likewise (c first). Gamma = Delta / T, with 0/x == x==0 -> 0.
double evaluate_gamma_linear(const LinearInstance& inst,
                             std::span<const std::uint32_t> required,
                             std::span<const std::uint32_t> kept_sorted,
                             double* delta_out = nullptr,
                             double* time_out = nullptr);

// Greedy ratio maximization for linear T: sort P by imp/t (non-increasing,
// ties by ascending index), add while the ratio is at least the running
// Gamma and strictly positive. Globally optimal for linear T.
ReconfigPlan solve_linear(const LinearInstance& inst,
                          const PrunablePartition& part);

// Monotone positive set time function; members arrive sorted ascending.
using SetTimeFn =
    std::function<double(std::span<const std::uint32_t> members)>;

// General-T variant: repeatedly add the candidate maximizing
// imp_j / marginal-cost against the current set while that ratio clears the
// running Gamma. Locally optimal (no single addition can improve Gamma).
// Throws if a negative marginal cost reveals a non-monotone T.
ReconfigPlan solve_general(std::span<const double> importance,
                           const SetTimeFn& time_fn,
                           const PrunablePartition& part);

// Magnitude partition: every masked-out coordinate is in P, plus the
// floor(alpha(r) * capacity) smallest-|w| unmasked ones (ties by ascending
// index).
PrunablePartition partition(const MaskedParams& params, const Model& model,
                            long round, const Schedules& sched);

// Truncate A (in greedy order) so |A u Pbar| <= floor(d_max(r) * capacity).
// No-op when the cap schedule is disabled. If Pbar alone exceeds the cap,
// A empties and the plan is flagged (the cap is best effort).
ReconfigPlan apply_caps(ReconfigPlan plan, const LinearInstance& inst,
                        const PrunablePartition& part, long round,
                        const Schedules& sched, std::size_t capacity);

// Per-coordinate time coefficients expanded from the per-layer cost model.
std::vector<double> flat_time_coefficients(const Model& model,
                                           const CostModel& cm);

// Mask set with ones exactly at `kept_sorted` u `required`.
MaskSet mask_from_kept(const Model& model,
                       std::span<const std::uint32_t> kept_sorted,
                       std::span<const std::uint32_t> required);

// partition -> solve_linear -> apply_caps -> apply_mask. The caller resets
// the importance accumulator afterwards.
std::pair<MaskedParams, ReconfigPlan> reconfigure(
    const MaskedParams& params, const Model& model,
    const ImportanceAccumulator& importance, const CostModel& cm,
    const Schedules& sched, long round, SgdState* state = nullptr);

}  // namespace prunefl
