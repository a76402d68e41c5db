#include "prunefl/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace prunefl {

void ImportanceAccumulator::add(const GradientSample& grad,
                                const Model& model) {
  if (sum_sq.size() != model.prunable_capacity())
    throw std::invalid_argument("importance: accumulator not sized for model");
  for (std::size_t si = 0; si < model.param_slots().size(); ++si) {
    const auto& gw = grad.layers[si].w;
    double* dst = sum_sq.data() + model.param_slots()[si].flat_offset;
    for (std::size_t j = 0; j < gw.size(); ++j) dst[j] += gw[j] * gw[j];
  }
  ++steps;
}

ImportanceAccumulator merge_importance(
    const std::vector<std::pair<const ImportanceAccumulator*, double>>&
        parts) {
  if (parts.empty())
    throw std::invalid_argument("merge_importance: empty input");
  double total_w = 0.0;
  for (const auto& [acc, w] : parts) total_w += w;
  if (total_w <= 0.0)
    throw std::invalid_argument("merge_importance: nonpositive total weight");
  ImportanceAccumulator out;
  out.init(parts[0].first->sum_sq.size());
  for (const auto& [acc, w] : parts) {
    if (acc->sum_sq.size() != out.sum_sq.size())
      throw std::invalid_argument("merge_importance: size mismatch");
    const double f = w / total_w;
    for (std::size_t j = 0; j < out.sum_sq.size(); ++j)
      out.sum_sq[j] += f * acc->sum_sq[j];
    out.steps = std::max(out.steps, acc->steps);
  }
  return out;
}

double Schedules::alpha_at(long r) const {
  if (r < 0) throw std::invalid_argument("alpha_at: negative round");
  return alpha0 * std::pow(0.5, static_cast<double>(r) / alpha_half_rounds);
}

std::optional<double> Schedules::d_max_at(long r) const {
  if (!density_limit || !density_target) return std::nullopt;
  const double dl = *density_limit, dt = *density_target;
  if (r_max <= 0) return dl;
  const long rc = std::clamp(r, 0L, r_max);
  return (static_cast<double>(rc) * dt +
          static_cast<double>(r_max - rc) * dl) /
         static_cast<double>(r_max);
}

double evaluate_gamma_linear(const LinearInstance& inst,
                             std::span<const std::uint32_t> required,
                             std::span<const std::uint32_t> kept_sorted,
                             double* delta_out, double* time_out) {
  double delta = 0.0;
  double time = inst.c;
  for (auto j : required) {
    delta += inst.importance[j];
    time += inst.t[j];
  }
  for (auto j : kept_sorted) {
    delta += inst.importance[j];
    time += inst.t[j];
  }
  if (delta_out) *delta_out = delta;
  if (time_out) *time_out = time;
  return time > 0.0 ? delta / time : 0.0;
}

namespace {

struct Candidate {
  std::uint32_t index;
  double ratio;
};

void finalize_linear(ReconfigPlan& plan, const LinearInstance& inst,
                     const PrunablePartition& part) {
  plan.kept = plan.greedy_order;
  std::sort(plan.kept.begin(), plan.kept.end());
  plan.gamma = evaluate_gamma_linear(inst, part.required, plan.kept,
                                     &plan.delta, &plan.time_cost);
  plan.p_size = part.candidates.size();
  plan.pbar_size = part.required.size();
}

}  // namespace

ReconfigPlan solve_linear(const LinearInstance& inst,
                          const PrunablePartition& part) {
  for (auto j : part.candidates)
    if (inst.t[j] <= 0.0)
      throw std::invalid_argument("solve_linear: nonpositive t coefficient");

  std::vector<Candidate> order;
  order.reserve(part.candidates.size());
  for (auto j : part.candidates)
    order.push_back({j, inst.importance[j] / inst.t[j]});
  std::stable_sort(order.begin(), order.end(),
                   [](const Candidate& a, const Candidate& b) {
                     if (a.ratio != b.ratio) return a.ratio > b.ratio;
                     return a.index < b.index;
                   });

  double delta = 0.0;
  double time = inst.c;
  for (auto j : part.required) {
    delta += inst.importance[j];
    time += inst.t[j];
  }
  double gamma = time > 0.0 ? delta / time : 0.0;

  ReconfigPlan plan;
  plan.solver = SolverKind::Linear;
  for (const Candidate& cand : order) {
    // Zero-importance coordinates never join (they cannot reduce risk);
    // otherwise the Algorithm-1 rule: join while ratio >= running Gamma.
    if (!(cand.ratio > 0.0 && cand.ratio >= gamma)) break;
    plan.greedy_order.push_back(cand.index);
    delta += inst.importance[cand.index];
    time += inst.t[cand.index];
    gamma = delta / time;
  }
  finalize_linear(plan, inst, part);
  return plan;
}

ReconfigPlan solve_general(std::span<const double> importance,
                           const SetTimeFn& time_fn,
                           const PrunablePartition& part) {
  std::vector<std::uint32_t> members(part.required.begin(),
                                     part.required.end());
  std::sort(members.begin(), members.end());
  double delta = 0.0;
  for (auto j : part.required) delta += importance[j];
  double time = time_fn(members);
  if (time < 0.0)
    throw std::invalid_argument("solve_general: negative T(Pbar)");
  double gamma = time > 0.0 ? delta / time : 0.0;

  std::vector<std::uint32_t> remaining(part.candidates.begin(),
                                       part.candidates.end());
  std::sort(remaining.begin(), remaining.end());

  ReconfigPlan plan;
  plan.solver = SolverKind::General;
  std::vector<std::uint32_t> probe;
  while (!remaining.empty()) {
    double best_ratio = -std::numeric_limits<double>::infinity();
    std::size_t best_pos = 0;
    double best_time = 0.0;
    for (std::size_t i = 0; i < remaining.size(); ++i) {
      const std::uint32_t j = remaining[i];
      probe = members;
      probe.insert(std::upper_bound(probe.begin(), probe.end(), j), j);
      const double t_with = time_fn(probe);
      const double marginal = t_with - time;
      if (marginal < 0.0)
        throw std::invalid_argument(
            "solve_general: negative marginal cost (T not monotone)");
      double ratio;
      if (marginal == 0.0)
        ratio = importance[j] > 0.0
                    ? std::numeric_limits<double>::infinity()
                    : 0.0;
      else
        ratio = importance[j] / marginal;
      if (ratio > best_ratio) {
        best_ratio = ratio;
        best_pos = i;
        best_time = t_with;
      }
    }
    const std::uint32_t j = remaining[best_pos];
    if (!(best_ratio > 0.0 && best_ratio >= gamma)) break;
    members.insert(std::upper_bound(members.begin(), members.end(), j), j);
    plan.greedy_order.push_back(j);
    delta += importance[j];
    time = best_time;
    gamma = time > 0.0 ? delta / time : 0.0;
    remaining.erase(remaining.begin() + best_pos);
  }

  plan.kept = plan.greedy_order;
  std::sort(plan.kept.begin(), plan.kept.end());
  plan.delta = delta;
  plan.time_cost = time;
  plan.gamma = gamma;
  plan.p_size = part.candidates.size();
  plan.pbar_size = part.required.size();
  return plan;
}

PrunablePartition partition(const MaskedParams& params, const Model& model,
                            long round, const Schedules& sched) {
  const std::size_t capacity = model.prunable_capacity();
  const double alpha = sched.alpha_at(round);
  const std::size_t slots =
      static_cast<std::size_t>(alpha * static_cast<double>(capacity));

  PrunablePartition part;
  part.alpha_used = alpha;
  struct Unmasked {
    double magnitude;
    std::uint32_t index;
  };
  std::vector<Unmasked> unmasked;
  unmasked.reserve(capacity);
  for (std::size_t si = 0; si < model.param_slots().size(); ++si) {
    const auto& slot = model.param_slots()[si];
    const auto& lp = params.layers[si];
    for (std::size_t j = 0; j < lp.w.size(); ++j) {
      const auto flat = static_cast<std::uint32_t>(slot.flat_offset + j);
      if (lp.mask[j])
        unmasked.push_back({std::abs(lp.w[j]), flat});
      else
        part.candidates.push_back(flat);
    }
  }
  std::stable_sort(unmasked.begin(), unmasked.end(),
                   [](const Unmasked& a, const Unmasked& b) {
                     if (a.magnitude != b.magnitude)
                       return a.magnitude < b.magnitude;
                     return a.index < b.index;
                   });
  const std::size_t take = std::min(slots, unmasked.size());
  for (std::size_t i = 0; i < take; ++i)
    part.candidates.push_back(unmasked[i].index);
  for (std::size_t i = take; i < unmasked.size(); ++i)
    part.required.push_back(unmasked[i].index);
  std::sort(part.candidates.begin(), part.candidates.end());
  std::sort(part.required.begin(), part.required.end());
  return part;
}

ReconfigPlan apply_caps(ReconfigPlan plan, const LinearInstance& inst,
                        const PrunablePartition& part, long round,
                        const Schedules& sched, std::size_t capacity) {
  auto dmax = sched.d_max_at(round);
  if (!dmax) return plan;
  const auto cap = static_cast<std::size_t>(
      *dmax * static_cast<double>(capacity));
  if (part.required.size() > cap) {
    plan.greedy_order.clear();
    plan.cap_violated = true;
    finalize_linear(plan, inst, part);
    return plan;
  }
  const std::size_t allowed = cap - part.required.size();
  if (plan.greedy_order.size() <= allowed) return plan;
  plan.greedy_order.resize(allowed);
  finalize_linear(plan, inst, part);
  return plan;
}

std::vector<double> flat_time_coefficients(const Model& model,
                                           const CostModel& cm) {
  if (cm.t_per_layer.size() != model.param_slots().size())
    throw std::invalid_argument(
        "cost model has " + std::to_string(cm.t_per_layer.size()) +
        " layer coefficients, model has " +
        std::to_string(model.param_slots().size()) + " prunable layers");
  std::vector<double> t(model.prunable_capacity());
  for (std::size_t si = 0; si < model.param_slots().size(); ++si) {
    const auto& slot = model.param_slots()[si];
    std::fill_n(t.begin() + static_cast<std::ptrdiff_t>(slot.flat_offset),
                slot.weight_count, cm.t_per_layer[si]);
  }
  return t;
}

MaskSet mask_from_kept(const Model& model,
                       std::span<const std::uint32_t> kept_sorted,
                       std::span<const std::uint32_t> required) {
  MaskSet masks;
  masks.reserve(model.param_slots().size());
  for (const auto& slot : model.param_slots())
    masks.emplace_back(slot.weight_count, 0);
  auto set_bit = [&](std::uint32_t flat) {
    for (std::size_t si = 0; si < model.param_slots().size(); ++si) {
      const auto& slot = model.param_slots()[si];
      if (flat < slot.flat_offset + slot.weight_count) {
        masks[si][flat - slot.flat_offset] = 1;
        return;
      }
    }
    throw std::out_of_range("mask_from_kept: index beyond capacity");
  };
  for (auto j : kept_sorted) set_bit(j);
  for (auto j : required) set_bit(j);
  return masks;
}

std::pair<MaskedParams, ReconfigPlan> reconfigure(
    const MaskedParams& params, const Model& model,
    const ImportanceAccumulator& importance, const CostModel& cm,
    const Schedules& sched, long round, SgdState* state) {
  if (importance.sum_sq.size() != model.prunable_capacity())
    throw std::invalid_argument("reconfigure: importance size mismatch");
  PrunablePartition part = partition(params, model, round, sched);
  const std::vector<double> t = flat_time_coefficients(model, cm);
  LinearInstance inst{importance.sum_sq, t, cm.c_seconds};
  ReconfigPlan plan = solve_linear(inst, part);
  plan = apply_caps(std::move(plan), inst, part, round, sched,
                    model.prunable_capacity());
  MaskSet masks = mask_from_kept(model, plan.kept, part.required);
  MaskedParams next = apply_mask(params, masks, state);
  return {std::move(next), std::move(plan)};
}

}  // namespace prunefl
