#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace prunefl {

enum class RoundKind { Normal, Reconfig };

// Round-time model T(M) = c + sum over kept coordinates of the per-layer
// coefficient, plus communicated bytes over a single server-client link at
// `bandwidth_Bps`. One global model; no per-client heterogeneity.
struct CostModel {
  double c_seconds = 0.0;
  std::vector<double> t_per_layer;  // seconds per kept parameter, > 0
  double bandwidth_Bps = 1.0;
};

struct TimingSample {
  std::vector<std::size_t> kept_per_layer;
  double seconds = 0.0;
};

struct FitResult {
  CostModel model;
  double r_squared = 0.0;
};

// Coefficients below this are structurally zero; they get pinned here and
// the rest refit on the active set.
inline constexpr double kCoefficientFloor = 1e-12;

// Least squares over (1, kept_1, ..., kept_L) -> seconds with clamp-and-refit
// nonnegativity (t floored at kCoefficientFloor, c at 0). Columns that are
// identically zero are excluded up front (their t is pinned at the floor).
// Throws on a rank-deficient active design.
FitResult fit_cost_model(const std::vector<TimingSample>& samples,
                         double bandwidth_Bps);

// Per-client bytes moved in one round. Normal rounds exchange only the kept
// values both ways (the sparsity pattern is known to both sides). Reconfig
// rounds upload full-space importance (4 bytes per capacity coordinate) and
// download the re-laid-out sparse model at storage_cost bytes.
std::uint64_t comm_bytes(const std::vector<std::size_t>& kept_per_layer,
                         const std::vector<std::size_t>& capacity_per_layer,
                         RoundKind kind);

double round_time(const CostModel& cm,
                  const std::vector<std::size_t>& kept_per_layer,
                  const std::vector<std::size_t>& capacity_per_layer,
                  RoundKind kind);

// Compute-only variant: c + sum t_l * kept_l, no communication term. Used
// for the single-client initial pruning stage.
double compute_time(const CostModel& cm,
                    const std::vector<std::size_t>& kept_per_layer);

// Preset file: JSON object {c_seconds, bandwidth_Bps, t_per_layer}.
CostModel load_cost_model(const std::string& path);
void save_cost_model(const std::string& path, const CostModel& cm);

}  // namespace prunefl
