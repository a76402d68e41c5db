#include "prunefl/cost_model.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "prunefl/sparse_tensor.hpp"

namespace prunefl {

namespace {

// Gaussian elimination with partial pivoting on the normal equations.
// Dimensions here are tiny (layers + 1), so no need for anything fancier.
std::vector<double> solve_normal_equations(std::vector<std::vector<double>> a,
                                           std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    if (std::abs(a[pivot][col]) < 1e-30)
      throw std::invalid_argument(
          "fit_cost_model: rank-deficient sample design");
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      double f = a[r][col] / a[col][col];
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = b[i] / a[i][i];
  return x;
}

// Least squares restricted to `active` columns of the design
// [1, kept_1, ..., kept_L]; inactive coefficients are fixed at `pinned`.
std::vector<double> restricted_ls(const std::vector<TimingSample>& samples,
                                  std::size_t n_layers,
                                  const std::vector<bool>& active,
                                  const std::vector<double>& pinned) {
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < n_layers + 1; ++j)
    if (active[j]) cols.push_back(j);
  if (cols.empty()) return pinned;

  auto design = [&](const TimingSample& s, std::size_t j) -> double {
    return j == 0 ? 1.0 : static_cast<double>(s.kept_per_layer[j - 1]);
  };

  const std::size_t k = cols.size();
  std::vector<std::vector<double>> ata(k, std::vector<double>(k, 0.0));
  std::vector<double> atb(k, 0.0);
  for (const auto& s : samples) {
    double resid = s.seconds;
    for (std::size_t j = 0; j < n_layers + 1; ++j)
      if (!active[j]) resid -= pinned[j] * design(s, j);
    for (std::size_t i = 0; i < k; ++i) {
      double di = design(s, cols[i]);
      atb[i] += di * resid;
      for (std::size_t j = 0; j < k; ++j) ata[i][j] += di * design(s, cols[j]);
    }
  }
  std::vector<double> sol = solve_normal_equations(std::move(ata), std::move(atb));
  std::vector<double> full = pinned;
  for (std::size_t i = 0; i < k; ++i) full[cols[i]] = sol[i];
  return full;
}

}  // namespace

FitResult fit_cost_model(const std::vector<TimingSample>& samples,
                         double bandwidth_Bps) {
  if (samples.empty())
    throw std::invalid_argument("fit_cost_model: no samples");
  if (bandwidth_Bps <= 0.0)
    throw std::invalid_argument("fit_cost_model: bandwidth must be positive");
  const std::size_t n_layers = samples[0].kept_per_layer.size();
  for (const auto& s : samples) {
    if (s.kept_per_layer.size() != n_layers)
      throw std::invalid_argument("fit_cost_model: inconsistent layer counts");
    if (s.seconds <= 0.0)
      throw std::invalid_argument("fit_cost_model: nonpositive time sample");
  }

  // Coefficient vector: [c, t_1, ..., t_L].
  std::vector<bool> active(n_layers + 1, true);
  std::vector<double> pinned(n_layers + 1, 0.0);
  for (std::size_t l = 0; l < n_layers; ++l) {
    bool all_zero = true;
    for (const auto& s : samples)
      if (s.kept_per_layer[l] != 0) all_zero = false;
    if (all_zero) {
      active[l + 1] = false;
      pinned[l + 1] = kCoefficientFloor;
    }
  }

  std::vector<double> coef;
  for (int pass = 0;; ++pass) {
    coef = restricted_ls(samples, n_layers, active, pinned);
    bool changed = false;
    if (active[0] && coef[0] < 0.0) {
      active[0] = false;
      pinned[0] = 0.0;
      changed = true;
    }
    for (std::size_t l = 1; l <= n_layers; ++l) {
      if (active[l] && coef[l] < kCoefficientFloor) {
        active[l] = false;
        pinned[l] = kCoefficientFloor;
        changed = true;
      }
    }
    if (!changed) break;
    if (pass > static_cast<int>(n_layers) + 2)
      throw std::logic_error("fit_cost_model: clamping failed to converge");
  }

  FitResult res;
  res.model.c_seconds = coef[0];
  res.model.t_per_layer.assign(coef.begin() + 1, coef.end());
  res.model.bandwidth_Bps = bandwidth_Bps;

  double mean = 0.0;
  for (const auto& s : samples) mean += s.seconds;
  mean /= static_cast<double>(samples.size());
  double ss_tot = 0.0, ss_res = 0.0;
  for (const auto& s : samples) {
    double pred = res.model.c_seconds;
    for (std::size_t l = 0; l < n_layers; ++l)
      pred += res.model.t_per_layer[l] *
              static_cast<double>(s.kept_per_layer[l]);
    ss_res += (s.seconds - pred) * (s.seconds - pred);
    ss_tot += (s.seconds - mean) * (s.seconds - mean);
  }
  res.r_squared = ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot;
  return res;
}

std::uint64_t comm_bytes(const std::vector<std::size_t>& kept_per_layer,
                         const std::vector<std::size_t>& capacity_per_layer,
                         RoundKind kind) {
  std::uint64_t kept = 0, capacity = 0;
  for (auto k : kept_per_layer) kept += k;
  for (auto c : capacity_per_layer) capacity += c;
  if (kind == RoundKind::Normal) {
    // fixed pattern: values only, upload + download
    return 2 * fixed_pattern_bytes(kept);
  }
  // full-space importance up, sparse model (values + pattern) down
  return 4 * capacity + storage_cost(capacity, kept).sparse_bytes;
}

double round_time(const CostModel& cm,
                  const std::vector<std::size_t>& kept_per_layer,
                  const std::vector<std::size_t>& capacity_per_layer,
                  RoundKind kind) {
  if (kept_per_layer.size() != cm.t_per_layer.size())
    throw std::invalid_argument("round_time: layer count mismatch");
  double t = compute_time(cm, kept_per_layer);
  std::uint64_t bytes = comm_bytes(kept_per_layer, capacity_per_layer, kind);
  return t + static_cast<double>(bytes) / cm.bandwidth_Bps;
}

double compute_time(const CostModel& cm,
                    const std::vector<std::size_t>& kept_per_layer) {
  double t = cm.c_seconds;
  for (std::size_t l = 0; l < kept_per_layer.size(); ++l)
    t += cm.t_per_layer[l] * static_cast<double>(kept_per_layer[l]);
  return t;
}

CostModel load_cost_model(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cost model: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(is);
  CostModel cm;
  cm.c_seconds = j.at("c_seconds").get<double>();
  cm.bandwidth_Bps = j.at("bandwidth_Bps").get<double>();
  cm.t_per_layer = j.at("t_per_layer").get<std::vector<double>>();
  if (cm.c_seconds < 0.0 || cm.bandwidth_Bps <= 0.0)
    throw std::runtime_error("cost model: invalid coefficients in " + path);
  for (double t : cm.t_per_layer)
    if (t <= 0.0)
      throw std::runtime_error("cost model: t_per_layer must be positive");
  return cm;
}

void save_cost_model(const std::string& path, const CostModel& cm) {
  nlohmann::json j;
  j["c_seconds"] = cm.c_seconds;
  j["bandwidth_Bps"] = cm.bandwidth_Bps;
  j["t_per_layer"] = cm.t_per_layer;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cost model: cannot open " + path);
  os << j.dump(2) << "\n";
}

}  // namespace prunefl
