#include <doctest.h>

#include <cstdio>
#include <random>

#include "prunefl/cost_model.hpp"
#include "prunefl/rng.hpp"
#include "prunefl/sparse_tensor.hpp"

using namespace prunefl;

namespace {

std::vector<TimingSample> synth_samples(const CostModel& cm,
                                        const std::vector<std::vector<std::size_t>>& counts) {
  std::vector<TimingSample> out;
  for (const auto& c : counts) {
    TimingSample s;
    s.kept_per_layer = c;
    s.seconds = cm.c_seconds;
    for (std::size_t l = 0; l < c.size(); ++l)
      s.seconds += cm.t_per_layer[l] * static_cast<double>(c[l]);
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("fit recovers exact coefficients from noiseless samples") {
  CostModel truth{2.0, {1e-5, 3e-5}, 1.0e6};
  auto samples = synth_samples(truth, {{0, 0},
                                       {1000, 0},
                                       {0, 2000},
                                       {5000, 5000},
                                       {120, 7000}});
  FitResult fit = fit_cost_model(samples, 1.0e6);
  CHECK(fit.model.c_seconds == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(fit.model.t_per_layer[0] == doctest::Approx(1e-5).epsilon(1e-9));
  CHECK(fit.model.t_per_layer[1] == doctest::Approx(3e-5).epsilon(1e-9));
  CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("identical count vectors make the design rank-deficient") {
  std::vector<TimingSample> samples;
  for (int i = 0; i < 6; ++i)
    samples.push_back({{100, 200}, 5.0 + 0.01 * i});
  CHECK_THROWS_AS(fit_cost_model(samples, 1.0), std::invalid_argument);
}

TEST_CASE("constant-only data pins the intercept and floors the rates") {
  std::vector<TimingSample> samples;
  for (int i = 0; i < 4; ++i) samples.push_back({{0, 0}, 5.0});
  FitResult fit = fit_cost_model(samples, 1.0);
  CHECK(fit.model.c_seconds == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(fit.model.t_per_layer[0] == kCoefficientFloor);
  CHECK(fit.model.t_per_layer[1] == kCoefficientFloor);
}

TEST_CASE("fit consistency on random models") {
  std::mt19937_64 rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t layers = 1 + bounded(rng, 4);
    CostModel truth;
    truth.c_seconds = uniform_in(rng, 0.0, 3.0);
    truth.bandwidth_Bps = 1e6;
    for (std::size_t l = 0; l < layers; ++l)
      truth.t_per_layer.push_back(uniform_in(rng, 1e-6, 1e-3));
    std::vector<std::vector<std::size_t>> counts;
    for (std::size_t s = 0; s < layers + 4; ++s) {
      std::vector<std::size_t> c(layers);
      for (auto& v : c) v = bounded(rng, 20000);
      counts.push_back(c);
    }
    FitResult fit = fit_cost_model(synth_samples(truth, counts), 1e6);
    CHECK(fit.model.c_seconds ==
          doctest::Approx(truth.c_seconds).epsilon(1e-9));
    for (std::size_t l = 0; l < layers; ++l)
      CHECK(fit.model.t_per_layer[l] ==
            doctest::Approx(truth.t_per_layer[l]).epsilon(1e-9));
  }
}

TEST_CASE("zero kept parameters and zero comm cost exactly c") {
  CostModel cm{0.75, {1e-5, 2e-5}, 1e6};
  CHECK(round_time(cm, {0, 0}, {1000, 1000}, RoundKind::Normal) == 0.75);
}

TEST_CASE("full model round time composes compute and comm terms") {
  CostModel cm{0.5, {1e-5, 2e-5}, 1e5};
  std::vector<std::size_t> cap{3000, 1000};
  const double expect = 0.5 + 1e-5 * 3000 + 2e-5 * 1000 +
                        static_cast<double>(comm_bytes(cap, cap, RoundKind::Normal)) / 1e5;
  CHECK(round_time(cm, cap, cap, RoundKind::Normal) ==
        doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("normal-round bytes are 4 per kept value each way") {
  CHECK(comm_bytes({0}, {1000}, RoundKind::Normal) == 0);
  CHECK(comm_bytes({1000}, {5000}, RoundKind::Normal) == 8000);
}

TEST_CASE("reconfiguration bytes compose importance upload and sparse download") {
  const std::uint64_t total = 1000000, kept = 100000;
  const std::uint64_t expect = 4 * total + storage_cost(total, kept).sparse_bytes;
  CHECK(comm_bytes({kept}, {total}, RoundKind::Reconfig) == expect);
  CHECK(storage_cost(total, kept).sparse_bytes == 525000);
}

TEST_CASE("amortized comm over a reconfiguration period in full-model units") {
  // 50-round period at density d: one reconfiguration round costing
  // (1 + s(d)) full-model units plus 49 normal rounds costing 2d each,
  // where s(d) = min{2d, 1/32 + d} prices the sparse download.
  const std::uint64_t cap = 400000;
  const double d = 0.1;
  const auto kept = static_cast<std::uint64_t>(d * cap);
  const double full = 4.0 * static_cast<double>(cap);
  const double amortized =
      (static_cast<double>(comm_bytes({kept}, {cap}, RoundKind::Reconfig)) +
       49.0 * static_cast<double>(comm_bytes({kept}, {cap}, RoundKind::Normal))) /
      50.0 / full;
  const double s_d = std::min(2 * d, 1.0 / 32 + d);
  CHECK(amortized ==
        doctest::Approx((1.0 + s_d + 49.0 * 2.0 * d) / 50.0).epsilon(1e-12));
}

TEST_CASE("compute time interpolates linearly in the kept counts") {
  CostModel cm{1.0, {2e-5, 5e-5}, 1e6};
  std::vector<std::size_t> full{8000, 4000};
  const double t0 = compute_time(cm, {0, 0});
  const double t1 = compute_time(cm, full);
  for (std::size_t num = 0; num <= 4; ++num) {
    std::vector<std::size_t> scaled{full[0] * num / 4, full[1] * num / 4};
    const double lam = static_cast<double>(num) / 4.0;
    CHECK(compute_time(cm, scaled) ==
          doctest::Approx((1 - lam) * t0 + lam * t1).epsilon(1e-12));
  }
}

TEST_CASE("adding a kept parameter never decreases the round time") {
  std::mt19937_64 rng(66);
  CostModel cm{0.2, {1e-5, 3e-5, 7e-6}, 5e4};
  std::vector<std::size_t> cap{4000, 2000, 1000};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> kept(3);
    for (std::size_t l = 0; l < 3; ++l) kept[l] = bounded(rng, cap[l]);
    const double base = round_time(cm, kept, cap, RoundKind::Normal);
    std::size_t l = bounded(rng, 3);
    auto bumped = kept;
    bumped[l] += 1;
    CHECK(round_time(cm, bumped, cap, RoundKind::Normal) >= base);
  }
}

TEST_CASE("cost model presets round-trip through JSON") {
  CostModel cm{0.5, {1e-5, 3e-5}, 1.4e6};
  const std::string path = "test_cost_model.json";
  save_cost_model(path, cm);
  CostModel back = load_cost_model(path);
  CHECK(back.c_seconds == cm.c_seconds);
  CHECK(back.bandwidth_Bps == cm.bandwidth_Bps);
  CHECK(back.t_per_layer == cm.t_per_layer);
  std::remove(path.c_str());
}
