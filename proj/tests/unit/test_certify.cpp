#include <doctest.h>

#include <cmath>
#include <limits>

#include <json.hpp>

#include "oracles.hpp"
#include "rsmooth/certify.hpp"
#include "rsmooth/error.hpp"

using namespace rsmooth;

TEST_CASE("z_critical against the Simpson/bisection oracle") {
  CHECK(z_critical(0.5) == 0.0);
  CHECK(z_critical(0.001) == doctest::Approx(oracle::bisect_quantile(1 - 0.001)).epsilon(1e-9));
  CHECK(z_critical(0.001) == doctest::Approx(3.0902).epsilon(1e-4));
  CHECK(z_critical(0.025) == doctest::Approx(oracle::bisect_quantile(1 - 0.025)).epsilon(1e-9));
  CHECK(z_critical(0.025) == doctest::Approx(1.959964).epsilon(1e-6));
  CHECK_THROWS_AS(z_critical(0.0), ConfigError);
  CHECK_THROWS_AS(z_critical(1.0), ConfigError);
}

TEST_CASE("inv_norm_cdf accuracy and symmetry") {
  CHECK(inv_norm_cdf(0.5) == 0.0);
  CHECK(inv_norm_cdf(0.78) == doctest::Approx(oracle::bisect_quantile(0.78)).epsilon(1e-10));
  CHECK(inv_norm_cdf(0.78) == doctest::Approx(0.7722).epsilon(1e-4));
  for (double p : {1e-300, 1e-20, 1e-9, 1e-4, 0.01, 0.2, 0.4999, 0.6, 0.9, 0.999999}) {
    const double x = inv_norm_cdf(p);
    CHECK(std::isfinite(x));
    CHECK(std::fabs(static_cast<double>(oracle::mp_norm_cdf(x)) - p) <= 1e-9 * std::max(p, 1e-3));
  }
  // 1 - p is exact for these
  for (double p : {0.25, 0.125, 0.0625, 0.375, 1.0 / 1024, 0.5 - 1.0 / 4096}) {
    CHECK(std::fabs(inv_norm_cdf(1 - p) + inv_norm_cdf(p)) <= 1e-12);
  }
  const double lo = inv_norm_cdf(1e-9), hi = inv_norm_cdf(1 - 1e-9);
  CHECK(std::fabs(lo + hi) < 1e-6);
  CHECK(lo == doctest::Approx(oracle::bisect_quantile(1e-9)).epsilon(1e-6));
  CHECK_THROWS_AS(inv_norm_cdf(0.0), ConfigError);
  CHECK_THROWS_AS(inv_norm_cdf(1.0), ConfigError);
  CHECK_THROWS_AS(inv_norm_cdf(std::nan("")), ConfigError);
}

TEST_CASE("wilson_lower") {
  const double z = z_critical(0.001);
  CHECK(wilson_lower(90, 100, 0.0) == 0.9);
  CHECK(wilson_lower(90, 100, z) == doctest::Approx(oracle::mp_wilson_lower(90, 100, z)).epsilon(1e-13));
  CHECK(wilson_lower(90, 100, z) == doctest::Approx(0.7699).epsilon(1e-4));
  CHECK(wilson_lower(50, 50, z) == doctest::Approx(oracle::mp_wilson_lower(50, 50, z)).epsilon(1e-13));
  // k == n reduces to 1 / (1 + z^2 / n)
  CHECK(wilson_lower(50, 50, z) == doctest::Approx(1.0 / (1.0 + z * z / 50)).epsilon(1e-13));
  for (unsigned n : {1u, 7u, 50u, 1000u}) {
    for (unsigned k = 0; k <= n; k += (n / 7 + 1)) {
      const double w = wilson_lower(k, n, 2.0);
      CHECK(w >= 0.0);
      CHECK(w <= double(k) / n);
      CHECK(w == doctest::Approx(std::max(0.0, oracle::mp_wilson_lower(k, n, 2.0))).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(wilson_lower(3, 2, 1.0), ConfigError);
  CHECK_THROWS_AS(wilson_lower(0, 0, 1.0), ConfigError);
  CHECK_THROWS_AS(wilson_lower(1, 2, -1.0), ConfigError);
}

TEST_CASE("certified_radius") {
  CHECK(certified_radius(0.3, 0.5) == 0.0);
  CHECK(certified_radius(0.3, 0.2) == 0.0);
  CHECK(certified_radius(0.3, 0.78) == doctest::Approx(0.2317).epsilon(1e-3));
  CHECK(certified_radius(0.5, 0.9) == doctest::Approx(0.5 * oracle::bisect_quantile(0.9)).epsilon(1e-9));
  CHECK(certified_radius(0.5, 0.9) == doctest::Approx(0.6408).epsilon(1e-4));
  CHECK(std::isinf(certified_radius(0.3, 1.0)));
  double prev = 0.0;
  for (double p = 0.51; p < 0.999; p += 0.01) {
    const double r = certified_radius(0.3, p);
    CHECK(r > prev);
    prev = r;
  }
  CHECK_THROWS_AS(certified_radius(-1.0, 0.7), ConfigError);
}

TEST_CASE("certificate_from_tally") {
  const auto c = certificate_from_tally("x", VoteTally{10, 90, 100}, 0.3, 0.001);
  CHECK(c.label == 1);
  CHECK(c.k_majority == 90);
  CHECK(c.p_lower == doctest::Approx(0.7699).epsilon(1e-4));
  CHECK(c.radius == doctest::Approx(0.2216).epsilon(1e-3));
  CHECK(c.certified);
  const auto tie = certificate_from_tally("t", VoteTally{25, 25, 50}, 0.3, 0.001);
  CHECK(tie.p_hat == 0.5);
  CHECK(tie.p_lower < 0.5);
  CHECK_FALSE(tie.certified);
  CHECK(tie.radius == 0.0);
  const auto all = certificate_from_tally("a", VoteTally{50, 0, 50}, 0.4, 0.001);
  CHECK(all.label == 0);
  CHECK(all.p_lower == doctest::Approx(0.8396).epsilon(1e-4));
  CHECK(all.radius == doctest::Approx(0.4 * inv_norm_cdf(all.p_lower)));
  const auto rec = nlohmann::json::parse(certificate_record(c));
  for (const char* k : {"id", "label", "n", "k_majority", "p_hat", "p_lower", "alpha", "z", "sigma", "radius", "certified"}) {
    CHECK(rec.contains(k));
  }
  CHECK_FALSE(rec.contains("trace"));
}

namespace {

BoostedModel constant_model(std::size_t dim, double base) {
  BoostedModel m;
  m.dim = dim;
  m.base_score = base;
  return m;
}

}  // namespace

TEST_CASE("certify with identity perturbation is unanimous") {
  const auto p = make_partition(100, 50);
  const auto ds = synth_generate(SynthSpec{50, 100, 3.0, 1.0, 2}, p);
  TrainConfig tc;
  tc.n_estimators = 10;
  const auto m = train(ds, tc);
  for (std::size_t i = 0; i < ds.size(); i += 7) {
    const auto c = certify(m, ds.row(i), ds.ids[i], 30, 0.0, 0.001, p, PerturbationConfig::identity());
    CHECK(c.k_majority == 30);
    CHECK(c.label == predict_label(m, ds.row(i)));
  }
}

TEST_CASE("max_radius_search") {
  const auto p = make_partition(100, 50);
  SigmaSearchConfig cfg{0.01, 2.0, 0.01, 50};
  SUBCASE("input-independent model reaches sigma_max") {
    const std::vector<double> x(100, 1.0);
    const auto r = max_radius_search(constant_model(100, 3.0), x, "c", cfg, 0.001, p, PerturbationConfig{});
    CHECK(r.sigma_star == 2.0);
    CHECK(r.radius_max == doctest::Approx(2.0 * inv_norm_cdf(wilson_lower(50, 50, z_critical(0.001)))));
    CHECK(r.trace.size() == 2);
  }
  SUBCASE("coin-flip votes never certify") {
    // Margin is the sum of heavily noised feature values; votes are fair coins.
    BoostedModel m = constant_model(1, 0.0);
    m.learning_rate = 1.0;
    RegressionTree t;
    t.nodes = {TreeNode{false, 0, 0.0, 1, 2, 0.0}, TreeNode{true, 0, 0, -1, -1, -1.0},
               TreeNode{true, 0, 0, -1, -1, 1.0}};
    m.trees.push_back(t);
    const auto p1 = make_partition(1, 1);
    const PerturbationConfig base{1.0, 1.0, 1.0, 4};
    const SigmaSearchConfig big{100.0, 200.0, 1.0, 50};
    std::size_t zero = 0;
    for (int s = 0; s < 40; ++s) {
      const auto r = max_radius_search(m, std::vector<double>{0.0}, "s" + std::to_string(s), big, 0.001, p1, base);
      if (r.sigma_star == 0.0 && r.radius_max == 0.0) {
        ++zero;
        CHECK(r.trace.size() == 1);
      }
    }
    CHECK(zero == 40);
  }
  SUBCASE("agrees with an exhaustive grid sweep") {
    const auto ds = synth_generate(SynthSpec{200, 100, 3.0, 1.0, 5}, p);
    TrainConfig tc;
    tc.n_estimators = 30;
    const auto m = train(ds, tc);
    const PerturbationConfig base{0.8, 1.0, 0.3, 11};
    const SigmaSearchConfig sc{0.05, 4.0, 0.05, 50};
    const auto probe = search_probe_perturbation(base);
    for (std::size_t i = ds.size() - 5; i < ds.size(); ++i) {
      const auto r = max_radius_search(m, ds.row(i), ds.ids[i], sc, 0.001, p, base);
      std::vector<char> pass(sc.grid_last_index() + 1);
      for (std::size_t g = 0; g < pass.size(); ++g) {
        pass[g] = certify(m, ds.row(i), ds.ids[i], sc.n_votes, sc.grid_sigma(g), 0.001, p, probe).certified;
      }
      // The result is a pass -> fail boundary of the sweep (or sigma_max).
      const auto star = static_cast<std::size_t>(std::llround((r.sigma_star - sc.sigma_min) / sc.tolerance));
      if (r.sigma_star == 0.0) {
        CHECK_FALSE(pass[0]);
      } else {
        CHECK(pass[star]);
        CHECK((star + 1 == pass.size() || !pass[star + 1]));
      }
      for (const auto& probe_pt : r.trace) {
        const auto g = static_cast<std::size_t>(std::llround((probe_pt.sigma - sc.sigma_min) / sc.tolerance));
        CHECK(bool(pass[g]) == (probe_pt.p_lower > 0.5));
      }
      const auto again = max_radius_search(m, ds.row(i), ds.ids[i], sc, 0.001, p, base);
      CHECK(again.sigma_star == r.sigma_star);
      CHECK(again.trace.size() == r.trace.size());
      const auto rec = nlohmann::json::parse(certificate_record(
          certify(m, ds.row(i), ds.ids[i], 50, 0.3, 0.001, p, base), &r));
      CHECK(rec["trace"].size() == r.trace.size());
      CHECK(rec.contains("sigma_star"));
    }
  }
  CHECK_THROWS_AS(SigmaSearchConfig({1.0, 0.5, 0.1, 50}).validate(), ConfigError);
  CHECK_THROWS_AS(SigmaSearchConfig({0.1, 0.5, 0.0, 50}).validate(), ConfigError);
}
