#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rsmooth/gbdt.hpp"
#include "rsmooth/smoothed.hpp"
#include "rsmooth/smoothing.hpp"

namespace rsmooth {

// Standard normal CDF via erfc; accurate in both tails.
double norm_cdf(double x);

// Inverse standard normal CDF for p in (0, 1). Wichura's AS241 rational
// approximation followed by one Halley step against norm_cdf. Values p > 0.5
// are reflected through 1 - p, which is exact there, so the function is odd
// about 0.5 bit-for-bit whenever 1 - p is representable.
double inv_norm_cdf(double p);

// One-sided critical value Phi^-1(1 - alpha), alpha in (0, 1).
double z_critical(double alpha);

// Lower limit of the Wilson score interval for k successes out of n.
double wilson_lower(std::size_t k, std::size_t n, double z);

// sigma * Phi^-1(p_lower) when p_lower > 0.5, otherwise 0.
double certified_radius(double sigma, double p_lower);

struct Certificate {
  std::string sample_id;
  int label = 0;
  std::size_t n = 0;
  std::size_t k_majority = 0;
  double p_hat = 0.0;
  double p_lower = 0.0;
  double alpha = 0.001;
  double z = 0.0;
  double sigma = 0.0;
  double radius = 0.0;
  bool certified = false;
};

// Builds a certificate from an existing vote tally.
Certificate certificate_from_tally(std::string_view sample_id, const VoteTally& tally,
                                   double sigma, double alpha);

// Runs smoothed_predict with `sigma` overriding base.sigma, then bounds the
// majority probability.
Certificate certify(const BoostedModel& model, std::span<const double> x,
                    std::string_view sample_id, std::size_t n, double sigma, double alpha,
                    const GroupPartition& partition, const PerturbationConfig& base);

struct SigmaSearchConfig {
  double sigma_min = 0.01;
  double sigma_max = 2.0;
  double tolerance = 1e-3;
  std::size_t n_votes = 50;

  void validate() const;
  // Probe grid: sigma_min + i * tolerance, capped at sigma_max.
  std::size_t grid_last_index() const;
  double grid_sigma(std::size_t i) const;
};

struct SearchProbe {
  double sigma = 0.0;
  double p_lower = 0.0;
  double radius = 0.0;
};

struct SearchResult {
  double sigma_star = 0.0;
  double radius_max = 0.0;
  std::vector<SearchProbe> trace;
};

// Perturbation used for every search probe: `base` with its master seed
// re-derived under the search salt. All probes share it, so p_lower(sigma) is
// a deterministic function of sigma for a given sample.
PerturbationConfig search_probe_perturbation(const PerturbationConfig& base);

// Binary search over the sigma grid for the largest sigma whose certificate
// has p_lower > 0.5. radius_max comes from a fresh certificate at sigma_star
// drawn under a separate seed.
SearchResult max_radius_search(const BoostedModel& model, std::span<const double> x,
                               std::string_view sample_id, const SigmaSearchConfig& cfg,
                               double alpha, const GroupPartition& partition,
                               const PerturbationConfig& base);

// One JSON object per certificate; trace is included when non-null.
std::string certificate_record(const Certificate& c, const SearchResult* search = nullptr);

}  // namespace rsmooth
