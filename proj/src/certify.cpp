#include "rsmooth/certify.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include <json.hpp>

#include "rsmooth/error.hpp"
#include "rsmooth/rng.hpp"

namespace rsmooth {

namespace {

// AS241 (PPND16) coefficients, highest degree first.
constexpr std::array kCentralNum = {2.5090809287301226727e+3, 3.3430575583588128105e+4,
                                    6.7265770927008700853e+4, 4.5921953931549871457e+4,
                                    1.3731693765509461125e+4, 1.9715909503065514427e+3,
                                    1.3314166789178437745e+2, 3.3871328727963666080e+0};
constexpr std::array kCentralDen = {5.2264952788528545610e+3, 2.8729085735721942674e+4,
                                    3.9307895800092710610e+4, 2.1213794301586595867e+4,
                                    5.3941960214247511077e+3, 6.8718700749205790830e+2,
                                    4.2313330701600911252e+1, 1.0};
constexpr std::array kNearNum = {7.74545014278341407640e-4, 2.27238449892691845833e-2,
                                 2.41780725177450611770e-1, 1.27045825245236838258e+0,
                                 3.64784832476320460504e+0, 5.76949722146069140550e+0,
                                 4.63033784615654529590e+0, 1.42343711074968357734e+0};
constexpr std::array kNearDen = {1.05075007164441684324e-9, 5.47593808499534494600e-4,
                                 1.51986665636164571966e-2, 1.48103976427480074590e-1,
                                 6.89767334985100004550e-1, 1.67638483018380384940e+0,
                                 2.05319162663775882187e+0, 1.0};
constexpr std::array kFarNum = {2.01033439929228813265e-7, 2.71155556874348757815e-5,
                                1.24266094738807843860e-3, 2.65321895265761230930e-2,
                                2.96560571828504891230e-1, 1.78482653991729133580e+0,
                                5.46378491116411436990e+0, 6.65790464350110377720e+0};
constexpr std::array kFarDen = {2.04426310338993978564e-15, 1.42151175831644588870e-7,
                                1.84631831751005468180e-5, 7.86869131145613259100e-4,
                                1.48753612908506148525e-2, 1.36929880922735805310e-1,
                                5.99832206555887937690e-1, 1.0};

template <std::size_t N>
double horner(const std::array<double, N>& c, double x) {
  double r = 0.0;
  for (double v : c) r = r * x + v;
  return r;
}

// Lower-half quantile, p in (0, 0.5].
double lower_quantile(double p) {
  const double q = p - 0.5;
  double x = 0.0;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    x = q * horner(kCentralNum, r) / horner(kCentralDen, r);
  } else {
    double r = std::sqrt(-std::log(p));
    if (r <= 5.0) {
      r -= 1.6;
      x = -horner(kNearNum, r) / horner(kNearDen, r);
    } else {
      r -= 5.0;
      x = -horner(kFarNum, r) / horner(kFarDen, r);
    }
  }
  // Halley refinement; in the lower half norm_cdf keeps full relative precision.
  const double err = norm_cdf(x) - p;
  const double u = err * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

nlohmann::ordered_json real_or_null(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double inv_norm_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw ConfigError("inv_norm_cdf: p must lie in (0, 1)");
  }
  if (p == 0.5) return 0.0;
  return p < 0.5 ? lower_quantile(p) : -lower_quantile(1.0 - p);
}

double z_critical(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError("alpha must lie in (0, 1)");
  }
  // Phi^-1(1 - alpha) == -Phi^-1(alpha) without rounding 1 - alpha.
  return -inv_norm_cdf(alpha);
}

double wilson_lower(std::size_t k, std::size_t n, double z) {
  if (n == 0 || k > n) {
    throw ConfigError("wilson_lower: need n >= 1 and 0 <= k <= n");
  }
  if (!(z >= 0.0) || !std::isfinite(z)) {
    throw ConfigError("wilson_lower: z must be finite and >= 0");
  }
  const double nn = static_cast<double>(n);
  const double p_hat = static_cast<double>(k) / nn;
  if (z == 0.0) return p_hat;
  const double z2 = z * z;
  const double centre = p_hat + z2 / (2.0 * nn);
  const double spread = z * std::sqrt(p_hat * (1.0 - p_hat) / nn + z2 / (4.0 * nn * nn));
  const double lower = (centre - spread) / (1.0 + z2 / nn);
  return std::clamp(lower, 0.0, p_hat);
}

double certified_radius(double sigma, double p_lower) {
  if (!(sigma >= 0.0) || !(p_lower >= 0.0 && p_lower <= 1.0)) {
    throw ConfigError("certified_radius: need sigma >= 0 and p_lower in [0, 1]");
  }
  if (p_lower <= 0.5) return 0.0;
  if (p_lower == 1.0) return sigma == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return sigma * inv_norm_cdf(p_lower);
}

Certificate certificate_from_tally(std::string_view sample_id, const VoteTally& tally,
                                   double sigma, double alpha) {
  const SmoothedPrediction pred = decide(tally);
  Certificate c;
  c.sample_id = std::string(sample_id);
  c.label = pred.label;
  c.n = tally.n;
  c.k_majority = pred.k_majority();
  c.p_hat = pred.p_hat;
  c.alpha = alpha;
  c.z = z_critical(alpha);
  c.sigma = sigma;
  c.p_lower = wilson_lower(c.k_majority, c.n, c.z);
  c.certified = c.p_lower > 0.5;
  c.radius = c.certified ? certified_radius(sigma, c.p_lower) : 0.0;
  return c;
}

Certificate certify(const BoostedModel& model, std::span<const double> x,
                    std::string_view sample_id, std::size_t n, double sigma, double alpha,
                    const GroupPartition& partition, const PerturbationConfig& base) {
  PerturbationConfig pc = base;
  pc.sigma = sigma;
  const SmoothedPrediction pred = smoothed_predict(model, x, n, pc, partition, sample_id);
  return certificate_from_tally(sample_id, pred.tally, sigma, alpha);
}

void SigmaSearchConfig::validate() const {
  if (!(sigma_min > 0.0) || !(sigma_min < sigma_max) || !std::isfinite(sigma_max)) {
    throw ConfigError("sigma search: need 0 < sigma_min < sigma_max");
  }
  if (!(tolerance > 0.0)) throw ConfigError("sigma search: tolerance must be > 0");
  if (n_votes < 1) throw ConfigError("sigma search: n_votes must be >= 1");
}

std::size_t SigmaSearchConfig::grid_last_index() const {
  return static_cast<std::size_t>(std::ceil((sigma_max - sigma_min) / tolerance - 1e-9));
}

double SigmaSearchConfig::grid_sigma(std::size_t i) const {
  return std::min(sigma_max, sigma_min + static_cast<double>(i) * tolerance);
}

PerturbationConfig search_probe_perturbation(const PerturbationConfig& base) {
  PerturbationConfig pc = base;
  pc.master_seed = mix64(base.master_seed ^ static_cast<std::uint64_t>(StreamSalt::kSearch));
  return pc;
}

SearchResult max_radius_search(const BoostedModel& model, std::span<const double> x,
                               std::string_view sample_id, const SigmaSearchConfig& cfg,
                               double alpha, const GroupPartition& partition,
                               const PerturbationConfig& base) {
  cfg.validate();
  const PerturbationConfig probe_cfg = search_probe_perturbation(base);
  SearchResult result;
  auto passes = [&](std::size_t i) {
    const double sigma = cfg.grid_sigma(i);
    const Certificate c = certify(model, x, sample_id, cfg.n_votes, sigma, alpha, partition,
                                  probe_cfg);
    result.trace.push_back({sigma, c.p_lower, c.radius});
    return c.certified;
  };

  const std::size_t last = cfg.grid_last_index();
  if (!passes(0)) {
    return result;
  }
  std::size_t lo = 0;
  if (passes(last)) {
    lo = last;
  } else {
    // Invariant: grid[lo] certifies, grid[hi] does not.
    std::size_t hi = last;
    while (hi - lo > 1) {
      const std::size_t mid = lo + (hi - lo) / 2;
      (passes(mid) ? lo : hi) = mid;
    }
  }
  result.sigma_star = cfg.grid_sigma(lo);

  PerturbationConfig fresh = base;
  fresh.master_seed = mix64(base.master_seed ^ static_cast<std::uint64_t>(StreamSalt::kSearchFinal));
  const Certificate final_cert = certify(model, x, sample_id, cfg.n_votes, result.sigma_star,
                                         alpha, partition, fresh);
  result.radius_max = final_cert.radius;
  return result;
}

std::string certificate_record(const Certificate& c, const SearchResult* search) {
  nlohmann::ordered_json rec;
  rec["id"] = c.sample_id;
  rec["label"] = c.label;
  rec["n"] = c.n;
  rec["k_majority"] = c.k_majority;
  rec["p_hat"] = c.p_hat;
  rec["p_lower"] = c.p_lower;
  rec["alpha"] = c.alpha;
  rec["z"] = c.z;
  rec["sigma"] = c.sigma;
  rec["radius"] = real_or_null(c.radius);
  rec["certified"] = c.certified;
  if (search != nullptr) {
    rec["sigma_star"] = search->sigma_star;
    rec["radius_max"] = real_or_null(search->radius_max);
    auto trace = nlohmann::ordered_json::array();
    for (const auto& p : search->trace) {
      trace.push_back({{"sigma", p.sigma}, {"p_lower", p.p_lower}, {"radius", real_or_null(p.radius)}});
    }
    rec["trace"] = std::move(trace);
  }
  return rec.dump();
}

}  // namespace rsmooth
