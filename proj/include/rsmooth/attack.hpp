#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rsmooth/dataset.hpp"
#include "rsmooth/rng.hpp"
#include "rsmooth/smoothing.hpp"

namespace rsmooth {

enum class AttackMode { kGroupNoise, kCombined, kMetamorphic };

std::string_view to_string(AttackMode mode);
AttackMode parse_attack_mode(std::string_view name);

struct AttackConfig {
  AttackMode mode = AttackMode::kGroupNoise;
  double group_fraction = 0.1;
  double sigma_attack = 0.3;
  double min_cosine = 0.99;
  double sparsity = 0.01;  // metamorphic only
  double scale = 0.05;     // metamorphic only
  std::uint64_t seed = 0;

  void validate() const;
};

// ceil(fraction * total), guarded against products like 0.3 * 10 landing a
// hair above an integer.
std::size_t ceil_count(double fraction, std::size_t total);

// Adds N(0, sigma^2) to every feature of ceil(q * K) uniformly chosen groups.
std::vector<double> group_noise_attack(std::span<const double> x, const GroupPartition& partition,
                                       double q, double sigma, Stream& stream);

// Zeroes ceil(q * K) groups and adds N(0, sigma^2) to a second, disjoint
// selection of the same size. When 2 * ceil(q * K) > K the noised selection
// is drawn from all groups instead and a warning is appended.
std::vector<double> combined_attack(std::span<const double> x, const GroupPartition& partition,
                                    double q, double sigma, Stream& stream,
                                    std::vector<std::string>* warnings = nullptr);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Sparse Gaussian micro-mutation accepted only when cosine(x, x') >= min_cosine.
// Throws Error("cannot satisfy similarity bound") after 100 rejected proposals.
std::vector<double> metamorphic_simulate(std::span<const double> x, Stream& stream,
                                         double min_cosine = 0.99, double sparsity = 0.01,
                                         double scale = 0.05);

// Dispatches on cfg.mode with the row's attack stream (cfg.seed, row_id, row_index).
std::vector<double> apply_attack(std::span<const double> x, const GroupPartition& partition,
                                 const AttackConfig& cfg, std::string_view row_id,
                                 std::size_t row_index);

struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t tn = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + tn + fp + fn; }
};

struct EvalReport {
  std::string scenario;
  std::string model;
  double q = 0.0;
  double sigma = 0.0;
  ConfusionMatrix confusion;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Set when the metric's denominator was zero and it was reported as 0.
  bool precision_undefined = false;
  bool recall_undefined = false;
};

EvalReport report_from_confusion(const ConfusionMatrix& cm);

// Maps a feature vector (and its sample id, for seeding) to {0, 1}.
using PredictFn = std::function<int(std::span<const double>, std::string_view)>;

EvalReport evaluate_model(const PredictFn& predict, const LabeledDataset& ds,
                          const GroupPartition& partition, const AttackConfig* attack,
                          std::size_t threads = 1);

struct StressOptions {
  std::vector<double> q_levels{0.1, 0.2, 0.3, 0.4};
  double sigma_attack = 0.3;
  AttackMode mode = AttackMode::kGroupNoise;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

// (BC, SC) reports per attack level, both evaluated on the same attacked rows.
std::vector<std::pair<EvalReport, EvalReport>> stress_suite(const PredictFn& bc,
                                                            const PredictFn& sc,
                                                            const LabeledDataset& ds,
                                                            const GroupPartition& partition,
                                                            const StressOptions& opts);

// Header: scenario,model,q,sigma,accuracy,precision,recall,f1
std::string stress_csv(const std::vector<std::pair<EvalReport, EvalReport>>& rows);

}  // namespace rsmooth
