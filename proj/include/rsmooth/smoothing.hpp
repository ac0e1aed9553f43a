#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rsmooth/rng.hpp"

namespace rsmooth {

struct GroupRange {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  std::size_t size() const { return end - start; }
  friend bool operator==(const GroupRange&, const GroupRange&) = default;
};

// Disjoint covering of [0, dim) by contiguous index ranges.
class GroupPartition {
 public:
  GroupPartition() = default;
  GroupPartition(std::size_t dim, std::vector<GroupRange> groups);

  std::size_t dim() const { return dim_; }
  std::size_t num_groups() const { return groups_.size(); }
  const std::vector<GroupRange>& groups() const { return groups_; }
  const GroupRange& group(std::size_t g) const { return groups_.at(g); }

  friend bool operator==(const GroupPartition&, const GroupPartition&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<GroupRange> groups_;
};

// ceil(dim / group_size) contiguous groups; the last holds the remainder.
GroupPartition make_partition(std::size_t dim, std::size_t group_size = 50);

// Partition file: one line per group, whitespace-separated feature indices.
// Each line must list a contiguous run; lines must tile [0, dim).
GroupPartition load_partition(const std::string& path, std::size_t dim);
void save_partition(const GroupPartition& partition, const std::string& path);

struct PerturbationConfig {
  double group_keep_fraction = 0.8;
  double noise_feature_fraction = 0.1;
  double sigma = 0.3;
  std::uint64_t master_seed = 0;

  void validate() const;
  // keep = 1, noise fraction = 0, sigma = 0.
  static PerturbationConfig identity(std::uint64_t seed = 0);
};

struct AblationMask {
  std::vector<std::size_t> kept_groups;      // sorted
  std::vector<std::size_t> noised_features;  // sorted, inside kept groups
};

// Round half away from zero on non-negative products, as used for all
// fraction-to-count conversions of the smoothing distribution.
std::size_t round_count(double fraction, std::size_t total);

AblationMask sample_mask(const GroupPartition& partition, const PerturbationConfig& cfg,
                         Stream& stream);

// Mask that keeps every group and noises nothing.
AblationMask identity_mask(const GroupPartition& partition);

// Zeroes features of dropped groups; kept features are copied unchanged.
std::vector<double> apply_ablation(std::span<const double> x, const GroupPartition& partition,
                                   const AblationMask& mask);

// In place on a copy: adds sigma * N(0,1) to each noised feature, in index order.
std::vector<double> inject_noise(std::span<const double> x, const AblationMask& mask,
                                 double sigma, Stream& stream);

// One draw from the smoothing distribution. The stream is derived from
// (cfg.master_seed, sample_id, variant_index) with the defense salt; the mask
// is sampled first, then the noise, from that single stream.
std::vector<double> sample_variant(std::span<const double> x, const GroupPartition& partition,
                                   const PerturbationConfig& cfg, std::string_view sample_id,
                                   std::uint64_t variant_index);

}  // namespace rsmooth
