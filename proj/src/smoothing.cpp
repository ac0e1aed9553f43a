#include "rsmooth/smoothing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rsmooth/error.hpp"

namespace rsmooth {

namespace {

// Partial Fisher-Yates: the first `count` entries of `pool` become a uniform
// sample without replacement.
void partial_shuffle(std::vector<std::size_t>& pool, std::size_t count, Stream& stream) {
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(stream.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
}

}  // namespace

GroupPartition::GroupPartition(std::size_t dim, std::vector<GroupRange> groups)
    : dim_(dim), groups_(std::move(groups)) {
  if (dim_ == 0) {
    throw ConfigError("partition dim must be >= 1");
  }
  std::size_t expected = 0;
  for (const auto& g : groups_) {
    if (g.start != expected || g.end <= g.start) {
      throw ConfigError("partition groups must be non-empty and tile [0, dim) in order");
    }
    expected = g.end;
  }
  if (expected != dim_) {
    throw ConfigError("partition does not cover all " + std::to_string(dim_) + " features");
  }
}

GroupPartition make_partition(std::size_t dim, std::size_t group_size) {
  if (dim == 0 || group_size == 0) {
    throw ConfigError("make_partition: dim and group_size must be >= 1");
  }
  std::vector<GroupRange> groups;
  for (std::size_t start = 0; start < dim; start += group_size) {
    groups.push_back({start, std::min(dim, start + group_size)});
  }
  return GroupPartition(dim, std::move(groups));
}

GroupPartition load_partition(const std::string& path, std::size_t dim) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open partition file: " + path);
  }
  std::vector<GroupRange> groups;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::vector<std::size_t> idx;
    long long v = 0;
    while (ss >> v) {
      if (v < 0) {
        throw FormatError("negative feature index at line " + std::to_string(line_no));
      }
      idx.push_back(static_cast<std::size_t>(v));
    }
    if (!ss.eof()) {
      throw FormatError("malformed partition line " + std::to_string(line_no));
    }
    if (idx.empty()) {
      continue;
    }
    std::sort(idx.begin(), idx.end());
    for (std::size_t i = 1; i < idx.size(); ++i) {
      if (idx[i] != idx[i - 1] + 1) {
        throw FormatError("partition line " + std::to_string(line_no) +
                          " is not a contiguous index run");
      }
    }
    groups.push_back({idx.front(), idx.back() + 1});
  }
  std::sort(groups.begin(), groups.end(),
            [](const GroupRange& a, const GroupRange& b) { return a.start < b.start; });
  return GroupPartition(dim, std::move(groups));
}

void save_partition(const GroupPartition& partition, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write partition file: " + path);
  }
  for (const auto& g : partition.groups()) {
    for (std::size_t i = g.start; i < g.end; ++i) {
      out << i << (i + 1 == g.end ? '\n' : ' ');
    }
  }
}

void PerturbationConfig::validate() const {
  if (!(group_keep_fraction > 0.0 && group_keep_fraction <= 1.0)) {
    throw ConfigError("group_keep_fraction must be in (0, 1]");
  }
  if (!(noise_feature_fraction >= 0.0 && noise_feature_fraction <= 1.0)) {
    throw ConfigError("noise_feature_fraction must be in [0, 1]");
  }
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw ConfigError("sigma must be finite and >= 0");
  }
}

PerturbationConfig PerturbationConfig::identity(std::uint64_t seed) {
  return PerturbationConfig{1.0, 0.0, 0.0, seed};
}

std::size_t round_count(double fraction, std::size_t total) {
  return static_cast<std::size_t>(std::round(fraction * static_cast<double>(total)));
}

AblationMask sample_mask(const GroupPartition& partition, const PerturbationConfig& cfg,
                         Stream& stream) {
  const std::size_t k = partition.num_groups();
  const std::size_t keep = std::clamp<std::size_t>(round_count(cfg.group_keep_fraction, k), 1, k);

  std::vector<std::size_t> pool(k);
  std::iota(pool.begin(), pool.end(), 0);
  partial_shuffle(pool, keep, stream);

  AblationMask mask;
  mask.kept_groups.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep));
  std::sort(mask.kept_groups.begin(), mask.kept_groups.end());

  std::vector<std::size_t> kept_features;
  for (auto g : mask.kept_groups) {
    const auto& r = partition.group(g);
    for (std::size_t i = r.start; i < r.end; ++i) {
      kept_features.push_back(i);
    }
  }
  const std::size_t noised =
      std::min(kept_features.size(), round_count(cfg.noise_feature_fraction, kept_features.size()));
  partial_shuffle(kept_features, noised, stream);
  mask.noised_features.assign(kept_features.begin(),
                              kept_features.begin() + static_cast<std::ptrdiff_t>(noised));
  std::sort(mask.noised_features.begin(), mask.noised_features.end());
  return mask;
}

AblationMask identity_mask(const GroupPartition& partition) {
  AblationMask mask;
  mask.kept_groups.resize(partition.num_groups());
  std::iota(mask.kept_groups.begin(), mask.kept_groups.end(), 0);
  return mask;
}

std::vector<double> apply_ablation(std::span<const double> x, const GroupPartition& partition,
                                   const AblationMask& mask) {
  if (x.size() != partition.dim()) {
    throw DimensionError("apply_ablation: vector has " + std::to_string(x.size()) +
                         " features, partition expects " + std::to_string(partition.dim()));
  }
  std::vector<double> out(x.size(), 0.0);
  for (auto g : mask.kept_groups) {
    const auto& r = partition.group(g);
    std::copy(x.begin() + static_cast<std::ptrdiff_t>(r.start),
              x.begin() + static_cast<std::ptrdiff_t>(r.end),
              out.begin() + static_cast<std::ptrdiff_t>(r.start));
  }
  return out;
}

std::vector<double> inject_noise(std::span<const double> x, const AblationMask& mask,
                                 double sigma, Stream& stream) {
  std::vector<double> out(x.begin(), x.end());
  for (auto i : mask.noised_features) {
    if (i >= out.size()) {
      throw DimensionError("inject_noise: noised feature index out of range");
    }
    // Always draw so the stream position does not depend on sigma.
    const double eps = stream.gaussian();
    if (sigma != 0.0) {
      out[i] += sigma * eps;
    }
  }
  return out;
}

std::vector<double> sample_variant(std::span<const double> x, const GroupPartition& partition,
                                   const PerturbationConfig& cfg, std::string_view sample_id,
                                   std::uint64_t variant_index) {
  Stream stream = Stream::derive(cfg.master_seed, sample_id, variant_index, StreamSalt::kDefense);
  const AblationMask mask = sample_mask(partition, cfg, stream);
  return inject_noise(apply_ablation(x, partition, mask), mask, cfg.sigma, stream);
}

}  // namespace rsmooth
