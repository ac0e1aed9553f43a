#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rsmooth/smoothing.hpp"

namespace rsmooth {

class LayoutRegistry;

// Row-major N x dim matrix with binary labels (0 benign, 1 malicious).
struct LabeledDataset {
  std::size_t dim = 0;
  std::vector<double> values;
  std::vector<int> labels;
  std::vector<std::string> ids;
  std::string layout_id;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values).subspan(i * dim, dim);
  }
  void push_back(std::span<const double> x, int label, std::string id);
  std::size_t count_label(int label) const;

  // Throws FormatError if any invariant is violated.
  void validate() const;
};

// Layout ids: registered PE layouts (e.g. "pe629") or "dense<d>" for generic
// d-dimensional data such as the synthetic generator's output.
std::string dense_layout_id(std::size_t dim);

// Expected dimension for a layout id; 0 when the id is empty (no check).
std::size_t layout_dimension(std::string_view layout_id, const LayoutRegistry* registry = nullptr);

// Files ending in ".jsonl" use the JSON-lines form; anything else is CSV.
LabeledDataset load_dataset(const std::string& path, std::string_view layout_id = {},
                            const LayoutRegistry* registry = nullptr);
void save_dataset(const LabeledDataset& ds, const std::string& path);

LabeledDataset parse_dataset_csv(std::string_view text, std::string_view layout_id = {},
                                 const LayoutRegistry* registry = nullptr);
std::string format_dataset_csv(const LabeledDataset& ds);
LabeledDataset parse_dataset_jsonl(std::string_view text, std::string_view layout_id = {},
                                   const LayoutRegistry* registry = nullptr);
std::string format_dataset_jsonl(const LabeledDataset& ds);

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

// Per class, floor(train_fraction * N_c) rows go to train, the rest to test.
// Both outputs keep the original relative row order.
std::pair<LabeledDataset, LabeledDataset> stratified_split(const LabeledDataset& ds,
                                                           const SplitSpec& spec);

struct SynthSpec {
  std::size_t n_per_class = 1000;
  std::size_t dim = 200;
  double signal_strength = 1.0;
  double noise_std = 1.0;
  std::uint64_t seed = 0;
};

// Benign rows ~ N(0, noise_std^2 I). Malicious rows ~ N(signal_strength * u, noise_std^2 I)
// where u restricted to group g is a fixed unit vector u_g, drawn once per
// group from the seed. Benign rows come first, then malicious.
LabeledDataset synth_generate(const SynthSpec& spec, const GroupPartition& partition);

}  // namespace rsmooth
