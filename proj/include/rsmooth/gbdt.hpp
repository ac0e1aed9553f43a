#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rsmooth/dataset.hpp"

namespace rsmooth {

struct TreeNode {
  bool is_leaf = true;
  std::uint32_t feature = 0;
  double threshold = 0.0;  // x[feature] <= threshold goes left
  std::int32_t left = -1;
  std::int32_t right = -1;
  double value = 0.0;  // leaf log-odds contribution (before learning rate)

  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

// Flat node array; node 0 is the root and children always follow parents.
struct RegressionTree {
  std::vector<TreeNode> nodes;

  double evaluate(std::span<const double> x) const;
  std::size_t depth() const;
  std::size_t leaf_count() const;
};

struct TrainConfig {
  std::size_t n_estimators = 100;
  std::size_t max_depth = 4;
  double learning_rate = 0.1;
  std::size_t min_samples_leaf = 20;
  double l2_lambda = 1.0;
  std::uint64_t seed = 0;  // exact greedy training draws no randomness; echoed only

  void validate() const;
};

class BoostedModel {
 public:
  std::vector<RegressionTree> trees;
  double learning_rate = 0.1;
  double base_score = 0.0;
  std::size_t dim = 0;
  std::string layout_id;
  TrainConfig train_config;

  // base_score + learning_rate * sum of the first `n_trees` trees.
  double margin(std::span<const double> x, std::size_t n_trees) const;
  double margin(std::span<const double> x) const { return margin(x, trees.size()); }
};

inline double logistic(double m) { return 1.0 / (1.0 + std::exp(-m)); }

// Optional per-round diagnostics, filled when passed to train().
struct TrainingTrace {
  std::vector<double> round_log_loss;  // mean training log-loss after each round
};

// Second-order boosting on logistic loss with exact greedy splits.
BoostedModel train(const LabeledDataset& ds, const TrainConfig& cfg,
                   TrainingTrace* trace = nullptr);

double predict_proba(const BoostedModel& model, std::span<const double> x);
int predict_label(const BoostedModel& model, std::span<const double> x, double threshold = 0.5);

inline constexpr int kModelFormatVersion = 1;

std::string model_to_json(const BoostedModel& model);
BoostedModel model_from_json(const std::string& text);
void save_model(const BoostedModel& model, const std::string& path);
BoostedModel load_model(const std::string& path);

}  // namespace rsmooth
