#include "rsmooth/gbdt.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "rsmooth/error.hpp"

namespace rsmooth {

namespace {

constexpr double kMinSplitGain = 1e-10;

struct NodeStats {
  double grad = 0.0;
  double hess = 0.0;
  std::size_t count = 0;
};

struct SplitCandidate {
  double gain = kMinSplitGain;
  std::int64_t feature = -1;
  double threshold = 0.0;
};

// Running left-side sums while scanning one feature for one node.
struct ScanState {
  double grad = 0.0;
  double hess = 0.0;
  std::size_t count = 0;
  double last_value = 0.0;
};

double leaf_weight(const NodeStats& s, double lambda) { return -s.grad / (s.hess + lambda); }

double score(double g, double h, double lambda) { return g * g / (h + lambda); }

double split_threshold(double lo, double hi) {
  const double mid = lo + (hi - lo) / 2.0;
  return (mid >= lo && mid < hi) ? mid : lo;
}

double mean_log_loss(std::span<const double> margins, std::span<const int> labels) {
  double total = 0.0;
  for (std::size_t i = 0; i < margins.size(); ++i) {
    // log(1 + exp(-m)) for y=1, log(1 + exp(m)) for y=0, computed stably.
    const double m = labels[i] == 1 ? margins[i] : -margins[i];
    total += m > 0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m));
  }
  return total / static_cast<double>(margins.size());
}

class TreeBuilder {
 public:
  TreeBuilder(const LabeledDataset& ds, const TrainConfig& cfg,
              const std::vector<std::vector<std::uint32_t>>& order)
      : ds_(ds), cfg_(cfg), order_(order), node_of_(ds.size(), 0) {}

  RegressionTree build(std::span<const double> grad, std::span<const double> hess) {
    RegressionTree tree;
    tree.nodes.emplace_back();
    stats_.assign(1, NodeStats{});
    std::fill(node_of_.begin(), node_of_.end(), 0);
    for (std::size_t r = 0; r < ds_.size(); ++r) {
      stats_[0].grad += grad[r];
      stats_[0].hess += hess[r];
      ++stats_[0].count;
    }

    std::vector<std::int32_t> active{0};
    for (std::size_t depth = 0; depth < cfg_.max_depth && !active.empty(); ++depth) {
      const auto best = find_splits(active, grad, hess);
      std::vector<std::int32_t> next;
      for (std::size_t s = 0; s < active.size(); ++s) {
        if (best[s].feature < 0) continue;
        const auto id = active[s];
        const auto left = static_cast<std::int32_t>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        stats_.resize(tree.nodes.size());
        auto& n = tree.nodes[static_cast<std::size_t>(id)];
        n.is_leaf = false;
        n.feature = static_cast<std::uint32_t>(best[s].feature);
        n.threshold = best[s].threshold;
        n.left = left;
        n.right = left + 1;
        next.push_back(left);
        next.push_back(left + 1);
      }
      if (next.empty()) break;
      // Route rows of split nodes to their children and accumulate child stats.
      for (std::size_t r = 0; r < ds_.size(); ++r) {
        const auto& n = tree.nodes[static_cast<std::size_t>(node_of_[r])];
        if (n.is_leaf) continue;
        const bool go_left = ds_.values[r * ds_.dim + n.feature] <= n.threshold;
        const auto child = go_left ? n.left : n.right;
        node_of_[r] = child;
        auto& cs = stats_[static_cast<std::size_t>(child)];
        cs.grad += grad[r];
        cs.hess += hess[r];
        ++cs.count;
      }
      active = std::move(next);
    }
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
      if (tree.nodes[i].is_leaf) {
        tree.nodes[i].value = leaf_weight(stats_[i], cfg_.l2_lambda);
      }
    }
    return tree;
  }

  // Node index each training row landed in after the last build().
  const std::vector<std::int32_t>& node_of() const { return node_of_; }

 private:
  std::vector<SplitCandidate> find_splits(const std::vector<std::int32_t>& active,
                                          std::span<const double> grad,
                                          std::span<const double> hess) {
    std::vector<std::int32_t> slot(stats_.size(), -1);
    for (std::size_t s = 0; s < active.size(); ++s) {
      slot[static_cast<std::size_t>(active[s])] = static_cast<std::int32_t>(s);
    }
    std::vector<SplitCandidate> best(active.size());
    std::vector<ScanState> scan(active.size());
    const double lambda = cfg_.l2_lambda;
    const std::size_t min_leaf = cfg_.min_samples_leaf;
    // Features ascending, thresholds ascending, strict improvement: ties go to
    // the lowest feature index, then the lowest threshold.
    for (std::size_t f = 0; f < ds_.dim; ++f) {
      std::fill(scan.begin(), scan.end(), ScanState{});
      for (const auto r : order_[f]) {
        const auto s = slot[static_cast<std::size_t>(node_of_[r])];
        if (s < 0) continue;
        auto& st = scan[static_cast<std::size_t>(s)];
        const auto& total = stats_[static_cast<std::size_t>(active[static_cast<std::size_t>(s)])];
        const double v = ds_.values[static_cast<std::size_t>(r) * ds_.dim + f];
        if (st.count >= min_leaf && total.count - st.count >= min_leaf && v > st.last_value) {
          const double gr = total.grad - st.grad;
          const double hr = total.hess - st.hess;
          const double gain = score(st.grad, st.hess, lambda) + score(gr, hr, lambda) -
                              score(total.grad, total.hess, lambda);
          auto& b = best[static_cast<std::size_t>(s)];
          if (gain > b.gain) {
            b.gain = gain;
            b.feature = static_cast<std::int64_t>(f);
            b.threshold = split_threshold(st.last_value, v);
          }
        }
        st.grad += grad[r];
        st.hess += hess[r];
        ++st.count;
        st.last_value = v;
      }
    }
    return best;
  }

  const LabeledDataset& ds_;
  const TrainConfig& cfg_;
  const std::vector<std::vector<std::uint32_t>>& order_;
  std::vector<std::int32_t> node_of_;
  std::vector<NodeStats> stats_;
};

nlohmann::json config_to_json(const TrainConfig& c) {
  return {{"n_estimators", c.n_estimators}, {"max_depth", c.max_depth},
          {"learning_rate", c.learning_rate}, {"min_samples_leaf", c.min_samples_leaf},
          {"l2_lambda", c.l2_lambda}, {"seed", c.seed}};
}

}  // namespace

double RegressionTree::evaluate(std::span<const double> x) const {
  std::size_t i = 0;
  while (!nodes[i].is_leaf) {
    const auto& n = nodes[i];
    i = static_cast<std::size_t>(x[n.feature] <= n.threshold ? n.left : n.right);
  }
  return nodes[i].value;
}

std::size_t RegressionTree::depth() const {
  std::vector<std::size_t> d(nodes.size(), 0);
  std::size_t deepest = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    deepest = std::max(deepest, d[i]);
    if (!nodes[i].is_leaf) {
      d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
    }
  }
  return deepest;
}

std::size_t RegressionTree::leaf_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf; }));
}

void TrainConfig::validate() const {
  if (n_estimators < 1) throw ConfigError("n_estimators must be >= 1");
  if (max_depth < 1) throw ConfigError("max_depth must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (min_samples_leaf < 1) throw ConfigError("min_samples_leaf must be >= 1");
  if (!(l2_lambda >= 0.0)) throw ConfigError("l2_lambda must be >= 0");
}

double BoostedModel::margin(std::span<const double> x, std::size_t n_trees) const {
  if (x.size() != dim) {
    throw DimensionError("model expects " + std::to_string(dim) + " features, got " +
                         std::to_string(x.size()));
  }
  double sum = 0.0;
  const std::size_t k = std::min(n_trees, trees.size());
  for (std::size_t t = 0; t < k; ++t) {
    sum += trees[t].evaluate(x);
  }
  return base_score + learning_rate * sum;
}

BoostedModel train(const LabeledDataset& ds, const TrainConfig& cfg, TrainingTrace* trace) {
  cfg.validate();
  ds.validate();
  const std::size_t n = ds.size();
  const std::size_t positives = ds.count_label(1);
  if (positives == 0 || positives == n) {
    throw ConfigError("degenerate labels: training data must contain both classes");
  }
  if (n < 2 * cfg.min_samples_leaf) {
    throw ConfigError("training set smaller than 2 * min_samples_leaf");
  }

  BoostedModel model;
  model.dim = ds.dim;
  model.layout_id = ds.layout_id;
  model.learning_rate = cfg.learning_rate;
  model.train_config = cfg;
  const double p1 = static_cast<double>(positives) / static_cast<double>(n);
  model.base_score = std::log(p1 / (1.0 - p1));

  std::vector<std::vector<std::uint32_t>> order(ds.dim, std::vector<std::uint32_t>(n));
  for (std::size_t f = 0; f < ds.dim; ++f) {
    auto& o = order[f];
    std::iota(o.begin(), o.end(), 0U);
    std::stable_sort(o.begin(), o.end(), [&](std::uint32_t a, std::uint32_t b) {
      return ds.values[a * ds.dim + f] < ds.values[b * ds.dim + f];
    });
  }

  std::vector<double> margins(n, model.base_score);
  std::vector<double> grad(n);
  std::vector<double> hess(n);
  TreeBuilder builder(ds, cfg, order);
  for (std::size_t round = 0; round < cfg.n_estimators; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = logistic(margins[i]);
      grad[i] = p - static_cast<double>(ds.labels[i]);
      hess[i] = p * (1.0 - p);
    }
    RegressionTree tree = builder.build(grad, hess);
    const auto& node_of = builder.node_of();
    for (std::size_t i = 0; i < n; ++i) {
      margins[i] += cfg.learning_rate * tree.nodes[static_cast<std::size_t>(node_of[i])].value;
    }
    model.trees.push_back(std::move(tree));
    if (trace != nullptr) {
      trace->round_log_loss.push_back(mean_log_loss(margins, ds.labels));
    }
  }
  return model;
}

double predict_proba(const BoostedModel& model, std::span<const double> x) {
  return logistic(model.margin(x));
}

int predict_label(const BoostedModel& model, std::span<const double> x, double threshold) {
  return predict_proba(model, x) >= threshold ? 1 : 0;
}

std::string model_to_json(const BoostedModel& model) {
  nlohmann::json doc;
  doc["version"] = kModelFormatVersion;
  doc["layout_id"] = model.layout_id;
  doc["dim"] = model.dim;
  doc["base_score"] = model.base_score;
  doc["learning_rate"] = model.learning_rate;
  doc["train_config"] = config_to_json(model.train_config);
  auto trees = nlohmann::json::array();
  for (const auto& t : model.trees) {
    auto nodes = nlohmann::json::array();
    for (const auto& n : t.nodes) {
      if (n.is_leaf) {
        nodes.push_back({{"kind", "leaf"}, {"v", n.value}});
      } else {
        nodes.push_back(
            {{"kind", "split"}, {"f", n.feature}, {"t", n.threshold}, {"l", n.left}, {"r", n.right}});
      }
    }
    trees.push_back(std::move(nodes));
  }
  doc["trees"] = std::move(trees);
  return doc.dump() + "\n";
}

BoostedModel model_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    const int version = doc.at("version").get<int>();
    if (version != kModelFormatVersion) {
      throw FormatError("unsupported model version " + std::to_string(version));
    }
    BoostedModel m;
    m.layout_id = doc.at("layout_id").get<std::string>();
    m.dim = doc.at("dim").get<std::size_t>();
    m.base_score = doc.at("base_score").get<double>();
    m.learning_rate = doc.at("learning_rate").get<double>();
    if (!std::isfinite(m.base_score) || !std::isfinite(m.learning_rate)) {
      throw FormatError("non-finite model scalars");
    }
    if (doc.contains("train_config")) {
      const auto& c = doc["train_config"];
      m.train_config.n_estimators = c.at("n_estimators").get<std::size_t>();
      m.train_config.max_depth = c.at("max_depth").get<std::size_t>();
      m.train_config.learning_rate = c.at("learning_rate").get<double>();
      m.train_config.min_samples_leaf = c.at("min_samples_leaf").get<std::size_t>();
      m.train_config.l2_lambda = c.at("l2_lambda").get<double>();
      m.train_config.seed = c.at("seed").get<std::uint64_t>();
    }
    for (const auto& jt : doc.at("trees")) {
      RegressionTree t;
      for (const auto& jn : jt) {
        TreeNode n;
        const auto kind = jn.at("kind").get<std::string>();
        if (kind == "leaf") {
          n.value = jn.at("v").get<double>();
          if (!std::isfinite(n.value)) throw FormatError("non-finite leaf value");
        } else if (kind == "split") {
          n.is_leaf = false;
          n.feature = jn.at("f").get<std::uint32_t>();
          n.threshold = jn.at("t").get<double>();
          n.left = jn.at("l").get<std::int32_t>();
          n.right = jn.at("r").get<std::int32_t>();
        } else {
          throw FormatError("unknown node kind '" + kind + "'");
        }
        t.nodes.push_back(n);
      }
      if (t.nodes.empty()) throw FormatError("empty tree");
      for (std::size_t i = 0; i < t.nodes.size(); ++i) {
        const auto& n = t.nodes[i];
        if (n.is_leaf) continue;
        const auto size = static_cast<std::int32_t>(t.nodes.size());
        if (n.left <= static_cast<std::int32_t>(i) || n.right <= static_cast<std::int32_t>(i) ||
            n.left >= size || n.right >= size || n.feature >= m.dim ||
            !std::isfinite(n.threshold)) {
          throw FormatError("invalid split node in tree " + std::to_string(m.trees.size()));
        }
      }
      m.trees.push_back(std::move(t));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model schema violation: ") + e.what());
  }
}

void save_model(const BoostedModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model: " + path);
  out << model_to_json(model);
  if (!out) throw IoError("write failed: " + path);
}

BoostedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

}  // namespace rsmooth
