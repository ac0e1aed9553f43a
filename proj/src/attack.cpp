#include "rsmooth/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "rsmooth/error.hpp"
#include "rsmooth/parallel.hpp"

namespace rsmooth {

namespace {

constexpr int kMaxMetamorphicAttempts = 100;

std::vector<std::size_t> choose(std::vector<std::size_t> pool, std::size_t count, Stream& stream) {
  count = std::min(count, pool.size());
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(stream.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

void check_q(double q) {
  if (!(q >= 0.0 && q <= 1.0)) {
    throw ConfigError("attack group fraction must lie in [0, 1]");
  }
}

void check_dim(std::span<const double> x, const GroupPartition& partition) {
  if (x.size() != partition.dim()) {
    throw DimensionError("attack: vector has " + std::to_string(x.size()) +
                         " features, partition expects " + std::to_string(partition.dim()));
  }
}

double safe_ratio(std::size_t num, std::size_t den, bool& undefined) {
  undefined = den == 0;
  return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string fmt_level(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

}  // namespace

std::string_view to_string(AttackMode mode) {
  switch (mode) {
    case AttackMode::kGroupNoise: return "group_noise";
    case AttackMode::kCombined: return "combined";
    case AttackMode::kMetamorphic: return "metamorphic";
  }
  return "unknown";
}

AttackMode parse_attack_mode(std::string_view name) {
  if (name == "group_noise") return AttackMode::kGroupNoise;
  if (name == "combined") return AttackMode::kCombined;
  if (name == "metamorphic") return AttackMode::kMetamorphic;
  throw ConfigError("unknown attack mode: " + std::string(name));
}

void AttackConfig::validate() const {
  check_q(group_fraction);
  if (!(sigma_attack >= 0.0)) throw ConfigError("sigma_attack must be >= 0");
  if (!(min_cosine > 0.0 && min_cosine <= 1.0)) throw ConfigError("min_cosine must be in (0, 1]");
  if (!(sparsity > 0.0 && sparsity <= 1.0)) throw ConfigError("sparsity must be in (0, 1]");
  if (!(scale >= 0.0)) throw ConfigError("scale must be >= 0");
}

std::size_t ceil_count(double fraction, std::size_t total) {
  const double raw = fraction * static_cast<double>(total);
  return std::min(total, static_cast<std::size_t>(std::ceil(raw - 1e-9)));
}

std::vector<double> group_noise_attack(std::span<const double> x, const GroupPartition& partition,
                                       double q, double sigma, Stream& stream) {
  check_q(q);
  check_dim(x, partition);
  std::vector<double> out(x.begin(), x.end());
  const auto groups =
      choose(all_indices(partition.num_groups()), ceil_count(q, partition.num_groups()), stream);
  if (sigma == 0.0) return out;
  for (auto g : groups) {
    const auto& r = partition.group(g);
    for (std::size_t i = r.start; i < r.end; ++i) {
      out[i] += sigma * stream.gaussian();
    }
  }
  return out;
}

std::vector<double> combined_attack(std::span<const double> x, const GroupPartition& partition,
                                    double q, double sigma, Stream& stream,
                                    std::vector<std::string>* warnings) {
  check_q(q);
  check_dim(x, partition);
  std::vector<double> out(x.begin(), x.end());
  const std::size_t k = partition.num_groups();
  const std::size_t count = ceil_count(q, k);
  if (count == 0) return out;

  const auto ablated = choose(all_indices(k), count, stream);
  std::vector<std::size_t> remaining;
  for (std::size_t g = 0; g < k; ++g) {
    if (!std::binary_search(ablated.begin(), ablated.end(), g)) remaining.push_back(g);
  }
  std::vector<std::size_t> noised;
  if (remaining.size() >= count) {
    noised = choose(std::move(remaining), count, stream);
  } else {
    if (warnings != nullptr) {
      warnings->push_back("combined attack: " + std::to_string(2 * count) + " groups needed, " +
                          std::to_string(k) + " available; noise selection may overlap ablation");
    }
    noised = choose(all_indices(k), count, stream);
  }
  for (auto g : ablated) {
    const auto& r = partition.group(g);
    std::fill(out.begin() + static_cast<std::ptrdiff_t>(r.start),
              out.begin() + static_cast<std::ptrdiff_t>(r.end), 0.0);
  }
  if (sigma == 0.0) return out;
  for (auto g : noised) {
    const auto& r = partition.group(g);
    for (std::size_t i = r.start; i < r.end; ++i) {
      out[i] += sigma * stream.gaussian();
    }
  }
  return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine_similarity: length mismatch");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> metamorphic_simulate(std::span<const double> x, Stream& stream,
                                         double min_cosine, double sparsity, double scale) {
  if (x.empty()) throw ConfigError("metamorphic_simulate: empty vector");
  double sum_sq = 0.0;
  for (double v : x) sum_sq += v * v;
  if (sum_sq == 0.0) throw ConfigError("metamorphic_simulate: input is all-zero");
  const double rms = std::sqrt(sum_sq / static_cast<double>(x.size()));
  const std::size_t touched = std::max<std::size_t>(1, ceil_count(sparsity, x.size()));

  std::vector<double> out(x.begin(), x.end());
  if (scale == 0.0) return out;
  for (int attempt = 0; attempt < kMaxMetamorphicAttempts; ++attempt) {
    std::copy(x.begin(), x.end(), out.begin());
    for (auto i : choose(all_indices(x.size()), touched, stream)) {
      out[i] += scale * rms * stream.gaussian();
    }
    if (cosine_similarity(x, out) >= min_cosine) return out;
  }
  throw Error("cannot satisfy similarity bound");
}

std::vector<double> apply_attack(std::span<const double> x, const GroupPartition& partition,
                                 const AttackConfig& cfg, std::string_view row_id,
                                 std::size_t row_index) {
  Stream stream = Stream::derive(cfg.seed, row_id, row_index, StreamSalt::kAttack);
  switch (cfg.mode) {
    case AttackMode::kGroupNoise:
      return group_noise_attack(x, partition, cfg.group_fraction, cfg.sigma_attack, stream);
    case AttackMode::kCombined:
      return combined_attack(x, partition, cfg.group_fraction, cfg.sigma_attack, stream);
    case AttackMode::kMetamorphic: {
      const bool all_zero = std::all_of(x.begin(), x.end(), [](double v) { return v == 0.0; });
      if (all_zero) return {x.begin(), x.end()};  // nothing to mutate
      return metamorphic_simulate(x, stream, cfg.min_cosine, cfg.sparsity, cfg.scale);
    }
  }
  throw ConfigError("unknown attack mode");
}

EvalReport report_from_confusion(const ConfusionMatrix& cm) {
  EvalReport r;
  r.confusion = cm;
  bool unused = false;
  r.accuracy = safe_ratio(cm.tp + cm.tn, cm.total(), unused);
  r.precision = safe_ratio(cm.tp, cm.tp + cm.fp, r.precision_undefined);
  r.recall = safe_ratio(cm.tp, cm.tp + cm.fn, r.recall_undefined);
  const double denom = r.precision + r.recall;
  r.f1 = denom == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / denom;
  return r;
}

EvalReport evaluate_model(const PredictFn& predict, const LabeledDataset& ds,
                          const GroupPartition& partition, const AttackConfig* attack,
                          std::size_t threads) {
  if (ds.empty()) throw ConfigError("evaluate_model: empty dataset");
  if (attack != nullptr) attack->validate();
  std::vector<int> predicted(ds.size());
  parallel_for(ds.size(), threads, [&](std::size_t i) {
    if (attack == nullptr) {
      predicted[i] = predict(ds.row(i), ds.ids[i]);
    } else {
      const auto x = apply_attack(ds.row(i), partition, *attack, ds.ids[i], i);
      predicted[i] = predict(x, ds.ids[i]);
    }
  });
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const bool truth = ds.labels[i] == 1;
    const bool pred = predicted[i] == 1;
    if (truth && pred) ++cm.tp;
    else if (!truth && !pred) ++cm.tn;
    else if (!truth && pred) ++cm.fp;
    else ++cm.fn;
  }
  EvalReport r = report_from_confusion(cm);
  r.scenario = attack == nullptr ? "clean" : std::string(to_string(attack->mode));
  r.q = attack == nullptr ? 0.0 : attack->group_fraction;
  r.sigma = attack == nullptr ? 0.0 : attack->sigma_attack;
  return r;
}

std::vector<std::pair<EvalReport, EvalReport>> stress_suite(const PredictFn& bc,
                                                            const PredictFn& sc,
                                                            const LabeledDataset& ds,
                                                            const GroupPartition& partition,
                                                            const StressOptions& opts) {
  std::vector<std::pair<EvalReport, EvalReport>> out;
  for (double q : opts.q_levels) {
    AttackConfig cfg;
    cfg.mode = opts.mode;
    cfg.group_fraction = q;
    cfg.sigma_attack = opts.sigma_attack;
    cfg.seed = opts.seed;
    EvalReport b = evaluate_model(bc, ds, partition, &cfg, opts.threads);
    EvalReport s = evaluate_model(sc, ds, partition, &cfg, opts.threads);
    b.model = "BC";
    s.model = "SC";
    out.emplace_back(std::move(b), std::move(s));
  }
  return out;
}

std::string stress_csv(const std::vector<std::pair<EvalReport, EvalReport>>& rows) {
  std::string out = "scenario,model,q,sigma,accuracy,precision,recall,f1\n";
  for (const auto& [b, s] : rows) {
    for (const EvalReport* r : {&b, &s}) {
      out += r->scenario + "," + r->model + "," + fmt_level(r->q) + "," + fmt_level(r->sigma) +
             "," + fmt(r->accuracy) + "," + fmt(r->precision) + "," + fmt(r->recall) + "," +
             fmt(r->f1) + "\n";
    }
  }
  return out;
}

}  // namespace rsmooth
