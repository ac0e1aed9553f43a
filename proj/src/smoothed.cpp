#include "rsmooth/smoothed.hpp"

#include <json.hpp>

#include "rsmooth/error.hpp"
#include "rsmooth/parallel.hpp"

namespace rsmooth {

SmoothedPrediction decide(const VoteTally& tally) {
  if (tally.n == 0 || tally.votes_benign + tally.votes_malicious != tally.n) {
    throw ConfigError("vote tally must be non-empty and consistent");
  }
  SmoothedPrediction p;
  p.tally = tally;
  p.label = tally.votes_malicious >= tally.votes_benign ? 1 : 0;
  p.p_hat = static_cast<double>(p.k_majority()) / static_cast<double>(tally.n);
  return p;
}

LabeledDataset augment_training_set(const LabeledDataset& train, const BoostedModel& bc,
                                    const AugmentationConfig& cfg,
                                    const GroupPartition& partition, std::size_t threads) {
  if (cfg.variants_per_sample < 1) {
    throw ConfigError("variants_per_sample must be >= 1");
  }
  cfg.perturbation.validate();
  if (bc.dim != train.dim || (!bc.layout_id.empty() && !train.layout_id.empty() &&
                              bc.layout_id != train.layout_id)) {
    throw ConfigError("layout mismatch: base classifier " + bc.layout_id + " vs dataset " +
                      train.layout_id);
  }
  if (partition.dim() != train.dim) {
    throw ConfigError("layout mismatch: partition covers " + std::to_string(partition.dim()) +
                      " features, dataset has " + std::to_string(train.dim));
  }

  std::vector<char> selected(train.size(), 0);
  parallel_for(train.size(), threads,
               [&](std::size_t i) { selected[i] = predict_label(bc, train.row(i)) == 1; });

  std::vector<std::size_t> chosen;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (selected[i]) chosen.push_back(i);
  }
  const std::size_t m = cfg.variants_per_sample;
  std::vector<double> variants(chosen.size() * m * train.dim);
  parallel_for(chosen.size() * m, threads, [&](std::size_t job) {
    const std::size_t row = chosen[job / m];
    const auto v = sample_variant(train.row(row), partition, cfg.perturbation, train.ids[row],
                                  job % m);
    std::copy(v.begin(), v.end(), variants.begin() + static_cast<std::ptrdiff_t>(job * train.dim));
  });

  LabeledDataset out = train;
  out.values.reserve(out.values.size() + variants.size());
  for (std::size_t job = 0; job < chosen.size() * m; ++job) {
    const std::size_t row = chosen[job / m];
    out.push_back(std::span<const double>(variants).subspan(job * train.dim, train.dim),
                  train.labels[row], train.ids[row] + "#aug" + std::to_string(job % m));
  }
  return out;
}

BoostedModel train_sc(const LabeledDataset& augmented, const TrainConfig& cfg,
                      TrainingTrace* trace) {
  return train(augmented, cfg, trace);
}

SmoothedPrediction smoothed_predict(const BoostedModel& model, std::span<const double> x,
                                    std::size_t n_votes, const PerturbationConfig& perturbation,
                                    const GroupPartition& partition, std::string_view sample_id) {
  if (n_votes < 1) {
    throw ConfigError("n_votes must be >= 1");
  }
  perturbation.validate();
  VoteTally tally;
  for (std::size_t i = 0; i < n_votes; ++i) {
    tally.add(predict_label(model, sample_variant(x, partition, perturbation, sample_id, i)));
  }
  return decide(tally);
}

std::string prediction_record(std::string_view id, const SmoothedPrediction& p) {
  nlohmann::ordered_json rec;
  rec["id"] = id;
  rec["label"] = p.label;
  rec["p_hat"] = p.p_hat;
  rec["votes"] = {{"benign", p.tally.votes_benign}, {"malicious", p.tally.votes_malicious}};
  rec["n"] = p.tally.n;
  return rec.dump();
}

}  // namespace rsmooth
