#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>

#include "rsmooth/dataset.hpp"
#include "rsmooth/gbdt.hpp"
#include "rsmooth/smoothing.hpp"

namespace rsmooth {

struct AugmentationConfig {
  std::size_t variants_per_sample = 15;
  PerturbationConfig perturbation;
};

struct VoteTally {
  std::size_t votes_benign = 0;
  std::size_t votes_malicious = 0;
  std::size_t n = 0;

  void add(int label) {
    (label == 1 ? votes_malicious : votes_benign) += 1;
    ++n;
  }
  VoteTally& operator+=(const VoteTally& o) {
    votes_benign += o.votes_benign;
    votes_malicious += o.votes_malicious;
    n += o.n;
    return *this;
  }
  friend bool operator==(const VoteTally&, const VoteTally&) = default;
};

struct SmoothedPrediction {
  int label = 1;
  double p_hat = 0.0;
  VoteTally tally;

  std::size_t k_majority() const {
    return label == 1 ? tally.votes_malicious : tally.votes_benign;
  }
};

// Majority label with ties going to malicious; p_hat = winning votes / n.
SmoothedPrediction decide(const VoteTally& tally);

// Original rows in order, followed by M variants of every row the base
// classifier flags as malicious. Variants keep the row's ground-truth label
// and are named "<id>#aug<j>".
LabeledDataset augment_training_set(const LabeledDataset& train, const BoostedModel& bc,
                                    const AugmentationConfig& cfg,
                                    const GroupPartition& partition, std::size_t threads = 1);

// Same trainer and hyperparameters as the base classifier.
BoostedModel train_sc(const LabeledDataset& augmented, const TrainConfig& cfg,
                      TrainingTrace* trace = nullptr);

// Votes predict_label over variants 0..n_votes-1 of x.
SmoothedPrediction smoothed_predict(const BoostedModel& model, std::span<const double> x,
                                    std::size_t n_votes, const PerturbationConfig& perturbation,
                                    const GroupPartition& partition, std::string_view sample_id);

// {id, label, p_hat, votes:{benign, malicious}, n}
std::string prediction_record(std::string_view id, const SmoothedPrediction& p);

}  // namespace rsmooth
