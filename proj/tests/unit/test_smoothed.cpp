#include <doctest.h>

#include "rsmooth/error.hpp"
#include "rsmooth/smoothed.hpp"

#include <json.hpp>

using namespace rsmooth;

namespace {

// One stump on feature 0: x0 <= t -> strongly benign, else strongly malicious.
BoostedModel stump(std::size_t dim, double t) {
  BoostedModel m;
  m.dim = dim;
  m.learning_rate = 1.0;
  RegressionTree tree;
  tree.nodes = {TreeNode{false, 0, t, 1, 2, 0.0}, TreeNode{true, 0, 0, -1, -1, -5.0},
                TreeNode{true, 0, 0, -1, -1, 5.0}};
  m.trees.push_back(tree);
  return m;
}

}  // namespace

TEST_CASE("decide") {
  VoteTally t{20, 30, 50};
  auto p = decide(t);
  CHECK(p.label == 1);
  CHECK(p.p_hat == 0.6);
  CHECK(p.k_majority() == 30);
  p = decide(VoteTally{25, 25, 50});
  CHECK(p.label == 1);
  CHECK(p.p_hat == 0.5);
  p = decide(VoteTally{40, 10, 50});
  CHECK(p.label == 0);
  CHECK(p.k_majority() == 40);
  CHECK_THROWS_AS(decide(VoteTally{1, 1, 3}), ConfigError);
  CHECK_THROWS_AS(decide(VoteTally{}), ConfigError);
}

TEST_CASE("augment_training_set selects by prediction and keeps labels") {
  const auto p = make_partition(4, 2);
  LabeledDataset ds;
  ds.dim = 4;
  ds.push_back(std::vector<double>{1, 1, 1, 1}, 1, "m0");
  ds.push_back(std::vector<double>{-1, 1, 1, 1}, 0, "b0");
  ds.push_back(std::vector<double>{2, 1, 1, 1}, 0, "b1");  // benign, predicted malicious
  const auto bc = stump(4, 0.0);
  const AugmentationConfig cfg{15, PerturbationConfig{}};
  const auto aug = augment_training_set(ds, bc, cfg, p);
  REQUIRE(aug.size() == 3 + 2 * 15);
  for (std::size_t i = 0; i < 3; ++i) CHECK(aug.ids[i] == ds.ids[i]);
  CHECK(aug.ids[3] == "m0#aug0");
  CHECK(aug.ids[17] == "m0#aug14");
  CHECK(aug.ids[18] == "b1#aug0");
  CHECK(aug.labels[17] == 1);
  CHECK(aug.labels[18] == 0);
  for (std::size_t j = 0; j < 15; ++j) {
    const auto v = sample_variant(ds.row(0), p, cfg.perturbation, "m0", j);
    CHECK(std::equal(v.begin(), v.end(), aug.row(3 + j).begin()));
  }
  const auto again = augment_training_set(ds, bc, cfg, p, 4);
  CHECK(again.values == aug.values);
  CHECK(again.ids == aug.ids);

  const auto none = augment_training_set(ds, stump(4, 100.0), cfg, p);
  CHECK(none.values == ds.values);
  CHECK(none.ids == ds.ids);

  LabeledDataset ten;
  ten.dim = 4;
  for (int i = 0; i < 10; ++i) ten.push_back(std::vector<double>{5, 0, 0, 0}, 1, std::to_string(i));
  CHECK(augment_training_set(ten, bc, cfg, p).size() == 160);
  CHECK_THROWS_AS(augment_training_set(ten, stump(3, 0.0), cfg, p), ConfigError);
  CHECK_THROWS_AS(augment_training_set(ten, bc, AugmentationConfig{0, {}}, p), ConfigError);
}

TEST_CASE("train_sc on an unaugmented set equals a retrained base model") {
  const auto p = make_partition(100, 50);
  const auto ds = synth_generate(SynthSpec{100, 100, 2.0, 1.0, 3}, p);
  TrainConfig cfg;
  cfg.n_estimators = 10;
  CHECK(model_to_json(train_sc(ds, cfg)) == model_to_json(train(ds, cfg)));
}

TEST_CASE("smoothed_predict") {
  const auto p = make_partition(4, 2);
  const auto m = stump(4, 0.0);
  const std::vector<double> x{1, 1, 1, 1};
  SUBCASE("identity perturbation reproduces the base label") {
    const auto r = smoothed_predict(m, x, 50, PerturbationConfig::identity(), p, "s");
    CHECK(r.label == 1);
    CHECK(r.tally.votes_malicious == 50);
    CHECK(r.p_hat == 1.0);
  }
  SUBCASE("ablating the decisive group flips that vote") {
    PerturbationConfig cfg{0.5, 0.0, 0.0, 1};
    const auto r = smoothed_predict(m, x, 400, cfg, p, "s");
    CHECK(r.tally.n == 400);
    CHECK(r.tally.votes_benign + r.tally.votes_malicious == 400);
    // feature 0 survives with probability 1/2
    CHECK(std::abs(double(r.tally.votes_malicious) - 200.0) < 60.0);
    CHECK(smoothed_predict(m, x, 400, cfg, p, "s").tally == r.tally);
  }
  CHECK_THROWS_AS(smoothed_predict(m, x, 0, PerturbationConfig{}, p, "s"), ConfigError);
}

TEST_CASE("prediction_record") {
  const auto rec = nlohmann::json::parse(prediction_record("a", decide(VoteTally{10, 40, 50})));
  CHECK(rec["id"] == "a");
  CHECK(rec["label"] == 1);
  CHECK(rec["p_hat"] == 0.8);
  CHECK(rec["votes"]["benign"] == 10);
  CHECK(rec["votes"]["malicious"] == 40);
  CHECK(rec["n"] == 50);
}
