#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "rsmooth/attack.hpp"
#include "rsmooth/certify.hpp"
#include "rsmooth/dataset.hpp"
#include "rsmooth/gbdt.hpp"
#include "rsmooth/smoothed.hpp"

namespace rsmooth {

// Every knob of a run. Resolution order, lowest to highest precedence:
// built-in defaults, --preset, --config file, individual command-line flags.
struct RunConfig {
  std::string layout_id;  // empty: accept whatever dimension the data has
  std::size_t group_size = 50;
  std::string partition_file;
  PerturbationConfig perturbation;
  std::size_t variants_per_sample = 15;
  TrainConfig train;
  double alpha = 0.001;
  std::size_t n_votes = 50;
  SigmaSearchConfig search;
  AttackMode attack_mode = AttackMode::kGroupNoise;
  double attack_sigma = 0.3;
  std::vector<double> attack_levels{0.1, 0.2, 0.3, 0.4};
  SynthSpec synth;
  double train_fraction = 0.8;
  std::uint64_t master_seed = 0;
  std::size_t threads = 0;

  // Sets one key; throws ConfigError on unknown keys or unparsable values.
  void set(std::string_view key, std::string_view value);
  void apply_preset(std::string_view name);
  void apply_file(const std::string& path);
  void apply_text(std::string_view text);

  // Pushes master_seed into every derived seed (perturbation, train, synth).
  void propagate_seed();

  // Flat "key = value" dump of every key in a fixed order.
  std::string to_text() const;
  static std::vector<std::string> keys();
};

inline constexpr std::string_view kPresetPaperMethod = "paper-method";
inline constexpr std::string_view kPresetPaperEval = "paper-eval";

}  // namespace rsmooth
