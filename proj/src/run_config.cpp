#include "rsmooth/run_config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rsmooth/error.hpp"

namespace rsmooth {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("config key '" + std::string(key) + "': not a real number: " +
                      std::string(v));
  }
  return out;
}

std::uint64_t to_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + std::string(key) + "': not a non-negative integer: " +
                      std::string(v));
  }
  return out;
}

std::vector<double> to_real_list(std::string_view key, std::string_view v) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    auto pos = v.find(',', start);
    if (pos == std::string_view::npos) pos = v.size();
    const auto item = trim(v.substr(start, pos - start));
    if (!item.empty()) out.push_back(to_real(key, item));
    start = pos + 1;
  }
  if (out.empty()) {
    throw ConfigError("config key '" + std::string(key) + "': empty list");
  }
  return out;
}

// Shortest representation that round-trips.
std::string real(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view raw) {
  const std::string_view v = trim(raw);
  auto sz = [&] { return static_cast<std::size_t>(to_uint(key, v)); };
  if (key == "layout_id") layout_id = std::string(v);
  else if (key == "group_size") group_size = sz();
  else if (key == "partition_file") partition_file = std::string(v);
  else if (key == "keep_fraction") perturbation.group_keep_fraction = to_real(key, v);
  else if (key == "noise_fraction") perturbation.noise_feature_fraction = to_real(key, v);
  else if (key == "sigma") perturbation.sigma = to_real(key, v);
  else if (key == "variants") variants_per_sample = sz();
  else if (key == "n_estimators") train.n_estimators = sz();
  else if (key == "max_depth") train.max_depth = sz();
  else if (key == "learning_rate") train.learning_rate = to_real(key, v);
  else if (key == "min_samples_leaf") train.min_samples_leaf = sz();
  else if (key == "l2_lambda") train.l2_lambda = to_real(key, v);
  else if (key == "alpha") alpha = to_real(key, v);
  else if (key == "n_votes") n_votes = sz();
  else if (key == "search_sigma_min") search.sigma_min = to_real(key, v);
  else if (key == "search_sigma_max") search.sigma_max = to_real(key, v);
  else if (key == "search_tolerance") search.tolerance = to_real(key, v);
  else if (key == "search_votes") search.n_votes = sz();
  else if (key == "attack_mode") attack_mode = parse_attack_mode(v);
  else if (key == "attack_sigma") attack_sigma = to_real(key, v);
  else if (key == "attack_levels") attack_levels = to_real_list(key, v);
  else if (key == "synth_n_per_class") synth.n_per_class = sz();
  else if (key == "synth_dim") synth.dim = sz();
  else if (key == "synth_signal") synth.signal_strength = to_real(key, v);
  else if (key == "synth_noise") synth.noise_std = to_real(key, v);
  else if (key == "train_fraction") train_fraction = to_real(key, v);
  else if (key == "master_seed") master_seed = to_uint(key, v);
  else if (key == "threads") threads = sz();
  else throw ConfigError("unknown config key: " + std::string(key));
}

void RunConfig::apply_preset(std::string_view name) {
  if (name == kPresetPaperMethod) {
    variants_per_sample = 15;
    perturbation.group_keep_fraction = 0.8;
    perturbation.noise_feature_fraction = 0.1;
    perturbation.sigma = 0.3;
  } else if (name == kPresetPaperEval) {
    variants_per_sample = 5;
    perturbation.group_keep_fraction = 0.9;
    perturbation.noise_feature_fraction = 0.1;
    perturbation.sigma = 0.15;
  } else {
    throw ConfigError("unknown preset: " + std::string(name));
  }
}

void RunConfig::apply_text(std::string_view text) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

void RunConfig::apply_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_text(ss.str());
}

void RunConfig::propagate_seed() {
  perturbation.master_seed = master_seed;
  train.seed = master_seed;
  synth.seed = master_seed;
}

std::vector<std::string> RunConfig::keys() {
  return {"layout_id",        "group_size",       "partition_file",   "keep_fraction",
          "noise_fraction",   "sigma",            "variants",         "n_estimators",
          "max_depth",        "learning_rate",    "min_samples_leaf", "l2_lambda",
          "alpha",            "n_votes",          "search_sigma_min", "search_sigma_max",
          "search_tolerance", "search_votes",     "attack_mode",      "attack_sigma",
          "attack_levels",    "synth_n_per_class", "synth_dim",       "synth_signal",
          "synth_noise",      "train_fraction",   "master_seed",      "threads"};
}

std::string RunConfig::to_text() const {
  std::string levels;
  for (std::size_t i = 0; i < attack_levels.size(); ++i) {
    levels += (i ? "," : "") + real(attack_levels[i]);
  }
  const std::vector<std::pair<std::string, std::string>> kv = {
      {"layout_id", layout_id},
      {"group_size", std::to_string(group_size)},
      {"partition_file", partition_file},
      {"keep_fraction", real(perturbation.group_keep_fraction)},
      {"noise_fraction", real(perturbation.noise_feature_fraction)},
      {"sigma", real(perturbation.sigma)},
      {"variants", std::to_string(variants_per_sample)},
      {"n_estimators", std::to_string(train.n_estimators)},
      {"max_depth", std::to_string(train.max_depth)},
      {"learning_rate", real(train.learning_rate)},
      {"min_samples_leaf", std::to_string(train.min_samples_leaf)},
      {"l2_lambda", real(train.l2_lambda)},
      {"alpha", real(alpha)},
      {"n_votes", std::to_string(n_votes)},
      {"search_sigma_min", real(search.sigma_min)},
      {"search_sigma_max", real(search.sigma_max)},
      {"search_tolerance", real(search.tolerance)},
      {"search_votes", std::to_string(search.n_votes)},
      {"attack_mode", std::string(to_string(attack_mode))},
      {"attack_sigma", real(attack_sigma)},
      {"attack_levels", levels},
      {"synth_n_per_class", std::to_string(synth.n_per_class)},
      {"synth_dim", std::to_string(synth.dim)},
      {"synth_signal", real(synth.signal_strength)},
      {"synth_noise", real(synth.noise_std)},
      {"train_fraction", real(train_fraction)},
      {"master_seed", std::to_string(master_seed)},
      {"threads", std::to_string(threads)},
  };
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k + " = " + v + "\n";
  }
  return out;
}

}  // namespace rsmooth
