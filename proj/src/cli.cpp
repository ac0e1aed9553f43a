#include "rsmooth/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "rsmooth/attack.hpp"
#include "rsmooth/certify.hpp"
#include "rsmooth/dataset.hpp"
#include "rsmooth/error.hpp"
#include "rsmooth/gbdt.hpp"
#include "rsmooth/parallel.hpp"
#include "rsmooth/pe_features.hpp"
#include "rsmooth/run_config.hpp"
#include "rsmooth/smoothed.hpp"

namespace rsmooth {

namespace {

namespace fs = std::filesystem;

constexpr std::string_view kRadiusCaveat =
    "note: radii are sigma * Phi^-1(p_lower) with sigma the inference noise scale; the "
    "smoothing distribution also ablates feature groups, and the Gaussian-smoothing radius "
    "is reported as computed, without a separate soundness argument for the ablation part.";

struct Options {
  std::string config_file;
  std::string preset;
  std::string log_file;
  std::vector<std::pair<std::string, std::string>> overrides;

  // Command arguments.
  std::string out;
  std::string data;
  std::string model;
  std::string bc;
  std::string sc;
  std::string train_out;
  std::string test_out;
  std::string augmented_out;
  std::string benign_dir;
  std::string malicious_dir;
  std::string layouts_file;
  std::string stress_file;
  std::string certificates_file;
  std::string tally;
  std::string sample_id = "sample";
  bool smoothed = false;
  bool search = false;
};

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write: " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void require(const std::string& value, std::string_view flag) {
  if (value.empty()) throw ConfigError("missing required flag " + std::string(flag));
}

GroupPartition partition_for(const RunConfig& cfg, std::size_t dim) {
  if (!cfg.partition_file.empty()) return load_partition(cfg.partition_file, dim);
  return make_partition(dim, cfg.group_size);
}

void check_model_matches(const BoostedModel& m, const LabeledDataset& ds, std::string_view what) {
  if (m.dim != ds.dim) {
    throw DimensionError(std::string(what) + " expects " + std::to_string(m.dim) +
                         " features, dataset has " + std::to_string(ds.dim));
  }
  if (!m.layout_id.empty() && !ds.layout_id.empty() && m.layout_id != ds.layout_id) {
    throw ConfigError(std::string(what) + " layout " + m.layout_id + " differs from dataset " +
                      ds.layout_id);
  }
}

// Dataset layout: the configured layout_id when set, else dense<d> from the file.
LabeledDataset load_for_run(const std::string& path, const RunConfig& cfg) {
  LabeledDataset ds = load_dataset(path, cfg.layout_id);
  if (ds.layout_id.empty()) ds.layout_id = dense_layout_id(ds.dim);
  return ds;
}

std::vector<fs::path> list_files(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("missing directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::string sanitize_id(std::string id) {
  std::replace_if(id.begin(), id.end(), [](char c) { return c == ',' || c == '\n' || c == '\r'; },
                  '_');
  return id;
}

int cmd_extract(const Options& o, const RunConfig& cfg, std::ostream& out) {
  require(o.out, "--out");
  if (o.benign_dir.empty() && o.malicious_dir.empty()) {
    throw ConfigError("extract needs --benign and/or --malicious directories");
  }
  LayoutRegistry registry;
  if (!o.layouts_file.empty()) registry = LayoutRegistry::from_json(read_file(o.layouts_file));
  const FeatureLayout& layout =
      registry.get(cfg.layout_id.empty() ? std::string(kDefaultLayoutId) : cfg.layout_id);

  LabeledDataset ds;
  ds.dim = layout.total_dim;
  ds.layout_id = layout.layout_id;
  for (const auto& [dir, label, prefix] :
       {std::tuple{o.benign_dir, 0, "benign/"}, std::tuple{o.malicious_dir, 1, "malicious/"}}) {
    if (dir.empty()) continue;
    const auto files = list_files(dir);
    std::vector<FeatureVector> rows(files.size());
    parallel_for(files.size(), cfg.threads, [&](std::size_t i) {
      RawBinary bin = read_binary_file(files[i].string());
      bin.source_id = sanitize_id(prefix + fs::relative(files[i], dir).generic_string());
      rows[i] = extract(bin, layout);
    });
    for (auto& fv : rows) ds.push_back(fv.values, label, fv.source_id);
  }
  save_dataset(ds, o.out);
  out << "extracted " << ds.size() << " samples (" << ds.count_label(1) << " malicious) into "
      << o.out << "\n";
  return 0;
}

int cmd_synth(const Options& o, const RunConfig& cfg, std::ostream& out) {
  require(o.out, "--out");
  const auto partition = partition_for(cfg, cfg.synth.dim);
  const LabeledDataset ds = synth_generate(cfg.synth, partition);
  save_dataset(ds, o.out);
  out << "generated " << ds.size() << " samples, dim " << ds.dim << " into " << o.out << "\n";
  return 0;
}

int cmd_split(const Options& o, const RunConfig& cfg, std::ostream& out) {
  require(o.data, "--data");
  require(o.train_out, "--train-out");
  require(o.test_out, "--test-out");
  const LabeledDataset ds = load_for_run(o.data, cfg);
  auto [train, test] = stratified_split(ds, SplitSpec{cfg.train_fraction, cfg.master_seed});
  save_dataset(train, o.train_out);
  save_dataset(test, o.test_out);
  out << "train " << train.size() << " rows, test " << test.size() << " rows\n";
  return 0;
}

int cmd_train_bc(const Options& o, const RunConfig& cfg, std::ostream& out) {
  require(o.data, "--data");
  require(o.out, "--model-out");
  const LabeledDataset ds = load_for_run(o.data, cfg);
  const BoostedModel m = train(ds, cfg.train);
  save_model(m, o.out);
  out << "trained base classifier: " << m.trees.size() << " trees -> " << o.out << "\n";
  return 0;
}

int cmd_train_sc(const Options& o, const RunConfig& cfg, std::ostream& out) {
  require(o.data, "--data");
  require(o.bc, "--bc");
  require(o.out, "--model-out");
  const LabeledDataset ds = load_for_run(o.data, cfg);
  const BoostedModel bc = load_model(o.bc);
  check_model_matches(bc, ds, "base classifier");
  const auto partition = partition_for(cfg, ds.dim);
  const AugmentationConfig aug{cfg.variants_per_sample, cfg.perturbation};
  const LabeledDataset augmented = augment_training_set(ds, bc, aug, partition, cfg.threads);
  if (!o.augmented_out.empty()) save_dataset(augmented, o.augmented_out);
  const BoostedModel sc = train_sc(augmented, cfg.train);
  save_model(sc, o.out);
  out << "augmented " << ds.size() << " -> " << augmented.size()
      << " rows; trained smoothed classifier -> " << o.out << "\n";
  return 0;
}

int cmd_predict(const Options& o, const RunConfig& cfg, std::ostream& out) {
  require(o.model, "--model");
  require(o.data, "--data");
  require(o.out, "--out");
  const LabeledDataset ds = load_for_run(o.data, cfg);
  const BoostedModel m = load_model(o.model);
  check_model_matches(m, ds, "model");
  const auto partition = partition_for(cfg, ds.dim);
  std::vector<std::string> lines(ds.size());
  parallel_for(ds.size(), cfg.threads, [&](std::size_t i) {
    if (o.smoothed) {
      const auto p = smoothed_predict(m, ds.row(i), cfg.n_votes, cfg.perturbation, partition,
                                      ds.ids[i]);
      lines[i] = prediction_record(ds.ids[i], p);
    } else {
      const int label = predict_label(m, ds.row(i));
      VoteTally t;
      t.add(label);
      lines[i] = prediction_record(ds.ids[i], decide(t));
    }
  });
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  write_file(o.out, text);
  out << "wrote " << ds.size() << (o.smoothed ? " smoothed" : " base") << " predictions to "
      << o.out << "\n";
  return 0;
}

VoteTally parse_tally(const std::string& s) {
  const auto slash = s.find('/');
  if (slash == std::string::npos) throw ConfigError("--tally expects K/N");
  try {
    const auto k = std::stoull(s.substr(0, slash));
    const auto n = std::stoull(s.substr(slash + 1));
    if (n == 0 || k > n) throw ConfigError("--tally needs 0 <= K <= N and N >= 1");
    VoteTally t;
    // K counts votes for the malicious class.
    t.votes_malicious = k;
    t.votes_benign = n - k;
    t.n = n;
    return t;
  } catch (const std::logic_error&) {
    throw ConfigError("--tally expects K/N with integer counts");
  }
}

int cmd_certify(const Options& o, const RunConfig& cfg, std::ostream& out) {
  const double sigma = cfg.perturbation.sigma;
  if (!o.tally.empty()) {
    const Certificate c = certificate_from_tally(o.sample_id, parse_tally(o.tally), sigma, cfg.alpha);
    const std::string line = certificate_record(c) + "\n";
    if (!o.out.empty()) write_file(o.out, line);
    out << line;
    return 0;
  }
  require(o.model, "--model");
  require(o.data, "--data");
  require(o.out, "--out");
  const LabeledDataset ds = load_for_run(o.data, cfg);
  const BoostedModel m = load_model(o.model);
  check_model_matches(m, ds, "model");
  const auto partition = partition_for(cfg, ds.dim);
  SigmaSearchConfig search = cfg.search;
  std::vector<std::string> lines(ds.size());
  std::vector<char> certified(ds.size(), 0);
  parallel_for(ds.size(), cfg.threads, [&](std::size_t i) {
    const Certificate c = certify(m, ds.row(i), ds.ids[i], cfg.n_votes, sigma, cfg.alpha,
                                  partition, cfg.perturbation);
    certified[i] = c.certified;
    if (o.search) {
      const SearchResult r =
          max_radius_search(m, ds.row(i), ds.ids[i], search, cfg.alpha, partition, cfg.perturbation);
      lines[i] = certificate_record(c, &r);
    } else {
      lines[i] = certificate_record(c);
    }
  });
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  write_file(o.out, text);
  out << "certified " << std::count(certified.begin(), certified.end(), 1) << " of " << ds.size()
      << " samples -> " << o.out << "\n";
  return 0;
}

int cmd_stress(const Options& o, const RunConfig& cfg, std::ostream& out) {
  require(o.bc, "--bc");
  require(o.sc, "--sc");
  require(o.data, "--data");
  require(o.out, "--out");
  const LabeledDataset ds = load_for_run(o.data, cfg);
  const BoostedModel bc = load_model(o.bc);
  const BoostedModel sc = load_model(o.sc);
  check_model_matches(bc, ds, "base classifier");
  check_model_matches(sc, ds, "smoothed classifier");
  const auto partition = partition_for(cfg, ds.dim);
  const PredictFn bc_fn = [&](std::span<const double> x, std::string_view) {
    return predict_label(bc, x);
  };
  const PredictFn sc_fn = [&](std::span<const double> x, std::string_view id) {
    return smoothed_predict(sc, x, cfg.n_votes, cfg.perturbation, partition, id).label;
  };
  StressOptions opts;
  opts.q_levels = cfg.attack_levels;
  opts.sigma_attack = cfg.attack_sigma;
  opts.mode = cfg.attack_mode;
  opts.seed = cfg.master_seed;
  opts.threads = cfg.threads;
  const auto rows = stress_suite(bc_fn, sc_fn, ds, partition, opts);
  const std::string csv = stress_csv(rows);
  write_file(o.out, csv);
  out << csv;
  return 0;
}

int cmd_report(const Options& o, const RunConfig& cfg, std::ostream& out) {
  if (o.stress_file.empty() && o.certificates_file.empty()) {
    throw ConfigError("report needs --stress and/or --certificates");
  }
  std::ostringstream r;
  r << "# rsmooth run summary\n\n";
  r << "master_seed: " << cfg.master_seed << "\n\n";
  if (!o.stress_file.empty()) {
    r << "## Stress suite (" << o.stress_file << ")\n\n";
    std::istringstream csv(read_file(o.stress_file));
    std::string line;
    bool header = true;
    while (std::getline(csv, line)) {
      if (line.empty()) continue;
      std::string row = "| ";
      for (char c : line) row += c == ',' ? std::string(" | ") : std::string(1, c);
      r << row << " |\n";
      if (header) {
        r << "|---|---|---|---|---|---|---|---|\n";
        header = false;
      }
    }
    r << "\n";
  }
  if (!o.certificates_file.empty()) {
    std::istringstream in(read_file(o.certificates_file));
    std::string line;
    std::size_t total = 0, certified = 0, malicious = 0;
    double radius_sum = 0.0, radius_max_sum = 0.0;
    std::size_t searched = 0;
    std::vector<double> radii;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json rec;
      try {
        rec = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        throw FormatError("malformed certificate record at line " + std::to_string(total + 1));
      }
      ++total;
      if (rec.value("label", 0) == 1) ++malicious;
      if (rec.value("certified", false)) {
        ++certified;
        if (rec["radius"].is_number()) {
          radius_sum += rec["radius"].get<double>();
          radii.push_back(rec["radius"].get<double>());
        }
      }
      if (rec.contains("radius_max") && rec["radius_max"].is_number()) {
        ++searched;
        radius_max_sum += rec["radius_max"].get<double>();
      }
    }
    std::sort(radii.begin(), radii.end());
    r << "## Certificates (" << o.certificates_file << ")\n\n";
    r << "- samples: " << total << "\n";
    r << "- predicted malicious: " << malicious << "\n";
    r << "- certified (p_lower > 0.5): " << certified << "\n";
    if (!radii.empty()) {
      r << "- mean certified radius: " << radius_sum / static_cast<double>(radii.size()) << "\n";
      r << "- median certified radius: " << radii[radii.size() / 2] << "\n";
    }
    if (searched > 0) {
      r << "- mean maximum radius over sigma search: "
        << radius_max_sum / static_cast<double>(searched) << "\n";
    }
    r << "\n" << kRadiusCaveat << "\n";
  }
  if (!o.out.empty()) write_file(o.out, r.str());
  out << r.str();
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Certified randomized smoothing for static malware classifiers", "rsmooth"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  std::optional<std::string> seed_flag;
  std::optional<std::size_t> threads_flag;

  app.add_option("--config", o.config_file, "Flat key = value config file");
  app.add_option("--preset", o.preset, "Built-in preset: paper-method | paper-eval");
  app.add_option("--log", o.log_file, "Append the run log to this file");
  app.add_option_function<std::string>(
      "--seed", [&](const std::string& v) { seed_flag = v; }, "Master seed");
  app.add_option_function<std::size_t>(
      "--threads", [&](std::size_t v) { threads_flag = v; }, "Worker threads (0 = all cores)");
  app.add_option_function<std::vector<std::string>>(
      "--set",
      [&](const std::vector<std::string>& kvs) {
        for (const auto& kv : kvs) {
          const auto eq = kv.find('=');
          if (eq == std::string::npos) throw CLI::ValidationError("--set", "expects key=value");
          o.overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
        }
      },
      "Override any config key (key=value)");

  // Registers a flag that maps onto a config key.
  auto key_flag = [&](CLI::App* cmd, const std::string& flag, const std::string& key,
                      const std::string& help) {
    cmd->add_option_function<std::string>(
        flag, [&o, key](const std::string& v) { o.overrides.emplace_back(key, v); }, help);
  };

  auto* extract_cmd = app.add_subcommand("extract", "Extract PE features from directories");
  extract_cmd->add_option("--benign", o.benign_dir, "Directory of benign binaries");
  extract_cmd->add_option("--malicious", o.malicious_dir, "Directory of malicious binaries");
  extract_cmd->add_option("--out", o.out, "Output dataset (.csv or .jsonl)");
  extract_cmd->add_option("--layouts", o.layouts_file, "Layout registry JSON");
  key_flag(extract_cmd, "--layout", "layout_id", "Layout id (default pe629)");

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic grouped dataset");
  synth_cmd->add_option("--out", o.out, "Output dataset");
  key_flag(synth_cmd, "--n-per-class", "synth_n_per_class", "Samples per class");
  key_flag(synth_cmd, "--dim", "synth_dim", "Feature dimension");
  key_flag(synth_cmd, "--signal", "synth_signal", "Per-group signal strength");
  key_flag(synth_cmd, "--noise", "synth_noise", "Noise standard deviation");

  auto* split_cmd = app.add_subcommand("split", "Stratified train/test split");
  split_cmd->add_option("--data", o.data, "Input dataset");
  split_cmd->add_option("--train-out", o.train_out, "Train output");
  split_cmd->add_option("--test-out", o.test_out, "Test output");
  key_flag(split_cmd, "--train-fraction", "train_fraction", "Train fraction");

  auto* train_bc_cmd = app.add_subcommand("train-bc", "Train the base classifier");
  train_bc_cmd->add_option("--data", o.data, "Training dataset");
  train_bc_cmd->add_option("--model-out", o.out, "Model output (JSON)");
  key_flag(train_bc_cmd, "--n-estimators", "n_estimators", "Boosting rounds");
  key_flag(train_bc_cmd, "--max-depth", "max_depth", "Tree depth");
  key_flag(train_bc_cmd, "--learning-rate", "learning_rate", "Shrinkage");

  auto* train_sc_cmd = app.add_subcommand("train-sc", "Augment and train the smoothed classifier");
  train_sc_cmd->add_option("--data", o.data, "Training dataset");
  train_sc_cmd->add_option("--bc", o.bc, "Base classifier model");
  train_sc_cmd->add_option("--model-out", o.out, "Model output (JSON)");
  train_sc_cmd->add_option("--augmented-out", o.augmented_out, "Also write the augmented set");
  key_flag(train_sc_cmd, "--variants", "variants", "Variants per selected sample (M)");
  key_flag(train_sc_cmd, "--n-estimators", "n_estimators", "Boosting rounds");

  auto* predict_cmd = app.add_subcommand("predict", "Base or smoothed predictions");
  predict_cmd->add_option("--model", o.model, "Model file");
  predict_cmd->add_option("--data", o.data, "Dataset");
  predict_cmd->add_option("--out", o.out, "Predictions (JSON-lines)");
  predict_cmd->add_flag("--smoothed", o.smoothed, "Majority vote over perturbed variants");
  key_flag(predict_cmd, "--votes", "n_votes", "Votes per sample (N)");

  auto* certify_cmd = app.add_subcommand("certify", "Certificates per sample");
  certify_cmd->add_option("--model", o.model, "Smoothed classifier model");
  certify_cmd->add_option("--data", o.data, "Dataset");
  certify_cmd->add_option("--out", o.out, "Certificates (JSON-lines)");
  certify_cmd->add_flag("--search", o.search, "Also run the maximum-radius sigma search");
  certify_cmd->add_option("--tally", o.tally, "Certify a known vote count K/N (K malicious votes)");
  certify_cmd->add_option("--id", o.sample_id, "Sample id used with --tally");
  key_flag(certify_cmd, "--sigma", "sigma", "Noise scale");
  key_flag(certify_cmd, "--alpha", "alpha", "Significance level");
  key_flag(certify_cmd, "--votes", "n_votes", "Votes per sample (N)");

  auto* stress_cmd = app.add_subcommand("stress", "BC vs SC under escalating attacks");
  stress_cmd->add_option("--bc", o.bc, "Base classifier model");
  stress_cmd->add_option("--sc", o.sc, "Smoothed classifier model");
  stress_cmd->add_option("--data", o.data, "Evaluation dataset");
  stress_cmd->add_option("--out", o.out, "Stress table (CSV)");
  key_flag(stress_cmd, "--levels", "attack_levels", "Comma-separated group fractions");
  key_flag(stress_cmd, "--attack-sigma", "attack_sigma", "Attack noise scale");
  key_flag(stress_cmd, "--attack-mode", "attack_mode", "group_noise | combined | metamorphic");
  key_flag(stress_cmd, "--votes", "n_votes", "Votes per sample (N)");

  auto* report_cmd = app.add_subcommand("report", "Summarize stress and certificate outputs");
  report_cmd->add_option("--stress", o.stress_file, "Stress CSV");
  report_cmd->add_option("--certificates", o.certificates_file, "Certificate JSON-lines");
  report_cmd->add_option("--out", o.out, "Summary output (markdown)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    RunConfig cfg;
    if (!o.preset.empty()) cfg.apply_preset(o.preset);
    if (!o.config_file.empty()) cfg.apply_file(o.config_file);
    for (const auto& [k, v] : o.overrides) cfg.set(k, v);
    if (seed_flag) cfg.set("master_seed", *seed_flag);
    if (threads_flag) cfg.threads = *threads_flag;
    cfg.propagate_seed();

    std::ostringstream log;
    log << "[rsmooth " << timestamp() << "] command=" << command
        << " master_seed=" << cfg.master_seed << "\n"
        << cfg.to_text();
    err << log.str();
    if (!o.log_file.empty()) {
      std::ofstream lf(o.log_file, std::ios::app);
      lf << log.str();
    }

    static const std::map<std::string, std::function<int(const Options&, const RunConfig&,
                                                         std::ostream&)>>
        handlers = {{"extract", cmd_extract},   {"synth", cmd_synth},
                    {"split", cmd_split},       {"train-bc", cmd_train_bc},
                    {"train-sc", cmd_train_sc}, {"predict", cmd_predict},
                    {"certify", cmd_certify},   {"stress", cmd_stress},
                    {"report", cmd_report}};
    return handlers.at(command)(o, cfg, out);
  } catch (const IoError& e) {
    err << "error [io]: " << e.what() << "\n";
  } catch (const DimensionError& e) {
    err << "error [dimension mismatch]: " << e.what() << "\n";
  } catch (const FormatError& e) {
    err << "error [format]: " << e.what() << "\n";
  } catch (const ConfigError& e) {
    err << "error [config]: " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
  }
  return 1;
}

}  // namespace rsmooth
