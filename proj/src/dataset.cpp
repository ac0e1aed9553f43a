#include "rsmooth/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "rsmooth/error.hpp"
#include "rsmooth/pe_features.hpp"
#include "rsmooth/rng.hpp"

namespace rsmooth {

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open dataset: " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write: " + path);
  }
  out << text;
  if (!out) {
    throw IoError("write failed: " + path);
  }
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

std::string line_error(std::string_view what, std::size_t line) {
  return std::string(what) + " at line " + std::to_string(line);
}

// Splits on commas; no quoting (ids must not contain commas).
std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

bool parse_double(std::string_view s, double& out) {
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

int parse_label(std::string_view s, std::size_t line) {
  if (s == "0") return 0;
  if (s == "1") return 1;
  throw FormatError(line_error("label out of domain", line));
}

void check_layout_dim(std::size_t dim, std::string_view layout_id, const LayoutRegistry* registry) {
  const std::size_t expected = layout_dimension(layout_id, registry);
  if (expected != 0 && expected != dim) {
    throw DimensionError("dataset has " + std::to_string(dim) + " features, layout " +
                         std::string(layout_id) + " expects " + std::to_string(expected));
  }
}

void append_real(std::string& out, double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof(buf), "%.9g", v);
  out.append(buf, static_cast<std::size_t>(n));
}

}  // namespace

void LabeledDataset::push_back(std::span<const double> x, int label, std::string id) {
  if (empty() && values.empty() && dim == 0) {
    dim = x.size();
  }
  if (x.size() != dim) {
    throw DimensionError("row has " + std::to_string(x.size()) + " features, dataset has " +
                         std::to_string(dim));
  }
  values.insert(values.end(), x.begin(), x.end());
  labels.push_back(label);
  ids.push_back(std::move(id));
}

std::size_t LabeledDataset::count_label(int label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

void LabeledDataset::validate() const {
  if (ids.size() != labels.size() || values.size() != labels.size() * dim) {
    throw FormatError("dataset rows, labels and ids disagree in length");
  }
  for (auto l : labels) {
    if (l != 0 && l != 1) {
      throw FormatError("label out of domain");
    }
  }
  for (const auto& id : ids) {
    if (id.empty()) {
      throw FormatError("empty sample id");
    }
  }
}

std::string dense_layout_id(std::size_t dim) { return "dense" + std::to_string(dim); }

std::size_t layout_dimension(std::string_view layout_id, const LayoutRegistry* registry) {
  if (layout_id.empty()) {
    return 0;
  }
  if (layout_id.starts_with("dense")) {
    std::size_t d = 0;
    const auto digits = layout_id.substr(5);
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), d);
    if (ec == std::errc() && ptr == digits.data() + digits.size() && d > 0) {
      return d;
    }
    throw ConfigError("malformed dense layout id: " + std::string(layout_id));
  }
  if (registry != nullptr) {
    return registry->get(layout_id).total_dim;
  }
  return LayoutRegistry().get(layout_id).total_dim;
}

LabeledDataset parse_dataset_csv(std::string_view text, std::string_view layout_id,
                                 const LayoutRegistry* registry) {
  LabeledDataset ds;
  ds.layout_id = std::string(layout_id);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header_seen = false;
  std::vector<double> row;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (!header_seen) {
      if (cells.size() < 2 || cells[0] != "id" || cells[1] != "label") {
        throw FormatError(line_error("expected header 'id,label,f0,...'", line_no));
      }
      for (std::size_t j = 2; j < cells.size(); ++j) {
        if (cells[j] != "f" + std::to_string(j - 2)) {
          throw FormatError(line_error("bad feature column name", line_no));
        }
      }
      ds.dim = cells.size() - 2;
      check_layout_dim(ds.dim, layout_id, registry);
      header_seen = true;
      continue;
    }
    if (cells.size() != ds.dim + 2) {
      throw FormatError(line_error("wrong number of columns", line_no));
    }
    if (cells[0].empty()) {
      throw FormatError(line_error("empty id", line_no));
    }
    const int label = parse_label(cells[1], line_no);
    row.resize(ds.dim);
    for (std::size_t j = 0; j < ds.dim; ++j) {
      if (!parse_double(cells[j + 2], row[j])) {
        throw FormatError(line_error("malformed feature value", line_no));
      }
    }
    ds.push_back(row, label, std::string(cells[0]));
  }
  if (!header_seen) {
    throw FormatError("dataset file has no header");
  }
  return ds;
}

std::string format_dataset_csv(const LabeledDataset& ds) {
  std::string out = "id,label";
  for (std::size_t j = 0; j < ds.dim; ++j) {
    out += ",f" + std::to_string(j);
  }
  out += '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out += ds.ids[i];
    out += ds.labels[i] == 1 ? ",1" : ",0";
    for (double v : ds.row(i)) {
      out += ',';
      append_real(out, v);
    }
    out += '\n';
  }
  return out;
}

LabeledDataset parse_dataset_jsonl(std::string_view text, std::string_view layout_id,
                                   const LayoutRegistry* registry) {
  LabeledDataset ds;
  ds.layout_id = std::string(layout_id);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool dim_known = false;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw FormatError(line_error("malformed JSON", line_no));
    }
    if (!rec.is_object() || !rec.contains("id") || !rec.contains("label") ||
        !rec.contains("features") || !rec["id"].is_string() || !rec["features"].is_array()) {
      throw FormatError(line_error("record needs id, label, features", line_no));
    }
    if (!rec["label"].is_number_integer()) {
      throw FormatError(line_error("label out of domain", line_no));
    }
    const auto label = rec["label"].get<long long>();
    if (label != 0 && label != 1) {
      throw FormatError(line_error("label out of domain", line_no));
    }
    std::vector<double> row;
    for (const auto& v : rec["features"]) {
      if (!v.is_number() || !std::isfinite(v.get<double>())) {
        throw FormatError(line_error("malformed feature value", line_no));
      }
      row.push_back(v.get<double>());
    }
    if (!dim_known) {
      ds.dim = row.size();
      check_layout_dim(ds.dim, layout_id, registry);
      dim_known = true;
    } else if (row.size() != ds.dim) {
      throw FormatError(line_error("wrong number of features", line_no));
    }
    ds.push_back(row, static_cast<int>(label), rec["id"].get<std::string>());
  }
  return ds;
}

std::string format_dataset_jsonl(const LabeledDataset& ds) {
  std::string out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out += "{\"id\":";
    out += nlohmann::json(ds.ids[i]).dump();
    out += ",\"label\":";
    out += ds.labels[i] == 1 ? "1" : "0";
    out += ",\"features\":[";
    bool first = true;
    for (double v : ds.row(i)) {
      if (!first) out += ',';
      first = false;
      append_real(out, v);
    }
    out += "]}\n";
  }
  return out;
}

LabeledDataset load_dataset(const std::string& path, std::string_view layout_id,
                            const LayoutRegistry* registry) {
  const std::string text = read_text(path);
  return ends_with(path, ".jsonl") ? parse_dataset_jsonl(text, layout_id, registry)
                                   : parse_dataset_csv(text, layout_id, registry);
}

void save_dataset(const LabeledDataset& ds, const std::string& path) {
  ds.validate();
  write_text(path, ends_with(path, ".jsonl") ? format_dataset_jsonl(ds) : format_dataset_csv(ds));
}

std::pair<LabeledDataset, LabeledDataset> stratified_split(const LabeledDataset& ds,
                                                           const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw ConfigError("train_fraction must be in (0, 1)");
  }
  std::vector<char> to_train(ds.size(), 0);
  for (int c : {0, 1}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.labels[i] == c) members.push_back(i);
    }
    if (members.size() < 2) {
      throw ConfigError("stratified_split: class " + std::to_string(c) +
                        " has fewer than 2 samples");
    }
    // The small epsilon keeps exact products like 0.29 * 100 from flooring low.
    const auto n_train = static_cast<std::size_t>(
        std::floor(spec.train_fraction * static_cast<double>(members.size()) + 1e-9));
    Stream stream = Stream::derive(spec.seed, "split", static_cast<std::uint64_t>(c),
                                   StreamSalt::kSplit);
    for (std::size_t i = 0; i < n_train; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(stream.below(members.size() - i));
      std::swap(members[i], members[j]);
      to_train[members[i]] = 1;
    }
  }
  LabeledDataset train;
  LabeledDataset test;
  train.dim = test.dim = ds.dim;
  train.layout_id = test.layout_id = ds.layout_id;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    (to_train[i] ? train : test).push_back(ds.row(i), ds.labels[i], ds.ids[i]);
  }
  return {std::move(train), std::move(test)};
}

LabeledDataset synth_generate(const SynthSpec& spec, const GroupPartition& partition) {
  if (spec.dim == 0 || spec.n_per_class == 0) {
    throw ConfigError("synth: dim and n_per_class must be > 0");
  }
  if (partition.dim() != spec.dim) {
    throw ConfigError("synth: partition does not cover dim");
  }
  if (!(spec.signal_strength >= 0.0) || !(spec.noise_std > 0.0)) {
    throw ConfigError("synth: need signal_strength >= 0 and noise_std > 0");
  }
  std::vector<double> mean(spec.dim, 0.0);
  for (std::size_t g = 0; g < partition.num_groups(); ++g) {
    const auto& r = partition.group(g);
    Stream stream = Stream::derive(spec.seed, "direction", g, StreamSalt::kSynth);
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (std::size_t i = r.start; i < r.end; ++i) {
        mean[i] = stream.gaussian();
        norm2 += mean[i] * mean[i];
      }
    } while (norm2 == 0.0);
    const double scale = spec.signal_strength / std::sqrt(norm2);
    for (std::size_t i = r.start; i < r.end; ++i) {
      mean[i] *= scale;
    }
  }

  LabeledDataset ds;
  ds.dim = spec.dim;
  ds.layout_id = dense_layout_id(spec.dim);
  ds.values.reserve(2 * spec.n_per_class * spec.dim);
  std::vector<double> row(spec.dim);
  char id[32];
  for (int label : {0, 1}) {
    for (std::size_t n = 0; n < spec.n_per_class; ++n) {
      std::snprintf(id, sizeof(id), "%c%06zu", label == 1 ? 'm' : 'b', n);
      Stream stream = Stream::derive(spec.seed, id, 0, StreamSalt::kSynth);
      for (std::size_t i = 0; i < spec.dim; ++i) {
        row[i] = spec.noise_std * stream.gaussian() + (label == 1 ? mean[i] : 0.0);
      }
      ds.push_back(row, label, id);
    }
  }
  return ds;
}

}  // namespace rsmooth
