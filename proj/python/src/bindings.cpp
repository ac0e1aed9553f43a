#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>

#include "rsmooth/attack.hpp"
#include "rsmooth/certify.hpp"
#include "rsmooth/cli.hpp"
#include "rsmooth/dataset.hpp"
#include "rsmooth/error.hpp"
#include "rsmooth/gbdt.hpp"
#include "rsmooth/pe_features.hpp"
#include "rsmooth/smoothed.hpp"
#include "rsmooth/smoothing.hpp"

namespace py = pybind11;
using namespace rsmooth;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::span<const double> as_vector(const Array& a) {
  if (a.ndim() != 1) throw DimensionError("expected a 1-d feature vector");
  return {a.data(), static_cast<std::size_t>(a.shape(0))};
}

py::array_t<double> to_array(const std::vector<double>& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::array_t<double> matrix(const LabeledDataset& ds) {
  py::array_t<double> out({static_cast<py::ssize_t>(ds.size()), static_cast<py::ssize_t>(ds.dim)});
  std::copy(ds.values.begin(), ds.values.end(), out.mutable_data());
  return out;
}

LabeledDataset from_arrays(const Array& x, const std::vector<int>& y,
                           std::optional<std::vector<std::string>> ids, std::string layout_id) {
  if (x.ndim() != 2) throw DimensionError("X must be 2-d");
  const auto rows = static_cast<std::size_t>(x.shape(0));
  const auto dim = static_cast<std::size_t>(x.shape(1));
  if (y.size() != rows) throw DimensionError("X and y differ in length");
  if (ids && ids->size() != rows) throw DimensionError("X and ids differ in length");
  LabeledDataset ds;
  ds.dim = dim;
  ds.layout_id = layout_id.empty() ? dense_layout_id(dim) : std::move(layout_id);
  for (std::size_t i = 0; i < rows; ++i) {
    ds.push_back({x.data() + i * dim, dim}, y[i], ids ? (*ids)[i] : "row" + std::to_string(i));
  }
  ds.validate();
  return ds;
}

py::dict tally_dict(const VoteTally& t) {
  py::dict d;
  d["benign"] = t.votes_benign;
  d["malicious"] = t.votes_malicious;
  d["n"] = t.n;
  return d;
}

py::dict certificate_dict(const Certificate& c) {
  py::dict d;
  d["id"] = c.sample_id;
  d["label"] = c.label;
  d["n"] = c.n;
  d["k_majority"] = c.k_majority;
  d["p_hat"] = c.p_hat;
  d["p_lower"] = c.p_lower;
  d["alpha"] = c.alpha;
  d["z"] = c.z;
  d["sigma"] = c.sigma;
  d["radius"] = c.radius;
  d["certified"] = c.certified;
  return d;
}

py::dict metadata_dict(const PEMetadata& m) {
  py::dict d;
  d["is_pe"] = m.is_pe;
  d["machine"] = m.machine;
  d["timestamp"] = m.timestamp;
  d["num_sections"] = m.num_sections;
  d["entry_point_rva"] = m.entry_point_rva;
  d["image_base"] = m.image_base;
  d["subsystem"] = m.subsystem;
  d["dll_characteristics"] = m.dll_characteristics;
  d["size_of_code"] = m.size_of_code;
  d["size_of_headers"] = m.size_of_headers;
  py::list sections;
  for (const auto& s : m.sections) {
    py::dict sd;
    sd["name"] = s.name;
    sd["virtual_size"] = s.virtual_size;
    sd["virtual_address"] = s.virtual_address;
    sd["raw_size"] = s.raw_size;
    sd["raw_offset"] = s.raw_offset;
    sd["characteristics"] = s.characteristics;
    sd["entropy"] = s.entropy;
    sections.append(sd);
  }
  d["sections"] = sections;
  py::list imports;
  for (const auto& i : m.imports) imports.append(py::make_tuple(i.dll_name, i.function_name));
  d["imports"] = imports;
  d["exports_count"] = m.exports_count;
  d["parse_warnings"] = m.parse_warnings;
  return d;
}

std::vector<std::uint8_t> bytes_of(const py::bytes& b) {
  const std::string s = b;
  return {s.begin(), s.end()};
}

}  // namespace

PYBIND11_MODULE(_rsmooth, m) {
  m.doc() = "Randomized group-ablation smoothing for malware feature classifiers";
  m.attr("__version__") = "0.1.0";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());

  py::class_<GroupPartition>(m, "GroupPartition")
      .def_property_readonly("dim", &GroupPartition::dim)
      .def_property_readonly("num_groups", &GroupPartition::num_groups)
      .def_property_readonly("groups",
                             [](const GroupPartition& p) {
                               std::vector<std::pair<std::size_t, std::size_t>> out;
                               for (const auto& g : p.groups()) out.emplace_back(g.start, g.end);
                               return out;
                             })
      .def("save", [](const GroupPartition& p, const std::string& path) { save_partition(p, path); })
      .def_static("load", &load_partition, py::arg("path"), py::arg("dim"))
      .def("__eq__", [](const GroupPartition& a, const GroupPartition& b) { return a == b; });
  m.def("make_partition", &make_partition, py::arg("dim"), py::arg("group_size") = 50);

  py::class_<PerturbationConfig>(m, "PerturbationConfig")
      .def(py::init([](double keep, double noise, double sigma, std::uint64_t seed) {
             PerturbationConfig c{keep, noise, sigma, seed};
             c.validate();
             return c;
           }),
           py::arg("group_keep_fraction") = 0.8, py::arg("noise_feature_fraction") = 0.1,
           py::arg("sigma") = 0.3, py::arg("seed") = 0)
      .def_static("identity", &PerturbationConfig::identity, py::arg("seed") = 0)
      .def_readwrite("group_keep_fraction", &PerturbationConfig::group_keep_fraction)
      .def_readwrite("noise_feature_fraction", &PerturbationConfig::noise_feature_fraction)
      .def_readwrite("sigma", &PerturbationConfig::sigma)
      .def_readwrite("seed", &PerturbationConfig::master_seed);

  m.def(
      "sample_variant",
      [](const Array& x, const GroupPartition& p, const PerturbationConfig& c,
         const std::string& id, std::uint64_t index) {
        return to_array(sample_variant(as_vector(x), p, c, id, index));
      },
      py::arg("x"), py::arg("partition"), py::arg("perturbation"), py::arg("sample_id"),
      py::arg("variant_index"));

  py::class_<LabeledDataset>(m, "Dataset")
      .def_static("from_arrays", &from_arrays, py::arg("X"), py::arg("y"),
                  py::arg("ids") = py::none(), py::arg("layout_id") = "")
      .def_static("load", [](const std::string& path,
                             const std::string& layout) { return load_dataset(path, layout); },
                  py::arg("path"), py::arg("layout_id") = "")
      .def("save", [](const LabeledDataset& ds, const std::string& path) { save_dataset(ds, path); })
      .def_property_readonly("X", &matrix)
      .def_readonly("y", &LabeledDataset::labels)
      .def_readonly("ids", &LabeledDataset::ids)
      .def_readonly("dim", &LabeledDataset::dim)
      .def_readonly("layout_id", &LabeledDataset::layout_id)
      .def("row", [](const LabeledDataset& ds, std::size_t i) {
        if (i >= ds.size()) throw py::index_error();
        auto r = ds.row(i);
        return to_array({r.begin(), r.end()});
      })
      .def("count_label", &LabeledDataset::count_label)
      .def("__len__", &LabeledDataset::size);

  m.def(
      "stratified_split",
      [](const LabeledDataset& ds, double f, std::uint64_t seed) {
        return stratified_split(ds, SplitSpec{f, seed});
      },
      py::arg("dataset"), py::arg("train_fraction") = 0.8, py::arg("seed") = 0);
  m.def(
      "synth_generate",
      [](std::size_t n, std::size_t dim, double signal, double noise, std::uint64_t seed,
         std::size_t group_size) {
        return synth_generate(SynthSpec{n, dim, signal, noise, seed},
                              make_partition(dim, group_size));
      },
      py::arg("n_per_class") = 1000, py::arg("dim") = 200, py::arg("signal_strength") = 1.0,
      py::arg("noise_std") = 1.0, py::arg("seed") = 0, py::arg("group_size") = 50);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init([](std::size_t n, std::size_t depth, double lr, std::size_t leaf, double l2,
                       std::uint64_t seed) {
             TrainConfig c{n, depth, lr, leaf, l2, seed};
             c.validate();
             return c;
           }),
           py::arg("n_estimators") = 100, py::arg("max_depth") = 4,
           py::arg("learning_rate") = 0.1, py::arg("min_samples_leaf") = 20,
           py::arg("l2_lambda") = 1.0, py::arg("seed") = 0)
      .def_readwrite("n_estimators", &TrainConfig::n_estimators)
      .def_readwrite("max_depth", &TrainConfig::max_depth)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("min_samples_leaf", &TrainConfig::min_samples_leaf)
      .def_readwrite("l2_lambda", &TrainConfig::l2_lambda);

  py::class_<BoostedModel>(m, "Model")
      .def_property_readonly("n_trees", [](const BoostedModel& b) { return b.trees.size(); })
      .def_readonly("dim", &BoostedModel::dim)
      .def_readonly("layout_id", &BoostedModel::layout_id)
      .def_readonly("base_score", &BoostedModel::base_score)
      .def("margin", [](const BoostedModel& b, const Array& x) { return b.margin(as_vector(x)); })
      .def("predict_proba",
           [](const BoostedModel& b, const Array& x) { return predict_proba(b, as_vector(x)); })
      .def("predict_label",
           [](const BoostedModel& b, const Array& x, double t) {
             return predict_label(b, as_vector(x), t);
           },
           py::arg("x"), py::arg("threshold") = 0.5)
      .def("to_json", &model_to_json)
      .def_static("from_json", &model_from_json)
      .def("save", [](const BoostedModel& b, const std::string& path) { save_model(b, path); })
      .def_static("load", &load_model);

  m.def(
      "train",
      [](const LabeledDataset& ds, const TrainConfig& cfg) {
        TrainingTrace trace;
        auto model = train(ds, cfg, &trace);
        return py::make_tuple(std::move(model), trace.round_log_loss);
      },
      py::arg("dataset"), py::arg("config") = TrainConfig{});
  m.def(
      "augment_training_set",
      [](const LabeledDataset& ds, const BoostedModel& bc, std::size_t variants,
         const PerturbationConfig& p, const GroupPartition& part, std::size_t threads) {
        return augment_training_set(ds, bc, AugmentationConfig{variants, p}, part, threads);
      },
      py::arg("train"), py::arg("base_model"), py::arg("variants_per_sample"),
      py::arg("perturbation"), py::arg("partition"), py::arg("threads") = 1);

  m.def(
      "smoothed_predict",
      [](const BoostedModel& b, const Array& x, std::size_t n, const PerturbationConfig& p,
         const GroupPartition& part, const std::string& id) {
        const auto r = smoothed_predict(b, as_vector(x), n, p, part, id);
        py::dict d;
        d["label"] = r.label;
        d["p_hat"] = r.p_hat;
        d["votes"] = tally_dict(r.tally);
        return d;
      },
      py::arg("model"), py::arg("x"), py::arg("n_votes"), py::arg("perturbation"),
      py::arg("partition"), py::arg("sample_id"));

  m.def("norm_cdf", &norm_cdf);
  m.def("inv_norm_cdf", &inv_norm_cdf);
  m.def("z_critical", &z_critical, py::arg("alpha"));
  m.def("wilson_lower", &wilson_lower, py::arg("k"), py::arg("n"), py::arg("z"));
  m.def("certified_radius", &certified_radius, py::arg("sigma"), py::arg("p_lower"));
  m.def(
      "certificate_from_tally",
      [](std::size_t malicious, std::size_t n, double sigma, double alpha, const std::string& id) {
        if (malicious > n) throw ConfigError("malicious votes exceed n");
        VoteTally t{n - malicious, malicious, n};
        return certificate_dict(certificate_from_tally(id, t, sigma, alpha));
      },
      py::arg("malicious_votes"), py::arg("n"), py::arg("sigma"), py::arg("alpha") = 0.001,
      py::arg("sample_id") = "");
  m.def(
      "certify",
      [](const BoostedModel& b, const Array& x, const std::string& id, std::size_t n, double sigma,
         double alpha, const GroupPartition& part, const PerturbationConfig& p) {
        return certificate_dict(certify(b, as_vector(x), id, n, sigma, alpha, part, p));
      },
      py::arg("model"), py::arg("x"), py::arg("sample_id"), py::arg("n"), py::arg("sigma"),
      py::arg("alpha"), py::arg("partition"), py::arg("perturbation"));
  m.def(
      "max_radius_search",
      [](const BoostedModel& b, const Array& x, const std::string& id, const GroupPartition& part,
         const PerturbationConfig& p, double lo, double hi, double tol, std::size_t n,
         double alpha) {
        SigmaSearchConfig cfg{lo, hi, tol, n};
        cfg.validate();
        const auto r = max_radius_search(b, as_vector(x), id, cfg, alpha, part, p);
        py::list trace;
        for (const auto& s : r.trace) trace.append(py::make_tuple(s.sigma, s.p_lower, s.radius));
        py::dict d;
        d["sigma_star"] = r.sigma_star;
        d["radius_max"] = r.radius_max;
        d["trace"] = trace;
        return d;
      },
      py::arg("model"), py::arg("x"), py::arg("sample_id"), py::arg("partition"),
      py::arg("perturbation"), py::arg("sigma_min") = 0.01, py::arg("sigma_max") = 2.0,
      py::arg("tolerance") = 1e-3, py::arg("n_votes") = 50, py::arg("alpha") = 0.001);

  m.def(
      "attack",
      [](const Array& x, const GroupPartition& part, const std::string& mode, double q,
         double sigma, std::uint64_t seed, const std::string& row_id, std::size_t row_index) {
        AttackConfig cfg;
        cfg.mode = parse_attack_mode(mode);
        cfg.group_fraction = q;
        cfg.sigma_attack = sigma;
        cfg.seed = seed;
        cfg.validate();
        return to_array(apply_attack(as_vector(x), part, cfg, row_id, row_index));
      },
      py::arg("x"), py::arg("partition"), py::arg("mode") = "group_noise", py::arg("q") = 0.1,
      py::arg("sigma") = 0.3, py::arg("seed") = 0, py::arg("row_id") = "", py::arg("row_index") = 0);
  m.def("cosine_similarity", [](const Array& a, const Array& b) {
    return cosine_similarity(as_vector(a), as_vector(b));
  });

  m.def(
      "parse_pe", [](const py::bytes& b) { return metadata_dict(parse_pe(bytes_of(b))); },
      py::arg("data"));
  m.def(
      "extract_features",
      [](const py::bytes& b, const std::string& source_id) {
        return to_array(extract(RawBinary{bytes_of(b), source_id}).values);
      },
      py::arg("data"), py::arg("source_id") = "");
  m.attr("DEFAULT_DIM") = kDefaultDim;

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
