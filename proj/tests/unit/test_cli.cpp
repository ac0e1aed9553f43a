#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "oracles.hpp"
#include "rsmooth/cli.hpp"
#include "rsmooth/error.hpp"
#include "rsmooth/run_config.hpp"

using namespace rsmooth;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// synth -> split -> train-bc -> train-sc -> certify -> predict -> stress in `dir`.
void pipeline(const fs::path& dir, const std::string& seed) {
  auto p = [&](const char* f) { return (dir / f).string(); };
  const std::vector<std::string> common{"--seed", seed, "--threads", "2"};
  auto go = [&](std::vector<std::string> a) {
    a.insert(a.end(), common.begin(), common.end());
    const auto r = run(a);
    INFO(r.err);
    REQUIRE(r.code == 0);
  };
  go({"synth", "--out", p("all.csv"), "--n-per-class", "60", "--dim", "100", "--signal", "3"});
  go({"split", "--data", p("all.csv"), "--train-out", p("train.csv"), "--test-out", p("test.csv")});
  go({"train-bc", "--data", p("train.csv"), "--model-out", p("bc.json"), "--n-estimators", "10"});
  go({"train-sc", "--data", p("train.csv"), "--bc", p("bc.json"), "--model-out", p("sc.json"),
      "--n-estimators", "10", "--variants", "3", "--augmented-out", p("aug.csv")});
  go({"certify", "--model", p("sc.json"), "--data", p("test.csv"), "--out", p("cert.jsonl"),
      "--votes", "20", "--search", "--set", "search_tolerance=0.1", "--set", "search_votes=20"});
  go({"predict", "--model", p("sc.json"), "--data", p("test.csv"), "--out", p("pred.jsonl"),
      "--smoothed", "--votes", "11"});
  go({"stress", "--bc", p("bc.json"), "--sc", p("sc.json"), "--data", p("test.csv"), "--out",
      p("stress.csv"), "--votes", "11"});
}

}  // namespace

TEST_CASE("run_config precedence and parsing") {
  RunConfig c;
  CHECK(c.variants_per_sample == 15);
  CHECK(c.perturbation.sigma == 0.3);
  c.apply_preset("paper-eval");
  CHECK(c.variants_per_sample == 5);
  CHECK(c.perturbation.sigma == 0.15);
  CHECK(c.perturbation.group_keep_fraction == 0.9);
  c.apply_text("# comment\nsigma = 0.25   # trailing\n\nvariants=7\nattack_levels = 0.1, 0.3\n");
  CHECK(c.perturbation.sigma == 0.25);
  CHECK(c.variants_per_sample == 7);
  CHECK(c.attack_levels == std::vector<double>{0.1, 0.3});
  c.set("master_seed", "99");
  c.propagate_seed();
  CHECK(c.perturbation.master_seed == 99);
  RunConfig round;
  round.apply_text(c.to_text());
  CHECK(round.to_text() == c.to_text());
  CHECK(RunConfig::keys().size() == 28);
  CHECK_THROWS_AS(c.set("nope", "1"), ConfigError);
  CHECK_THROWS_AS(c.set("sigma", "abc"), ConfigError);
  CHECK_THROWS_AS(c.set("variants", "-1"), ConfigError);
  CHECK_THROWS_AS(c.apply_text("sigma 0.3\n"), ConfigError);
  CHECK_THROWS_AS(c.apply_preset("other"), ConfigError);
}

TEST_CASE("certify --tally reproduces the worked example") {
  const auto r = run({"certify", "--tally", "90/100", "--sigma", "0.3", "--alpha", "0.001"});
  REQUIRE(r.code == 0);
  const auto rec = nlohmann::json::parse(r.out);
  CHECK(rec["p_lower"].get<double>() >= 0.75);
  CHECK(rec["p_lower"].get<double>() <= 0.79);
  CHECK(rec["radius"].get<double>() >= 0.21);
  CHECK(rec["radius"].get<double>() <= 0.24);
  CHECK(rec["n"] == 100);
  CHECK(r.err.find("master_seed") != std::string::npos);
  CHECK(r.err.find("sigma = 0.3") != std::string::npos);
}

TEST_CASE("usage and error categories") {
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({}).code == 2);
  CHECK(run({"--help"}).code == 0);
  auto missing = run({"train-bc", "--data", "/nonexistent.csv", "--model-out", "/tmp/x.json"});
  CHECK(missing.code == 1);
  CHECK(missing.err.find("[io]") != std::string::npos);
  auto flag = run({"train-bc", "--data", "x.csv"});
  CHECK(flag.code == 1);
  CHECK(flag.err.find("--model-out") != std::string::npos);
  auto preset = run({"--preset", "nope", "certify", "--tally", "1/2"});
  CHECK(preset.code == 1);
  CHECK(preset.err.find("[config]") != std::string::npos);
  CHECK(run({"certify", "--tally", "5/2"}).code == 1);
}

TEST_CASE("config file, preset and flag precedence") {
  const auto dir = oracle::temp_dir("cfg");
  const auto cfg = (dir / "run.cfg").string();
  std::ofstream(cfg) << "sigma = 0.5\nalpha = 0.01\n";
  const auto log = (dir / "run.log").string();
  auto r = run({"--preset", "paper-eval", "--config", cfg, "--log", log, "certify", "--tally",
                "45/50", "--alpha", "0.001"});
  REQUIRE(r.code == 0);
  const auto rec = nlohmann::json::parse(r.out);
  CHECK(rec["sigma"] == 0.5);
  CHECK(rec["alpha"] == 0.001);
  CHECK(r.err.find("variants = 5") != std::string::npos);
  CHECK(slurp(log).find("command=certify") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("end-to-end pipeline is deterministic") {
  const auto a = oracle::temp_dir("e2e_a");
  const auto b = oracle::temp_dir("e2e_b");
  pipeline(a, "17");
  pipeline(b, "17");
  for (const char* f : {"all.csv", "train.csv", "test.csv", "bc.json", "sc.json", "aug.csv",
                        "cert.jsonl", "pred.jsonl", "stress.csv"}) {
    INFO(f);
    CHECK(slurp(a / f) == slurp(b / f));
  }
  std::istringstream certs(slurp(a / "cert.jsonl"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(certs, line)) {
    const auto rec = nlohmann::json::parse(line);
    CHECK(rec.contains("trace"));
    CHECK(rec.contains("radius_max"));
    ++n;
  }
  CHECK(n == 24);
  const auto stress = slurp(a / "stress.csv");
  CHECK(std::count(stress.begin(), stress.end(), '\n') == 9);

  const auto rep = run({"report", "--stress", (a / "stress.csv").string(), "--certificates",
                        (a / "cert.jsonl").string(), "--out", (a / "report.md").string()});
  REQUIRE(rep.code == 0);
  CHECK(rep.out.find("| scenario | model |") != std::string::npos);
  CHECK(rep.out.find("samples: 24") != std::string::npos);
  CHECK(rep.out.find("ablates feature groups") != std::string::npos);

  auto other_dim = run({"synth", "--out", (a / "d50.csv").string(), "--dim", "50", "--n-per-class", "5"});
  REQUIRE(other_dim.code == 0);
  auto mismatch = run({"predict", "--model", (a / "bc.json").string(), "--data",
                       (a / "d50.csv").string(), "--out", (a / "p.jsonl").string()});
  CHECK(mismatch.code == 1);
  CHECK(mismatch.err.find("[dimension mismatch]") != std::string::npos);

  pipeline(b, "18");
  CHECK(slurp(a / "all.csv") != slurp(b / "all.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("extract builds a dataset from binaries") {
  const auto dir = oracle::temp_dir("extract");
  fs::create_directories(dir / "ben");
  fs::create_directories(dir / "mal");
  const auto pe = oracle::minimal_pe(true).bytes;
  std::ofstream(dir / "ben" / "a.exe", std::ios::binary).write(reinterpret_cast<const char*>(pe.data()), static_cast<std::streamsize>(pe.size()));
  std::ofstream(dir / "ben" / "notes.txt") << "plain text, not a PE";
  std::ofstream(dir / "mal" / "b.exe", std::ios::binary).write(reinterpret_cast<const char*>(pe.data()), 0x300);
  const auto out = (dir / "pe.csv").string();
  const auto r = run({"extract", "--benign", (dir / "ben").string(), "--malicious",
                      (dir / "mal").string(), "--out", out});
  INFO(r.err);
  REQUIRE(r.code == 0);
  const auto ds = load_dataset(out, "pe629");
  CHECK(ds.size() == 3);
  CHECK(ds.dim == 629);
  CHECK(ds.ids[0] == "benign/a.exe");
  CHECK(ds.labels[2] == 1);
  fs::remove_all(dir);
}
