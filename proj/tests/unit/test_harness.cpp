#include <doctest.h>

#include <fstream>
#include <sstream>
#include <unistd.h>

#include "escape/errors.hpp"
#include "escape/harness/config.hpp"
#include "escape/harness/csv.hpp"
#include "escape/harness/plot.hpp"
#include "escape/harness/suite.hpp"

using namespace escape;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("escape-unit-" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json small_config() {
  return json::parse(R"({
    "seed": 5, "trials": 6,
    "graph": {"random": {"K": 4, "edge_prob": 0.6, "seed": 2}},
    "loss": {"kind": "quadratic_heterogeneous", "norm": "l2", "epsilon": 0.001,
             "ensemble": {"dim": 3, "samples": 16, "heterogeneity": 1.0, "hessian_disagreement": 0.1, "seed": 4}},
    "training": {"mu": 0.05, "batch": 32, "horizon": 8},
    "report": {"theory": true, "landscape": {"n_dirs": 2, "alphas": [-0.5, 0, 0.5]}}
  })");
}

std::string config_error(const json& j) {
  try {
    parse_config(j);
  } catch (const ConfigInvalid& e) {
    return e.path;
  }
  return "";
}

}  // namespace

TEST_CASE("config defaults") {
  const auto cfg = parse_config(json::parse(R"({"loss": {"kind": "double_well_2d", "norm": "linf"}})"));
  CHECK(cfg.ensemble.kind == LossKind::double_well_2d);
  CHECK(cfg.perturbation.norm == Norm::linf);
  CHECK(cfg.perturbation.epsilon == doctest::Approx(8.0 / 255.0));
  CHECK(cfg.strategies.size() == 3);
  CHECK(cfg.theory.enabled);
  CHECK_FALSE(cfg.escape.enabled);
  const auto l2 = parse_config(json::parse(R"({"loss": {"norm": "l2"}})"));
  CHECK(l2.perturbation.epsilon == doctest::Approx(128.0 / 255.0));
}

TEST_CASE("config errors name the offending path") {
  json j = small_config();
  j["training"]["momentum"] = 0.9;
  CHECK(config_error(j) == "training.momentum");
  j = small_config();
  j["trials"] = "many";
  CHECK(config_error(j) == "trials");
  j = small_config();
  j["loss"]["ensemble"]["dimension"] = 3;
  CHECK(config_error(j) == "loss.ensemble.dimension");
  j = small_config();
  j["strategies"] = {"diffusion", "gossip"};
  CHECK(config_error(j) == "strategies[1]");
  j = small_config();
  j["training"]["mu"] = -0.1;
  CHECK(config_error(j).rfind("training", 0) == 0);
  j = small_config();
  j.erase("loss");
  CHECK(config_error(j) == "loss");
}

TEST_CASE("resolved config round-trips") {
  json j = small_config();
  j["per_strategy"] = {{"consensus", {{"mu", 0.02}}}};
  const auto cfg = parse_config(j);
  CHECK(cfg.training_for(Strategy::consensus).mu == 0.02);
  CHECK(cfg.training_for(Strategy::diffusion).mu == 0.05);
  CHECK(to_json(parse_config(to_json(cfg))) == to_json(cfg));
}

TEST_CASE("graph files") {
  const Graph g = graph_from_json(json::parse(R"({"K": 3, "edges": [[0, 1], [1, 2]], "self_loops": [0, 1, 2]})"));
  CHECK(g.connected());
  CHECK(g.neighborhood_size(1) == 3);
  CHECK_THROWS(graph_from_json(json::parse(R"({"K": 3, "edges": [[0, 3]], "self_loops": [0]})")));
  CHECK_THROWS(graph_from_json(json::parse(R"({"K": 3, "edges": [[0, 1]], "colour": 1})")));
  CHECK(load_graph(fs::path(ESCAPE_SOURCE_DIR) / "configs/ring-k8.json").K == 8);
}

TEST_CASE("csv numbers round-trip and missing columns are reported") {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.0}) CHECK(std::stod(format_number(v)) == v);
  const fs::path dir = scratch("csv");
  {
    std::ofstream out(dir / "t.csv");
    CsvWriter w(out);
    w.header({"n", "strategy", "value"});
    w.cell(3L).cell("diffusion").cell(0.1).end_row();
    w.cell(4L).cell("consensus").cell(1.0 / 3.0).end_row();
  }
  const CsvTable t = read_csv(dir / "t.csv");
  CHECK(t.has("value"));
  CHECK(t.numbers("value")[1] == 1.0 / 3.0);
  CHECK(t.strings("strategy")[0] == "diffusion");
  CHECK_THROWS_AS(t.column("er_empirical"), MissingColumn);
}

TEST_CASE("suite writes every artifact") {
  ExperimentConfig cfg = parse_config(small_config());
  cfg.output = scratch("suite");
  const SuiteResult r = run_suite(cfg, 1);
  for (const char* f : {"trace.csv", "theory.csv", "landscape.csv", "meta.json"}) CHECK(fs::exists(cfg.output / f));
  CHECK_FALSE(fs::exists(cfg.output / ".lock"));

  const CsvTable trace = read_csv(cfg.output / "trace.csv");
  const std::vector<std::string> head{"n", "strategy", "er_empirical", "er_stderr", "consensus_distance", "mean_sq_error",
                                      "er_agent_0"};
  for (std::size_t i = 0; i < head.size(); ++i) CHECK(trace.header[i] == head[i]);
  CHECK(trace.rows.size() == 3 * 9);

  const CsvTable theory = read_csv(cfg.output / "theory.csv");
  const auto cen = theory.numbers("er_cen"), dif = theory.numbers("er_dif"), con = theory.numbers("er_con");
  CHECK(cen.size() == 8);
  for (std::size_t n = 0; n < cen.size(); ++n) {
    CHECK(cen[n] <= dif[n]);
    CHECK(dif[n] <= con[n]);
  }

  const json meta = json::parse(slurp(cfg.output / "meta.json"));
  CHECK(meta["config"] == to_json(cfg));
  CHECK(meta["strategies"]["diffusion"]["regime"]["large_batch"] == true);
  CHECK(meta["strategies"]["diffusion"]["regime"]["small_eps"] == true);
  CHECK(meta["strategies"]["consensus"]["diverged"] == false);
}

TEST_CASE("suite output is identical across runs and thread counts") {
  json j = small_config();
  j["loss"] = json::parse(R"({"kind": "double_well_2d", "epsilon": 0.005,
                             "ensemble": {"heterogeneity": 2.0, "samples": 16, "seed": 5}})");
  j["report"]["escape"] = true;
  std::vector<std::string> reference;
  for (int threads : {1, 2, 8, 1}) {
    ExperimentConfig cfg = parse_config(j);
    // Same path every time: meta.json echoes the output directory.
    cfg.output = scratch("det");
    const SuiteResult r = run_suite(cfg, threads);
    std::vector<std::string> contents;
    for (const auto& f : r.files) contents.push_back(f + "\n" + slurp(cfg.output / f));
    if (reference.empty())
      reference = contents;
    else
      CHECK(contents == reference);
  }
  CHECK(reference.size() == 5);
}

TEST_CASE("divergence keeps partial artifacts") {
  json j = small_config();
  j["training"]["mu"] = 40.0;
  j["training"]["horizon"] = 400;
  j["training"]["init"] = {{"offset", {1.0, 1.0, 1.0}}};
  ExperimentConfig cfg = parse_config(j);
  cfg.output = scratch("diverge");
  CHECK_THROWS_AS(run_suite(cfg, 1), DivergedNaN);
  CHECK(fs::exists(cfg.output / "trace.csv"));
  CHECK(fs::exists(cfg.output / "meta.json"));
  CHECK(json::parse(slurp(cfg.output / "meta.json"))["strategies"]["diffusion"]["diverged"] == true);
}

TEST_CASE("one owner per output directory") {
  const fs::path dir = scratch("lock");
  {
    OutputLock first(dir);
    CHECK_THROWS_AS(OutputLock{dir}, Error);
  }
  CHECK_NOTHROW(OutputLock{dir});
}

TEST_CASE("plots") {
  const fs::path dir = scratch("plot");
  {
    std::ofstream out(dir / "trace.csv");
    out << "n,strategy,er_empirical,er_stderr,consensus_distance,mean_sq_error\n";
  }
  const std::string empty = plot_svg(PlotKind::er_curves, {dir / "trace.csv"});
  CHECK(empty.find("<svg") != std::string::npos);
  CHECK(empty.find("<polyline") == std::string::npos);

  ExperimentConfig cfg = parse_config(small_config());
  cfg.output = dir / "run";
  run_suite(cfg, 1);
  const std::string svg = plot_svg(PlotKind::er_curves, {cfg.output / "trace.csv", cfg.output / "theory.csv"});
  const auto cen = svg.find(">centralized"), dif = svg.find(">diffusion"), con = svg.find(">consensus");
  REQUIRE(cen != std::string::npos);
  CHECK(cen < dif);
  CHECK(dif < con);
  CHECK(svg == plot_svg(PlotKind::er_curves, {cfg.output / "trace.csv", cfg.output / "theory.csv"}));
  CHECK(plot_svg(PlotKind::landscape, {cfg.output / "landscape.csv"}).find("<polyline") != std::string::npos);
  CHECK_THROWS_AS(plot_svg(PlotKind::landscape, {cfg.output / "trace.csv"}), MissingColumn);
  CHECK(parse_plot_kind("escape") == PlotKind::escape);
}

TEST_CASE("quadratic landscape profiles are parabolas around w*") {
  json j = small_config();
  j["loss"]["epsilon"] = 0.0;
  j["report"] = {{"theory", false}, {"landscape", {{"n_dirs", 3}, {"alphas", {-1.0, -0.5, 0.0, 0.5, 1.0}}}}};
  ExperimentConfig cfg = parse_config(j);
  cfg.output = scratch("landscape");
  run_suite(cfg, 1);
  const CsvTable t = read_csv(cfg.output / "landscape.csv");
  const auto risk = t.numbers("risk");
  REQUIRE(risk.size() == 15);
  for (std::size_t d = 0; d < 3; ++d) {
    const double* r = &risk[5 * d];
    CHECK(r[1] == doctest::Approx(r[3]).epsilon(1e-9));
    CHECK(r[4] - r[2] == doctest::Approx(4.0 * (r[3] - r[2])).epsilon(1e-9));
    CHECK(r[3] > r[2]);
  }
}
