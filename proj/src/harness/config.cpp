#include "escape/harness/config.hpp"

#include <fstream>
#include <set>

#include "escape/errors.hpp"
#include "escape/theory.hpp"

namespace escape {

using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Object reader that remembers which keys were consumed.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigInvalid(path_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  std::string path(const std::string& key) const { return join(path_, key); }

  const json& at(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const json& v = at(key);
    if (!v.is_number()) throw ConfigInvalid(path(key), "expected a number");
    return v.get<double>();
  }

  template <typename Int>
  Int integer(const std::string& key, Int fallback) {
    if (!has(key)) return fallback;
    const json& v = at(key);
    if (!v.is_number_integer()) throw ConfigInvalid(path(key), "expected an integer");
    if constexpr (std::is_unsigned_v<Int>) {
      if (v.is_number_unsigned()) return v.get<Int>();
      if (v.get<long long>() < 0) throw ConfigInvalid(path(key), "expected a nonnegative integer");
    }
    return v.get<Int>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = at(key);
    if (!v.is_boolean()) throw ConfigInvalid(path(key), "expected a boolean");
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const json& v = at(key);
    if (!v.is_string()) throw ConfigInvalid(path(key), "expected a string");
    return v.get<std::string>();
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
    if (!has(key)) return fallback;
    const json& v = at(key);
    if (!v.is_array()) throw ConfigInvalid(path(key), "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigInvalid(path(key) + "[" + std::to_string(i) + "]", "expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigInvalid(path(key), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
auto parse_enum(F&& parse, const std::string& value, const std::string& path) {
  try {
    return parse(value);
  } catch (const Error& e) {
    throw ConfigInvalid(path, e.what());
  }
}

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ConfigInvalid(path, what);
}

GraphSpec parse_graph(const json& j, const std::string& path) {
  GraphSpec g;
  Reader r(j, path);
  if (r.has("random")) {
    Reader rr(r.at("random"), r.path("random"));
    g.K = rr.integer<Eigen::Index>("K", g.K);
    g.edge_prob = rr.number("edge_prob", g.edge_prob);
    g.seed = rr.integer<std::uint64_t>("seed", g.seed);
    rr.finish();
    require(g.K >= 1, rr.path("K"), "must be at least 1");
    require(g.edge_prob >= 0.0 && g.edge_prob <= 1.0, rr.path("edge_prob"), "must lie in [0, 1]");
    r.finish();
    return g;
  }
  g.explicit_graph = graph_from_json(j, path);
  return g;
}

PerturbationSpec parse_perturbation(Reader& r, AttackMethod& attack) {
  PerturbationSpec p;
  p.norm = parse_enum(parse_norm, r.string("norm", "l2"), r.path("norm"));
  p.epsilon = r.number("epsilon", p.norm == Norm::linf ? 8.0 / 255.0 : 128.0 / 255.0);
  require(p.epsilon >= 0.0, r.path("epsilon"), "must be nonnegative");
  if (r.has("attack")) {
    Reader a(r.at("attack"), r.path("attack"));
    attack = parse_enum(parse_attack, a.string("method", "exact"), a.path("method"));
    p.steps = a.integer<int>("steps", p.steps);
    p.step_size = a.number("step_size", p.step_size);
    a.finish();
    require(p.steps >= 1, a.path("steps"), "must be at least 1");
    require(p.step_size >= 0.0, a.path("step_size"), "must be nonnegative (0 selects 2.5 * epsilon / steps)");
  }
  return p;
}

EnsembleSpec parse_ensemble(const json& j, const std::string& path, LossKind kind) {
  EnsembleSpec e;
  e.kind = kind;
  Reader r(j, path);
  auto positive = [&](Eigen::Index v, const std::string& key) { require(v >= 1, r.path(key), "must be at least 1"); };
  switch (kind) {
    case LossKind::robust_linear_regression: {
      auto& s = e.regression;
      s.dim = r.integer<Eigen::Index>("dim", s.dim);
      s.samples = r.integer<Eigen::Index>("samples", s.samples);
      s.heterogeneity = r.number("heterogeneity", s.heterogeneity);
      s.label_noise = r.number("label_noise", s.label_noise);
      s.identical_shards = r.boolean("identical_shards", s.identical_shards);
      s.seed = r.integer<std::uint64_t>("seed", s.seed);
      positive(s.dim, "dim");
      positive(s.samples, "samples");
      break;
    }
    case LossKind::quadratic_heterogeneous: {
      auto& s = e.quadratic;
      s.dim = r.integer<Eigen::Index>("dim", s.dim);
      s.samples = r.integer<Eigen::Index>("samples", s.samples);
      s.heterogeneity = r.number("heterogeneity", s.heterogeneity);
      s.hessian_disagreement = r.number("hessian_disagreement", s.hessian_disagreement);
      s.noise_scale = r.number("noise_scale", s.noise_scale);
      s.eig_min = r.number("eig_min", s.eig_min);
      s.eig_max = r.number("eig_max", s.eig_max);
      s.identical_shards = r.boolean("identical_shards", s.identical_shards);
      s.seed = r.integer<std::uint64_t>("seed", s.seed);
      positive(s.dim, "dim");
      positive(s.samples, "samples");
      require(s.eig_min > 0.0 && s.eig_max >= s.eig_min, r.path("eig_min"), "need 0 < eig_min <= eig_max");
      require(s.hessian_disagreement >= 0.0 && s.hessian_disagreement < s.eig_min, r.path("hessian_disagreement"),
              "must lie in [0, eig_min)");
      break;
    }
    case LossKind::double_well_2d: {
      auto& s = e.double_well;
      s.samples = r.integer<Eigen::Index>("samples", s.samples);
      s.heterogeneity = r.number("heterogeneity", s.heterogeneity);
      s.noise_scale = r.number("noise_scale", s.noise_scale);
      s.length = r.number("length", s.length);
      s.h_flat = r.number("h_flat", s.h_flat);
      s.kappa_flat = r.number("kappa_flat", s.kappa_flat);
      s.anchor_distance = r.number("anchor_distance", s.anchor_distance);
      s.identical_shards = r.boolean("identical_shards", s.identical_shards);
      s.seed = r.integer<std::uint64_t>("seed", s.seed);
      positive(s.samples, "samples");
      require(s.length > 0.0, r.path("length"), "must be positive");
      require(s.h_flat > 0.0, r.path("h_flat"), "must be positive");
      require(s.kappa_flat > 0.0, r.path("kappa_flat"), "must be positive");
      break;
    }
  }
  r.finish();
  return e;
}

void parse_training(Reader& r, TrainingConfig& t) {
  t.mu = r.number("mu", t.mu);
  t.batch = r.integer<Eigen::Index>("batch", t.batch);
  t.horizon = r.integer<long>("horizon", t.horizon);
  t.stride = r.integer<long>("stride", t.stride);
  if (r.has("init")) {
    const json& init = r.at("init");
    if (init.is_string()) {
      require(init.get<std::string>() == "at_minimizer", r.path("init"), "expected \"at_minimizer\" or {\"offset\": [...]}");
    } else {
      Reader ir(init, r.path("init"));
      const std::vector<double> off = ir.numbers("offset", {});
      ir.finish();
      require(!off.empty(), ir.path("offset"), "must be a nonempty array");
      t.init_offset = Eigen::Map<const Vec>(off.data(), static_cast<Eigen::Index>(off.size()));
    }
  }
  require(t.mu > 0.0, r.path("mu"), "must be positive");
  require(t.batch >= 1, r.path("batch"), "must be at least 1");
  require(t.horizon >= 1, r.path("horizon"), "must be at least 1");
  require(t.stride >= 1, r.path("stride"), "must be at least 1");
}

json graph_to_json(const Graph& g) {
  json edges = json::array(), loops = json::array();
  for (Eigen::Index i = 0; i < g.K; ++i) {
    if (g.adjacency(i, i)) loops.push_back(i);
    for (Eigen::Index j = i + 1; j < g.K; ++j)
      if (g.adjacency(i, j)) edges.push_back({i, j});
  }
  return {{"K", g.K}, {"edges", edges}, {"self_loops", loops}};
}

}  // namespace

Graph GraphSpec::build() const { return explicit_graph ? *explicit_graph : random_connected_graph(K, edge_prob, seed); }

TrainingConfig ExperimentConfig::training_for(Strategy s) const {
  TrainingConfig t = training;
  t.strategy = s;
  t.seed = seed;
  if (auto it = overrides.find(s); it != overrides.end()) {
    if (it->second.mu) t.mu = *it->second.mu;
    if (it->second.batch) t.batch = *it->second.batch;
  }
  return t;
}

Graph graph_from_json(const json& j, const std::string& path) {
  Reader r(j, path);
  require(r.has("K"), r.path("K"), "missing");
  const auto K = r.integer<Eigen::Index>("K", 0);
  require(K >= 1, r.path("K"), "must be at least 1");
  std::vector<std::pair<Eigen::Index, Eigen::Index>> edges;
  std::vector<Eigen::Index> loops;
  auto index = [&](const json& v, const std::string& p) {
    if (!v.is_number_integer()) throw ConfigInvalid(p, "expected an integer");
    const auto i = v.get<Eigen::Index>();
    require(i >= 0 && i < K, p, "agent index out of range");
    return i;
  };
  if (r.has("edges")) {
    const json& e = r.at("edges");
    require(e.is_array(), r.path("edges"), "expected an array of pairs");
    for (std::size_t n = 0; n < e.size(); ++n) {
      const std::string p = r.path("edges") + "[" + std::to_string(n) + "]";
      require(e[n].is_array() && e[n].size() == 2, p, "expected a pair [i, j]");
      edges.emplace_back(index(e[n][0], p + "[0]"), index(e[n][1], p + "[1]"));
    }
  }
  if (r.has("self_loops")) {
    const json& s = r.at("self_loops");
    require(s.is_array(), r.path("self_loops"), "expected an array");
    for (std::size_t n = 0; n < s.size(); ++n)
      loops.push_back(index(s[n], r.path("self_loops") + "[" + std::to_string(n) + "]"));
  }
  r.finish();
  return Graph::from_edges(K, edges, loops);
}

Graph load_graph(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot open " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigInvalid(file.string(), e.what());
  }
  return graph_from_json(j, "");
}

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig cfg;
  Reader r(j, "");
  cfg.seed = r.integer<std::uint64_t>("seed", cfg.seed);
  cfg.trials = r.integer<long>("trials", cfg.trials);
  require(cfg.trials >= 1, "trials", "must be at least 1");
  cfg.output = r.string("output", cfg.output.string());

  if (r.has("graph")) cfg.graph = parse_graph(r.at("graph"), "graph");

  require(r.has("loss"), "loss", "missing");
  {
    Reader l(r.at("loss"), "loss");
    const LossKind kind = parse_enum(parse_loss_kind, l.string("kind", "quadratic_heterogeneous"), l.path("kind"));
    cfg.perturbation = parse_perturbation(l, cfg.attack);
    cfg.ensemble = parse_ensemble(l.has("ensemble") ? l.at("ensemble") : json::object(), l.path("ensemble"), kind);
    l.finish();
  }

  if (r.has("training")) {
    Reader t(r.at("training"), "training");
    parse_training(t, cfg.training);
    t.finish();
  }
  if (cfg.training.init_offset) {
    const Eigen::Index M = cfg.ensemble.kind == LossKind::double_well_2d  ? 2
                           : cfg.ensemble.kind == LossKind::quadratic_heterogeneous ? cfg.ensemble.quadratic.dim
                                                                                     : cfg.ensemble.regression.dim;
    require(cfg.training.init_offset->size() == M, "training.init.offset", "length must equal the model dimension");
  }

  if (r.has("per_strategy")) {
    const json& ps = r.at("per_strategy");
    Reader pr(ps, "per_strategy");
    for (Strategy s : kAllStrategies) {
      const std::string name(to_string(s));
      if (!pr.has(name)) continue;
      Reader o(pr.at(name), pr.path(name));
      StrategyOverride ov;
      if (o.has("mu")) ov.mu = o.number("mu", 0.0);
      if (o.has("batch")) ov.batch = o.integer<Eigen::Index>("batch", 1);
      o.finish();
      require(!ov.mu || *ov.mu > 0.0, o.path("mu"), "must be positive");
      require(!ov.batch || *ov.batch >= 1, o.path("batch"), "must be at least 1");
      cfg.overrides[s] = ov;
    }
    pr.finish();
  }

  if (r.has("strategies")) {
    const json& s = r.at("strategies");
    require(s.is_array() && !s.empty(), "strategies", "expected a nonempty array");
    cfg.strategies.clear();
    for (std::size_t i = 0; i < s.size(); ++i) {
      const std::string p = "strategies[" + std::to_string(i) + "]";
      require(s[i].is_string(), p, "expected a strategy name");
      const Strategy st = parse_enum(parse_strategy, s[i].get<std::string>(), p);
      for (Strategy seen : cfg.strategies) require(seen != st, p, "duplicate strategy");
      cfg.strategies.push_back(st);
    }
  }

  if (r.has("report")) {
    Reader rep(r.at("report"), "report");
    if (rep.has("theory")) {
      const json& t = rep.at("theory");
      if (t.is_boolean()) {
        cfg.theory.enabled = t.get<bool>();
      } else {
        Reader tr(t, rep.path("theory"));
        cfg.theory.enabled = tr.boolean("enabled", true);
        cfg.theory.n_max = tr.integer<long>("n_max", cfg.theory.n_max);
        tr.finish();
        require(cfg.theory.n_max >= -1, tr.path("n_max"), "must be nonnegative");
      }
    }
    if (rep.has("escape")) {
      const json& e = rep.at("escape");
      if (e.is_boolean()) {
        cfg.escape.enabled = e.get<bool>();
      } else {
        Reader er(e, rep.path("escape"));
        cfg.escape.enabled = er.boolean("enabled", true);
        cfg.escape.basin.gd_steps = er.integer<long>("gd_steps", cfg.escape.basin.gd_steps);
        cfg.escape.basin.gd_mu = er.number("gd_mu", cfg.escape.basin.gd_mu);
        cfg.escape.basin.tol = er.number("tol", cfg.escape.basin.tol);
        cfg.escape.basin.basin_scale = er.number("basin_scale", cfg.escape.basin.basin_scale);
        cfg.escape.basin.adaptive_step = er.boolean("adaptive_step", cfg.escape.basin.adaptive_step);
        er.finish();
        require(cfg.escape.basin.gd_steps >= 1, er.path("gd_steps"), "must be at least 1");
        require(cfg.escape.basin.gd_mu > 0.0, er.path("gd_mu"), "must be positive");
        require(cfg.escape.basin.tol > 0.0, er.path("tol"), "must be positive");
        require(cfg.escape.basin.basin_scale > 0.0, er.path("basin_scale"), "must be positive");
      }
    }
    if (rep.has("landscape")) {
      const json& l = rep.at("landscape");
      if (l.is_boolean()) {
        cfg.landscape.enabled = l.get<bool>();
      } else {
        Reader lr(l, rep.path("landscape"));
        cfg.landscape.enabled = lr.boolean("enabled", true);
        cfg.landscape.n_dirs = lr.integer<int>("n_dirs", cfg.landscape.n_dirs);
        cfg.landscape.alphas = lr.numbers("alphas", cfg.landscape.alphas);
        cfg.landscape.seed = lr.integer<std::uint64_t>("seed", cfg.landscape.seed);
        lr.finish();
        require(cfg.landscape.n_dirs >= 1, lr.path("n_dirs"), "must be at least 1");
        require(!cfg.landscape.alphas.empty(), lr.path("alphas"), "must be nonempty");
      }
    }
    rep.finish();
  }
  r.finish();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot open " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigInvalid(file.string(), e.what());
  }
  return parse_config(j);
}

json to_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["trials"] = cfg.trials;
  j["output"] = cfg.output.string();
  if (cfg.graph.explicit_graph)
    j["graph"] = graph_to_json(*cfg.graph.explicit_graph);
  else
    j["graph"] = {{"random", {{"K", cfg.graph.K}, {"edge_prob", cfg.graph.edge_prob}, {"seed", cfg.graph.seed}}}};

  json loss;
  loss["kind"] = std::string(to_string(cfg.ensemble.kind));
  loss["norm"] = std::string(to_string(cfg.perturbation.norm));
  loss["epsilon"] = cfg.perturbation.epsilon;
  loss["attack"] = {{"method", std::string(to_string(cfg.attack))},
                    {"steps", cfg.perturbation.steps},
                    {"step_size", cfg.perturbation.effective_step()}};
  switch (cfg.ensemble.kind) {
    case LossKind::robust_linear_regression: {
      const auto& s = cfg.ensemble.regression;
      loss["ensemble"] = {{"dim", s.dim},
                          {"samples", s.samples},
                          {"heterogeneity", s.heterogeneity},
                          {"label_noise", s.label_noise},
                          {"identical_shards", s.identical_shards},
                          {"seed", s.seed}};
      break;
    }
    case LossKind::quadratic_heterogeneous: {
      const auto& s = cfg.ensemble.quadratic;
      loss["ensemble"] = {{"dim", s.dim},
                          {"samples", s.samples},
                          {"heterogeneity", s.heterogeneity},
                          {"hessian_disagreement", s.hessian_disagreement},
                          {"noise_scale", s.noise_scale},
                          {"eig_min", s.eig_min},
                          {"eig_max", s.eig_max},
                          {"identical_shards", s.identical_shards},
                          {"seed", s.seed}};
      break;
    }
    case LossKind::double_well_2d: {
      const auto& s = cfg.ensemble.double_well;
      loss["ensemble"] = {{"samples", s.samples},
                          {"heterogeneity", s.heterogeneity},
                          {"noise_scale", s.noise_scale},
                          {"length", s.length},
                          {"h_flat", s.h_flat},
                          {"kappa_flat", s.kappa_flat},
                          {"anchor_distance", s.anchor_distance},
                          {"identical_shards", s.identical_shards},
                          {"seed", s.seed}};
      break;
    }
  }
  j["loss"] = loss;

  json training = {{"mu", cfg.training.mu},
                   {"batch", cfg.training.batch},
                   {"horizon", cfg.training.horizon},
                   {"stride", cfg.training.stride}};
  if (cfg.training.init_offset)
    training["init"] = {{"offset", std::vector<double>(cfg.training.init_offset->begin(), cfg.training.init_offset->end())}};
  else
    training["init"] = "at_minimizer";
  j["training"] = training;

  json per = json::object();
  for (const auto& [s, ov] : cfg.overrides) {
    json o = json::object();
    if (ov.mu) o["mu"] = *ov.mu;
    if (ov.batch) o["batch"] = *ov.batch;
    per[std::string(to_string(s))] = o;
  }
  j["per_strategy"] = per;

  json strategies = json::array();
  for (Strategy s : cfg.strategies) strategies.push_back(std::string(to_string(s)));
  j["strategies"] = strategies;

  j["report"] = {
      {"theory", {{"enabled", cfg.theory.enabled}, {"n_max", cfg.theory.n_max}}},
      {"escape",
       {{"enabled", cfg.escape.enabled},
        {"gd_steps", cfg.escape.basin.gd_steps},
        {"gd_mu", cfg.escape.basin.gd_mu},
        {"tol", cfg.escape.basin.tol},
        {"basin_scale", cfg.escape.basin.basin_scale},
        {"adaptive_step", cfg.escape.basin.adaptive_step}}},
      {"landscape",
       {{"enabled", cfg.landscape.enabled},
        {"n_dirs", cfg.landscape.n_dirs},
        {"alphas", cfg.landscape.alphas},
        {"seed", cfg.landscape.seed}}},
  };
  return j;
}

Problem build_problem(const ExperimentConfig& cfg) {
  Problem p;
  p.spec = cfg.perturbation;
  p.attack = cfg.attack;
  const Eigen::Index K = cfg.graph.agents();
  Vec start;
  switch (cfg.ensemble.kind) {
    case LossKind::robust_linear_regression: {
      RegressionEnsembleSpec s = cfg.ensemble.regression;
      s.K = K;
      p.models = make_regression_ensemble(s);
      start = Vec::Zero(s.dim);
      break;
    }
    case LossKind::quadratic_heterogeneous: {
      QuadraticEnsembleSpec s = cfg.ensemble.quadratic;
      s.K = K;
      p.models = make_quadratic_ensemble(s);
      start = Vec::Zero(s.dim);
      break;
    }
    case LossKind::double_well_2d: {
      DoubleWellEnsembleSpec s = cfg.ensemble.double_well;
      s.K = K;
      p.models = make_double_well_ensemble(s);
      start = Vec::Zero(2);  // sharp minimum of the untilted potential
      break;
    }
  }
  p.w_star = locate_minimizer(p.models, start, p.spec, p.attack);
  return p;
}

}  // namespace escape
