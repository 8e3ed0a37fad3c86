#include "zapq/config.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace zapq {
namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

using SectionMap = std::map<std::string, std::map<std::string, std::string>>;

SectionMap parse_ini(const std::string& text) {
  SectionMap sections;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      sections[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": key outside any [section]");
    if (!sections[section].emplace(key, value).second)
      throw ConfigError("config: duplicate key '" + key + "' in [" + section +
                        "]");
  }
  return sections;
}

class SectionReader {
 public:
  SectionReader(const SectionMap& map, const std::string& name)
      : name_(name) {
    const auto it = map.find(name);
    if (it != map.end()) entries_ = &it->second;
  }

  bool has(const std::string& key) const {
    return entries_ && entries_->count(key) > 0;
  }

  std::string str(const std::string& key, const std::string& fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    return entries_->at(key);
  }

  double num(const std::string& key, double fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    return parse_double(key, entries_->at(key));
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    const double v = parse_double(key, entries_->at(key));
    const auto r = static_cast<std::int64_t>(std::llround(v));
    if (std::abs(v - static_cast<double>(r)) > 1e-9)
      throw ConfigError("config: [" + name_ + "] " + key +
                        " must be an integer");
    return r;
  }

  bool boolean(const std::string& key, bool fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    const std::string& v = entries_->at(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: [" + name_ + "] " + key + " must be boolean");
  }

  void reject_unknown() const {
    if (!entries_) return;
    for (const auto& [key, value] : *entries_)
      if (!seen_.count(key))
        throw ConfigError("config: unknown key '" + key + "' in [" + name_ +
                          "]");
  }

 private:
  double parse_double(const std::string& key, const std::string& v) const {
    try {
      std::size_t pos = 0;
      const double out = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw ConfigError("config: [" + name_ + "] " + key +
                        " is not a number: '" + v + "'");
    }
  }

  std::string name_;
  const std::map<std::string, std::string>* entries_ = nullptr;
  std::set<std::string> seen_;
};

}  // namespace

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  const SectionMap map = parse_ini(text);
  static const std::set<std::string> known_sections{
      "chain", "basis", "algorithm", "run", "eval", "analysis", "output"};
  for (const auto& [name, entries] : map)
    if (!known_sections.count(name))
      throw ConfigError("config: unknown section [" + name + "]");

  ExperimentConfig cfg;

  SectionReader chain(map, "chain");
  cfg.chain_kind = chain.str("kind", cfg.chain_kind);
  cfg.n_states = static_cast<int>(chain.integer("n_states", cfg.n_states));
  cfg.chain_seed =
      static_cast<std::uint64_t>(chain.integer("seed", static_cast<std::int64_t>(cfg.chain_seed)));
  cfg.beta = chain.num("beta", cfg.beta);
  cfg.chain_path = chain.str("path", cfg.chain_path);
  cfg.gbm.window = static_cast<int>(chain.integer("window", cfg.gbm.window));
  cfg.gbm.sigma = chain.num("sigma", cfg.gbm.sigma);
  cfg.gbm.drift = chain.num("drift", cfg.gbm.drift);
  chain.reject_unknown();
  if (cfg.chain_kind != "finite_random" && cfg.chain_kind != "finite_json" &&
      cfg.chain_kind != "gbm")
    throw ConfigError("config: [chain] kind must be finite_random, "
                      "finite_json or gbm");

  SectionReader basis(map, "basis");
  cfg.basis = basis.str("name", cfg.basis);
  basis.reject_unknown();

  SectionReader alg(map, "algorithm");
  try {
    cfg.strategy = gain_strategy_from_string(alg.str("strategy", "zap"));
    cfg.alpha = StepSizeSchedule::parse(alg.str("alpha", "harmonic"));
    cfg.gamma = StepSizeSchedule::parse(alg.str("gamma", "poly:0.85"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: [algorithm] ") + e.what());
  }
  cfg.a0_scale = alg.num("a0_scale", cfg.a0_scale);
  cfg.a_clamp_delta = alg.num("a_clamp_delta", cfg.a_clamp_delta);
  cfg.pinv_threshold = alg.num("pinv_threshold", cfg.pinv_threshold);
  cfg.clamp = alg.boolean("clamp", cfg.clamp);
  cfg.clamp_radius = alg.num("clamp_radius", cfg.clamp_radius);
  alg.reject_unknown();

  SectionReader run(map, "run");
  cfg.n_steps = run.integer("n_steps", cfg.n_steps);
  cfg.replicas = static_cast<int>(run.integer("replicas", cfg.replicas));
  cfg.seed = static_cast<std::uint64_t>(
      run.integer("seed", static_cast<std::int64_t>(cfg.seed)));
  cfg.snapshot_ratio = run.num("snapshot_ratio", cfg.snapshot_ratio);
  cfg.snapshot_gain = run.boolean("snapshot_gain", cfg.snapshot_gain);
  run.reject_unknown();

  SectionReader eval(map, "eval");
  cfg.eval_runs = eval.integer("n_runs", cfg.eval_runs);
  cfg.eval_seed_value = static_cast<std::uint64_t>(
      eval.integer("seed", static_cast<std::int64_t>(cfg.eval_seed_value)));
  cfg.eval_horizon = eval.integer("horizon", cfg.eval_horizon);
  cfg.hist_bins = static_cast<int>(eval.integer("bins", cfg.hist_bins));
  cfg.eval_start = eval.str("start", cfg.eval_start);
  eval.reject_unknown();

  SectionReader analysis(map, "analysis");
  cfg.noise_steps = analysis.integer("noise_steps", cfg.noise_steps);
  cfg.batches = static_cast<int>(analysis.integer("batches", cfg.batches));
  cfg.analysis_seed = static_cast<std::uint64_t>(analysis.integer(
      "seed", static_cast<std::int64_t>(cfg.analysis_seed)));
  cfg.coord = static_cast<int>(analysis.integer("coord", cfg.coord));
  cfg.ode_window = analysis.num("ode_window", cfg.ode_window);
  cfg.ode_dt = analysis.num("ode_dt", cfg.ode_dt);
  analysis.reject_unknown();

  SectionReader output(map, "output");
  cfg.out_dir = output.str("dir", cfg.out_dir);
  output.reject_unknown();

  if (cfg.n_steps < 1) throw ConfigError("config: [run] n_steps must be >= 1");
  if (cfg.replicas < 1)
    throw ConfigError("config: [run] replicas must be >= 1");
  if (cfg.beta <= 0.0 || cfg.beta >= 1.0)
    throw ConfigError("config: [chain] beta must lie in (0,1)");
  return cfg;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json chain{{"kind", chain_kind}, {"beta", beta}};
  if (chain_kind == "finite_random") {
    chain["n_states"] = n_states;
    chain["seed"] = chain_seed;
  } else if (chain_kind == "finite_json") {
    chain["path"] = chain_path;
  } else {
    chain["window"] = gbm.window;
    chain["sigma"] = gbm.sigma;
    chain["drift"] = gbm.drift;
  }
  return nlohmann::json{
      {"chain", chain},
      {"basis", basis},
      {"algorithm",
       {{"strategy", to_string(strategy)},
        {"alpha", alpha.describe()},
        {"gamma", gamma.describe()},
        {"a0_scale", a0_scale},
        {"a_clamp_delta", a_clamp_delta},
        {"pinv_threshold", pinv_threshold},
        {"clamp", clamp},
        {"clamp_radius", clamp_radius}}},
      {"run",
       {{"n_steps", n_steps},
        {"replicas", replicas},
        {"seed", seed},
        {"snapshot_ratio", snapshot_ratio},
        {"snapshot_gain", snapshot_gain}}},
      {"eval",
       {{"n_runs", eval_runs},
        {"seed", eval_seed_value},
        {"horizon", eval_horizon},
        {"bins", hist_bins},
        {"start", eval_start}}},
      {"analysis",
       {{"noise_steps", noise_steps},
        {"batches", batches},
        {"seed", analysis_seed},
        {"coord", coord},
        {"ode_window", ode_window},
        {"ode_dt", ode_dt}}},
      {"output", {{"dir", out_dir}}}};
}

std::unique_ptr<StoppingProblem> ExperimentConfig::make_problem() const {
  if (chain_kind == "finite_random") {
    if (n_states < 2)
      throw ConfigError("config: finite_random needs n_states >= 2");
    return std::make_unique<FiniteStoppingProblem>(
        random_finite_chain(n_states, chain_seed, beta));
  }
  if (chain_kind == "finite_json") {
    std::ifstream in(chain_path);
    if (!in) throw ConfigError("config: cannot open chain file " + chain_path);
    nlohmann::json j;
    try {
      in >> j;
      return std::make_unique<FiniteStoppingProblem>(
          FiniteChainModel::from_json(j));
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: bad chain file: ") + e.what());
    }
  }
  return std::make_unique<GbmStoppingProblem>(gbm, beta);
}

std::shared_ptr<FeatureMap> ExperimentConfig::make_basis(
    const StoppingProblem& problem) const {
  const auto* finite = dynamic_cast<const FiniteStoppingProblem*>(&problem);
  const auto primitives = [&]() -> std::shared_ptr<FeatureMap> {
    if (finite)
      return std::make_shared<TabularBasis>(finite->model().n_states);
    return std::make_shared<FinanceBasis>(
        dynamic_cast<const GbmStoppingProblem&>(problem).params().window);
  };
  if (basis == "tabular") {
    if (!finite)
      throw ConfigError("config: tabular basis requires a finite chain");
    return std::make_shared<TabularBasis>(finite->model().n_states);
  }
  if (basis == "finance10") {
    const auto* gbm_problem =
        dynamic_cast<const GbmStoppingProblem*>(&problem);
    if (!gbm_problem)
      throw ConfigError("config: finance10 basis requires the gbm chain");
    return std::make_shared<FinanceBasis>(gbm_problem->params().window);
  }
  if (basis.rfind("poly:", 0) == 0) {
    if (!finite)
      throw ConfigError("config: poly basis requires a finite chain");
    const int d = std::stoi(basis.substr(5));
    return std::make_shared<PolynomialBasis>(finite->model().n_states, d);
  }
  if (basis.rfind("custom:", 0) == 0) {
    const std::string path = basis.substr(7);
    try {
      return std::make_shared<CustomBasis>(
          CustomBasis::load(path, primitives()));
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: bad custom basis: ") + e.what());
    }
  }
  throw ConfigError("config: unknown basis '" + basis + "'");
}

Vector ExperimentConfig::eval_start_state(
    const StoppingProblem& problem) const {
  std::string start = eval_start;
  if (start.empty())
    start = dynamic_cast<const GbmStoppingProblem*>(&problem) ? "ones"
                                                              : "index:0";
  if (start == "ones") return Vector::Ones(problem.state_dim());
  if (start.rfind("index:", 0) == 0)
    return finite_state(std::stoi(start.substr(6)));
  throw ConfigError("config: [eval] start must be 'ones' or 'index:<i>'");
}

RunConfig ExperimentConfig::run_config() const {
  RunConfig rc;
  rc.strategy = strategy;
  rc.alpha = alpha;
  rc.gamma = gamma;
  rc.n_steps = n_steps;
  rc.seed = seed;
  rc.a0_scale = a0_scale;
  rc.a_clamp_delta = a_clamp_delta;
  rc.pinv_rel_threshold = pinv_threshold;
  rc.clamp_theta = clamp;
  rc.clamp_radius = clamp_radius;
  rc.snapshots.ratio = snapshot_ratio;
  rc.snapshots.include_gain = snapshot_gain;
  rc.echo = to_json();
  return rc;
}

void write_text_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, target);
}

}  // namespace zapq
