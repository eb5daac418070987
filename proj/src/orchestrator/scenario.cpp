#include "eve/orchestrator.hpp"

#include "eve/error.hpp"

#include <cstdlib>
#include <filesystem>
#include <set>

namespace eve::orchestrator {

namespace fs = std::filesystem;
using resources::AssetKind;
using resources::AssetParams;

namespace {

json params_to_json(const AssetParams& p) {
  return json{{"rho", p.rho},
              {"capacity", p.capacity},
              {"u_init", p.u_init},
              {"u_min", p.u_min},
              {"u_max", p.u_max},
              {"tau_c", p.tau_c},
              {"tau_s", p.tau_s},
              {"t_a", p.t_a},
              {"t_d", p.t_d},
              {"cycle", p.cycle},
              {"R", p.R},
              {"C", p.C},
              {"eta", p.eta},
              {"theta_r", p.theta_r},
              {"theta_o", p.theta_o},
              {"disturbance", p.disturbance},
              {"forecast", p.forecast},
              {"schedule", p.schedule},
              {"c1", p.c1},
              {"c1_pos", p.c1_pos},
              {"c1_neg", p.c1_neg},
              {"c0", p.c0},
              {"c_d", p.c_d},
              {"c1_tilde", p.c1_tilde},
              {"c0_tilde", p.c0_tilde},
              {"c2_tilde", p.c2_tilde},
              {"quadratic", p.quadratic}};
}

AssetParams params_from_json(const json& j) {
  AssetParams p;
  p.rho = j.value("rho", p.rho);
  p.capacity = j.value("capacity", p.capacity);
  p.u_init = j.value("u_init", p.u_init);
  p.u_min = j.value("u_min", p.u_min);
  p.u_max = j.value("u_max", p.u_max);
  p.tau_c = j.value("tau_c", p.tau_c);
  p.tau_s = j.value("tau_s", p.tau_s);
  p.t_a = j.value("t_a", p.t_a);
  p.t_d = j.value("t_d", p.t_d);
  p.cycle = j.value("cycle", p.cycle);
  p.R = j.value("R", p.R);
  p.C = j.value("C", p.C);
  p.eta = j.value("eta", p.eta);
  p.theta_r = j.value("theta_r", p.theta_r);
  p.theta_o = j.value("theta_o", p.theta_o);
  p.disturbance = j.value("disturbance", p.disturbance);
  p.forecast = j.value("forecast", p.forecast);
  p.schedule = j.value("schedule", p.schedule);
  p.c1 = j.value("c1", p.c1);
  p.c1_pos = j.value("c1_pos", p.c1_pos);
  p.c1_neg = j.value("c1_neg", p.c1_neg);
  p.c0 = j.value("c0", p.c0);
  p.c_d = j.value("c_d", p.c_d);
  p.c1_tilde = j.value("c1_tilde", p.c1_tilde);
  p.c0_tilde = j.value("c0_tilde", p.c0_tilde);
  p.c2_tilde = j.value("c2_tilde", p.c2_tilde);
  p.quadratic = j.value("quadratic", p.quadratic);
  return p;
}

json pricing_to_json(const market::PricingConfig& c) {
  return json{{"alpha_hat", c.alpha_hat},       {"max_iterations", c.max_iterations},
              {"timeout_s", c.timeout_s},       {"epsilon", c.epsilon},
              {"balance_tol", c.balance_tol},   {"cycle_window", c.cycle_window},
              {"smoothing", c.smoothing}};
}

market::PricingConfig pricing_from_json(const json& j) {
  market::PricingConfig c;
  c.alpha_hat = j.value("alpha_hat", c.alpha_hat);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.timeout_s = j.value("timeout_s", c.timeout_s);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.balance_tol = j.value("balance_tol", c.balance_tol);
  c.cycle_window = j.value("cycle_window", c.cycle_window);
  c.smoothing = j.value("smoothing", c.smoothing);
  return c;
}

json verification_to_json(const verification::VerificationConfig& c) {
  return json{{"c1", c.c1},
              {"c2", c.c2},
              {"c3", c.c3},
              {"c4", c.c4},
              {"eps", c.eps},
              {"eps_pi", c.eps_pi},
              {"beta", c.beta},
              {"eps_B", c.eps_B},
              {"eig_tol", c.eig_tol},
              {"eig_max_iters", c.eig_max_iters},
              {"alpha_power", c.alpha_power},
              {"max_iterations", c.max_iterations},
              {"init", c.init == verification::InitMode::Zero ? "zero" : "backfill"},
              {"burn_in", c.burn_in},
              {"stall_window", c.stall_window},
              {"stall_ratio", c.stall_ratio},
              {"max_removals", c.max_removals}};
}

verification::VerificationConfig verification_from_json(const json& j) {
  verification::VerificationConfig c;
  c.c1 = j.value("c1", c.c1);
  c.c2 = j.value("c2", c.c2);
  c.c3 = j.value("c3", c.c3);
  c.c4 = j.value("c4", c.c4);
  c.eps = j.value("eps", c.eps);
  c.eps_pi = j.value("eps_pi", c.eps_pi);
  c.beta = j.value("beta", c.beta);
  c.eps_B = j.value("eps_B", c.eps_B);
  c.eig_tol = j.value("eig_tol", c.eig_tol);
  c.eig_max_iters = j.value("eig_max_iters", c.eig_max_iters);
  c.alpha_power = j.value("alpha_power", c.alpha_power);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  const std::string init = j.value("init", std::string("backfill"));
  if (init == "zero")
    c.init = verification::InitMode::Zero;
  else if (init == "backfill")
    c.init = verification::InitMode::Backfill;
  else
    throw Error(ErrorCode::ParseError, "unknown init mode " + init);
  c.burn_in = j.value("burn_in", c.burn_in);
  c.stall_window = j.value("stall_window", c.stall_window);
  c.stall_ratio = j.value("stall_ratio", c.stall_ratio);
  c.max_removals = j.value("max_removals", c.max_removals);
  c.validate();
  return c;
}

json grid_to_json(const GridSpec& g) {
  json j;
  if (g.topology) {
    j["topology"] = to_json(*g.topology);
  } else {
    j["file"] = g.file;
    j["impedance_in_ohms"] = g.options.impedance_in_ohms;
    j["loads_in_kva"] = g.options.loads_in_kva;
    if (g.options.power_factor) j["power_factor"] = *g.options.power_factor;
  }
  json heads = json::array();
  for (auto [bus, region] : g.heads) heads.push_back({{"bus", bus}, {"region", region}});
  j["heads"] = heads;
  j["sensor_sharing"] = json::array();
  for (const auto& s : g.sensor_sharing)
    j["sensor_sharing"].push_back({{"region", s.region}, {"buses", s.buses}});
  return j;
}

GridSpec grid_from_json(const json& j) {
  GridSpec g;
  if (j.contains("topology")) {
    g.topology = topology_from_json(j.at("topology"));
  } else {
    g.file = j.at("file").get<std::string>();
    g.options.impedance_in_ohms = j.value("impedance_in_ohms", false);
    g.options.loads_in_kva = j.value("loads_in_kva", false);
    if (j.contains("power_factor")) g.options.power_factor = j["power_factor"].get<double>();
  }
  if (j.contains("heads"))
    for (const auto& h : j["heads"]) g.heads[h.at("bus").get<int>()] = h.at("region").get<int>();
  if (j.contains("sensor_sharing"))
    for (const auto& s : j["sensor_sharing"])
      g.sensor_sharing.push_back({s.at("region").get<int>(), s.at("buses").get<std::vector<int>>()});
  return g;
}

std::string find_grid_file(const std::string& file, const std::string& base_dir) {
  std::vector<fs::path> candidates;
  fs::path f(file);
  if (f.is_absolute()) {
    candidates.push_back(f);
  } else {
    candidates.push_back(fs::path(base_dir) / f);
    if (const char* env = std::getenv("EVE_DATA_DIR")) candidates.push_back(fs::path(env) / f);
#ifdef EVE_DATA_DIR
    candidates.push_back(fs::path(EVE_DATA_DIR) / f);
#endif
  }
  for (const auto& c : candidates)
    if (fs::exists(c)) return c.string();
  throw Error(ErrorCode::IoFailure, "grid file not found: " + file);
}

}  // namespace

json to_json(const ProsumerSpec& p) {
  return json{{"id", p.id},
              {"bus", p.bus},
              {"kind", std::string(resources::to_string(p.kind))},
              {"budget", p.budget},
              {"params", params_to_json(p.params)}};
}

ProsumerSpec prosumer_from_json(const json& r) {
  try {
    ProsumerSpec p;
    p.id = r.at("id").get<std::string>();
    p.bus = r.at("bus").get<int>();
    p.kind = resources::kind_from_string(r.at("kind").get<std::string>());
    p.budget = r.value("budget", 0.0);
    if (r.contains("params")) p.params = params_from_json(r["params"]);
    return p;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("prosumer: ") + e.what());
  }
}

json to_json(const ScenarioConfig& c) {
  json roster = json::array();
  for (const auto& p : c.roster) roster.push_back(to_json(p));
  return json{{"name", c.name},
              {"grid", grid_to_json(c.grid)},
              {"roster", roster},
              {"T", c.T},
              {"interval_minutes", c.interval_minutes},
              {"windows", c.windows},
              {"noise", {{"variance", c.noise.variance}, {"sensor_fraction", c.noise.sensor_fraction}}},
              {"attack", c.attack},
              {"attack_window", c.attack_window},
              {"pricing", pricing_to_json(c.pricing)},
              {"verification", verification_to_json(c.verification)},
              {"seed", c.seed},
              {"penalty_rate", c.penalty_rate},
              {"penalty_deadband", c.penalty_deadband},
              {"power_factor", c.power_factor}};
}

ScenarioConfig scenario_from_json(const json& j, const std::string& base_dir) {
  ScenarioConfig c;
  try {
    c.name = j.value("name", std::string("scenario"));
    c.grid = grid_from_json(j.at("grid"));
    for (const auto& r : j.at("roster")) c.roster.push_back(prosumer_from_json(r));
    c.T = j.value("T", c.T);
    c.interval_minutes = j.value("interval_minutes", c.interval_minutes);
    c.windows = j.value("windows", c.windows);
    if (j.contains("noise")) {
      c.noise.variance = j["noise"].value("variance", c.noise.variance);
      c.noise.sensor_fraction = j["noise"].value("sensor_fraction", c.noise.sensor_fraction);
    }
    c.attack = j.value("attack", c.attack);
    c.attack_window = j.value("attack_window", c.attack_window);
    if (j.contains("pricing")) c.pricing = pricing_from_json(j["pricing"]);
    if (j.contains("verification")) c.verification = verification_from_json(j["verification"]);
    c.seed = j.value("seed", c.seed);
    c.penalty_rate = j.value("penalty_rate", c.penalty_rate);
    c.penalty_deadband = j.value("penalty_deadband", c.penalty_deadband);
    c.power_factor = j.value("power_factor", c.power_factor);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("scenario: ") + e.what());
  }
  if (c.T < 1) throw Error(ErrorCode::InvalidParams, "T must be at least 1");
  if (c.windows < 1) throw Error(ErrorCode::InvalidParams, "windows must be at least 1");
  if (!(c.noise.variance >= 0.0)) throw Error(ErrorCode::InvalidParams, "noise variance must be >= 0");
  if (!(c.power_factor > 0.0 && c.power_factor <= 1.0))
    throw Error(ErrorCode::InvalidParams, "power factor must lie in (0, 1]");
  c.base_dir = base_dir;
  return c;
}

ScenarioConfig load_scenario(const std::string& path) {
  auto dir = fs::path(path).parent_path();
  return scenario_from_json(read_json_file(path), dir.empty() ? "." : dir.string());
}

void save_scenario(const ScenarioConfig& cfg, const std::string& path) {
  write_text_file(path, to_json(cfg).dump(1) + "\n");
}

grid::GridTopology resolve_topology(const ScenarioConfig& cfg) {
  grid::GridTopology topo;
  if (cfg.grid.topology) {
    topo = *cfg.grid.topology;
  } else {
    topo = grid::load_matpower(find_grid_file(cfg.grid.file, cfg.base_dir), cfg.grid.options).topology;
  }
  if (!cfg.grid.heads.empty()) grid::assign_regions_by_subtree(topo, cfg.grid.heads);
  for (const auto& s : cfg.grid.sensor_sharing) topo.sensor_sharing.push_back(s);
  return topo;
}

void validate_scenario(const ScenarioConfig& cfg, const grid::RadialNetwork& net) {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::InvalidParams, what); };
  if (cfg.T < 1) bad("T must be at least 1");
  std::set<std::string> ids;
  int slack = 0;
  for (const auto& p : cfg.roster) {
    if (!ids.insert(p.id).second) bad("duplicate prosumer id " + p.id);
    if (!net.has_bus(p.bus)) bad("prosumer " + p.id + " sits on unknown bus " + std::to_string(p.bus));
    if (p.kind == AssetKind::Slack) {
      ++slack;
      if (net.bus_index(p.bus) != net.root_index()) bad("the slack asset must sit at the root");
    }
  }
  if (slack != 1) bad("exactly one slack asset is required, found " + std::to_string(slack));
}

}  // namespace eve::orchestrator
