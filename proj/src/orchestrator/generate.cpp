#include "eve/orchestrator.hpp"

#include "eve/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace eve::orchestrator {

using resources::AssetKind;
using resources::AssetParams;

namespace {

constexpr double kPi = 3.14159265358979323846;

class Sampler {
 public:
  Sampler(std::uint64_t seed, std::uint32_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
    rng_.seed(seq);
  }

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  template <class T>
  void shuffle(std::vector<T>& v) {
    std::shuffle(v.begin(), v.end(), rng_);
  }

 private:
  std::mt19937_64 rng_;
};

// Daily-shape factor for interval t of a window.
double shape(int t, int T, double phase) {
  return 1.0 + 0.15 * std::sin(2.0 * kPi * (t + phase) / std::max(T, 2));
}

AssetParams sample_params(AssetKind kind, int T, Sampler& s) {
  AssetParams p;
  switch (kind) {
    case AssetKind::EV: {
      p.rho = s.uniform(0.05, 0.15);
      p.capacity = s.uniform(0.1, 0.3);
      p.u_init = s.uniform(0.2, 0.6) * p.capacity;
      p.t_a = s.integer(0, std::max(0, T / 3));
      // Deadlines past the window leave room to finish later.
      p.t_d = s.integer(T + 1, T + 6);
      p.c1 = {s.uniform(0.5, 1.5)};
      p.c_d = 0.5 * p.c1[0];
      break;
    }
    case AssetKind::DeferrableAppliance: {
      const int len = std::min(T, s.integer(2, 3));
      for (int j = 0; j < len; ++j) p.cycle.push_back(s.uniform(0.03, 0.12));
      p.c1_tilde = s.uniform(0.01, 0.1);
      break;
    }
    case AssetKind::TCL: {
      p.R = s.uniform(1.5, 2.5);
      p.C = s.uniform(0.8, 1.2);
      p.eta = 2.5;
      p.rho = s.uniform(0.2, 0.4);
      p.theta_r = 22.0;
      const double base = s.uniform(23.0, 25.0);
      for (int t = 0; t < T; ++t) p.theta_o.push_back(base + 0.3 * t);
      p.u_min = -2.0;
      p.u_max = 2.0;
      p.u_init = 0.0;
      p.c2_tilde = s.uniform(0.2, 0.8);
      break;
    }
    case AssetKind::Storage: {
      p.rho = s.uniform(0.05, 0.2);
      p.capacity = s.uniform(0.2, 0.6);
      p.u_init = 0.5 * p.capacity;
      p.c1_pos = {s.uniform(0.01, 0.05)};
      p.c1_neg = {s.uniform(0.01, 0.05)};
      break;
    }
    case AssetKind::Renewable: {
      const double peak = s.uniform(0.05, 0.25), phase = s.uniform(0.0, T);
      for (int t = 0; t < T; ++t) p.forecast.push_back(peak * shape(t, T, phase));
      break;
    }
    case AssetKind::InflexibleLoad: {
      const double base = s.uniform(0.05, 0.25), phase = s.uniform(0.0, T);
      for (int t = 0; t < T; ++t) p.forecast.push_back(-base * shape(t, T, phase));
      break;
    }
    case AssetKind::Slack:
      break;
  }
  return p;
}

// Expected net injection of the non-slack roster at zero price, used as the slack schedule.
std::vector<double> expected_net(const std::vector<ProsumerSpec>& roster, int T) {
  std::vector<double> net(static_cast<std::size_t>(T), 0.0);
  for (const auto& p : roster) {
    for (int t = 0; t < T; ++t) {
      double v = 0.0;
      switch (p.kind) {
        case AssetKind::Renewable:
        case AssetKind::InflexibleLoad:
          v = p.params.forecast[static_cast<std::size_t>(t)];
          break;
        case AssetKind::TCL:
          v = -0.5 * p.params.rho;
          break;
        case AssetKind::EV:
          v = -0.5 * p.params.rho;
          break;
        case AssetKind::DeferrableAppliance: {
          double sum = std::accumulate(p.params.cycle.begin(), p.params.cycle.end(), 0.0);
          v = -sum / T;
          break;
        }
        default:
          break;
      }
      net[static_cast<std::size_t>(t)] += v;
    }
  }
  return net;
}

ProsumerSpec slack_at(grid::BusId root, const std::vector<ProsumerSpec>& roster, int T, double q) {
  ProsumerSpec slack;
  slack.id = "utility";
  slack.bus = root;
  slack.kind = AssetKind::Slack;
  slack.params.quadratic = q;
  for (double v : expected_net(roster, T)) slack.params.schedule.push_back(-v);
  return slack;
}

std::string prosumer_id(AssetKind kind, int n) {
  std::string k(resources::to_string(kind));
  return k + "-" + std::to_string(n);
}

// Largest-remainder split of `count` over weights.
std::vector<int> apportion(const std::vector<double>& weights, int count) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<int> out(weights.size(), 0);
  std::vector<std::pair<double, std::size_t>> rest;
  int used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double share = total > 0.0 ? count * weights[i] / total : 0.0;
    out[i] = static_cast<int>(std::floor(share));
    used += out[i];
    rest.push_back({share - out[i], i});
  }
  std::stable_sort(rest.begin(), rest.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t j = 0; used < count; ++j, ++used) ++out[rest[j % rest.size()].second];
  return out;
}

ScenarioConfig case141x7(std::uint64_t seed) {
  ScenarioConfig c;
  c.name = "case141x7";
  c.seed = seed;
  c.grid.file = "case141.m";
  c.grid.options.impedance_in_ohms = true;
  c.grid.options.loads_in_kva = true;
  c.grid.options.power_factor = 0.85;
  c.grid.heads = {{1, 3}, {37, 0}, {43, 1}, {54, 2}, {7, 4}, {16, 5}, {118, 6}};
  c.grid.sensor_sharing = {{1, {54, 73}}};
  c.T = 6;
  c.windows = 3;

  auto topo = resolve_topology(c);
  std::map<grid::RegionId, std::vector<grid::BusId>> buses;
  for (grid::BusId b : topo.buses)
    if (b != topo.root) buses[topo.region_of.at(b)].push_back(b);

  Sampler s(seed, 1);
  std::vector<double> weights;
  for (const auto& [r, list] : buses) weights.push_back(static_cast<double>(list.size()));
  const auto per_region = apportion(weights, 100);
  const auto mix = default_mix();
  int serial = 0;
  std::size_t ri = 0;
  for (auto& [r, list] : buses) {
    const int n = per_region[ri++];
    std::vector<AssetKind> kinds;
    for (auto [kind, k] : kind_counts(mix, n)) kinds.insert(kinds.end(), static_cast<std::size_t>(k), kind);
    s.shuffle(kinds);
    s.shuffle(list);
    for (int i = 0; i < n; ++i) {
      ProsumerSpec p;
      p.kind = kinds[static_cast<std::size_t>(i)];
      p.id = prosumer_id(p.kind, serial++);
      p.bus = list[static_cast<std::size_t>(i) % list.size()];
      p.params = sample_params(p.kind, c.T, s);
      p.budget = s.uniform(2.0, 10.0);
      c.roster.push_back(std::move(p));
    }
  }
  c.roster.insert(c.roster.begin(), slack_at(topo.root, c.roster, c.T, 0.05));
  c.pricing.alpha_hat = 0.3;
  c.pricing.smoothing = 0.2;
  c.pricing.max_iterations = 100;
  return c;
}

ScenarioConfig toy3(std::uint64_t seed) {
  ScenarioConfig c;
  c.name = "toy3";
  c.seed = seed;
  grid::GridTopology t;
  t.root = 1;
  t.buses = {1, 2, 3};
  t.lines = {{1, 2, 0.01, 0.02}, {2, 3, 0.01, 0.02}};
  t.region_of = {{1, 0}, {2, 0}, {3, 1}};
  c.grid.topology = t;
  c.T = 3;
  c.windows = 2;

  Sampler s(seed, 2);
  ProsumerSpec tcl;
  tcl.id = "tcl-2";
  tcl.bus = 2;
  tcl.kind = AssetKind::TCL;
  tcl.params = sample_params(AssetKind::TCL, c.T, s);
  tcl.budget = 1e6;
  ProsumerSpec st;
  st.id = "storage-3";
  st.bus = 3;
  st.kind = AssetKind::Storage;
  st.params = sample_params(AssetKind::Storage, c.T, s);
  st.budget = 1e6;
  c.roster = {tcl, st};
  c.roster.insert(c.roster.begin(), slack_at(1, c.roster, c.T, s.uniform(0.3, 0.7)));
  c.pricing.alpha_hat = 1.5;
  c.pricing.smoothing = 0.2;
  return c;
}

}  // namespace

std::map<AssetKind, double> default_mix() {
  return {{AssetKind::EV, 0.15},        {AssetKind::DeferrableAppliance, 0.15},
          {AssetKind::TCL, 0.2},        {AssetKind::Storage, 0.1},
          {AssetKind::Renewable, 0.15}, {AssetKind::InflexibleLoad, 0.25}};
}

std::map<AssetKind, int> kind_counts(const std::map<AssetKind, double>& mix, int count) {
  std::vector<double> w;
  for (const auto& [kind, share] : mix) w.push_back(share);
  const auto n = apportion(w, count);
  std::map<AssetKind, int> out;
  std::size_t i = 0;
  for (const auto& [kind, share] : mix) out[kind] = n[i++];
  return out;
}

ScenarioConfig generate_scenario(const std::string& name, std::uint64_t seed) {
  if (name == "case141x7") return case141x7(seed);
  if (name == "toy3") return toy3(seed);
  throw Error(ErrorCode::UnknownTemplate, "no built-in scenario named " + name);
}

}  // namespace eve::orchestrator
