#include "eve/orchestrator.hpp"

#include "eve/adversary.hpp"
#include "eve/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <random>

namespace eve::orchestrator {

using grid::RegionId;
using resources::AssetKind;

namespace {

std::string tag(int window) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", window);
  return buf;
}

struct Delivered {
  int window = -1;
  Eigen::MatrixXd truth;   // var_count x T
  Eigen::MatrixXd clean;   // sensors x T
  Eigen::MatrixXd pstar;   // bus x T, scheduled injections
  Eigen::MatrixXd actual;  // bus x T, delivered injections (root: slack incl. losses)
  std::map<std::string, double> energy;  // scheduled |p| summed over the window
};

}  // namespace

struct Simulation::Impl {
  grid::RadialNetwork net;
  grid::SensorPlacement sensors;
  RunOptions opts;
  std::shared_ptr<const ledger::AccessPolicy> policy;
  std::unique_ptr<ledger::Ledger> gl;
  std::map<RegionId, std::unique_ptr<ledger::Ledger>> ll;
  ledger::WindowClock clock;
  std::vector<market::Aggregator> aggs;  // ascending region id
  std::map<std::string, ProsumerSpec> specs;
  std::map<std::string, double> agg_accounts;
  adversary::AttackSpec attack;
  std::optional<market::PricingResult> previous;
  std::optional<Delivered> last;
  int next_window = 0;

  explicit Impl(grid::RadialNetwork n) : net(std::move(n)) {}

  std::size_t agg_index(RegionId n) const {
    for (std::size_t i = 0; i < aggs.size(); ++i)
      if (aggs[i].id == n) return i;
    throw Error(ErrorCode::UnknownRegion, "no aggregator " + std::to_string(n));
  }
  RegionId region_of(grid::BusId bus) const { return net.region_of_bus(net.bus_index(bus)); }
};

namespace {

std::unique_ptr<ledger::Ledger> open_ledger(const std::string& channel,
                                            std::shared_ptr<const ledger::AccessPolicy> policy,
                                            const std::optional<std::string>& dir,
                                            const std::string& file) {
  std::optional<std::string> path;
  if (dir) path = (std::filesystem::path(*dir) / file).string();
  return std::make_unique<ledger::Ledger>(channel, std::move(policy), path);
}

bool attacked(const ScenarioConfig& cfg, const adversary::AttackSpec& a, int window) {
  return a.active() && (cfg.attack_window < 0 || cfg.attack_window == window);
}

double sigma(const ScenarioConfig& cfg) { return std::sqrt(cfg.noise.variance); }

}  // namespace

Simulation::Simulation(ScenarioConfig cfg, RunOptions opts) : cfg_(std::move(cfg)) {
  impl_ = std::make_unique<Impl>(grid::validate_radial(resolve_topology(cfg_)));
  auto& im = *impl_;
  validate_scenario(cfg_, im.net);
  cfg_.verification.validate();
  im.opts = std::move(opts);
  im.sensors = grid::default_sensor_placement(im.net, cfg_.noise.sensor_fraction, cfg_.seed);
  im.attack = adversary::parse_attack(cfg_.attack, cfg_.seed);
  if (im.attack.active()) {
    const auto regions = im.net.regions();
    if (std::find(regions.begin(), regions.end(), im.attack.attacker) == regions.end())
      throw Error(ErrorCode::UnknownRegion, "attacker " + std::to_string(im.attack.attacker));
  }

  if (im.opts.journal_dir) std::filesystem::create_directories(*im.opts.journal_dir);
  im.policy = std::make_shared<const ledger::AccessPolicy>(ledger::standard_policy());
  im.gl = open_ledger(ledger::common_channel(), im.policy, im.opts.journal_dir, "gl.jsonl");
  for (RegionId n : im.net.regions()) {
    im.ll[n] = open_ledger(ledger::aggregator_channel(n), im.policy, im.opts.journal_dir,
                           "agg" + std::to_string(n) + ".jsonl");
    market::Aggregator a;
    a.id = n;
    im.aggs.push_back(std::move(a));
    im.agg_accounts["agg" + std::to_string(n)] = 0.0;
  }

  const auto op = ledger::Identity::operator_();
  for (const auto& p : cfg_.roster) {
    im.specs[p.id] = p;
    market::Prosumer pr;
    pr.id = p.id;
    pr.bus = p.bus;
    pr.asset = resources::build_asset(p.kind, p.params, cfg_.T);
    pr.budget = p.budget;
    pr.budget_exempt = p.kind == AssetKind::Slack;
    im.aggs[im.agg_index(im.region_of(p.bus))].prosumers.push_back(std::move(pr));
    ledger::act_init(*im.gl, op, p.id,
                     {{"aggregator", im.region_of(p.bus)},
                      {"kind", std::string(resources::to_string(p.kind))},
                      {"budget", p.budget}});
  }
  for (const auto& [name, balance] : im.agg_accounts)
    ledger::act_init(*im.gl, op, name, {{"budget", balance}});
}

Simulation::~Simulation() = default;

const grid::RadialNetwork& Simulation::network() const { return impl_->net; }
const grid::SensorPlacement& Simulation::sensors() const { return impl_->sensors; }
ledger::Ledger& Simulation::global() { return *impl_->gl; }
ledger::Ledger& Simulation::local(RegionId n) {
  auto it = impl_->ll.find(n);
  if (it == impl_->ll.end()) throw Error(ErrorCode::UnknownRegion, "no ledger for " + std::to_string(n));
  return *it->second;
}
const std::vector<market::Aggregator>& Simulation::aggregators() const { return impl_->aggs; }
const std::map<std::string, double>& Simulation::aggregator_accounts() const {
  return impl_->agg_accounts;
}

const Eigen::MatrixXd& Simulation::last_truth() const {
  if (!impl_->last) throw Error(ErrorCode::NotFound, "no window delivered yet");
  return impl_->last->truth;
}
const Eigen::MatrixXd& Simulation::last_clean_measurements() const {
  if (!impl_->last) throw Error(ErrorCode::NotFound, "no window delivered yet");
  return impl_->last->clean;
}

namespace {

// Stage 1: every prosumer posts its asset model; each aggregator rebuilds its roster from
// the bids on its channel.
void collect_bids(Simulation::Impl& im, const ScenarioConfig& cfg, int i, WindowReport& rep) {
  im.clock.set(i, ledger::Stage::OpenBidding);
  for (auto& agg : im.aggs) {
    for (const auto& pr : agg.prosumers) {
      const auto& spec = im.specs.at(pr.id);
      auto who = ledger::Identity::prosumer(pr.id, agg.id, std::string(resources::to_string(spec.kind)));
      ledger::bc_submit_bid(*im.ll.at(agg.id), im.clock, i, who, to_json(spec));
    }
    std::map<std::string, json> bids;
    for (const auto& rec : ledger::bc_last_bids(*im.ll.at(agg.id), i, ledger::Identity::admin(agg.id)))
      bids[rec.tx.submitter] = rec.value;
    for (auto& pr : agg.prosumers) {
      auto it = bids.find(pr.id);
      if (it == bids.end()) throw Error(ErrorCode::NotFound, "missing bid from " + pr.id);
      const auto spec = prosumer_from_json(it->second);
      pr.asset = resources::build_asset(spec.kind, spec.params, cfg.T);
      pr.eligible = pr.budget_exempt || pr.budget >= 0.0;
      if (!pr.eligible) {
        rep.ineligible.push_back(pr.id);
        rep.warnings.push_back(pr.id + " has a negative budget and is held at zero flexible demand");
      }
    }
  }
}

// Measurement and stealth attacks rewrite the attacker's own sensor rows before metering.
void tamper(Simulation::Impl& im, const ScenarioConfig& cfg, int window, Eigen::MatrixXd& z,
            std::vector<std::string>& notes) {
  const auto& a = im.attack;
  if (!attacked(cfg, a, window)) return;
  if (a.mode == adversary::AttackMode::MeasurementFDIA) {
    adversary::AttackSpec spec = a;
    const double s = cfg.noise.variance > 0 ? sigma(cfg) : 1.0;
    for (std::size_t b : im.net.region_buses(a.attacker))
      if (b != im.net.root_index()) spec.offsets[im.net.var_p(b)] = 10.0 * s * a.scale;
    // Offsets only land where a sensor exists.
    std::erase_if(spec.offsets, [&](const auto& kv) {
      return std::find(im.sensors.vars.begin(), im.sensors.vars.end(), kv.first) == im.sensors.vars.end();
    });
    z = adversary::perturb_measurements(z, im.sensors.vars, spec);
  } else if (a.mode == adversary::AttackMode::Stealth) {
    const auto m = grid::build_region_matrices(im.net, a.attacker, im.sensors);
    std::vector<Eigen::Index> targets;
    for (std::size_t r = 0; r < m.measured_vars.size(); ++r) {
      const auto v = m.measured_vars[r];
      if (im.net.var_kind(v) == grid::VarKind::P && im.net.region_of_bus(im.net.var_bus(v)) == a.attacker)
        targets.push_back(static_cast<Eigen::Index>(r));
    }
    auto vec = adversary::build_stealth_attack(m.H, m.measured_selection(), 1e-10, targets);
    if (!vec) {
      notes.push_back("no stealth vector: region " + std::to_string(a.attacker) +
                      " has no unobservable measurement direction");
      return;
    }
    double peak = 0.0;
    for (auto t : targets) peak = std::max(peak, std::abs((*vec)(t)));
    const Eigen::VectorXd offset = *vec * (a.scale / std::max(peak, 1e-12));
    for (std::size_t r = 0; r < m.measured_vars.size(); ++r) {
      auto pos = std::find(im.sensors.vars.begin(), im.sensors.vars.end(), m.measured_vars[r]);
      z.row(pos - im.sensors.vars.begin()).array() += offset(static_cast<Eigen::Index>(r));
    }
    notes.push_back("stealth vector on " + std::to_string(m.measured_vars.size()) +
                    " sensors of region " + std::to_string(a.attacker));
  }
}

// Delivery: power flow on the dispatched injections, then noisy meters posted to each
// aggregator channel.
void deliver(Simulation::Impl& im, const ScenarioConfig& cfg, int i, const WindowReport& rep,
             std::vector<std::string>& notes) {
  im.clock.set(i, ledger::Stage::Delivery);
  const auto& net = im.net;
  const auto B = static_cast<Eigen::Index>(net.bus_count());
  Delivered d;
  d.window = i;
  d.pstar = Eigen::MatrixXd::Zero(B, cfg.T);
  for (std::size_t r = 0; r < rep.prosumers.size(); ++r)
  {
    d.pstar.row(static_cast<Eigen::Index>(net.bus_index(rep.buses[r]))) += rep.dispatch.row(static_cast<Eigen::Index>(r));
    d.energy[rep.prosumers[r]] = rep.dispatch.row(static_cast<Eigen::Index>(r)).cwiseAbs().sum();
  }
  const double tan_phi = std::tan(std::acos(cfg.power_factor));
  d.truth.resize(static_cast<Eigen::Index>(net.var_count()), cfg.T);
  d.actual.resize(B, cfg.T);
  for (int t = 0; t < cfg.T; ++t) {
    Eigen::VectorXd p = d.pstar.col(t);
    auto s = grid::solve_power_flow(net, p, p * tan_phi);
    d.truth.col(t) = grid::stack(s, net);
    d.actual.col(t) = s.p;
  }
  const auto S = static_cast<Eigen::Index>(im.sensors.vars.size());
  d.clean.resize(S, cfg.T);
  for (Eigen::Index k = 0; k < S; ++k) d.clean.row(k) = d.truth.row(static_cast<Eigen::Index>(im.sensors.vars[static_cast<std::size_t>(k)]));

  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(i), 3u};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> N(0.0, 1.0);
  Eigen::MatrixXd z = d.clean;
  const double sd = sigma(cfg);
  for (Eigen::Index k = 0; k < S; ++k)
    for (int t = 0; t < cfg.T; ++t) z(k, t) += sd * N(rng);
  tamper(im, cfg, i, z, notes);

  for (const auto& [n, ledger] : im.ll) {
    json vars = json::array(), values = json::array();
    for (Eigen::Index k = 0; k < S; ++k) {
      const auto v = im.sensors.vars[static_cast<std::size_t>(k)];
      if (grid::sensor_region(net, v) != n) continue;
      vars.push_back(v);
      values.push_back(to_json(Eigen::VectorXd(z.row(k).transpose())));
    }
    ledger::mc_submit_measurements(*ledger, im.clock, ledger::Identity::meter(n), i, -1,
                                   {{"vars", vars}, {"values", values}});
  }
  im.last = std::move(d);
}

// Reads each aggregator's meters back from its own channel.
Eigen::MatrixXd read_measurements(Simulation::Impl& im, int window, int T) {
  Eigen::MatrixXd z = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(im.sensors.vars.size()), T,
                                                std::numeric_limits<double>::quiet_NaN());
  std::map<std::size_t, Eigen::Index> row;
  for (std::size_t k = 0; k < im.sensors.vars.size(); ++k) row[im.sensors.vars[k]] = static_cast<Eigen::Index>(k);
  for (const auto& [n, ledger] : im.ll) {
    const auto who = ledger::Identity::admin(n);
    const std::string key = "meas/" + tag(window) + "/all/" + ledger::Identity::meter(n).id;
    const json v = ledger->query(key, who);
    const auto& vars = v.at("vars");
    for (std::size_t k = 0; k < vars.size(); ++k)
      z.row(row.at(vars[k].get<std::size_t>())) = vector_from_json(v.at("values")[k]).transpose();
  }
  if (z.hasNaN()) throw Error(ErrorCode::NotFound, "measurements missing for window " + std::to_string(window));
  return z;
}

VerificationStage verify(Simulation::Impl& im, const ScenarioConfig& cfg, const Delivered& d) {
  VerificationStage st;
  st.window = d.window;
  for (std::size_t b = 0; b < im.net.bus_count(); ++b) st.bus_ids.push_back(im.net.bus_id(b));
  st.pstar = d.pstar;
  st.truth = d.actual;
  verification::VerificationProblem pr;
  pr.net = &im.net;
  pr.sensors = im.sensors;
  pr.z = read_measurements(im, d.window, cfg.T);
  pr.variance = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(im.sensors.vars.size()),
                                          cfg.noise.variance > 0 ? cfg.noise.variance : 1.0);
  pr.pstar = d.pstar;
  verification::Exchange ex;
  ex.gl = im.gl.get();
  ex.window = d.window;
  const bool msg = im.attack.mode == adversary::AttackMode::MessageFDIA ||
                   im.attack.mode == adversary::AttackMode::Silent;
  if (msg && attacked(cfg, im.attack, d.window)) ex.attack = im.attack;
  const auto regions = im.net.regions();
  if (regions.size() >= 2) ex.trace_pair = std::make_pair(regions[0], regions[1]);
  st.report = verification::run_verification(pr, cfg.verification, ex);
  st.report.states.clear();
  return st;
}

// Deviation penalties with a noise deadband; an identified attacker forfeits the value of
// its region's schedule.
void assess_penalties(Simulation::Impl& im, const ScenarioConfig& cfg, const Delivered& d,
                      VerificationStage& st, int now) {
  const auto& net = im.net;
  const double band = cfg.penalty_deadband * sigma(cfg);
  std::map<std::size_t, double> bus_penalty;
  for (std::size_t b = 0; b < net.bus_count(); ++b) {
    if (b == net.root_index()) continue;
    const auto row = static_cast<Eigen::Index>(b);
    if (std::isnan(st.report.verified(row, 0))) continue;
    double sum = 0.0;
    for (Eigen::Index t = 0; t < st.report.deviation.cols(); ++t) {
      const double dev = std::abs(st.report.deviation(row, t));
      if (dev > band) sum += dev;
    }
    if (sum > 0.0) bus_penalty[b] = cfg.penalty_rate * sum;
  }
  for (auto& agg : im.aggs) {
    // Split a bus penalty by each prosumer's scheduled energy at that bus.
    std::map<std::size_t, double> weight_sum;
    for (const auto& pr : agg.prosumers) {
      const auto b = net.bus_index(pr.bus);
      if (!bus_penalty.count(b)) continue;
      weight_sum[b] += d.energy.at(pr.id) + 1e-12;
    }
    for (auto& pr : agg.prosumers) {
      const auto b = net.bus_index(pr.bus);
      auto it = bus_penalty.find(b);
      if (it == bus_penalty.end() || pr.budget_exempt) continue;
      const double share = (d.energy.at(pr.id) + 1e-12) / weight_sum[b];
      Penalty p{pr.id, pr.bus, it->second * share, pr.budget, pr.budget - it->second * share};
      pr.budget = p.after;
      st.penalties.push_back(p);
    }
  }
  for (RegionId m : st.report.attackers) {
    double value = 0.0;
    for (std::size_t b : net.region_buses(m)) value += st.pstar.row(static_cast<Eigen::Index>(b)).cwiseAbs().sum();
    const std::string acct = "agg" + std::to_string(m);
    Penalty p{acct, 0, cfg.penalty_rate * value, im.agg_accounts[acct], 0.0};
    p.after = p.before - p.amount;
    im.agg_accounts[acct] = p.after;
    st.penalties.push_back(p);
  }
  for (const auto& p : st.penalties) {
    RegionId n = p.bus != 0 ? im.region_of(p.bus) : std::stoi(p.account.substr(3));
    ledger::rc_put_round(*im.gl, ledger::Identity::admin(n), "penalty", now, -1,
                         "penalty/" + tag(now) + "/" + p.account,
                         {{"verified_window", st.window},
                          {"amount", p.amount},
                          {"before", p.before},
                          {"after", p.after}});
  }
}

}  // namespace

WindowReport Simulation::run_window(int i) {
  auto& im = *impl_;
  if (i != im.next_window)
    throw Error(ErrorCode::InvalidParams,
                "window " + std::to_string(i) + " requested, expected " + std::to_string(im.next_window));
  const auto start = std::chrono::steady_clock::now();
  WindowReport rep;
  rep.window = i;

  collect_bids(im, cfg_, i, rep);

  if (im.last) {
    try {
      rep.verification = verify(im, cfg_, *im.last);
      assess_penalties(im, cfg_, *im.last, *rep.verification, i);
      for (const auto& w : rep.verification->report.warnings) rep.warnings.push_back(w);
    } catch (const Error& e) {
      rep.warnings.push_back(std::string("verification of window ") + std::to_string(im.last->window) +
                             " failed: " + e.what());
    }
    // Budgets may have moved; eligibility follows the post-penalty balance.
    for (auto& agg : im.aggs)
      for (auto& pr : agg.prosumers)
        if (!pr.budget_exempt && pr.eligible && pr.budget < 0.0) {
          pr.eligible = false;
          rep.ineligible.push_back(pr.id);
          rep.warnings.push_back(pr.id + " has a negative budget after penalties and is held at zero flexible demand");
        }
  }

  im.clock.set(i, ledger::Stage::Pricing);
  market::PricingContext ctx;
  ctx.global = im.gl.get();
  for (const auto& [n, l] : im.ll) ctx.local.push_back(l.get());
  ctx.window = i;
  ctx.mode = im.opts.mode;
  ctx.previous = im.previous;
  auto res = market::run_pricing(im.aggs, cfg_.pricing, ctx, cfg_.T);
  for (const auto& w : res.warnings) rep.warnings.push_back(w);
  rep.pricing = res.status;
  rep.lambda_trace = res.lambda_trace;
  rep.lambda = res.lambda;
  rep.iterations = res.iterations;
  rep.balance_residual = res.balance_residual;
  rep.billing = res.billing;

  // Dispatch rows in aggregator order.
  int rows = 0;
  for (const auto& a : im.aggs) rows += static_cast<int>(a.prosumers.size());
  rep.dispatch = Eigen::MatrixXd::Zero(rows, cfg_.T);
  int r = 0;
  for (std::size_t n = 0; n < im.aggs.size(); ++n) {
    const auto& agg = im.aggs[n];
    for (std::size_t k = 0; k < agg.prosumers.size(); ++k, ++r) {
      const auto& pr = agg.prosumers[k];
      rep.prosumers.push_back(pr.id);
      rep.kinds.push_back(pr.asset.kind);
      rep.buses.push_back(pr.bus);
      if (!res.schedules.empty()) rep.dispatch.row(r) = res.schedules[n].P.row(static_cast<Eigen::Index>(k));
      ledger::bc_put_dispatch(*im.ll.at(agg.id), ledger::Identity::admin(agg.id), i, pr.id,
                              {{"p", to_json(Eigen::VectorXd(rep.dispatch.row(r).transpose()))},
                               {"lambda", to_json(res.lambda)}});
    }
  }
  if (res.schedules.empty())
    rep.warnings.push_back("no dispatch available for window " + std::to_string(i) + "; delivering zero schedules");
  else
    im.previous = res;

  deliver(im, cfg_, i, rep, rep.warnings);
  im.clock.set(i, ledger::Stage::Closed);
  ++im.next_window;
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

std::vector<WindowReport> Simulation::run(int windows) {
  std::vector<WindowReport> out;
  for (int i = 0; i < windows; ++i) out.push_back(run_window(impl_->next_window));
  return out;
}

VerificationStage Simulation::verify_last() {
  if (!impl_->last) throw Error(ErrorCode::NotFound, "no window delivered yet");
  return verify(*impl_, cfg_, *impl_->last);
}

}  // namespace eve::orchestrator
