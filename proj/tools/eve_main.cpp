#include "eve/error.hpp"
#include "eve/ledger.hpp"
#include "eve/orchestrator.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

using namespace eve;
using namespace eve::orchestrator;

namespace {

struct Source {
  std::string scenario;
  std::string tmpl;
  std::optional<std::uint64_t> seed;
  std::string attack;

  void add(CLI::App* cmd) {
    cmd->add_option("--scenario", scenario, "scenario JSON file");
    cmd->add_option("--template", tmpl, "built-in scenario (case141x7, toy3)");
    cmd->add_option("--seed", seed, "override the scenario seed");
    cmd->add_option("--attack", attack, "none | message:<m>[:scale] | measurement:<m> | silent:<m> | stealth:<m>");
  }

  ScenarioConfig load() const {
    if (scenario.empty() == tmpl.empty())
      throw Error(ErrorCode::ParseError, "give exactly one of --scenario and --template");
    ScenarioConfig cfg = scenario.empty() ? generate_scenario(tmpl, seed.value_or(1)) : load_scenario(scenario);
    if (seed) cfg.seed = *seed;
    if (!attack.empty()) cfg.attack = attack;
    return cfg;
  }
};

void print_window(const WindowReport& r) {
  std::cout << "window " << r.window << ": pricing " << market::to_string(r.pricing) << " after "
            << r.iterations << " rounds, balance " << r.balance_residual << " MW, "
            << r.wall_seconds << " s\n";
  std::cout << "  lambda";
  for (Eigen::Index t = 0; t < r.lambda.size(); ++t) std::cout << ' ' << r.lambda(t);
  std::cout << '\n';
  if (r.verification) {
    const auto& v = r.verification->report;
    std::cout << "  verified window " << r.verification->window << ": "
              << verification::to_string(v.outcome) << " in " << v.total_iterations << " iterations";
    if (!v.attackers.empty()) {
      std::cout << ", attackers";
      for (auto m : v.attackers) std::cout << ' ' << m;
    }
    double pen = 0.0;
    for (const auto& p : r.verification->penalties) pen += p.amount;
    std::cout << ", penalties " << pen << '\n';
  }
  for (const auto& w : r.warnings) std::cout << "  warning: " << w << '\n';
}

int run_cmd(const Source& src, int windows, bool deterministic, const std::string& out) {
  auto cfg = src.load();
  if (windows > 0) cfg.windows = windows;
  RunOptions opts;
  opts.mode = deterministic ? market::ExecutionMode::Deterministic : market::ExecutionMode::Concurrent;
  if (!out.empty()) opts.journal_dir = out;
  Simulation sim(cfg, opts);
  std::vector<WindowReport> reports;
  for (int i = 0; i < cfg.windows; ++i) {
    reports.push_back(sim.run_window(i));
    print_window(reports.back());
  }
  if (!out.empty()) {
    emit_metrics(reports, out);
    save_scenario(cfg, out + "/scenario.json");
    std::cout << "wrote metrics and journals to " << out << '\n';
  }
  return 0;
}

int verify_cmd(const Source& src) {
  auto cfg = src.load();
  Simulation sim(cfg);
  sim.run_window(0);
  auto st = sim.verify_last();
  const auto& v = st.report;
  std::cout << "outcome " << verification::to_string(v.outcome) << " after " << v.total_iterations
            << " iterations\n";
  for (std::size_t a = 0; a < v.attempts.size(); ++a) {
    const auto& at = v.attempts[a];
    std::cout << "attempt " << a << ": " << at.iterations << " iterations, "
              << (at.end == verification::Termination::Converged           ? "T1"
                  : at.end == verification::Termination::AttackerIdentified ? "T2"
                                                                           : "no termination");
    if (at.identified) std::cout << ", removed aggregator " << *at.identified;
    if (!at.pis.empty()) {
      std::cout << ", pi";
      for (Eigen::Index i = 0; i < at.pis.back().size(); ++i)
        std::cout << ' ' << at.order[static_cast<std::size_t>(i)] << ':' << at.pis.back()(i);
    }
    std::cout << '\n';
  }
  for (const auto& w : v.warnings) std::cout << "warning: " << w << '\n';
  return v.outcome == verification::Outcome::Converged ? 0 : exit_code_for(ErrorCode::GraphDisconnected);
}

int price_cmd(const Source& src) {
  auto cfg = src.load();
  Simulation sim(cfg);
  auto r = sim.run_window(0);
  print_window(r);
  return r.pricing == market::PricingStatus::Converged ? 0 : exit_code_for(ErrorCode::SolverStall);
}

int ledger_cmd(const std::string& action, const std::string& journal) {
  auto blocks = ledger::read_journal(journal);
  if (action == "dump") {
    for (const auto& b : blocks) std::cout << ledger::journal_line(b) << '\n';
    return 0;
  }
  auto check = ledger::verify_chain(blocks);
  if (check.ok) {
    std::cout << journal << ": " << blocks.size() << " blocks, chain intact\n";
    return 0;
  }
  std::cout << journal << ": broken at block " << check.first_bad << " (" << check.reason << ")\n";
  return exit_code_for(ErrorCode::AccessDenied);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EVE transactive energy simulator"};
  app.require_subcommand(1);

  Source run_src, price_src, verify_src;
  int windows = 0;
  bool deterministic = false;
  std::string out;
  auto* run = app.add_subcommand("run", "run solving windows and write metrics");
  run_src.add(run);
  run->add_option("--windows", windows, "number of windows (default: scenario value)");
  run->add_flag("--deterministic", deterministic, "run aggregator actors in a fixed order");
  run->add_option("--out", out, "output directory for metrics and ledger journals");

  auto* price = app.add_subcommand("price", "clear prices for one window");
  price_src.add(price);

  auto* verify = app.add_subcommand("verify", "dispatch one window, then verify its measurements");
  verify_src.add(verify);

  std::string tmpl, dest;
  std::uint64_t gen_seed = 1;
  auto* gen = app.add_subcommand("generate", "write a built-in scenario to a file");
  gen->add_option("template", tmpl, "case141x7 or toy3")->required();
  gen->add_option("--seed", gen_seed, "roster seed");
  gen->add_option("--out", dest, "destination JSON file")->required();

  std::string action, journal;
  auto* led = app.add_subcommand("ledger", "inspect a ledger journal");
  led->add_option("action", action, "dump or verify")->required()->check(CLI::IsMember({"dump", "verify"}));
  led->add_option("--journal", journal, "journal file (jsonl)")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return run_cmd(run_src, windows, deterministic, out);
    if (*price) return price_cmd(price_src);
    if (*verify) return verify_cmd(verify_src);
    if (*gen) {
      save_scenario(generate_scenario(tmpl, gen_seed), dest);
      return 0;
    }
    if (*led) return ledger_cmd(action, journal);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
