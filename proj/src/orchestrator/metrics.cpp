#include "eve/orchestrator.hpp"

#include "eve/error.hpp"

#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

namespace eve::orchestrator {

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

MoneySummary money(const WindowReport& r) {
  MoneySummary m;
  if (r.lambda.size() == r.dispatch.cols() && r.dispatch.rows() > 0) {
    for (Eigen::Index i = 0; i < r.dispatch.rows(); ++i) {
      const double v = r.dispatch.row(i).dot(r.lambda);
      if (v > 0) m.payments += v;
      else m.receipts -= v;
    }
    m.imbalance = r.lambda.dot(r.dispatch.colwise().sum().transpose());
  }
  if (r.verification)
    for (const auto& p : r.verification->penalties) m.penalties += p.amount;
  return m;
}

json summary_json(const std::vector<WindowReport>& reports) {
  json windows = json::array();
  MoneySummary total;
  int converged = 0;
  for (const auto& r : reports) {
    const auto m = money(r);
    total.payments += m.payments;
    total.receipts += m.receipts;
    total.penalties += m.penalties;
    total.imbalance += m.imbalance;
    if (r.pricing == market::PricingStatus::Converged) ++converged;
    json w{{"window", r.window},
           {"pricing", std::string(market::to_string(r.pricing))},
           {"iterations", r.iterations},
           {"balance_residual", r.balance_residual},
           {"lambda", to_json(r.lambda)},
           {"money",
            {{"payments", m.payments},
             {"receipts", m.receipts},
             {"penalties", m.penalties},
             {"imbalance", m.imbalance}}},
           {"ineligible", r.ineligible},
           {"warnings", r.warnings},
           {"wall_seconds", r.wall_seconds}};
    if (r.verification) {
      const auto& v = *r.verification;
      json attempts = json::array();
      for (const auto& a : v.report.attempts)
        attempts.push_back({{"regions", a.order},
                            {"iterations", a.iterations},
                            {"end", a.end == verification::Termination::Converged           ? "T1"
                                    : a.end == verification::Termination::AttackerIdentified ? "T2"
                                                                                            : "none"},
                            {"identified", a.identified ? json(*a.identified) : json(nullptr)}});
      json penalties = json::array();
      for (const auto& p : v.penalties)
        penalties.push_back({{"account", p.account}, {"bus", p.bus}, {"amount", p.amount}, {"after", p.after}});
      double worst = 0.0;
      for (Eigen::Index i = 0; i < v.report.deviation.size(); ++i)
        worst = std::max(worst, std::abs(v.report.deviation.data()[i]));
      w["verification"] = {{"window", v.window},
                           {"outcome", std::string(verification::to_string(v.report.outcome))},
                           {"attackers", v.report.attackers},
                           {"attempts", attempts},
                           {"total_iterations", v.report.total_iterations},
                           {"max_abs_deviation", finite_or_null(worst)},
                           {"penalties", penalties},
                           {"stealth", v.stealth}};
    }
    windows.push_back(std::move(w));
  }
  return json{{"windows", windows},
              {"converged_windows", converged},
              {"totals",
               {{"payments", total.payments},
                {"receipts", total.receipts},
                {"penalties", total.penalties},
                {"imbalance", total.imbalance}}}};
}

void emit_metrics(const std::vector<WindowReport>& reports, const std::string& out_dir) {
  if (reports.empty()) throw Error(ErrorCode::InvalidParams, "no window reports to write");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + out_dir + ": " + ec.message());
  auto path = [&](const char* f) { return (std::filesystem::path(out_dir) / f).string(); };

  std::ostringstream lam, res, tie, trust, dev;
  lam << "window,iteration,t,lambda\n";
  res << "window,t,kind,power_mw\n";
  tie << "verified_window,attempt,iteration,var,copy_n,copy_m\n";
  dev << "verified_window,bus,t,pstar,verified,deviation,delivered\n";

  std::set<grid::RegionId> regions;
  for (const auto& r : reports)
    if (r.verification)
      for (const auto& a : r.verification->report.attempts) regions.insert(a.order.begin(), a.order.end());
  trust << "verified_window,attempt,iteration";
  for (auto n : regions) trust << ",pi_" << n;
  trust << "\n";

  for (const auto& r : reports) {
    for (std::size_t k = 0; k < r.lambda_trace.size(); ++k)
      for (Eigen::Index t = 0; t < r.lambda_trace[k].size(); ++t)
        lam << r.window << ',' << k << ',' << t << ',' << num(r.lambda_trace[k](t)) << '\n';

    std::map<std::string, Eigen::VectorXd> by_kind;
    for (std::size_t i = 0; i < r.kinds.size(); ++i) {
      auto& acc = by_kind[std::string(resources::to_string(r.kinds[i]))];
      if (acc.size() == 0) acc = Eigen::VectorXd::Zero(r.dispatch.cols());
      acc += r.dispatch.row(static_cast<Eigen::Index>(i)).transpose();
    }
    for (Eigen::Index t = 0; t < r.dispatch.cols(); ++t)
      for (const auto& [kind, v] : by_kind) res << r.window << ',' << t << ',' << kind << ',' << num(v(t)) << '\n';

    if (!r.verification) continue;
    const auto& v = *r.verification;
    for (std::size_t a = 0; a < v.report.attempts.size(); ++a) {
      const auto& at = v.report.attempts[a];
      for (std::size_t k = 0; k < at.trace_n.size(); ++k)
        for (std::size_t j = 0; j < at.trace_vars.size(); ++j)
          tie << v.window << ',' << a << ',' << k << ',' << at.trace_vars[j] << ','
              << num(at.trace_n[k](static_cast<Eigen::Index>(j))) << ','
              << num(at.trace_m[k](static_cast<Eigen::Index>(j))) << '\n';
      for (std::size_t k = 0; k < at.pis.size(); ++k) {
        trust << v.window << ',' << a << ',' << k;
        for (auto n : regions) {
          trust << ',';
          for (std::size_t e = 0; e < at.order.size(); ++e)
            if (at.order[e] == n) trust << num(at.pis[k](static_cast<Eigen::Index>(e)));
        }
        trust << '\n';
      }
    }
    for (Eigen::Index b = 0; b < v.pstar.rows(); ++b)
      for (Eigen::Index t = 0; t < v.pstar.cols(); ++t)
        dev << v.window << ',' << v.bus_ids[static_cast<std::size_t>(b)] << ',' << t << ','
            << num(v.pstar(b, t)) << ',' << num(v.report.verified(b, t)) << ','
            << num(std::isnan(v.report.verified(b, t)) ? std::nan("") : v.report.deviation(b, t)) << ','
            << num(v.truth(b, t)) << '\n';
  }

  write_text_file(path("lambda.csv"), lam.str());
  write_text_file(path("resources.csv"), res.str());
  write_text_file(path("tieline.csv"), tie.str());
  write_text_file(path("trust.csv"), trust.str());
  write_text_file(path("deviations.csv"), dev.str());
  write_text_file(path("summary.json"), summary_json(reports).dump(2) + "\n");
}

}  // namespace eve::orchestrator
