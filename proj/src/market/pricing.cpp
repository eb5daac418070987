#include "eve/error.hpp"
#include "eve/ledger.hpp"
#include "eve/market.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <exception>
#include <thread>

namespace eve::market {

double step_size(double alpha_hat, int k) { return alpha_hat / (k + 1); }

Eigen::VectorXd price_update(const Eigen::VectorXd& lambda,
                             const std::vector<std::optional<Eigen::VectorXd>>& aggregates,
                             double alpha) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(lambda.size());
  for (std::size_t n = 0; n < aggregates.size(); ++n) {
    if (!aggregates[n])
      throw Error(ErrorCode::MissingAggregator, "no aggregate from aggregator slot " +
                                                    std::to_string(n));
    if (aggregates[n]->size() != lambda.size())
      throw Error(ErrorCode::DimensionMismatch, "aggregate length differs from T");
    sum += *aggregates[n];
  }
  return lambda + alpha * sum;
}

bool check_convergence(const Eigen::VectorXd& next, const Eigen::VectorXd& prev, double eps) {
  if (next.size() != prev.size()) throw Error(ErrorCode::DimensionMismatch, "price lengths differ");
  if (next.size() == 0) return true;
  return (next - prev).cwiseAbs().maxCoeff() < eps;
}

bool detect_cycle(const std::vector<Eigen::VectorXd>& h, int window, double tol) {
  const int n = static_cast<int>(h.size());
  if (window < 4 || n < window) return false;
  const int first = n - window;
  auto dist = [&](int i, int j) { return (h[i] - h[j]).cwiseAbs().maxCoeff(); };
  if (dist(n - 1, n - 2) <= tol) return false;  // settling, not cycling
  for (int period = 2; period <= window / 2; ++period) {
    bool repeats = true;
    for (int i = first + period; i < n && repeats; ++i) repeats = dist(i, i - period) <= tol;
    if (repeats) return true;
  }
  return false;
}

std::vector<BillingEntry> billing_update(std::vector<Aggregator>& aggs,
                                         const std::vector<ScheduleMatrix>& schedules,
                                         const Eigen::VectorXd& lambda) {
  if (schedules.size() != aggs.size())
    throw Error(ErrorCode::DimensionMismatch, "one schedule per aggregator expected");
  std::vector<BillingEntry> out;
  for (std::size_t n = 0; n < aggs.size(); ++n)
    for (std::size_t i = 0; i < aggs[n].prosumers.size(); ++i) {
      Prosumer& pr = aggs[n].prosumers[i];
      double delta = schedules[n].P.row(static_cast<Eigen::Index>(i)).dot(lambda);
      BillingEntry e{pr.id, pr.budget, delta, pr.budget + delta};
      pr.budget = e.after;
      out.push_back(e);
    }
  return out;
}

std::string_view to_string(PricingStatus s) {
  switch (s) {
    case PricingStatus::Converged: return "converged";
    case PricingStatus::IterationLimit: return "iteration_limit";
    case PricingStatus::Timeout: return "timeout";
    case PricingStatus::Recycled: return "recycled";
    case PricingStatus::Empty: return "empty";
  }
  return "?";
}

void run_actors(ExecutionMode mode, const std::vector<std::function<void()>>& tasks) {
  if (mode == ExecutionMode::Deterministic) {
    for (const auto& t : tasks) t();
    return;
  }
  std::vector<std::exception_ptr> errors(tasks.size());
  std::vector<std::thread> threads;
  threads.reserve(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i)
    threads.emplace_back([&, i] {
      try {
        tasks[i]();
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
  for (auto& th : threads) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

namespace {

using json = nlohmann::json;

std::string round_key(int window, int round, int agg) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "pricing/%06d/%04d/%03d", window, round, agg);
  return buf;
}

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd json_vec(const json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

PricingResult run_pricing(std::vector<Aggregator>& aggs, const PricingConfig& cfg,
                          const PricingContext& ctx, int T) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const std::size_t N = aggs.size();
  PricingResult res;
  res.alpha_hat_final = cfg.alpha_hat;
  res.lambda = ctx.lambda0 ? *ctx.lambda0 : Eigen::VectorXd::Zero(T);
  if (res.lambda.size() != T) throw Error(ErrorCode::DimensionMismatch, "initial price length");
  res.lambda_trace.push_back(res.lambda);

  auto is_silent = [&](std::size_t n) {
    return std::find(ctx.silent.begin(), ctx.silent.end(), aggs[n].id) != ctx.silent.end();
  };
  auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - start).count(); };

  auto give_up = [&](PricingStatus why, const std::string& reason) {
    res.warnings.push_back(reason);
    if (ctx.previous && !ctx.previous->schedules.empty()) {
      res.status = PricingStatus::Recycled;
      res.schedules = ctx.previous->schedules;
      res.lambda = ctx.previous->lambda;
      res.warnings.push_back("recycling the previous dispatch");
    } else {
      res.status = PricingStatus::Empty;
      res.schedules.clear();
      res.warnings.push_back(std::string(to_string(ErrorCode::NoPriorSolution)) +
                             ": no dispatch to recycle after " + std::string(to_string(why)));
    }
    return res;
  };

  double alpha_hat = cfg.alpha_hat;
  std::vector<Eigen::VectorXd> history{res.lambda};
  std::vector<ScheduleMatrix> sched(N);
  std::vector<std::optional<Eigen::VectorXd>> posted(N);
  std::vector<Eigen::VectorXd> next(N);
  std::vector<char> ready(N, 0);

  for (int k = 0; k < cfg.max_iterations; ++k) {
    const Eigen::VectorXd lambda = res.lambda;
    // Post phase: each aggregator solves its subproblem and publishes the aggregate.
    std::vector<std::function<void()>> post;
    for (std::size_t n = 0; n < N; ++n)
      post.push_back([&, n] {
        if (is_silent(n)) return;
        sched[n] = solve_subproblem(aggs[n], lambda, cfg.smoothing);
        Eigen::VectorXd agg = sched[n].aggregate();
        if (ctx.global) {
          auto who = ledger::Identity::admin(aggs[n].id);
          ledger::rc_put_round(*ctx.global, who, "pricing", ctx.window, k,
                               round_key(ctx.window, k, aggs[n].id),
                               json{{"aggregator", aggs[n].id}, {"aggregate", vec_json(agg)}});
        } else {
          posted[n] = agg;
        }
      });
    run_actors(ctx.mode, post);

    // Read phase: every active aggregator gathers all round-k aggregates and updates lambda.
    const double left = std::max(0.0, cfg.timeout_s - elapsed());
    const auto wait = ctx.mode == ExecutionMode::Concurrent
                          ? std::chrono::milliseconds(static_cast<long>(left * 1000.0))
                          : std::chrono::milliseconds(0);
    std::vector<std::function<void()>> read;
    for (std::size_t n = 0; n < N; ++n)
      read.push_back([&, n] {
        ready[n] = 0;
        if (is_silent(n)) return;
        std::vector<std::optional<Eigen::VectorXd>> got(N);
        if (ctx.global) {
          auto who = ledger::Identity::admin(aggs[n].id);
          ledger::Selector sel;
          sel.type = "pricing";
          sel.window = ctx.window;
          sel.round = k;
          sel.key_prefix = round_key(ctx.window, k, 0).substr(0, 20);
          auto fetch = [&] {
            auto recs = ctx.global->select(sel, who);
            for (const auto& r : recs) {
              int id = r.value.at("aggregator").get<int>();
              for (std::size_t m = 0; m < N; ++m)
                if (aggs[m].id == id) got[m] = json_vec(r.value.at("aggregate"));
            }
            return std::all_of(got.begin(), got.end(), [](const auto& g) { return g.has_value(); });
          };
          ctx.global->wait_for(fetch, wait);
        } else {
          got = posted;
        }
        try {
          next[n] = price_update(lambda, got, step_size(alpha_hat, k));
          ready[n] = 1;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::MissingAggregator) throw;
        }
      });
    run_actors(ctx.mode, read);

    std::optional<std::size_t> lead;
    for (std::size_t n = 0; n < N; ++n)
      if (ready[n]) {
        lead = n;
        break;
      }
    res.iterations = k + 1;
    if (!lead)
      return give_up(PricingStatus::Timeout,
                     std::string(to_string(ErrorCode::MissingAggregator)) + " in round " +
                         std::to_string(k));
    const Eigen::VectorXd lam_next = next[*lead];

    Eigen::VectorXd total = Eigen::VectorXd::Zero(T);
    for (std::size_t n = 0; n < N; ++n) total += sched[n].aggregate();
    res.balance_residual = total.cwiseAbs().maxCoeff();

    if (check_convergence(lam_next, lambda, cfg.epsilon) &&
        res.balance_residual < cfg.balance_tol) {
      res.status = PricingStatus::Converged;
      res.schedules = sched;
      res.alpha_hat_final = alpha_hat;
      res.billing = billing_update(aggs, res.schedules, res.lambda);
      return res;
    }
    res.lambda = lam_next;
    res.lambda_trace.push_back(lam_next);
    history.push_back(lam_next);
    if (detect_cycle(history, cfg.cycle_window, cfg.epsilon)) {
      alpha_hat *= 0.5;
      res.warnings.push_back("price cycle detected at round " + std::to_string(k) +
                             "; step scale halved");
      history.assign(1, lam_next);
    }
    res.alpha_hat_final = alpha_hat;
    if (elapsed() > cfg.timeout_s)
      return give_up(PricingStatus::Timeout, "pricing time limit reached");
  }
  return give_up(PricingStatus::IterationLimit, "pricing iteration limit reached");
}

}  // namespace eve::market
