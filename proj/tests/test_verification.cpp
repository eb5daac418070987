#include <doctest.h>

#include "fixtures.hpp"

#include "eve/adversary.hpp"
#include "eve/ledger.hpp"
#include "eve/verification.hpp"

#include <cmath>
#include <memory>
#include <random>

using namespace eve;
using namespace eve::grid;
using namespace eve::verification;
using fixtures::code_of;

namespace {

struct Case {
  RadialNetwork net;
  Eigen::MatrixXd truth;  // var_count x T
  VerificationProblem pr;
};

// Ground truth from the power flow, Gaussian noise on every sensor, schedules equal to the truth.
std::unique_ptr<Case> make_case(const GridTopology& topo, const std::map<BusId, double>& load_mw,
                                int T, double noise, unsigned seed, SensorPlacement sensors) {
  auto c = std::make_unique<Case>(Case{validate_radial(topo), {}, {}});
  const auto& net = c->net;
  c->truth.resize(static_cast<Eigen::Index>(net.var_count()), T);
  c->pr.pstar.resize(static_cast<Eigen::Index>(net.bus_count()), T);
  for (int t = 0; t < T; ++t) {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.bus_count()));
    Eigen::VectorXd q = p;
    const double f = 0.8 + 0.1 * t;
    for (auto [bus, mw] : load_mw) {
      p(static_cast<Eigen::Index>(net.bus_index(bus))) = -f * mw;
      q(static_cast<Eigen::Index>(net.bus_index(bus))) = -0.5 * f * mw;
    }
    auto s = solve_power_flow(net, p, q);
    c->truth.col(t) = stack(s, net);
    c->pr.pstar.col(t) = s.p;
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  c->pr.net = &c->net;
  c->pr.sensors = std::move(sensors);
  const auto S = static_cast<Eigen::Index>(c->pr.sensors.vars.size());
  c->pr.z.resize(S, T);
  for (Eigen::Index i = 0; i < S; ++i)
    for (int t = 0; t < T; ++t)
      c->pr.z(i, t) = c->truth(static_cast<Eigen::Index>(c->pr.sensors.vars[static_cast<std::size_t>(i)]), t) +
                      noise * N(rng);
  c->pr.variance = Eigen::VectorXd::Constant(S, noise > 0 ? noise * noise : 1.0);
  return c;
}

SensorPlacement all_sensors(const RadialNetwork& net) {
  SensorPlacement s;
  for (std::size_t v = 0; v < net.var_count(); ++v)
    if (net.var_kind(v) != VarKind::Aux) s.vars.push_back(v);
  return s;
}

GridTopology two_region_toy() {
  auto t = fixtures::chain(4, 0.02, 0.03);
  t.region_of = {{1, 0}, {2, 0}, {3, 1}, {4, 1}};
  return t;
}

std::unique_ptr<Case> toy_case(double noise, unsigned seed) {
  auto topo = two_region_toy();
  auto net = validate_radial(topo);
  return make_case(topo, {{2, 0.3}, {3, 0.5}, {4, 0.2}}, 2, noise, seed, all_sensors(net));
}

std::unique_ptr<Case> case141_case(double noise, unsigned seed) {
  auto mc = fixtures::case141();
  auto topo = fixtures::case141x7();
  auto net = validate_radial(topo);
  std::map<BusId, double> loads;
  for (auto [b, pd] : mc.pd)
    if (pd > 0) loads[b] = pd;
  return make_case(topo, loads, 6, noise, seed, default_sensor_placement(net, 1.0, 1));
}

RegionMatrices one_shared(RegionId neighbour) {
  RegionMatrices m;
  m.vars = {0};
  m.shared[neighbour] = {0};
  m.D = Eigen::VectorXd::Ones(1);
  m.Dbar = Eigen::VectorXd::Ones(1);
  return m;
}

Eigen::MatrixXd scalar(double v) { return Eigen::MatrixXd::Constant(1, 1, v); }

// Region objective without the consensus term, built from the dense selection matrices.
void region_normal_equations(const RegionState& s, const VerificationConfig& cfg,
                             Eigen::MatrixXd& G, Eigen::MatrixXd& h) {
  const auto SA = s.m.measured_selection();
  const auto SP = s.m.injection_selection();
  const Eigen::MatrixXd W = s.variance.cwiseInverse().asDiagonal();
  G = cfg.c1 * SA.transpose() * W * SA + cfg.c2 * s.m.H.transpose() * s.m.H +
      cfg.c3 * SP.transpose() * SP;
  h = cfg.c1 * SA.transpose() * W * s.z + cfg.c3 * SP.transpose() * s.pstar;
}

VerificationConfig tight() {
  VerificationConfig cfg;
  cfg.eps = 1e-11;
  cfg.max_iterations = 20000;
  return cfg;
}

}  // namespace

TEST_CASE("consensus arithmetic") {
  SUBCASE("zero start") {
    RegionState s;
    s.m = one_shared(2);
    s.z = Eigen::MatrixXd(0, 1);
    admm_init(s, scalar(0), {{2, scalar(0)}});
    CHECK(s.psi(0, 0) == 0.0);
    CHECK(s.ups(0, 0) == 0.0);
  }
  SUBCASE("initial averages take the neighbour's value") {
    RegionState a, b;
    a.m = one_shared(2);
    b.m = one_shared(1);
    a.z = b.z = Eigen::MatrixXd(0, 1);
    admm_init(a, scalar(4), {{2, scalar(2)}});
    admm_init(b, scalar(2), {{1, scalar(4)}});
    CHECK(a.psi(0, 0) == 2.0);
    CHECK(b.psi(0, 0) == 4.0);
    CHECK(a.ups(0, 0) == 3.0);
  }
  SUBCASE("one neighbour at 6 against own 2") {
    RegionState s;
    s.m = one_shared(2);
    s.z = Eigen::MatrixXd(0, 1);
    s.x = scalar(2);
    s.psi = scalar(2);
    s.ups = scalar(1.25);
    admm_consensus_update(s, scalar(7), {{2, scalar(6)}});
    CHECK(s.psi(0, 0) == 6.0);
    CHECK(s.ups(0, 0) == doctest::Approx(5.25).epsilon(1e-15));
    CHECK(s.x(0, 0) == 7.0);
    CHECK(s.k == 1);
  }
  SUBCASE("agreement is a fixed point of the dual") {
    RegionState s;
    s.m = one_shared(2);
    s.z = Eigen::MatrixXd(0, 1);
    s.x = scalar(3);
    s.psi = scalar(3);
    s.ups = scalar(-1);
    admm_consensus_update(s, scalar(3), {{2, scalar(3)}});
    CHECK(s.ups(0, 0) == -1.0);
  }
  SUBCASE("unshared coordinates keep psi at zero") {
    RegionState s;
    s.m.vars = {0, 1};
    s.m.shared[2] = {1};
    s.m.D = Eigen::Vector2d(0, 1);
    s.m.Dbar = Eigen::Vector2d(0, 1);
    s.z = Eigen::MatrixXd(0, 1);
    admm_init(s, Eigen::Vector2d(5, 5), {{2, scalar(1)}});
    CHECK(s.psi(0, 0) == 0.0);
    CHECK(s.psi(1, 0) == 1.0);
  }
}

TEST_CASE("x-update keeps a consistent state fixed") {
  auto c = toy_case(0.0, 1);
  auto states = build_states(c->pr, {0, 1});
  VerificationConfig cfg;
  for (auto& [id, s] : states) {
    RegionSolver solver(s, cfg);
    Eigen::MatrixXd xs(static_cast<Eigen::Index>(s.m.size()), c->truth.cols());
    for (std::size_t i = 0; i < s.m.vars.size(); ++i)
      xs.row(static_cast<Eigen::Index>(i)) = c->truth.row(static_cast<Eigen::Index>(s.m.vars[i]));
    s.ups = xs;
    CHECK((admm_x_update(s, solver) - xs).cwiseAbs().maxCoeff() < 1e-9);
    // The system is symmetric positive definite.
    CHECK((solver.system() - solver.system().transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(solver.system()).eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("single region equals the direct weighted least-squares solve") {
  auto topo = fixtures::chain(5, 0.02, 0.03);
  auto net = validate_radial(topo);
  auto c = make_case(topo, {{2, 0.4}, {4, 0.3}, {5, 0.1}}, 3, 0.2, 5, all_sensors(net));
  auto cfg = tight();
  auto rep = run_verification(c->pr, cfg);
  REQUIRE(rep.outcome == Outcome::Converged);
  const auto& s = rep.states.at(0);

  // Stack the three weighted residual blocks and solve with QR.
  const auto SA = s.m.measured_selection();
  const auto SP = s.m.injection_selection();
  const Eigen::Index n = static_cast<Eigen::Index>(s.m.size());
  const Eigen::Index rows = SA.rows() + s.m.H.rows() + SP.rows();
  Eigen::MatrixXd A(rows, n), b(rows, s.z.cols());
  const Eigen::VectorXd w = (cfg.c1 * s.variance.cwiseInverse()).cwiseSqrt();
  A << w.asDiagonal() * SA, std::sqrt(cfg.c2) * s.m.H, std::sqrt(cfg.c3) * SP;
  b << w.asDiagonal() * s.z, Eigen::MatrixXd::Zero(s.m.H.rows(), s.z.cols()), std::sqrt(cfg.c3) * s.pstar;
  Eigen::MatrixXd x = A.colPivHouseholderQr().solve(b);
  CHECK((s.x - x).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(rep.attempts[0].iterations <= 3);
}

TEST_CASE("two-region ADMM reaches the centralized optimum") {
  for (unsigned seed : {1u, 2u, 3u}) {
    auto c = toy_case(0.1, seed);
    // Schedules off the truth so all three terms pull.
    c->pr.pstar.array() += 0.05;
    auto cfg = tight();
    auto rep = run_verification(c->pr, cfg);
    REQUIRE(rep.outcome == Outcome::Converged);

    const auto V = static_cast<Eigen::Index>(c->net.var_count());
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(V, V), h = Eigen::MatrixXd::Zero(V, c->pr.z.cols());
    for (const auto& [id, s] : rep.states) {
      Eigen::MatrixXd Gn, hn;
      region_normal_equations(s, cfg, Gn, hn);
      const auto S = s.m.selection(c->net.var_count());
      G += S.transpose() * Gn * S;
      h += S.transpose() * hn;
    }
    for (Eigen::Index i = 0; i < V; ++i)
      if (G.row(i).cwiseAbs().maxCoeff() == 0.0) G(i, i) = 1.0;
    Eigen::MatrixXd xc = G.ldlt().solve(h);
    for (const auto& [id, s] : rep.states) {
      const auto S = s.m.selection(c->net.var_count());
      CHECK((s.x - S * xc).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("shared disagreement shrinks after burn-in") {
  auto c = toy_case(1.0, 9);
  VerificationConfig cfg;
  auto rep = run_verification(c->pr, cfg);
  REQUIRE(rep.outcome == Outcome::Converged);
  const auto& gap = rep.attempts[0].disagreement;
  for (std::size_t k = 20; k < gap.size(); ++k) CHECK(gap[k] <= gap[k - 1] * (1 + 1e-9));
  // The step test stops while the copies still trail by a small multiple of eps.
  CHECK(gap.back() < 5 * cfg.eps);
  auto strict = run_verification(c->pr, tight());
  CHECK(strict.attempts[0].disagreement.back() < 1e-8);
}

TEST_CASE("a corrupted message shifts psi, ups and x exactly") {
  auto c = toy_case(0.2, 4);
  VerificationConfig cfg;
  auto states = build_states(c->pr, {0, 1});
  std::map<RegionId, RegionSolver> solvers;
  for (auto& [id, s] : states) solvers.emplace(id, RegionSolver(s, cfg));
  std::map<RegionId, Slices> in;
  for (auto& [id, s] : states) s.x = initial_x(s, cfg.init);
  for (auto& [id, s] : states)
    for (const auto& [nb, idx] : s.m.shared) in[nb][id] = shared_slice(s, nb);
  for (auto& [id, s] : states) admm_init(s, s.x, in[id]);
  // A few honest rounds first.
  for (int k = 0; k < 5; ++k) {
    std::map<RegionId, Eigen::MatrixXd> xn;
    for (auto& [id, s] : states) xn[id] = admm_x_update(s, solvers.at(id));
    in.clear();
    for (auto& [id, s] : states)
      for (const auto& [nb, idx] : s.m.shared) {
        Eigen::MatrixXd slice(static_cast<Eigen::Index>(idx.size()), xn[id].cols());
        for (std::size_t i = 0; i < idx.size(); ++i)
          slice.row(static_cast<Eigen::Index>(i)) = xn[id].row(static_cast<Eigen::Index>(idx[i]));
        in[nb][id] = slice;
      }
    for (auto& [id, s] : states) admm_consensus_update(s, xn[id], in[id]);
  }

  // Region 1 receives region 0's next slice with and without an attack vector.
  RegionState honest = states.at(1), attacked = states.at(1);
  const Eigen::MatrixXd x0n = admm_x_update(states.at(0), solvers.at(0));
  const auto& idx0 = states.at(0).m.shared.at(1);
  Eigen::MatrixXd slice(static_cast<Eigen::Index>(idx0.size()), x0n.cols());
  for (std::size_t i = 0; i < idx0.size(); ++i)
    slice.row(static_cast<Eigen::Index>(i)) = x0n.row(static_cast<Eigen::Index>(idx0[i]));
  adversary::AttackSpec spec;
  spec.attacker = 0;
  spec.mode = adversary::AttackMode::MessageFDIA;
  spec.seed = 77;
  const Eigen::MatrixXd a = adversary::message_attack(slice.rows(), slice.cols(), spec, 6, 1);
  const Eigen::MatrixXd x1n = admm_x_update(honest, solvers.at(1));
  admm_consensus_update(honest, x1n, {{0, slice}});
  admm_consensus_update(attacked, x1n, {{0, slice + a}});

  const auto& m = honest.m;
  const Eigen::MatrixXd Snm = m.shared_selection(0);
  const Eigen::MatrixXd expected = m.Dbar.asDiagonal() * Snm.transpose() * a;
  CHECK((attacked.psi - honest.psi - expected).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((attacked.ups - honest.ups - expected).cwiseAbs().maxCoeff() < 1e-12);
  const Eigen::MatrixXd dx =
      admm_x_update(attacked, solvers.at(1)) - admm_x_update(honest, solvers.at(1));
  const Eigen::MatrixXd predicted =
      cfg.c4 * solvers.at(1).system().inverse() * m.D.asDiagonal() * expected;
  CHECK((dx - predicted).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("disagreement arithmetic") {
  CHECK(disagreement_update(0.0, scalar(3), scalar(1), 1.0) == 1.0);
  CHECK(disagreement_update(2.0, scalar(5), scalar(5), 0.25) == 1.5);
  // alpha_k = 1/k: k = 1 then k = 2.
  CHECK(alpha_k(2) == 0.5);
  double d = disagreement_update(0.0, scalar(3), scalar(1), alpha_k(1));
  d = disagreement_update(d, scalar(1), scalar(0), alpha_k(2));
  CHECK(d == doctest::Approx(0.5 * 1.0 + 0.125 * 1.0));
  // Normalized by slice length and horizon.
  Eigen::MatrixXd own(2, 2), other = Eigen::MatrixXd::Zero(2, 2);
  own << 1, 2, 3, 4;
  CHECK(disagreement_update(0.0, own, other, 1.0) == doctest::Approx(30.0 / 16.0));
}

TEST_CASE("trust scores") {
  SUBCASE("equal clique is uniform") {
    Eigen::Matrix3d d;
    d << 0, 1, 1, 1, 0, 1, 1, 1, 0;
    auto pi = trust_scores(normalize_disagreement(d, 1e-16)).pi;
    for (int i = 0; i < 3; ++i) CHECK(pi(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  }
  SUBCASE("one loud agent") {
    Eigen::Matrix3d d;
    d << 0, 10, 10, 10, 0, 1, 10, 1, 0;
    auto B = normalize_disagreement(d, 1e-16);
    auto pi = trust_scores(B).pi;
    Eigen::Index arg;
    pi.maxCoeff(&arg);
    CHECK(arg == 0);
    Eigen::EigenSolver<Eigen::MatrixXd> es(B.transpose());
    Eigen::Index k;
    (es.eigenvalues().real().array() - 1.0).abs().minCoeff(&k);
    Eigen::VectorXd v = es.eigenvectors().col(k).real();
    v /= v.sum();
    CHECK((v - pi).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("random connected matrices against a dense eigensolver") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
      const int n = 2 + trial % 9;
      Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
      // A spanning path keeps the pattern connected; extra edges at random.
      for (int i = 0; i + 1 < n; ++i) d(i, i + 1) = d(i + 1, i) = 0.1 + u(rng);
      for (int i = 0; i < n; ++i)
        for (int j = i + 2; j < n; ++j)
          if (u(rng) < 0.4) {
            d(i, j) = 0.1 + u(rng);
            d(j, i) = 0.1 + u(rng);
          }
      auto B = normalize_disagreement(d, 1e-16);
      for (int i = 0; i < n; ++i) CHECK(std::abs(B.row(i).sum() - 1.0) < 1e-9);
      auto pi = trust_scores(B).pi;
      CHECK(std::abs(pi.sum() - 1.0) < 1e-12);
      CHECK(pi.minCoeff() >= 0.0);
      Eigen::EigenSolver<Eigen::MatrixXd> es(B.transpose());
      Eigen::Index k;
      (es.eigenvalues().real().array() - 1.0).abs().minCoeff(&k);
      Eigen::VectorXd v = es.eigenvectors().col(k).real();
      v /= v.sum();
      CHECK((v - pi).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
  SUBCASE("iteration cap") {
    Eigen::Matrix2d B;
    B << 0.0, 1.0, 1e-3, 1.0 - 1e-3;
    CHECK(code_of([&] { trust_scores(B, 1e-16, 3); }) == ErrorCode::NoConvergence);
  }
}

TEST_CASE("termination rules") {
  VerificationConfig cfg;
  SUBCASE("frozen x") {
    auto t = check_termination({0.5, 0.0}, {}, cfg);
    CHECK(t.kind == Termination::Converged);
  }
  SUBCASE("stable pi with one outlier") {
    Eigen::Vector3d pi(0.9, 0.05, 0.05);
    auto [mu, sigma] = excluded_stats(pi, 0);
    CHECK(mu == doctest::Approx(0.05));
    CHECK(sigma == 0.0);
    cfg.burn_in = 0;
    cfg.stall_window = 0;
    auto t = check_termination({1.0, 1.0}, {pi, pi}, cfg);
    CHECK(t.kind == Termination::AttackerIdentified);
    CHECK(*t.attacker == 0);
  }
  SUBCASE("moving pi does not fire") {
    cfg.burn_in = 0;
    cfg.stall_window = 0;
    Eigen::Vector3d a(0.9, 0.05, 0.05), b(0.8, 0.1, 0.1);
    CHECK(check_termination({1.0, 1.0}, {a, b}, cfg).kind == Termination::Continue);
  }
  SUBCASE("T2 waits while the x-steps still shrink") {
    Eigen::Vector3d pi(0.9, 0.05, 0.05);
    std::vector<double> shrinking, flat(60, 1.0);
    for (int k = 0; k < 60; ++k) shrinking.push_back(10.0 * std::pow(0.9, k));
    std::vector<Eigen::VectorXd> pis(60, pi);
    CHECK(check_termination(shrinking, pis, cfg).kind == Termination::Continue);
    CHECK(check_termination(flat, pis, cfg).kind == Termination::AttackerIdentified);
    std::vector<double> early(10, 1.0);
    CHECK(check_termination(early, {pi, pi}, cfg).kind == Termination::Continue);
  }
  SUBCASE("config validation") {
    cfg.c3 = 0.0;
    CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::InvalidParams);
    CHECK(VerificationConfig::strict().c3 == 1e-3);
  }
}

TEST_CASE("seven-region run without attack") {
  auto c = case141_case(1.0, 7);
  VerificationConfig cfg;
  Exchange ex;
  ex.trace_pair = std::make_pair(0, 1);
  auto rep = run_verification(c->pr, cfg, ex);
  CHECK(rep.outcome == Outcome::Converged);
  CHECK(rep.attackers.empty());
  REQUIRE(rep.attempts.size() == 1);
  const auto& at = rep.attempts[0];
  CHECK(at.end == Termination::Converged);
  for (const auto& [id, s] : rep.states) {
    CHECK(s.psi.rows() == static_cast<Eigen::Index>(s.m.size()));
    CHECK(s.ups.rows() == static_cast<Eigen::Index>(s.m.size()));
  }
  // Tie-line copies held by aggregators 0 and 1.
  std::set<BusId> buses;
  for (std::size_t v : at.trace_vars)
    if (v < 3 * c->net.bus_count()) buses.insert(c->net.bus_id(c->net.var_bus(v)));
  CHECK(buses == std::set<BusId>{42, 43, 54, 73});
  CHECK((at.trace_n.back() - at.trace_m.back()).cwiseAbs().maxCoeff() < 1e-3);
  for (std::size_t b = 0; b < c->net.bus_count(); ++b)
    for (Eigen::Index t = 0; t < 6; ++t)
      CHECK(std::abs(rep.verified(static_cast<Eigen::Index>(b), t) -
                     c->truth(static_cast<Eigen::Index>(c->net.var_p(b)), t)) < 3.0);
}

TEST_CASE("noiseless data verifies the true injections") {
  auto c = case141_case(0.0, 1);
  VerificationConfig cfg;
  cfg.eps = 1e-10;
  auto rep = run_verification(c->pr, cfg);
  REQUIRE(rep.outcome == Outcome::Converged);
  for (std::size_t b = 0; b < c->net.bus_count(); ++b)
    for (Eigen::Index t = 0; t < 6; ++t)
      CHECK(std::abs(rep.verified(static_cast<Eigen::Index>(b), t) -
                     c->truth(static_cast<Eigen::Index>(c->net.var_p(b)), t)) < 1e-6);
  CHECK(rep.deviation.cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("message attacker is found, removed and the rest converges") {
  auto c = case141_case(1.0, 3);
  VerificationConfig cfg;
  Exchange ex;
  ex.attack = adversary::parse_attack("message:3", 42);
  auto rep = run_verification(c->pr, cfg, ex);
  CHECK(rep.attackers == std::vector<RegionId>{3});
  CHECK(rep.outcome == Outcome::Converged);
  REQUIRE(rep.attempts.size() == 2);
  CHECK(rep.attempts[0].end == Termination::AttackerIdentified);
  CHECK(rep.attempts[1].end == Termination::Converged);
  CHECK(rep.states.count(3) == 0);
  // Buses of the removed region stay unverified.
  for (std::size_t b : c->net.region_buses(3)) CHECK(std::isnan(rep.verified(static_cast<Eigen::Index>(b), 0)));

  SUBCASE("removal that splits the graph") {
    ex.attack = adversary::parse_attack("message:4", 42);
    auto r4 = run_verification(c->pr, cfg, ex);
    CHECK(r4.outcome == Outcome::GraphDisconnected);
    CHECK(r4.attackers == std::vector<RegionId>{4});
    CHECK(!r4.warnings.empty());
  }
  SUBCASE("removal budget") {
    cfg.max_removals = 0;
    auto r0 = run_verification(c->pr, cfg, ex);
    CHECK(r0.outcome == Outcome::InsufficientRegions);
  }
}

TEST_CASE("singular region is reported") {
  auto topo = fixtures::chain(3);
  auto net = validate_radial(topo);
  auto c = make_case(topo, {{3, 0.1}}, 1, 0.0, 1, SensorPlacement{});
  CHECK(code_of([&] { run_verification(c->pr, VerificationConfig{}); }) == ErrorCode::SingularSystem);
}

TEST_CASE("ledger exchange matches in-memory exchange") {
  auto c = case141_case(1.0, 11);
  VerificationConfig cfg;
  auto policy = std::make_shared<const ledger::AccessPolicy>(ledger::standard_policy());
  ledger::Ledger gl(ledger::common_channel(), policy);
  Exchange ex;
  ex.gl = &gl;
  ex.window = 3;
  auto with = run_verification(c->pr, cfg, ex);
  auto without = run_verification(c->pr, cfg);
  REQUIRE(with.outcome == Outcome::Converged);
  CHECK(with.total_iterations == without.total_iterations);
  for (const auto& [id, s] : with.states) CHECK((s.x - without.states.at(id).x).cwiseAbs().maxCoeff() == 0.0);
  CHECK(ledger::verify_chain(gl.blocks()).ok);

  // Slices between 0 and 1 are private to that edge.
  ledger::Selector sel;
  sel.type = "verification";
  sel.key_prefix = "verification/000003/00/00001/0>1";
  CHECK(gl.select(sel, ledger::Identity::admin(1)).size() == 1);
  CHECK(gl.select(sel, ledger::Identity::admin(5)).empty());
}

TEST_CASE("silent attacker leaves neighbours on stale slices") {
  auto c = case141_case(1.0, 2);
  auto policy = std::make_shared<const ledger::AccessPolicy>(ledger::standard_policy());
  ledger::Ledger gl(ledger::common_channel(), policy);
  Exchange ex;
  ex.gl = &gl;
  ex.attack = adversary::parse_attack("silent:5", 1);
  VerificationConfig cfg;
  auto rep = run_verification(c->pr, cfg, ex);
  CHECK(rep.total_iterations > 0);
  ledger::Selector sel;
  sel.type = "verification";
  sel.submitter = ledger::Identity::admin(5).id;
  // Only the initial exchange (to regions 4 and 6) and the disagreement rows are posted.
  int slices = 0;
  for (const auto& r : gl.select(sel, ledger::Identity::admin(5)))
    if (r.value.contains("slice")) {
      ++slices;
      CHECK(r.tx.round == 0);
    }
  CHECK(slices == 2);
}

// ---- adversary ----

TEST_CASE("attack spec parsing") {
  auto s = adversary::parse_attack("message:3:2.5", 9);
  CHECK(s.mode == adversary::AttackMode::MessageFDIA);
  CHECK(s.attacker == 3);
  CHECK(s.scale == 2.5);
  CHECK(s.seed == 9);
  CHECK(!adversary::parse_attack("none", 1).active());
  CHECK(code_of([] { adversary::parse_attack("bogus:1", 1); }) == ErrorCode::ParseError);
  CHECK(code_of([] { adversary::parse_attack("message", 1); }) == ErrorCode::ParseError);
  CHECK(code_of([] { adversary::parse_attack("message:x", 1); }) == ErrorCode::ParseError);
}

TEST_CASE("measurement and message perturbations") {
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(3, 2);
  adversary::AttackSpec spec;
  spec.offsets = {{7, 1.5}};
  auto out = adversary::perturb_measurements(z, {2, 7, 9}, spec);
  CHECK(out(1, 0) == 1.5);
  CHECK(out(1, 1) == 1.5);
  CHECK(out.row(0).cwiseAbs().maxCoeff() == 0.0);
  spec.offsets = {{8, 1.0}};
  CHECK(code_of([&] { adversary::perturb_measurements(z, {2, 7, 9}, spec); }) == ErrorCode::UnknownSensor);

  spec.attacker = 1;
  spec.mode = adversary::AttackMode::MessageFDIA;
  spec.seed = 5;
  auto a = adversary::message_attack(16, 6, spec, 3, 0);
  for (Eigen::Index t = 0; t < 6; ++t) CHECK(a.col(t).norm() == doctest::Approx(0.5 * 4.0));
  CHECK((a - adversary::message_attack(16, 6, spec, 3, 0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a - adversary::message_attack(16, 6, spec, 4, 0)).cwiseAbs().maxCoeff() > 0.0);

  auto g = build_communication_graph(validate_radial(fixtures::case141x7()));
  CHECK(code_of([&] { adversary::perturb_message(Eigen::MatrixXd::Zero(2, 1), spec, 1, 5, g); }) ==
        ErrorCode::NotANeighbor);
  CHECK_NOTHROW(adversary::perturb_message(Eigen::MatrixXd::Zero(2, 1), spec, 1, 0, g));
}

TEST_CASE("stealth attack on an under-measured region") {
  auto topo = fixtures::chain(4, 0.02, 0.03);
  auto net = validate_radial(topo);
  // No reactive sensors: the rest of the region is measured once.
  SensorPlacement sensors;
  for (std::size_t v = 0; v < net.var_count(); ++v) {
    auto kind = net.var_kind(v);
    if (kind != VarKind::Q && kind != VarKind::LineQ && kind != VarKind::Aux) sensors.vars.push_back(v);
  }
  auto c = make_case(topo, {{2, 0.3}, {3, 0.5}, {4, 0.2}}, 1, 0.0, 1, sensors);
  auto states = build_states(c->pr, {0});
  const auto& m = states.at(0).m;
  const auto SA = m.measured_selection();

  // Aim at the injection of bus 3.
  const auto li = *m.local_index(net.var_p(net.bus_index(3)));
  auto it = std::find(m.measured.begin(), m.measured.end(), li);
  REQUIRE(it != m.measured.end());
  auto a = adversary::build_stealth_attack(m.H, SA, 1e-10, {it - m.measured.begin()});
  REQUIRE(a.has_value());
  CHECK((m.H * SA.transpose() * *a).cwiseAbs().maxCoeff() < 1e-10);

  // Scale so the targeted injection moves by 1 MW.
  const Eigen::VectorXd attack = *a / std::abs((*a)(it - m.measured.begin()));
  Eigen::VectorXd x_true(static_cast<Eigen::Index>(m.size()));
  for (std::size_t i = 0; i < m.vars.size(); ++i) x_true(static_cast<Eigen::Index>(i)) = c->truth(static_cast<Eigen::Index>(m.vars[i]), 0);
  const double before = (m.H * x_true).cwiseAbs().maxCoeff();
  const double after = (m.H * (x_true + SA.transpose() * attack)).cwiseAbs().maxCoeff();
  CHECK(std::abs(after - before) < 1e-8);

  auto cfg = VerificationConfig::strict();
  cfg.eps = 1e-10;
  auto honest = run_verification(c->pr, cfg);
  auto forged = c->pr;
  Eigen::VectorXd zrow = attack;
  for (std::size_t i = 0; i < m.measured_vars.size(); ++i) {
    auto pos = std::find(forged.sensors.vars.begin(), forged.sensors.vars.end(), m.measured_vars[i]);
    forged.z(pos - forged.sensors.vars.begin(), 0) += zrow(static_cast<Eigen::Index>(i));
  }
  auto attacked = run_verification(forged, cfg);
  const double moved = (attacked.verified - honest.verified).cwiseAbs().maxCoeff();
  CHECK(moved > 0.1);

  // A fully observed region with a redundant sensor on every row has no such vector.
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(3, 3);
  CHECK_FALSE(adversary::build_stealth_attack(H, Eigen::MatrixXd::Identity(3, 3)).has_value());
}
