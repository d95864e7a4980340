#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dopf/coordinator.hpp"
#include "dopf/synth.hpp"

using namespace dopf;

namespace {

RadialNetwork chain(int n, Complex load = {0.1, 0.01}) {
  NetworkData d;
  for (int i = 0; i < n; ++i) d.buses.push_back({i, i ? load : Complex{}, std::nullopt});
  for (int i = 1; i < n; ++i) d.branches.push_back({i - 1, i, 0.07, 0.01, 1e6});
  return RadialNetwork(d);
}

RadialNetwork thirty_bus() {
  FeederSpec s;
  s.laterals = 1;
  s.main_nodes_between_laterals = 1;
  s.neighborhoods_per_lateral = 3;
  s.households_per_neighborhood = 8;
  s.z /= feasible_impedance_divisor(s);
  return place_ders(build_feeder(s), DerScenario{});
}

FpiConfig serial() {
  FpiConfig c;
  c.threads = 1;
  c.record_trajectory = true;
  return c;
}

}  // namespace

TEST_CASE("fpi_update") {
  const std::vector<double> y_new{1.5, -2.25, 0.1, 3e-17};
  const std::vector<double> y_prev{7.0, 0.3, -0.1, 1.0};
  CHECK(fpi_update(y_new, y_prev, 0.0) == y_new);

  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-10, 10);
  std::vector<double> c(16);
  for (double& v : c) v = u(rng);
  for (double alpha : {0.0, 0.5, 1.0, 2.33, 17.0}) CHECK(fpi_update(c, c, alpha) == c);

  const std::vector<double> one{1.0}, zero{0.0};
  CHECK(fpi_update(one, zero, 2.33)[0] == doctest::Approx(1.0 / 3.33).epsilon(1e-15));

  CHECK_THROWS_AS(fpi_update(one, y_prev, 0.0), LengthMismatch);
  CHECK_THROWS_AS(fpi_update(one, zero, -0.5), std::invalid_argument);
}

TEST_CASE("residual") {
  const std::vector<double> a{0.1, 0.2, 0.3};
  CHECK(residual(a, a) == 0.0);
  CHECK(residual(std::vector<double>{}, std::vector<double>{}) == 0.0);
  CHECK(residual(std::vector<double>{0.0, 0.002}, std::vector<double>{0.0, 0.0}) == 0.002);
  CHECK(residual(std::vector<double>{0.0005, -0.003}, std::vector<double>{0.0, 0.0}) == 0.003);
  CHECK_THROWS_AS(residual(a, std::vector<double>{1.0}), LengthMismatch);
}

TEST_CASE("initialize_boundary") {
  RadialNetwork net = chain(4);
  CHECK(initialize_boundary(net, decompose(net, 10)).y_current.empty());

  // {0} and {1, 2, 3}
  NetworkData d;
  for (int i = 0; i < 4; ++i) d.buses.push_back({i, i ? Complex{0.1, 0.01} : Complex{}, std::nullopt});
  for (int i = 1; i < 4; ++i) d.branches.push_back({i - 1, i, 0.07, 0.01, 1e6});
  d.v0 = 1.03;
  RadialNetwork c(d);
  Partition p = decompose(c, 3);
  REQUIRE(p.interfaces.size() == 1);
  REQUIRE(p.interfaces[0].bus == 1);
  BoundaryState s = initialize_boundary(c, p);
  REQUIRE(s.y_current.size() == 3);
  CHECK(s.y_current[0] == 1.03);
  CHECK(s.y_current[1] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(s.y_current[2] == doctest::Approx(0.03).epsilon(1e-15));
  CHECK(s.y_previous == s.y_current);

  RadialNetwork z = chain(5, {});
  BoundaryState sz = initialize_boundary(z, decompose(z, 1));
  for (std::size_t i = 0; i < sz.y_current.size(); ++i)
    if (i % 3) CHECK(sz.y_current[i] == 0.0);
}

TEST_CASE("single area matches the central solve") {
  RadialNetwork net = thirty_bus();
  RunRecord c = run_central(net, Objective::LossMin);
  RunRecord d = run_distributed(net, decompose(net, 1000), Objective::LossMin, serial());
  REQUIRE(d.status == RunStatus::Converged);
  CHECK(d.macro_iterations == 1);
  CHECK(d.history[0].residual == 0.0);
  CHECK(d.objective_value == doctest::Approx(c.objective_value).epsilon(1e-9));
}

TEST_CASE("three areas agree with the central solve") {
  RadialNetwork net = thirty_bus();
  Partition p = decompose(net, 12);
  REQUIRE(p.areas.size() == 3);
  RunRecord c = run_central(net, Objective::LossMin);
  FpiConfig cfg = serial();
  cfg.eps_tol = 1e-8;
  RunRecord d = run_distributed(net, p, Objective::LossMin, cfg);
  REQUIRE(d.status == RunStatus::Converged);
  CHECK(std::abs(d.objective_value - c.objective_value) <= 5e-3 * c.objective_value);
  CHECK(d.verify_voltage_mismatch <= 1e-6);
  CHECK(d.history.back().residual <= 1e-8);
  CHECK(d.y_trajectory.size() == static_cast<std::size_t>(d.macro_iterations) + 1);
}

TEST_CASE("execution order and thread count do not change the result") {
  RadialNetwork net = thirty_bus();
  Partition p = decompose(net, 5);
  REQUIRE(p.areas.size() > 3);
  FpiConfig base = serial();
  RunRecord ref = run_distributed(net, p, Objective::LossMin, base);

  std::vector<int> order(p.areas.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::mt19937 rng(11);
  for (int trial = 0; trial < 3; ++trial) {
    std::shuffle(order.begin(), order.end(), rng);
    FpiConfig cfg = base;
    cfg.execution_order = order;
    cfg.threads = 1 + trial;
    RunRecord r = run_distributed(net, p, Objective::LossMin, cfg);
    CHECK(r.y_trajectory == ref.y_trajectory);
    CHECK(r.objective_value == ref.objective_value);
    CHECK(r.macro_iterations == ref.macro_iterations);
  }

  FpiConfig bad = base;
  bad.execution_order = {0, 0, 1};
  CHECK_THROWS_AS(run_distributed(net, p, Objective::LossMin, bad), std::invalid_argument);
}

TEST_CASE("macro-iteration budget ends in NoConsensus") {
  RadialNetwork net = thirty_bus();
  FpiConfig cfg = serial();
  cfg.max_macro_iters = 2;
  cfg.eps_tol = 1e-14;
  RunRecord r = run_distributed(net, decompose(net, 5), Objective::LossMin, cfg);
  CHECK(r.status == RunStatus::NoConsensus);
  CHECK_FALSE(r.converged);
  CHECK(r.macro_iterations == 2);
}

TEST_CASE("time budget") {
  RadialNetwork net = thirty_bus();
  FpiConfig cfg = serial();
  cfg.time_budget = std::chrono::duration<double>(0.0);
  RunRecord r = run_distributed(net, decompose(net, 5), Objective::LossMin, cfg);
  CHECK(r.status == RunStatus::TimeBudgetExceeded);
}

TEST_CASE("an infeasible area aborts the run") {
  // the far end cannot stay above 0.95 pu
  RadialNetwork net = chain(6, {0.6, 0.1});
  FpiConfig cfg = serial();
  cfg.nlp.max_iter = 100;
  RunRecord r = run_distributed(net, decompose(net, 2), Objective::LossMin, cfg);
  CHECK(r.status == RunStatus::SubproblemFailure);
  CHECK_FALSE(r.detail.empty());
}

TEST_CASE("run status names") {
  for (RunStatus s : {RunStatus::Converged, RunStatus::NoConsensus, RunStatus::SubproblemFailure,
                      RunStatus::TimeBudgetExceeded})
    CHECK(run_status_from_string(to_string(s)) == s);
  CHECK(physical_objective(Objective::LossMin, 0.0045, 1000.0) == doctest::Approx(4.5));
  CHECK(physical_objective(Objective::DeltaVMin, 2.65, 1000.0) == 2.65);
}

TEST_CASE("DOPF_THREADS picks the worker count") {
  CHECK(resolve_threads(3) == 3);
  CHECK(resolve_threads(0) >= 1);
}
