// Acceptance run: one PASS/FAIL line per criterion. Exit status is non-zero
// when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dopf/cli.hpp"
#include "dopf/coordinator.hpp"
#include "dopf/synth.hpp"

using namespace dopf;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string num(double v, int precision = 6) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << (pass ? "PASS" : "FAIL") << " criterion " << id << ": " << what << " | " << detail << std::endl;
}

void guarded(int id, const std::string& what, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, false, what, std::string("exception: ") + e.what());
  }
}

RadialNetwork scaled_feeder(FeederSpec spec, const DerScenario& scenario) {
  const double k = feasible_impedance_divisor(spec);
  if (k == 0.0) throw std::runtime_error("no feasible impedance divisor");
  spec.z /= k;
  return place_ders(build_feeder(spec), scenario);
}

FpiConfig fpi(double alpha) {
  FpiConfig c;
  c.alpha = alpha;
  c.eps_tol = 1e-3;
  c.max_macro_iters = 500;
  return c;
}

double max_voltage_pu(const NetworkState& s) {
  double m = 0.0;
  for (double v : s.v) m = std::max(m, std::sqrt(v));
  return m;
}

// ---------------------------------------------------------------------------

void small_instance_equivalence() {
  const auto t = Clock::now();
  FeederSpec spec;
  spec.laterals = 1;
  spec.main_nodes_between_laterals = 1;
  spec.neighborhoods_per_lateral = 3;
  spec.households_per_neighborhood = 8;
  DerScenario scenario;
  scenario.penetration = 1.0;
  scenario.seed = 1;
  const RadialNetwork net = scaled_feeder(spec, scenario);
  const Partition part = decompose(net, 12);

  const RunRecord c = run_central(net, Objective::LossMin);
  FpiConfig cfg = fpi(0.0);
  cfg.eps_tol = 1e-8;
  const RunRecord d = run_distributed(net, part, Objective::LossMin, cfg);
  const double elapsed = seconds_since(t);
  const double gap = 100.0 * std::abs(d.objective_value - c.objective_value) / c.objective_value;

  const bool pass = net.bus_count() == 30 && part.areas.size() == 3 && c.converged && d.converged && gap <= 0.5 &&
                    c.verified && d.verified && c.verify_voltage_mismatch <= 1e-6 &&
                    d.verify_voltage_mismatch <= 1e-6 && elapsed < 10.0;
  report(1, pass, "30-bus central vs 3-area distributed",
         "buses " + std::to_string(net.bus_count()) + ", areas " + std::to_string(part.areas.size()) + ", central " +
             num(c.objective_value, 10) + " pu, distributed " + num(d.objective_value, 10) + " pu after " +
             std::to_string(d.macro_iterations) + " iterations, gap " + num(gap) + "% (<= 0.5), voltage mismatch " +
             num(c.verify_voltage_mismatch) + " / " + num(d.verify_voltage_mismatch) + " (<= 1e-6), " + num(elapsed) +
             " s (< 10)");
}

void brute_force_dispatch() {
  const auto t = Clock::now();
  NetworkData data;
  data.buses = {{0, {}, std::nullopt}, {1, {0.1, 0.01}, DerDevice{0.05, 0.03, DispatchMode::Reactive}}};
  data.branches = {{0, 1, 0.07, 0.01, 1e6}};
  const RadialNetwork net(data);
  const double qmax = net.bus(1).der->reactive_limit();

  const RunRecord r = run_central(net, Objective::LossMin);
  const double q_nlp = r.dispatch[1].imag();

  double best_loss = std::numeric_limits<double>::infinity();
  double best_q = 0.0;
  const long steps = std::lround(2.0 * qmax / 1e-4);
  for (long k = 0; k <= steps; ++k) {
    const double q = -qmax + 2.0 * qmax * static_cast<double>(k) / static_cast<double>(steps);
    Dispatch d = nominal_dispatch(net);
    d[1] = {d[1].real(), q};
    const double loss = total_loss(solve_power_flow(net, d), net);
    if (loss < best_loss) {
      best_loss = loss;
      best_q = q;
    }
  }
  const double elapsed = seconds_since(t);
  const double diff = std::abs(r.objective_value - best_loss);
  const bool pass = r.converged && diff <= 1e-6 && std::abs(q_nlp - best_q) <= 1e-4 && elapsed < 5.0;
  report(2, pass, "2-bus dispatch vs 1e-4 grid search",
         "NLP q " + num(q_nlp, 10) + " loss " + num(r.objective_value, 12) + ", grid q " + num(best_q, 10) + " loss " +
             num(best_loss, 12) + ", |diff| " + num(diff) + " (<= 1e-6), " + num(elapsed) + " s (< 5)");
}

void loss_min_reproduction() {
  struct Case {
    double penetration;
    double target_kw;
  };
  const std::vector<Case> cases{{1.0, 4.5}, {0.5, 21.58}, {0.1, 44.05}};
  std::vector<double> kw;
  bool pass = true;
  std::string detail;
  for (const Case& c : cases) {
    DerScenario scenario;
    scenario.penetration = c.penetration;
    const RadialNetwork net = scaled_feeder(FeederSpec{}, scenario);
    const RunRecord r = run_distributed(net, decompose(net, 100), Objective::LossMin, fpi(0.0));
    const bool in_band = std::abs(r.objective_physical - c.target_kw) <= 0.25 * c.target_kw;
    pass = pass && r.converged && r.macro_iterations <= 20 && in_band;
    kw.push_back(r.objective_physical);
    detail += num(100 * c.penetration) + "%: " + to_string(r.status) + " in " + std::to_string(r.macro_iterations) +
              " iterations (<= 20), " + num(r.objective_physical) + " kW (target " + num(c.target_kw) + " +-25%); ";
  }
  const bool ordered = kw[0] < kw[1] && kw[1] < kw[2];
  report(3, pass && ordered, "loss minimization on the default feeder at 100/50/10% DER",
         detail + "ordering 100% < 50% < 10% " + (ordered ? "holds" : "violated"));
}

void der_max_behavior() {
  FeederSpec spec;
  spec.v0 = 1.05 * 1.05;
  DerScenario scenario;
  scenario.penetration = 0.5;
  scenario.rating_kva = 21.0;
  scenario.p_nominal_kw = 21.0;
  scenario.mode = DispatchMode::Active;
  const RadialNetwork net = scaled_feeder(spec, scenario);
  const RunRecord r = run_distributed(net, decompose(net, 100), Objective::DerMax, fpi(2.33));

  double capacity = 0.0;
  for (const Bus& b : net.buses())
    if (b.der) capacity += b.der->rating;
  double dispatched = 0.0;
  for (const Complex& d : r.dispatch) dispatched += d.real();
  const double vmax = max_voltage_pu(r.state);
  const bool pass = r.converged && r.macro_iterations <= 30 && dispatched >= 0.9 * capacity && vmax <= 1.05 + 1e-3;
  report(4, pass, "DER maximization at 50% DER, alpha 2.33",
         std::string(to_string(r.status)) + " in " + std::to_string(r.macro_iterations) + " iterations (<= 30), dispatched " +
             num(dispatched * net.base_kva()) + " of " + num(capacity * net.base_kva()) + " kW (" +
             num(100 * dispatched / capacity) + "%, >= 90%), max voltage " + num(vmax, 8) + " pu (<= 1.051)");
}

void delta_v_ordering() {
  std::vector<RunRecord> runs;
  for (double pen : {1.0, 0.5}) {
    DerScenario scenario;
    scenario.penetration = pen;
    const RadialNetwork net = scaled_feeder(FeederSpec{}, scenario);
    runs.push_back(run_distributed(net, decompose(net, 100), Objective::DeltaVMin, fpi(0.0)));
  }
  const RunRecord& full = runs[0];
  const RunRecord& half = runs[1];
  const bool pass = full.converged && half.converged && full.macro_iterations <= 20 && half.macro_iterations <= 20 &&
                    full.objective_value < half.objective_value;
  report(5, pass, "voltage deviation ordering at 100% vs 50% DER",
         "100%: " + std::string(to_string(full.status)) + " in " + std::to_string(full.macro_iterations) +
             " iterations, " + num(full.objective_value, 8) + " pu; 50%: " + to_string(half.status) + " in " +
             std::to_string(half.macro_iterations) + " iterations, " + num(half.objective_value, 8) +
             " pu (both <= 20 iterations, 100% < 50%)");
}

void nodal_decomposition() {
  FeederSpec spec;
  spec.laterals = 6;
  spec.main_nodes_between_laterals = 4;
  spec.neighborhoods_per_lateral = 20;
  spec.households_per_neighborhood = 20;
  DerScenario scenario;
  scenario.penetration = 1.0;
  const RadialNetwork net = scaled_feeder(spec, scenario);
  const auto t = Clock::now();
  const Partition part = decompose(net, 1);
  const RunRecord r = run_distributed(net, part, Objective::LossMin, fpi(0.0));
  const double elapsed = seconds_since(t);
  const bool pass = r.converged && r.macro_iterations <= 400 && elapsed <= 60.0;
  report(6, pass, "nodal decomposition",
         std::to_string(net.bus_count()) + " buses in " + std::to_string(part.areas.size()) + " areas, " +
             to_string(r.status) + " in " + std::to_string(r.macro_iterations) + " iterations (<= 400), " +
             num(elapsed) + " s (<= 60)");
}

void fpi_properties() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  std::uniform_real_distribution<double> a(0.0, 50.0);
  bool identity = true, fixed = true, resid = true;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> y(1 + trial % 37), z(y.size());
    for (double& v : y) v = u(rng);
    for (double& v : z) v = u(rng);
    identity = identity && fpi_update(y, z, 0.0) == y;
    fixed = fixed && fpi_update(y, y, a(rng)) == y && fpi_update(y, y, 2.33) == y;
    double m = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) m = std::max(m, std::abs(y[i] - z[i]));
    resid = resid && residual(y, z) == m && residual(y, y) == 0.0;
  }
  resid = resid && residual(std::vector<double>{0.0005, -0.003}, std::vector<double>{0.0, 0.0}) == 0.003;
  report(7, identity && fixed && resid, "fixed-point update and residual",
         std::string("alpha 0 identity ") + (identity ? "exact" : "broken") + ", fixed point " +
             (fixed ? "exact" : "broken") + ", residual max-abs " + (resid ? "exact" : "broken") + " over 1000 draws");
}

void derivative_checks() {
  FeederSpec spec;
  spec.laterals = 2;
  spec.main_nodes_between_laterals = 1;
  spec.neighborhoods_per_lateral = 2;
  spec.households_per_neighborhood = 3;
  DerScenario reactive;
  DerScenario active;
  active.mode = DispatchMode::Active;
  const RadialNetwork net = scaled_feeder(spec, reactive);
  const RadialNetwork net_active = scaled_feeder(spec, active);
  const Partition part = decompose(net, 5);
  OpfOptions root;
  root.sqrt_delta_v = true;

  struct Named {
    std::string name;
    OpfProblem problem;
  };
  std::vector<Named> problems{{"loss-min", build_central(net, Objective::LossMin)},
                              {"der-max", build_central(net_active, Objective::DerMax)},
                              {"dv-min", build_central(net, Objective::DeltaVMin)},
                              {"dv-min sqrt", build_central(net, Objective::DeltaVMin, root)}};
  const Area& area = part.areas[1];
  BoundaryValues b;
  if (area.root_interface) b.v_parent = net.v0();
  for (BusId c : area.child_interfaces) b.child_flows.emplace_back(c, net.aggregate_downstream_load(c));
  for (Objective o : {Objective::LossMin, Objective::DerMax, Objective::DeltaVMin})
    problems.push_back({std::string("area ") + to_string(o), build_subproblem(area, o == Objective::DerMax ? net_active : net, o, b)});

  std::mt19937 rng(17);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  double worst = 0.0;
  std::string worst_name;
  for (const Named& p : problems) {
    const int n = p.problem.num_vars();
    std::vector<double> lo(n), hi(n), x(n);
    p.problem.bounds(lo, hi);
    for (int k = 0; k < 20; ++k) {
      for (int i = 0; i < n; ++i) {
        const double a = std::isfinite(lo[i]) ? lo[i] : -1.0;
        const double c = std::isfinite(hi[i]) ? std::min(hi[i], a + 2.0) : a + 2.0;
        x[i] = a + u(rng) * (c - a);
      }
      const double e = check_derivatives(p.problem, x, 1e-6, static_cast<unsigned>(k)).worst();
      if (e > worst) {
        worst = e;
        worst_name = p.name;
      }
    }
  }
  report(8, worst < 1e-5, "derivative checks",
         std::to_string(problems.size()) + " problems x 20 random interior points, worst relative error " + num(worst) +
             (worst_name.empty() ? "" : " (" + worst_name + ")") + " (< 1e-5)");
}

void order_independence() {
  DerScenario scenario;
  scenario.penetration = 0.5;
  const RadialNetwork net = scaled_feeder(FeederSpec{}, scenario);
  const Partition part = decompose(net, 100);
  FpiConfig base = fpi(0.0);
  base.record_trajectory = true;
  base.threads = 1;
  const RunRecord ref = run_distributed(net, part, Objective::LossMin, base);

  std::vector<int> order(part.areas.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937 rng(99);
  bool same = true;
  for (int trial = 0; trial < 2; ++trial) {
    std::shuffle(order.begin(), order.end(), rng);
    FpiConfig cfg = base;
    cfg.execution_order = order;
    cfg.threads = trial == 0 ? 1 : 4;
    const RunRecord r = run_distributed(net, part, Objective::LossMin, cfg);
    same = same && r.y_trajectory == ref.y_trajectory && r.objective_value == ref.objective_value;
  }
  report(9, same && ref.converged, "area execution order independence",
         std::to_string(part.areas.size()) + " areas, " + std::to_string(ref.y_trajectory.size()) +
             " boundary vectors, 2 shuffled orders (1 and 4 workers): " + (same ? "bit-identical" : "differ"));
}

void central_scaling() {
  const std::string path = "acceptance_sweep.csv";
  std::ostringstream out, err;
  const char* argv[] = {"dopf", "compare", "--sweep", "250,500,1000,2000", "-o", path.c_str()};
  const int code = run_cli(6, argv, out, err);
  if (code != 0) {
    report(10, false, "central scaling sweep", "compare exited with " + std::to_string(code) + ": " + err.str());
    return;
  }
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  std::vector<double> times;
  bool dist_ok = true;
  std::string detail;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() < 11) throw std::runtime_error("short sweep row: " + line);
    times.push_back(std::stod(f[4]));
    dist_ok = dist_ok && f[6] == "Converged";
    detail += f[1] + " buses: central " + f[3] + " " + f[4] + " s, distributed " + f[6] + "; ";
  }
  std::remove(path.c_str());
  bool increasing = times.size() == 4;
  for (std::size_t i = 1; i < times.size(); ++i) increasing = increasing && times[i] > times[i - 1];
  report(10, increasing && dist_ok, "central scaling sweep",
         detail + "central time " + (increasing ? "strictly increasing" : "not increasing"));
}

}  // namespace

int main() {
  const auto t = Clock::now();
  guarded(1, "30-bus central vs 3-area distributed", small_instance_equivalence);
  guarded(2, "2-bus dispatch vs 1e-4 grid search", brute_force_dispatch);
  guarded(3, "loss minimization on the default feeder", loss_min_reproduction);
  guarded(4, "DER maximization at 50% DER", der_max_behavior);
  guarded(5, "voltage deviation ordering", delta_v_ordering);
  guarded(6, "nodal decomposition", nodal_decomposition);
  guarded(7, "fixed-point update and residual", fpi_properties);
  guarded(8, "derivative checks", derivative_checks);
  guarded(9, "area execution order independence", order_independence);
  guarded(10, "central scaling sweep", central_scaling);
  std::cout << (10 - failures) << "/10 criteria passed in " << num(seconds_since(t)) << " s" << std::endl;
  return failures == 0 ? 0 : 1;
}
