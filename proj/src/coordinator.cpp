#include "dopf/coordinator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <numeric>
#include <thread>

namespace dopf {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

// Runs body(i) for i in [0, count) on up to `threads` workers.
template <class Body>
void parallel_for(std::size_t count, int threads, Body&& body) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, threads)), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) body(i);
    });
  for (auto& t : pool) t.join();
}

BoundaryValues boundary_for(const Area& area, const Partition& part, const std::vector<double>& y) {
  BoundaryValues b;
  if (area.root_interface) b.v_parent = y[voltage_slot(static_cast<std::size_t>(part.interface_index(area.top)))];
  b.child_flows.reserve(area.child_interfaces.size());
  for (BusId c : area.child_interfaces) {
    const std::size_t s = voltage_slot(static_cast<std::size_t>(part.interface_index(c)));
    b.child_flows.emplace_back(c, Complex(y[s + 1], y[s + 2]));
  }
  return b;
}

nlohmann::json nlp_config(const NlpOptions& o) {
  return {{"kkt_tol", o.kkt_tol}, {"max_iter", o.max_iter}, {"mu_init", o.mu_init},
          {"elastic_retry", o.elastic_retry}, {"dense_threshold", o.dense_threshold}};
}

void finish_record(RunRecord& rec, const RadialNetwork& network) {
  rec.objective_physical = physical_objective(rec.objective, rec.objective_value, network.base_kva());
  rec.objective_unit = physical_unit(rec.objective);
  rec.base_kva = network.base_kva();
  rec.bus_count = network.bus_count();
  if (rec.status == RunStatus::Converged)
    rec.verified = verify_state(network, rec.state, rec.dispatch, rec.verify_voltage_mismatch, rec.verify_flow_mismatch);
}

NetworkState empty_state(const RadialNetwork& network) {
  NetworkState s;
  s.v.assign(network.bus_count(), 0.0);
  s.P.assign(network.branch_count(), 0.0);
  s.Q.assign(network.branch_count(), 0.0);
  s.l.assign(network.branch_count(), 0.0);
  return s;
}

}  // namespace

std::vector<double> fpi_update(std::span<const double> y_new, std::span<const double> y_prev, double alpha) {
  if (y_new.size() != y_prev.size()) throw LengthMismatch("fpi_update: vectors differ in length");
  if (!(alpha >= 0.0)) throw std::invalid_argument("fpi_update: alpha must be non-negative");
  std::vector<double> out(y_new.size());
  if (alpha == 0.0) {
    std::copy(y_new.begin(), y_new.end(), out.begin());
    return out;
  }
  // Written as a step from y_prev so that y_new == y_prev is reproduced bit for bit.
  const double w = 1.0 / (1.0 + alpha);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = y_prev[i] + w * (y_new[i] - y_prev[i]);
  return out;
}

double residual(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw LengthMismatch("residual: vectors differ in length");
  double e = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, std::abs(a[i] - b[i]));
  return e;
}

BoundaryState initialize_boundary(const RadialNetwork& network, const Partition& partition) {
  const auto down = network.downstream_loads();
  BoundaryState s;
  s.y_current.resize(3 * partition.interfaces.size());
  for (std::size_t i = 0; i < partition.interfaces.size(); ++i) {
    const Complex flow = down[partition.interfaces[i].bus];
    s.y_current[voltage_slot(i)] = network.v0();
    s.y_current[voltage_slot(i) + 1] = flow.real();
    s.y_current[voltage_slot(i) + 2] = flow.imag();
  }
  s.y_previous = s.y_current;
  return s;
}

const char* to_string(RunStatus status) {
  switch (status) {
    case RunStatus::Converged: return "Converged";
    case RunStatus::NoConsensus: return "NoConsensus";
    case RunStatus::SubproblemFailure: return "SubproblemFailure";
    case RunStatus::TimeBudgetExceeded: return "TimeBudgetExceeded";
  }
  return "Unknown";
}

RunStatus run_status_from_string(const std::string& text) {
  for (RunStatus s : {RunStatus::Converged, RunStatus::NoConsensus, RunStatus::SubproblemFailure,
                      RunStatus::TimeBudgetExceeded})
    if (text == to_string(s)) return s;
  throw std::invalid_argument("unknown run status '" + text + "'");
}

double physical_objective(Objective objective, double value_pu, double base_kva) {
  return objective == Objective::DeltaVMin ? value_pu : value_pu * base_kva;
}

const char* physical_unit(Objective objective) { return objective == Objective::DeltaVMin ? "pu" : "kW"; }

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("DOPF_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

bool verify_state(const RadialNetwork& network, const NetworkState& state, const Dispatch& dispatch,
                  double& voltage_mismatch, double& flow_mismatch) {
  NetworkState pf;
  try {
    pf = solve_power_flow(network, dispatch);
  } catch (const PowerFlowError&) {
    return false;
  }
  voltage_mismatch = 0.0;
  flow_mismatch = 0.0;
  for (std::size_t b = 0; b < pf.v.size(); ++b)
    voltage_mismatch =
        std::max(voltage_mismatch, std::abs(std::sqrt(std::max(state.v[b], 0.0)) - std::sqrt(pf.v[b])));
  for (std::size_t k = 0; k < pf.P.size(); ++k)
    flow_mismatch = std::max({flow_mismatch, std::abs(state.P[k] - pf.P[k]), std::abs(state.Q[k] - pf.Q[k])});
  return true;
}

RunRecord run_distributed(const RadialNetwork& network, const Partition& partition, Objective objective,
                          const FpiConfig& config) {
  if (!(config.eps_tol > 0.0)) throw std::invalid_argument("eps_tol must be positive");
  const auto start = Clock::now();
  const std::size_t A = partition.areas.size();

  std::vector<int> order = config.execution_order;
  if (order.empty()) {
    order.resize(A);
    std::iota(order.begin(), order.end(), 0);
  }
  {
    std::vector<int> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i)
      if (sorted.size() != A || sorted[i] != static_cast<int>(i))
        throw std::invalid_argument("execution_order must be a permutation of the area ids");
  }
  const int threads = resolve_threads(config.threads);
  const bool warm = config.warm_start == WarmStart::On ||
                    (config.warm_start == WarmStart::Auto && objective != Objective::DeltaVMin);

  RunRecord rec;
  rec.mode = "distributed";
  rec.objective = objective;
  rec.area_count = A;
  rec.config = {{"mode", "distributed"},
                {"objective", to_string(objective)},
                {"alpha", config.alpha},
                {"eps_tol", config.eps_tol},
                {"max_macro_iters", config.max_macro_iters},
                {"threads", threads},
                {"warm_start", warm},
                {"sqrt_delta_v", config.opf.sqrt_delta_v},
                {"nlp", nlp_config(config.nlp)}};

  const auto downstream = network.downstream_loads();
  std::vector<double> y = initialize_boundary(network, partition).y_current;
  std::vector<OpfProblem> problems;
  problems.reserve(A);
  for (const Area& a : partition.areas)
    problems.push_back(build_subproblem(a, network, objective, boundary_for(a, partition, y), config.opf));

  std::vector<NlpSolution> sols(A);
  std::vector<char> have_sol(A, 0);
  std::vector<AreaSolveStats> stats(A);
  std::vector<std::exception_ptr> errors(A);
  if (config.record_trajectory) rec.y_trajectory.push_back(y);

  rec.status = RunStatus::NoConsensus;
  for (int n = 1; n <= config.max_macro_iters; ++n) {
    if (config.time_budget && seconds_since(start) > config.time_budget->count()) {
      rec.status = RunStatus::TimeBudgetExceeded;
      rec.detail = "time budget exhausted before macro-iteration " + std::to_string(n);
      break;
    }
    const auto coord_start = Clock::now();
    for (std::size_t a = 0; a < A; ++a) problems[a].set_boundary(boundary_for(partition.areas[a], partition, y));
    double coord_s = seconds_since(coord_start);

    parallel_for(A, threads, [&](std::size_t i) {
      const auto a = static_cast<std::size_t>(order[i]);
      const auto t = Clock::now();
      try {
        NlpOptions opts = config.nlp;
        if (warm && have_sol[a]) {
          opts.mu_init = config.nlp.kkt_tol;
          opts.bound_push = opts.bound_frac = 1e-8;
          NlpSolution prev = sols[a];
          sols[a] = solve(problems[a], prev.x, opts, &prev);
        } else {
          sols[a] = solve(problems[a], problems[a].flat_start(downstream), opts);
        }
        have_sol[a] = 1;
        stats[a] = {sols[a].status, sols[a].iterations, seconds_since(t)};
      } catch (...) {
        errors[a] = std::current_exception();
        stats[a] = {NlpStatus::Infeasible, 0, seconds_since(t)};
      }
    });

    const auto merge_start = Clock::now();
    MacroIteration it;
    it.n = n;
    it.areas = stats;
    for (const auto& s : stats) it.max_area_time_s = std::max(it.max_area_time_s, s.seconds);

    std::string failure;
    for (std::size_t a = 0; a < A && failure.empty(); ++a) {
      if (errors[a]) {
        try {
          std::rethrow_exception(errors[a]);
        } catch (const std::exception& e) {
          failure = "area " + std::to_string(a) + ": " + e.what();
        }
      } else if (stats[a].status != NlpStatus::Optimal) {
        failure = "area " + std::to_string(a) + " solver status " + to_string(stats[a].status) + " at macro-iteration " +
                  std::to_string(n);
      }
    }
    if (!failure.empty()) {
      rec.status = RunStatus::SubproblemFailure;
      rec.detail = failure;
      it.coordinator_time_s = coord_s + seconds_since(merge_start);
      rec.history.push_back(std::move(it));
      rec.macro_iterations = n;
      break;
    }

    std::vector<double> y_new = y;
    double raw = 0.0;
    for (std::size_t a = 0; a < A; ++a) {
      const Area& area = partition.areas[a];
      const double fa = problems[a].objective(sols[a].x);
      raw += objective == Objective::DeltaVMin && config.opf.sqrt_delta_v ? fa * fa : fa;
      const AreaExport ex = extract_boundary(sols[a].x, problems[a], area);
      if (ex.flow_up) {
        const std::size_t s = voltage_slot(static_cast<std::size_t>(partition.interface_index(area.top)));
        y_new[s + 1] = ex.flow_up->real();
        y_new[s + 2] = ex.flow_up->imag();
      }
      for (const auto& [child, v] : ex.voltage_down)
        y_new[voltage_slot(static_cast<std::size_t>(partition.interface_index(child)))] = v;
    }
    std::vector<double> y_next = fpi_update(y_new, y, config.alpha);
    it.residual = residual(y_next, y);
    y = std::move(y_next);
    it.objective = reported_objective(objective, raw);
    coord_s += seconds_since(merge_start);
    it.coordinator_time_s = coord_s;
    rec.objective_value = it.objective;
    rec.macro_iterations = n;
    const bool done = it.residual <= config.eps_tol;
    rec.history.push_back(std::move(it));
    if (config.record_trajectory) rec.y_trajectory.push_back(y);
    if (done) {
      rec.status = RunStatus::Converged;
      break;
    }
  }
  rec.converged = rec.status == RunStatus::Converged;

  rec.state = empty_state(network);
  rec.dispatch.assign(network.bus_count(), Complex{});
  for (std::size_t a = 0; a < A; ++a)
    if (have_sol[a]) scatter_solution(sols[a].x, problems[a], network, rec.state, rec.dispatch);
  if (objective == Objective::DeltaVMin && rec.converged)
    rec.objective_value = evaluate_objective(objective, rec.state, rec.dispatch, network);
  rec.wall_time_s = seconds_since(start);
  finish_record(rec, network);
  return rec;
}

RunRecord run_central(const RadialNetwork& network, Objective objective, const NlpOptions& nlp,
                      std::optional<std::chrono::duration<double>> time_budget, const OpfOptions& opf) {
  const auto start = Clock::now();
  RunRecord rec;
  rec.mode = "central";
  rec.objective = objective;
  rec.area_count = 1;
  rec.config = {{"mode", "central"}, {"objective", to_string(objective)}, {"sqrt_delta_v", opf.sqrt_delta_v},
                {"nlp", nlp_config(nlp)}};
  if (time_budget) rec.config["time_budget_s"] = time_budget->count();

  OpfProblem problem = build_central(network, objective, opf);
  NlpOptions opts = nlp;
  if (time_budget)
    opts.deadline = start + std::chrono::duration_cast<Clock::duration>(*time_budget);
  NlpSolution sol;
  try {
    sol = solve(problem, problem.flat_start(network.downstream_loads()), opts);
  } catch (const std::exception& e) {
    sol.status = NlpStatus::Infeasible;
    rec.detail = e.what();
  }
  const double secs = seconds_since(start);

  MacroIteration it;
  it.n = 1;
  it.areas.push_back({sol.status, sol.iterations, secs});
  it.max_area_time_s = secs;
  switch (sol.status) {
    case NlpStatus::Optimal: rec.status = RunStatus::Converged; break;
    case NlpStatus::TimeLimit: rec.status = RunStatus::TimeBudgetExceeded; break;
    default: rec.status = RunStatus::SubproblemFailure; break;
  }
  if (rec.detail.empty() && rec.status != RunStatus::Converged)
    rec.detail = std::string("central solve ended with status ") + to_string(sol.status);
  rec.converged = rec.status == RunStatus::Converged;
  rec.macro_iterations = 1;

  rec.state = empty_state(network);
  rec.dispatch.assign(network.bus_count(), Complex{});
  if (!sol.x.empty()) {
    scatter_solution(sol.x, problem, network, rec.state, rec.dispatch);
    rec.objective_value = reported_objective(objective, problem.objective(sol.x), opf);
  }
  it.objective = rec.objective_value;
  rec.history.push_back(std::move(it));
  rec.wall_time_s = seconds_since(start);
  finish_record(rec, network);
  return rec;
}

}  // namespace dopf
