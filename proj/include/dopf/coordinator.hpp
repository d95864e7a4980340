#pragma once

#include <chrono>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dopf/nlp.hpp"
#include "dopf/opf.hpp"
#include "dopf/partition.hpp"
#include "dopf/pfsweep.hpp"

namespace dopf {

/// Boundary vector Y in interface_schedule order: per interface
/// [v_parent, P, Q].
struct BoundaryState {
  std::vector<double> y_current;
  std::vector<double> y_previous;
};

class LengthMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// (y_new + alpha * y_prev) / (1 + alpha), componentwise.
std::vector<double> fpi_update(std::span<const double> y_new, std::span<const double> y_prev, double alpha);

/// max |a_i - b_i|; 0 for empty vectors.
double residual(std::span<const double> a, std::span<const double> b);

/// Voltages at v0, flows at the lossless downstream demand of each child area.
BoundaryState initialize_boundary(const RadialNetwork& network, const Partition& partition);

enum class WarmStart { Auto, On, Off };

struct FpiConfig {
  double alpha = 0.0;
  double eps_tol = 1e-3;
  int max_macro_iters = 500;
  /// Simultaneous area solves; 0 picks the hardware concurrency.
  int threads = 0;
  NlpOptions nlp;
  OpfOptions opf;
  /// Start each area from its previous solution after the first macro-iteration.
  /// Auto warm-starts every objective except voltage deviation, whose flat
  /// reactive directions make warm-started boundary values drift.
  WarmStart warm_start = WarmStart::Auto;
  /// Order in which areas are handed to workers (a permutation of area ids).
  std::vector<int> execution_order;
  bool record_trajectory = false;
  std::optional<std::chrono::duration<double>> time_budget;
};

enum class RunStatus { Converged, NoConsensus, SubproblemFailure, TimeBudgetExceeded };

const char* to_string(RunStatus status);
RunStatus run_status_from_string(const std::string& text);

struct AreaSolveStats {
  NlpStatus status = NlpStatus::Optimal;
  int iterations = 0;
  double seconds = 0.0;
};

struct MacroIteration {
  int n = 0;
  double residual = 0.0;
  double objective = 0.0;  ///< reassembled, reported form, pu
  double max_area_time_s = 0.0;
  double coordinator_time_s = 0.0;
  std::vector<AreaSolveStats> areas;
};

struct RunRecord {
  std::string mode;  ///< "central" or "distributed"
  Objective objective = Objective::LossMin;
  RunStatus status = RunStatus::NoConsensus;
  bool converged = false;
  int macro_iterations = 0;
  double objective_value = 0.0;  ///< reported form, pu
  double objective_physical = 0.0;  ///< kW for power objectives, pu for DeltaVMin
  std::string objective_unit;
  double base_kva = 1000.0;
  std::size_t bus_count = 0;
  std::size_t area_count = 0;
  double wall_time_s = 0.0;
  std::string detail;

  std::vector<MacroIteration> history;
  std::vector<std::vector<double>> y_trajectory;

  NetworkState state;
  Dispatch dispatch;
  bool verified = false;
  double verify_voltage_mismatch = 0.0;  ///< max | |V| assembled - |V| re-simulated |, pu
  double verify_flow_mismatch = 0.0;     ///< max over branches of |dP|, |dQ|, pu

  nlohmann::json config;
};

/// Fixed-point consensus over the areas of `partition`. Never throws for
/// solver trouble: the record's status says how the run ended.
RunRecord run_distributed(const RadialNetwork& network, const Partition& partition, Objective objective,
                          const FpiConfig& config);

/// One NLP over the whole network.
RunRecord run_central(const RadialNetwork& network, Objective objective, const NlpOptions& nlp = {},
                      std::optional<std::chrono::duration<double>> time_budget = std::nullopt,
                      const OpfOptions& opf = {});

/// Converts a reported pu objective to kW (power objectives) or leaves pu.
double physical_objective(Objective objective, double value_pu, double base_kva);
const char* physical_unit(Objective objective);

/// Re-simulates `dispatch` with the sweep and compares against `state`.
/// Returns false when the sweep fails.
bool verify_state(const RadialNetwork& network, const NetworkState& state, const Dispatch& dispatch,
                  double& voltage_mismatch, double& flow_mismatch);

/// Worker count used when `requested` is 0: DOPF_THREADS if set, else hardware concurrency.
int resolve_threads(int requested);

}  // namespace dopf
