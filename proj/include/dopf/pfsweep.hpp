#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "dopf/network.hpp"

namespace dopf {

/// Branch-flow state. Bus arrays are indexed by bus id, branch arrays by the
/// position of the branch in RadialNetwork::branches().
struct NetworkState {
  std::vector<double> v;  ///< squared voltage
  std::vector<double> P;  ///< sending-end active flow
  std::vector<double> Q;  ///< sending-end reactive flow
  std::vector<double> l;  ///< squared current
};

/// Per-bus DER output (p_D + j q_D); zero where a bus has no DER.
using Dispatch = std::vector<Complex>;

/// p_D = nominal active output, q_D = 0 for every DER.
Dispatch nominal_dispatch(const RadialNetwork& network);

enum class PowerFlowErrc { NoConvergence, NegativeVoltage, BadDispatch };

class PowerFlowError : public std::runtime_error {
 public:
  PowerFlowError(PowerFlowErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  PowerFlowErrc code() const noexcept { return code_; }

 private:
  PowerFlowErrc code_;
};

struct SweepOptions {
  double tol = 1e-10;
  int max_sweeps = 200;
  /// Any v below this aborts with NegativeVoltage.
  double collapse_v = 0.25;
};

/// Forward/backward sweep from a flat start. The stopping test is the largest
/// sweep-to-sweep change, measured relative to max(1, |value|).
NetworkState solve_power_flow(const RadialNetwork& network, const Dispatch& dispatch, const SweepOptions& options = {});

struct LimitViolation {
  enum class Kind { Undervoltage, Overvoltage, Overcurrent };
  Kind kind;
  BusId bus;            ///< violating bus, or the `to` bus of the violating branch
  double value;         ///< v or l
  double limit;         ///< bound that was crossed
  double magnitude;     ///< |value - limit|
};

std::vector<LimitViolation> check_limits(const NetworkState& state, const RadialNetwork& network);

/// Sum of l * r over all branches.
double total_loss(const NetworkState& state, const RadialNetwork& network);

/// Active/reactive power drawn from the substation.
Complex substation_injection(const NetworkState& state, const RadialNetwork& network);

}  // namespace dopf
