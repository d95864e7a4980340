#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dopf/network.hpp"
#include "dopf/nlp.hpp"
#include "dopf/pfsweep.hpp"

namespace dopf {

struct Area;

enum class Objective { LossMin, DerMax, DeltaVMin };

/// "loss-min", "der-max", "dv-min".
const char* to_string(Objective objective);
Objective objective_from_string(const std::string& text);

/// Which DER quantity is the decision variable under `objective`.
DispatchMode dispatch_kind(Objective objective);

/// Per-bus variable slots, buses in area preorder, each bus laid out as
/// [P, Q, l, v, dispatch] with absent entries skipped. P, Q, l belong to the
/// branch entering the bus; the substation only has v.
class VariableLayout {
 public:
  std::span<const BusId> buses() const { return buses_; }
  int size() const { return size_; }

  bool contains(BusId bus) const { return local(bus) >= 0; }
  /// Slot or -1.
  int P(BusId bus) const { return slot(P_, bus); }
  int Q(BusId bus) const { return slot(Q_, bus); }
  int l(BusId bus) const { return slot(l_, bus); }
  int v(BusId bus) const { return slot(v_, bus); }
  int dispatch(BusId bus) const { return slot(d_, bus); }

  /// Position of `bus` in buses(), or -1.
  int local(BusId bus) const;

 private:
  friend class OpfProblem;
  int slot(const std::vector<int>& table, BusId bus) const {
    const int i = local(bus);
    return i < 0 ? -1 : table[static_cast<std::size_t>(i)];
  }

  std::vector<BusId> buses_;
  std::vector<std::pair<BusId, int>> index_;  // sorted by bus
  std::vector<int> P_, Q_, l_, v_, d_;
  int size_ = 0;
};

/// Fixed boundary values for an area subproblem.
struct BoundaryValues {
  /// Squared voltage of the parent bus just above the area (non-root areas).
  std::optional<double> v_parent;
  /// Flow entering each child area, keyed by the child area's top bus.
  std::vector<std::pair<BusId, Complex>> child_flows;
};

class DanglingInterface : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct OpfOptions {
  /// DeltaVMin only: optimize sqrt(sum (v - v_ref)^2 + 1e-12) instead of the sum of squares.
  bool sqrt_delta_v = false;
};

/// Branch-flow OPF over a connected set of buses. Equality rows per bus in
/// layout order: the power balances for P and Q, the voltage drop and
/// v_parent * l = P^2 + Q^2 for the entering branch, or the voltage pin for
/// the substation.
class OpfProblem final : public NlpProblem {
 public:
  const VariableLayout& layout() const { return layout_; }
  Objective objective_kind() const { return objective_; }
  const OpfOptions& options() const { return options_; }

  /// Replaces the boundary constants. Throws DanglingInterface when a
  /// required value is missing, std::invalid_argument for unknown keys.
  void set_boundary(const BoundaryValues& boundary);
  BoundaryValues boundary() const;

  /// Parent bus above the area, if any.
  std::optional<BusId> external_parent() const { return external_parent_; }
  /// (child area top bus, local index of its parent) in ascending bus order.
  std::span<const std::pair<BusId, int>> external_children() const { return external_children_; }

  /// Flat start: v at the fixed upstream value, flows from the lossless
  /// downstream demand, l consistent with the flows, dispatch at zero.
  std::vector<double> flat_start(std::span<const Complex> downstream) const;

  int num_vars() const override { return layout_.size(); }
  int num_eq() const override { return num_eq_; }
  Sense sense() const override { return objective_ == Objective::DerMax ? Sense::Maximize : Sense::Minimize; }
  void bounds(std::span<double> lower, std::span<double> upper) const override;
  double objective(std::span<const double> x) const override;
  void objective_gradient(std::span<const double> x, std::span<double> grad) const override;
  void eq_values(std::span<const double> x, std::span<double> values) const override;
  void eq_jacobian(std::span<const double> x, std::vector<Triplet>& out) const override;
  void lagrangian_hessian(std::span<const double> x, double obj_factor, std::span<const double> eq_mult,
                          std::span<const double> ineq_mult, std::vector<Triplet>& out) const override;

 private:
  friend OpfProblem build_central(const RadialNetwork&, Objective, const OpfOptions&);
  friend OpfProblem build_subproblem(const Area&, const RadialNetwork&, Objective, const BoundaryValues&,
                                     const OpfOptions&);
  static OpfProblem build(const RadialNetwork& net, std::span<const BusId> buses, Objective objective,
                          const OpfOptions& options);

  // Per local bus.
  struct Node {
    BusId bus = 0;
    bool substation = false;
    int parent = -1;  // local parent index, -1 if outside the area or none
    double r = 0.0, x = 0.0, i_rated_sq = 0.0;
    double pL = 0.0, qL = 0.0;
    double p_fixed = 0.0;  // active DER output held constant (reactive dispatch)
    double d_lo = 0.0, d_hi = 0.0;
    std::vector<int> kids;  // local child indices
    double Pc = 0.0, Qc = 0.0;  // sum of fixed child flows
    int row = 0;                // first equality row
    int sP = -1, sQ = -1, sl = -1, sv = -1, sd = -1;
  };

  VariableLayout layout_;
  std::vector<Node> nodes_;
  std::vector<std::pair<BusId, int>> external_children_;  // (child top bus, local parent)
  std::optional<BusId> external_parent_;
  double v_parent_ = 0.0;
  std::vector<std::pair<BusId, Complex>> child_flows_;
  double v0_ = 1.0;
  VoltageLimits limits_;
  Objective objective_ = Objective::LossMin;
  OpfOptions options_;
  int num_eq_ = 0;
};

OpfProblem build_central(const RadialNetwork& network, Objective objective, const OpfOptions& options = {});

/// Throws DanglingInterface when `boundary` lacks a value for an interface of `area`.
OpfProblem build_subproblem(const Area& area, const RadialNetwork& network, Objective objective,
                            const BoundaryValues& boundary, const OpfOptions& options = {});

/// What an area hands to its neighbours.
struct AreaExport {
  /// (P, Q) on the branch entering the area; absent for the root area.
  std::optional<Complex> flow_up;
  /// v at the parent bus of each child area, keyed by the child's top bus.
  std::vector<std::pair<BusId, double>> voltage_down;
};

AreaExport extract_boundary(std::span<const double> x, const OpfProblem& problem, const Area& area);

/// Writes the area's part of a solution into a full state and dispatch
/// (sized for the whole network).
void scatter_solution(std::span<const double> x, const OpfProblem& problem, const RadialNetwork& network,
                      NetworkState& state, Dispatch& dispatch);

/// Sum of squares for DeltaVMin becomes the reported square root; other
/// objectives are returned as given.
double reported_objective(Objective objective, double raw, const OpfOptions& options = {});

/// Objective of a complete state in the reported form (pu).
double evaluate_objective(Objective objective, const NetworkState& state, const Dispatch& dispatch,
                          const RadialNetwork& network);

}  // namespace dopf
